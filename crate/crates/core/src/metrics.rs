//! Per-class precision/recall/F1, macro F1, the 5x5 decision confusion
//! matrix and misclassification review lists.
//!
//! Per-class metrics are one-vs-rest over the binary label columns. Only the
//! confusion matrix reduces each row to a single decision label. Any ratio
//! with a zero denominator is reported as 0.

use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use serde::Serialize;

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::labels::{DecisionLabel, LabelVector, ViolenceClass, NUM_CLASSES};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Counts {
    pub fn tally(pred: &[bool], gold: &[bool]) -> Result<Self> {
        if pred.len() != gold.len() {
            return Err(Error::Shape(format!(
                "{} predictions vs {} gold labels",
                pred.len(),
                gold.len()
            )));
        }
        let mut c = Counts::default();
        for (&p, &g) in pred.iter().zip(gold) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn prf<T: Scalar>(&self) -> Prf<T> {
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                T::zero()
            } else {
                T::from_count(num) / T::from_count(den)
            }
        };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == T::zero() {
            T::zero()
        } else {
            T::lit(2.0) * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }
}

pub fn per_class_prf<T: Scalar>(pred: &[bool], gold: &[bool]) -> Result<Prf<T>> {
    Ok(Counts::tally(pred, gold)?.prf())
}

/// Unweighted mean of the four class F1 scores.
pub fn macro_f1<T: Scalar>(f1s: &[T; NUM_CLASSES]) -> T {
    f1s.iter().copied().sum::<T>() / T::from_count(NUM_CLASSES)
}

/// `counts[gold][pred]` over the five decision labels.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; 5]; 5],
}

impl ConfusionMatrix {
    pub fn row_sum(&self, gold: DecisionLabel) -> usize {
        self.counts[gold.index()].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("gold\\pred");
        for d in DecisionLabel::ALL {
            out.push(',');
            out.push_str(d.display_name());
        }
        out.push('\n');
        for g in DecisionLabel::ALL {
            out.push_str(g.display_name());
            for p in DecisionLabel::ALL {
                let _ = write!(out, ",{}", self.counts[g.index()][p.index()]);
            }
            out.push('\n');
        }
        out
    }

    /// Row-normalized heatmap as a standalone SVG document.
    pub fn to_svg(&self, title: &str) -> String {
        const CELL: usize = 70;
        const LEFT: usize = 150;
        const TOP: usize = 60;
        let size = LEFT + 5 * CELL + 20;
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
            TOP + 5 * CELL + 60
        );
        let _ = writeln!(svg, "<text x=\"{}\" y=\"20\" font-size=\"14\">{}</text>", LEFT, escape(title));
        for (j, p) in DecisionLabel::ALL.iter().enumerate() {
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                LEFT + j * CELL + CELL / 2,
                TOP - 8,
                p.display_name()
            );
        }
        for (i, g) in DecisionLabel::ALL.iter().enumerate() {
            let row_total = self.row_sum(*g).max(1) as f64;
            let _ = writeln!(
                svg,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
                LEFT - 6,
                TOP + i * CELL + CELL / 2 + 4,
                g.display_name()
            );
            for j in 0..5 {
                let v = self.counts[i][j];
                let share = v as f64 / row_total;
                let shade = (255.0 * (1.0 - share)).round() as u8;
                let _ = writeln!(
                    svg,
                    "<rect x=\"{}\" y=\"{}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#888\"/>\
                     <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v}</text>",
                    LEFT + j * CELL,
                    TOP + i * CELL,
                    LEFT + j * CELL + CELL / 2,
                    TOP + i * CELL + CELL / 2 + 4
                );
            }
        }
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">predicted</text>",
            LEFT + 5 * CELL / 2,
            TOP + 5 * CELL + 30
        );
        svg.push_str("</svg>\n");
        svg
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn confusion_matrix(decisions: &[DecisionLabel], gold: &[DecisionLabel]) -> Result<ConfusionMatrix> {
    if decisions.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} decisions vs {} gold labels",
            decisions.len(),
            gold.len()
        )));
    }
    let mut m = ConfusionMatrix::default();
    for (p, g) in decisions.iter().zip(gold) {
        m.counts[g.index()][p.index()] += 1;
    }
    Ok(m)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassMetrics<T> {
    pub class: ViolenceClass,
    pub precision: T,
    pub recall: T,
    pub f1: T,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report<T> {
    pub per_class: Vec<ClassMetrics<T>>,
    pub macro_f1: T,
    pub confusion: ConfusionMatrix,
    pub n: usize,
}

/// Builds the full report from binary per-class predictions, the reduced
/// decisions and the gold label vectors.
pub fn evaluate<T: Scalar>(
    pred: &[[bool; NUM_CLASSES]],
    decisions: &[DecisionLabel],
    gold: &[LabelVector],
) -> Result<Report<T>> {
    if pred.len() != gold.len() || decisions.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predictions, {} decisions, {} gold rows",
            pred.len(),
            decisions.len(),
            gold.len()
        )));
    }
    let mut per_class = Vec::with_capacity(NUM_CLASSES);
    let mut f1s = [T::zero(); NUM_CLASSES];
    for c in ViolenceClass::ALL {
        let p: Vec<bool> = pred.iter().map(|r| r[c.index()]).collect();
        let g: Vec<bool> = gold.iter().map(|l| l.get(c)).collect();
        let prf: Prf<T> = per_class_prf(&p, &g)?;
        f1s[c.index()] = prf.f1;
        per_class.push(ClassMetrics {
            class: c,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            support: g.iter().filter(|&&x| x).count(),
        });
    }
    let gold_decisions: Vec<DecisionLabel> = gold.iter().map(LabelVector::decision).collect();
    Ok(Report {
        per_class,
        macro_f1: macro_f1(&f1s),
        confusion: confusion_matrix(decisions, &gold_decisions)?,
        n: gold.len(),
    })
}

impl<T: Scalar> Report<T> {
    /// Text table with one row per class and the macro F1 on the first row.
    pub fn render_table(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title}");
        let _ = writeln!(
            out,
            "{:<20} {:>6} {:>7} {:>6} {:>9} {:>8}",
            "Class", "Prec.", "Recall", "F1", "Macro F1", "Support"
        );
        for (i, m) in self.per_class.iter().enumerate() {
            let macro_col = if i == 0 {
                format!("{:.2}", self.macro_f1.as_f64())
            } else {
                String::new()
            };
            let _ = writeln!(
                out,
                "{:<20} {:>6.2} {:>7.2} {:>6.2} {:>9} {:>8}",
                m.class.display_name(),
                m.precision.as_f64(),
                m.recall.as_f64(),
                m.f1.as_f64(),
                macro_col,
                m.support
            );
        }
        out
    }
}

/// One row of a misclassification review list.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Misclassified<T> {
    pub id: String,
    pub text: String,
    pub gold: DecisionLabel,
    pub pred: DecisionLabel,
    pub score: T,
}

/// Misclassified samples sorted by their maximum class probability,
/// most confident first (ties by id).
pub fn misclassification_report<T: Scalar>(
    samples: &[Sample],
    decisions: &[DecisionLabel],
    probabilities: &[[T; NUM_CLASSES]],
) -> Result<Vec<Misclassified<T>>> {
    if samples.len() != decisions.len() || samples.len() != probabilities.len() {
        return Err(Error::Shape("misclassification inputs are not aligned".into()));
    }
    let mut out: Vec<Misclassified<T>> = samples
        .iter()
        .zip(decisions)
        .zip(probabilities)
        .filter(|((s, d), _)| s.decision() != **d)
        .map(|((s, d), p)| Misclassified {
            id: s.id.clone(),
            text: s.text.clone(),
            gold: s.decision(),
            pred: *d,
            score: p.iter().copied().fold(T::zero(), T::max),
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Seeded random subset of a review list, kept in ranked order.
pub fn sample_for_review<T: Clone>(report: &[T], k: usize, seed: u64) -> Vec<T> {
    let k = k.min(report.len());
    let mut rng = rng::substream(seed, "sample");
    let mut idx = sample_indices(&mut rng, report.len(), k).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| report[i].clone()).collect()
}
