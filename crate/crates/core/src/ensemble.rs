//! Five-member ensembles: elementwise mean, per-class majority vote and a
//! small MLP stacker trained on validation predictions.

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::SplitSpec;
use crate::error::{Error, Result};
use crate::labels::{DecisionLabel, LabelVector, NUM_CLASSES};
use crate::rng;
use crate::scalar::Scalar;
use crate::trainer::model::{sigmoid, softplus, AdamW};
use crate::trainer::{predict, CheckpointOf, ProbMatrix};

pub const MEMBERS: usize = 5;
const STACK_INPUTS: usize = MEMBERS * NUM_CLASSES;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Combiner {
    Mean,
    Vote,
    Stacker,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackerParams {
    pub hidden: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Trained stacker weights, relative to the spec file.
    pub path: Option<PathBuf>,
}

impl Default for StackerParams {
    fn default() -> Self {
        Self {
            hidden: 32,
            epochs: 500,
            learning_rate: 0.01,
            seed: 0,
            path: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    #[serde(default)]
    pub name: String,
    /// Member checkpoint directories, relative to the spec file.
    pub members: Vec<PathBuf>,
    pub combiner: Combiner,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub stacker: StackerParams,
}

fn default_threshold() -> f64 {
    0.5
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.members.len() != MEMBERS {
            return Err(Error::Config(format!(
                "an ensemble needs exactly {MEMBERS} members, spec lists {}",
                self.members.len()
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold must be in (0, 1), got {}", self.threshold)));
        }
        Ok(())
    }

    /// Parses a TOML spec and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: EnsembleSpec =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for m in &mut spec.members {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        if let Some(p) = &mut spec.stacker.path {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Loads every member, reporting all missing checkpoints at once.
    pub fn load_members<T: Scalar>(&self) -> Result<Vec<CheckpointOf<T>>> {
        let missing: Vec<String> = self
            .members
            .iter()
            .filter(|m| !m.join("config.json").is_file())
            .map(|m| m.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("missing member checkpoints: {}", missing.join(", "))));
        }
        self.members.iter().map(|m| CheckpointOf::load(m)).collect()
    }
}

fn check_aligned<T: Scalar>(matrices: &[ProbMatrix<T>]) -> Result<()> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::EmptyInput("no member matrices".into()))?;
    for (k, m) in matrices.iter().enumerate().skip(1) {
        if m.len() != first.len() {
            return Err(Error::Shape(format!(
                "member {k} has {} rows, member 0 has {}",
                m.len(),
                first.len()
            )));
        }
        if m.ids() != first.ids() {
            return Err(Error::Shape(format!("member {k} rows are not aligned with member 0")));
        }
    }
    Ok(())
}

pub fn combine_mean<T: Scalar>(matrices: &[ProbMatrix<T>]) -> Result<ProbMatrix<T>> {
    check_aligned(matrices)?;
    let k = T::from_count(matrices.len());
    let rows = (0..matrices[0].len())
        .map(|i| {
            std::array::from_fn(|c| {
                // summing in sorted order makes the mean independent of member order
                let mut cell: Vec<T> = matrices.iter().map(|m| m.rows()[i][c]).collect();
                cell.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let s: T = cell.into_iter().sum();
                (s / k).max(T::zero()).min(T::one())
            })
        })
        .collect();
    ProbMatrix::new(matrices[0].ids().to_vec(), rows)
}

/// A cell is 1 when a strict majority of members score it at or above
/// `threshold` (3 of 5).
pub fn combine_vote<T: Scalar>(matrices: &[ProbMatrix<T>], threshold: T) -> Result<Vec<[bool; NUM_CLASSES]>> {
    check_aligned(matrices)?;
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::Validation(format!("threshold must be in (0, 1), got {threshold}")));
    }
    let need = matrices.len() / 2 + 1;
    Ok((0..matrices[0].len())
        .map(|i| {
            std::array::from_fn(|c| matrices.iter().filter(|m| m.rows()[i][c] >= threshold).count() >= need)
        })
        .collect())
}

/// Reduces a vote row to one label: all zeros is NonViolent, several winners
/// go to the class with the highest member-mean probability.
pub fn vote_decision<T: Scalar>(votes: &[bool; NUM_CLASSES], mean_row: &[T; NUM_CLASSES]) -> DecisionLabel {
    let mut best: Option<usize> = None;
    for c in 0..NUM_CLASSES {
        if votes[c] && best.is_none_or(|b| mean_row[c] > mean_row[b]) {
            best = Some(c);
        }
    }
    best.map_or(DecisionLabel::NonViolent, |c| DecisionLabel::ALL[c])
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnsembleScores<T> {
    Probabilities(ProbMatrix<T>),
    Votes(Vec<[bool; NUM_CLASSES]>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleOutput<T> {
    pub ids: Vec<String>,
    pub scores: EnsembleScores<T>,
    pub decisions: Vec<DecisionLabel>,
}

impl<T: Scalar> EnsembleOutput<T> {
    /// Binary per-class predictions for metric computation.
    pub fn binary(&self, threshold: T) -> Vec<[bool; NUM_CLASSES]> {
        match &self.scores {
            EnsembleScores::Probabilities(m) => m.binarize(threshold),
            EnsembleScores::Votes(v) => v.clone(),
        }
    }
}

/// Combines precomputed member predictions according to `combiner`.
pub fn combine<T: Scalar>(
    matrices: &[ProbMatrix<T>],
    combiner: Combiner,
    threshold: T,
    stacker: Option<&Stacker<T>>,
) -> Result<EnsembleOutput<T>> {
    if matrices.len() != MEMBERS {
        return Err(Error::Shape(format!("expected {MEMBERS} member matrices, got {}", matrices.len())));
    }
    check_aligned(matrices)?;
    let ids = matrices[0].ids().to_vec();
    match combiner {
        Combiner::Mean => {
            let m = combine_mean(matrices)?;
            let decisions = m.decisions(threshold)?;
            Ok(EnsembleOutput {
                ids,
                scores: EnsembleScores::Probabilities(m),
                decisions,
            })
        }
        Combiner::Vote => {
            let votes = combine_vote(matrices, threshold)?;
            let mean = combine_mean(matrices)?;
            let decisions = votes.iter().zip(mean.rows()).map(|(v, r)| vote_decision(v, r)).collect();
            Ok(EnsembleOutput {
                ids,
                scores: EnsembleScores::Votes(votes),
                decisions,
            })
        }
        Combiner::Stacker => {
            let s = stacker.ok_or_else(|| Error::Config("stacker combiner needs trained stacker weights".into()))?;
            let m = s.predict(matrices)?;
            let decisions = m.decisions(threshold)?;
            Ok(EnsembleOutput {
                ids,
                scores: EnsembleScores::Probabilities(m),
                decisions,
            })
        }
    }
}

/// Scores `texts` with each member once and combines per `spec`.
pub fn run_ensemble<T: Scalar>(
    spec: &EnsembleSpec,
    members: &[CheckpointOf<T>],
    ids: Vec<String>,
    texts: &[&str],
    stacker: Option<&Stacker<T>>,
) -> Result<(Vec<ProbMatrix<T>>, EnsembleOutput<T>)> {
    spec.validate()?;
    let matrices = members
        .iter()
        .map(|m| predict(m, texts).with_ids(ids.clone()))
        .collect::<Result<Vec<_>>>()?;
    let out = combine(&matrices, spec.combiner, T::lit(spec.threshold), stacker)?;
    Ok((matrices, out))
}

/// One-hidden-layer perceptron over the 20 concatenated member scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Stacker<T> {
    pub hidden: usize,
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
    b2: Vec<T>,
    /// SHA-256 of the sorted ids the stacker was fitted on.
    pub training_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct StackerFile {
    hidden: usize,
    w1: Vec<f64>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    training_fingerprint: String,
}

fn stack_row<T: Scalar>(matrices: &[ProbMatrix<T>], i: usize) -> [T; STACK_INPUTS] {
    std::array::from_fn(|j| matrices[j / NUM_CLASSES].rows()[i][j % NUM_CLASSES])
}

fn id_fingerprint(ids: &[String]) -> String {
    let mut sorted: Vec<&str> = ids.iter().map(String::as_str).collect();
    sorted.sort_unstable();
    let mut h = Sha256::new();
    for id in sorted {
        h.update(id.as_bytes());
        h.update([0]);
    }
    crate::corpus::hex(&h.finalize())
}

impl<T: Scalar> Stacker<T> {
    fn offsets(hidden: usize) -> (usize, usize, usize, usize) {
        let w1 = hidden * STACK_INPUTS;
        (w1, hidden, NUM_CLASSES * hidden, NUM_CLASSES)
    }

    fn forward(&self, x: &[T; STACK_INPUTS], h: &mut Vec<T>) -> [T; NUM_CLASSES] {
        h.clear();
        for j in 0..self.hidden {
            let row = &self.w1[j * STACK_INPUTS..(j + 1) * STACK_INPUTS];
            let a: T = row.iter().zip(x).map(|(&w, &v)| w * v).sum::<T>() + self.b1[j];
            h.push(a.tanh());
        }
        std::array::from_fn(|c| {
            let row = &self.w2[c * self.hidden..(c + 1) * self.hidden];
            row.iter().zip(h.iter()).map(|(&w, &v)| w * v).sum::<T>() + self.b2[c]
        })
    }

    pub fn predict(&self, matrices: &[ProbMatrix<T>]) -> Result<ProbMatrix<T>> {
        if matrices.len() != MEMBERS {
            return Err(Error::Shape(format!("stacker expects {MEMBERS} members, got {}", matrices.len())));
        }
        check_aligned(matrices)?;
        let mut h = Vec::with_capacity(self.hidden);
        let rows = (0..matrices[0].len())
            .map(|i| self.forward(&stack_row(matrices, i), &mut h).map(sigmoid))
            .collect();
        ProbMatrix::new(matrices[0].ids().to_vec(), rows)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f64s = |v: &[T]| v.iter().map(|x| x.as_f64()).collect();
        let file = StackerFile {
            hidden: self.hidden,
            w1: f64s(&self.w1),
            b1: f64s(&self.b1),
            w2: f64s(&self.w2),
            b2: f64s(&self.b2),
            training_fingerprint: self.training_fingerprint.clone(),
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: StackerFile = serde_json::from_str(&text)?;
        let (a, b, c, d) = Self::offsets(f.hidden);
        if f.w1.len() != a || f.b1.len() != b || f.w2.len() != c || f.b2.len() != d {
            return Err(Error::Shape(format!("{}: stacker weights have the wrong shape", path.display())));
        }
        let ts = |v: Vec<f64>| v.into_iter().map(T::lit).collect();
        Ok(Self {
            hidden: f.hidden,
            w1: ts(f.w1),
            b1: ts(f.b1),
            w2: ts(f.w2),
            b2: ts(f.b2),
            training_fingerprint: f.training_fingerprint,
        })
    }
}

/// Fits the stacker on member predictions for the validation split.
///
/// Any row whose id is in `split.test` aborts with a leakage error.
/// Loss is the weighted BCE used for the base models, with classes that
/// have no positives weighted 1.
pub fn train_stacker<T: Scalar>(
    members: &[ProbMatrix<T>],
    labels: &[LabelVector],
    split: Option<&SplitSpec>,
    params: &StackerParams,
) -> Result<Stacker<T>> {
    if members.len() != MEMBERS {
        return Err(Error::Shape(format!("stacker expects {MEMBERS} members, got {}", members.len())));
    }
    check_aligned(members)?;
    let n = members[0].len();
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} prediction rows for {} labels", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyInput("no validation rows to fit the stacker on".into()));
    }
    if params.hidden == 0 || params.epochs == 0 {
        return Err(Error::Config("stacker hidden size and epochs must be positive".into()));
    }
    if let Some(split) = split {
        let test = split.test_set();
        let leaked: Vec<&str> = members[0]
            .ids()
            .iter()
            .map(String::as_str)
            .filter(|id| test.contains(id))
            .take(5)
            .collect();
        if !leaked.is_empty() {
            return Err(Error::Leakage(format!(
                "stacker inputs include test-split ids ({}); fit it on validation predictions only",
                leaked.join(", ")
            )));
        }
    }

    let mut counts = [0usize; NUM_CLASSES];
    for l in labels {
        for (c, f) in counts.iter_mut().zip(l.flags()) {
            *c += usize::from(f);
        }
    }
    let w: [T; NUM_CLASSES] = counts.map(|nc| {
        if nc == 0 {
            T::one()
        } else {
            T::from_count(n) / (T::from_count(NUM_CLASSES) * T::from_count(nc))
        }
    });

    let hidden = params.hidden;
    let (n1, nb1, n2, nb2) = Stacker::<T>::offsets(hidden);
    let mut rng = rng::substream(params.seed, "init");
    let b1 = (6.0 / (STACK_INPUTS + hidden) as f64).sqrt();
    let b2 = (6.0 / (hidden + NUM_CLASSES) as f64).sqrt();
    let mut s = Stacker {
        hidden,
        w1: (0..n1).map(|_| T::lit(rng.random_range(-b1..b1))).collect(),
        b1: vec![T::zero(); nb1],
        w2: (0..n2).map(|_| T::lit(rng.random_range(-b2..b2))).collect(),
        b2: vec![T::zero(); nb2],
        training_fingerprint: id_fingerprint(members[0].ids()),
    };
    let xs: Vec<[T; STACK_INPUTS]> = (0..n).map(|i| stack_row(members, i)).collect();
    let ys: Vec<[bool; NUM_CLASSES]> = labels.iter().map(LabelVector::flags).collect();
    let total = n1 + nb1 + n2 + nb2;
    let mut opt = AdamW::<T>::new(total, params.learning_rate, 0.0);
    let mut flat = vec![T::zero(); total];
    let mut grad = vec![T::zero(); total];
    let mut h = Vec::with_capacity(hidden);
    let scale = T::one() / T::from_count(n);
    for _ in 0..params.epochs {
        grad.iter_mut().for_each(|g| *g = T::zero());
        let (g1, rest) = grad.split_at_mut(n1);
        let (gb1, rest) = rest.split_at_mut(nb1);
        let (g2, gb2) = rest.split_at_mut(n2);
        for (x, y) in xs.iter().zip(&ys) {
            let z = s.forward(x, &mut h);
            let dz: [T; NUM_CLASSES] = std::array::from_fn(|c| {
                let p = sigmoid(z[c]);
                (if y[c] { w[c] * (p - T::one()) } else { p }) * scale
            });
            for j in 0..hidden {
                let mut dh = T::zero();
                for c in 0..NUM_CLASSES {
                    g2[c * hidden + j] += dz[c] * h[j];
                    dh += dz[c] * s.w2[c * hidden + j];
                }
                let da = dh * (T::one() - h[j] * h[j]);
                gb1[j] += da;
                for (k, &xv) in x.iter().enumerate() {
                    g1[j * STACK_INPUTS + k] += da * xv;
                }
            }
            for c in 0..NUM_CLASSES {
                gb2[c] += dz[c];
            }
        }
        flat.clear();
        flat.extend_from_slice(&s.w1);
        flat.extend_from_slice(&s.b1);
        flat.extend_from_slice(&s.w2);
        flat.extend_from_slice(&s.b2);
        opt.step(&mut flat, &grad);
        s.w1.copy_from_slice(&flat[..n1]);
        s.b1.copy_from_slice(&flat[n1..n1 + nb1]);
        s.w2.copy_from_slice(&flat[n1 + nb1..n1 + nb1 + n2]);
        s.b2.copy_from_slice(&flat[n1 + nb1 + n2..]);
    }
    Ok(s)
}

/// Mean weighted BCE of a stacker on labelled rows; used in tests and logs.
pub fn stacker_loss<T: Scalar>(s: &Stacker<T>, members: &[ProbMatrix<T>], labels: &[LabelVector]) -> Result<T> {
    check_aligned(members)?;
    let mut h = Vec::new();
    let mut total = T::zero();
    for (i, l) in labels.iter().enumerate() {
        let z = s.forward(&stack_row(members, i), &mut h);
        let y = l.flags();
        for c in 0..NUM_CLASSES {
            total += if y[c] { softplus(-z[c]) } else { softplus(z[c]) };
        }
    }
    Ok(total / T::from_count(labels.len().max(1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ViolenceClass;

    fn mat(rows: Vec<[f64; 4]>) -> ProbMatrix<f64> {
        ProbMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn mean_of_identical_members_is_identity() {
        let m = mat(vec![[0.1, 0.2, 0.3, 0.4], [0.9, 0.0, 1.0, 0.5]]);
        let out = combine_mean(&vec![m.clone(); 5]).unwrap();
        for (a, b) in out.rows().iter().zip(m.rows()) {
            for c in 0..4 {
                assert!((a[c] - b[c]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mean_single_cell() {
        let ms: Vec<_> = [0.2, 0.8, 0.5, 0.5, 0.5].iter().map(|&v| mat(vec![[v, 0.0, 0.0, 0.0]])).collect();
        assert!((combine_mean(&ms).unwrap().rows()[0][0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn vote_patterns() {
        let cell = |v: [u8; 5]| -> bool {
            let ms: Vec<_> = v.iter().map(|&b| mat(vec![[f64::from(b), 0.0, 0.0, 0.0]])).collect();
            combine_vote(&ms, 0.5).unwrap()[0][0]
        };
        assert!(cell([1, 1, 1, 0, 0]));
        assert!(!cell([1, 1, 0, 0, 0]));
        assert!(!cell([0; 5]));
    }

    #[test]
    fn misaligned_members_rejected() {
        let a = mat(vec![[0.1; 4]]);
        let b = mat(vec![[0.1; 4], [0.2; 4]]);
        assert!(combine_mean(&[a.clone(), a.clone(), a.clone(), a, b]).is_err());
    }

    #[test]
    fn vote_decision_rules() {
        assert_eq!(vote_decision(&[false; 4], &[0.9; 4]), DecisionLabel::NonViolent);
        assert_eq!(vote_decision(&[true, false, true, false], &[0.6, 0.0, 0.8, 0.0]), DecisionLabel::Nondenominational);
        assert_eq!(vote_decision(&[true, true, false, false], &[0.7, 0.7, 0.0, 0.0]), DecisionLabel::Religio);
    }

    #[test]
    fn stacker_leakage_guard() {
        let m = ProbMatrix::new(vec!["t1".into()], vec![[0.5; 4]]).unwrap();
        let split = SplitSpec {
            seed: 0,
            train: vec![],
            val: vec![],
            test: vec!["t1".into()],
        };
        let err = train_stacker(&vec![m; 5], &[LabelVector::NON_VIOLENT], Some(&split), &StackerParams::default()).unwrap_err();
        assert!(matches!(err, Error::Leakage(_)));
    }

    #[test]
    fn constant_labels_fit_everywhere() {
        let mut r = rng::substream(4, "test");
        let rows: Vec<[f64; 4]> = (0..40).map(|_| std::array::from_fn(|_| r.random::<f64>())).collect();
        let ms: Vec<_> = (0..5).map(|_| mat(rows.clone())).collect();
        let labels = vec![LabelVector::single(ViolenceClass::Ethno); 40];
        let s = train_stacker(&ms, &labels, None, &StackerParams::default()).unwrap();
        let pred = s.predict(&ms).unwrap();
        assert!(pred.decisions(0.5).unwrap().iter().all(|d| *d == DecisionLabel::Ethno));
        let again = train_stacker(&ms, &labels, None, &StackerParams::default()).unwrap();
        assert_eq!(s, again);
    }
}
