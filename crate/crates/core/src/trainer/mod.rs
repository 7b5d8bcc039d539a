//! Four-head sigmoid classifier: class weights, training with early
//! stopping, checkpoints, inference, decision rule and hyperparameter search.

mod checkpoint;
pub mod early_stop;
pub(crate) mod model;
mod train;
pub mod tune;

use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::labels::{DecisionLabel, ViolenceClass, NUM_CLASSES};
use crate::scalar::Scalar;

pub use checkpoint::{CheckpointMeta, CheckpointOf};
pub use early_stop::{simulate_early_stopping, EarlyStopping, Monitor, Observation, StopOutcome};
pub use model::{encoder_spec, EncoderSpec, TinyEncoder, REGISTERED_ENCODERS};
pub use train::{fit_loop, train, train_with_progress, EpochRecord, TrainHistory};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder_id: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub use_class_weights: bool,
    pub max_tokens: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            encoder_id: "tiny".into(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 2e-5,
            patience: 2,
            use_class_weights: true,
            max_tokens: 512,
            seed: 0,
            weight_decay: 0.01,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate < 1.0) {
            return Err(Error::Config(format!(
                "learning_rate must be in (0, 1), got {}",
                self.learning_rate
            )));
        }
        if self.max_tokens < 8 {
            return Err(Error::Config("max_tokens must be >= 8".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Reciprocal-frequency class weights `N / (K * n_c)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeightsOf<T> {
    pub weights: [T; NUM_CLASSES],
}

impl<T: Scalar> ClassWeightsOf<T> {
    pub fn uniform() -> Self {
        Self {
            weights: [T::one(); NUM_CLASSES],
        }
    }

    pub fn from_counts(counts: [usize; NUM_CLASSES], total: usize) -> Result<Self> {
        let mut weights = [T::zero(); NUM_CLASSES];
        for c in ViolenceClass::ALL {
            let n_c = counts[c.index()];
            if n_c == 0 {
                return Err(Error::Validation(format!(
                    "class {c} has no positive samples in the training split; \
                     add examples through augmentation before training with class weights"
                )));
            }
            weights[c.index()] = T::from_count(total) / (T::from_count(NUM_CLASSES) * T::from_count(n_c));
        }
        Ok(Self { weights })
    }

    pub fn get(&self, class: ViolenceClass) -> T {
        self.weights[class.index()]
    }
}

pub fn compute_class_weights<T: Scalar>(corpus: &Corpus) -> Result<ClassWeightsOf<T>> {
    ClassWeightsOf::from_counts(corpus.counts(), corpus.len())
}

/// Anything that maps a text to four independent class probabilities.
pub trait Classifier<T: Scalar>: Sync {
    fn predict_one(&self, text: &str) -> [T; NUM_CLASSES];

    fn predict_batch(&self, texts: &[&str]) -> Vec<[T; NUM_CLASSES]> {
        texts.par_iter().map(|t| self.predict_one(t)).collect()
    }
}

impl<T: Scalar, F> Classifier<T> for F
where
    F: Fn(&str) -> [T; NUM_CLASSES] + Sync,
{
    fn predict_one(&self, text: &str) -> [T; NUM_CLASSES] {
        self(text)
    }
}

/// `n x 4` per-class scores in `[0, 1]` with row ids.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMatrix<T> {
    ids: Vec<String>,
    rows: Vec<[T; NUM_CLASSES]>,
}

#[derive(Serialize, Deserialize)]
struct ProbRow {
    id: String,
    probs: [f64; NUM_CLASSES],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    decision: Option<DecisionLabel>,
}

impl<T: Scalar> ProbMatrix<T> {
    pub fn new(ids: Vec<String>, rows: Vec<[T; NUM_CLASSES]>) -> Result<Self> {
        if ids.len() != rows.len() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), rows.len())));
        }
        for (id, r) in ids.iter().zip(&rows) {
            if r.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
                return Err(Error::Validation(format!("row `{id}` has a probability outside [0, 1]")));
            }
        }
        Ok(Self { ids, rows })
    }

    /// Rows with positional ids `0..n`.
    pub fn from_rows(rows: Vec<[T; NUM_CLASSES]>) -> Result<Self> {
        let ids = (0..rows.len()).map(|i| i.to_string()).collect();
        Self::new(ids, rows)
    }

    pub fn empty() -> Self {
        Self {
            ids: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn with_ids(mut self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.rows.len() {
            return Err(Error::Shape(format!("{} ids for {} rows", ids.len(), self.rows.len())));
        }
        self.ids = ids;
        Ok(self)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn rows(&self) -> &[[T; NUM_CLASSES]] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn binarize(&self, threshold: T) -> Vec<[bool; NUM_CLASSES]> {
        self.rows.iter().map(|r| r.map(|v| v >= threshold)).collect()
    }

    pub fn decisions(&self, threshold: T) -> Result<Vec<DecisionLabel>> {
        self.rows.iter().map(|r| decide(r, threshold)).collect()
    }

    /// JSONL rows `{id, probs:[4]}`, with `decision` when given.
    pub fn write_jsonl<W: Write>(&self, decisions: Option<&[DecisionLabel]>, mut w: W) -> Result<()> {
        for (i, (id, r)) in self.ids.iter().zip(&self.rows).enumerate() {
            let row = ProbRow {
                id: id.clone(),
                probs: r.map(Scalar::as_f64),
                decision: decisions.map(|d| d[i]),
            };
            writeln!(w, "{}", serde_json::to_string(&row)?).map_err(|e| Error::io("<predictions>", e))?;
        }
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut ids = Vec::new();
        let mut rows = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<predictions>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: ProbRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            ids.push(row.id);
            rows.push(row.probs.map(T::lit));
        }
        Self::new(ids, rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_jsonl(std::io::BufReader::new(f))
    }
}

/// Scores texts in input order.
pub fn predict<T: Scalar, C: Classifier<T> + ?Sized>(model: &C, texts: &[&str]) -> ProbMatrix<T> {
    if texts.is_empty() {
        return ProbMatrix::empty();
    }
    ProbMatrix::from_rows(model.predict_batch(texts)).expect("classifier outputs are probabilities")
}

/// `NonViolent` when every score is below `threshold`, otherwise the argmax
/// class with ties going to the earlier class in column order.
pub fn decide<T: Scalar>(row: &[T; NUM_CLASSES], threshold: T) -> Result<DecisionLabel> {
    if row.iter().any(|v| !(*v >= T::zero() && *v <= T::one())) {
        return Err(Error::Validation(format!(
            "scores must lie in [0, 1], got {:?}",
            row.map(Scalar::as_f64)
        )));
    }
    if row.iter().all(|&v| v < threshold) {
        return Ok(DecisionLabel::NonViolent);
    }
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if row[i] > row[best] {
            best = i;
        }
    }
    Ok(DecisionLabel::ALL[best])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;
    use crate::labels::LabelVector;
    use proptest::prelude::*;

    #[test]
    fn uniform_counts_give_unit_weights() {
        let w = ClassWeightsOf::<f64>::from_counts([100; 4], 400).unwrap();
        assert_eq!(w.weights, [1.0; 4]);
    }

    #[test]
    fn skewed_counts() {
        // oracle: N / (4 n_c) by hand
        let expected = [1000.0 / 3200.0, 1000.0 / 400.0, 1000.0 / 200.0, 1000.0 / 200.0];
        assert_eq!(expected, [0.3125, 2.5, 5.0, 5.0]);
        let w = ClassWeightsOf::<f64>::from_counts([800, 100, 50, 50], 1000).unwrap();
        assert_eq!(w.weights, expected);
    }

    #[test]
    fn zero_positive_class_errors() {
        let err = ClassWeightsOf::<f64>::from_counts([5, 0, 1, 1], 10).unwrap_err();
        assert!(err.to_string().contains("augmentation"));
    }

    #[test]
    fn weights_from_corpus() {
        let samples = (0..8)
            .map(|i| {
                let c = ViolenceClass::ALL[i % 4];
                Sample::new(format!("{i}"), "t", LabelVector::single(c))
            })
            .collect();
        let w: ClassWeightsOf<f64> = compute_class_weights(&Corpus::new(samples).unwrap()).unwrap();
        assert_eq!(w.weights, [1.0; 4]);
    }

    #[test]
    fn decision_rule() {
        assert_eq!(decide(&[0.1, 0.2, 0.1, 0.3], 0.5).unwrap(), DecisionLabel::NonViolent);
        assert_eq!(decide(&[0.9, 0.1, 0.1, 0.1], 0.5).unwrap(), DecisionLabel::Religio);
        assert_eq!(decide(&[0.6, 0.1, 0.1, 0.7], 0.5).unwrap(), DecisionLabel::Noncommunal);
        assert_eq!(decide(&[0.7, 0.7, 0.1, 0.7], 0.5).unwrap(), DecisionLabel::Religio);
        assert!(decide(&[1.2, 0.1, 0.1, 0.1], 0.5).is_err());
        assert!(decide(&[f64::NAN, 0.1, 0.1, 0.1], 0.5).is_err());
    }

    /// Decision oracle written independently: explicit enumeration.
    fn decide_oracle(row: [f64; 4], t: f64) -> DecisionLabel {
        if row.iter().all(|&v| v < t) {
            return DecisionLabel::NonViolent;
        }
        let max = row.iter().cloned().fold(f64::MIN, f64::max);
        let idx = row.iter().position(|&v| v == max).unwrap();
        DecisionLabel::ALL[idx]
    }

    #[test]
    fn empty_predict_is_empty_matrix() {
        let model = |_: &str| [0.5_f64; 4];
        let m = predict(&model, &[]);
        assert_eq!(m.len(), 0);
    }

    #[test]
    fn prob_matrix_jsonl_round_trip() {
        let m = ProbMatrix::<f64>::new(vec!["a".into(), "b".into()], vec![[0.1, 0.2, 0.3, 0.4], [1.0, 0.0, 0.5, 0.25]]).unwrap();
        let mut buf = Vec::new();
        m.write_jsonl(Some(&m.decisions(0.5).unwrap()), &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(r#"{"id":"a","probs":[0.1,0.2,0.3,0.4],"decision":"NonViolent"}"#));
        assert_eq!(ProbMatrix::<f64>::read_jsonl(buf.as_slice()).unwrap(), m);
        assert!(ProbMatrix::<f64>::new(vec!["x".into()], vec![[1.5, 0.0, 0.0, 0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn decide_matches_oracle(row in proptest::array::uniform4(0.0f64..=1.0), t in 0.05f64..0.95) {
            prop_assert_eq!(decide(&row, t).unwrap(), decide_oracle(row, t));
        }

        #[test]
        fn argmax_invariant_under_scaling(row in proptest::array::uniform4(0.0f64..=1.0), lambda in 0.01f64..=1.0) {
            let scaled = row.map(|v| v * lambda);
            let a = decide(&row, 0.0).unwrap();
            let b = decide(&scaled, 0.0).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn class_weight_products_are_constant(counts in proptest::array::uniform4(1usize..10_000)) {
            let n: usize = counts.iter().sum();
            let w = ClassWeightsOf::<f64>::from_counts(counts, n).unwrap();
            let products: Vec<f64> = (0..4).map(|c| w.weights[c] * counts[c] as f64).collect();
            for p in &products {
                prop_assert!((p - products[0]).abs() <= 1e-9 * products[0].abs().max(1.0));
            }
        }
    }
}
