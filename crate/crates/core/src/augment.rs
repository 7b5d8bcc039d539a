//! Corpus growth: paraphrase ingestion, candidate mining from external
//! text with a trained classifier, and merging of accepted samples.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{self, Corpus, Provenance, Sample};
use crate::error::{Error, Result};
use crate::labels::{LabelVector, NUM_CLASSES};
use crate::preprocess::PreprocessConfig;
use crate::scalar::Scalar;
use crate::trainer::Classifier;

pub const DEFAULT_MINING_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CandidateStatus {
    Pending,
    Accepted,
    Rejected,
    Conflict,
}

impl CandidateStatus {
    pub fn can_become(self, next: CandidateStatus) -> bool {
        use CandidateStatus::*;
        matches!(
            (self, next),
            (Pending, Accepted) | (Pending, Rejected) | (Pending, Conflict) | (Conflict, Accepted) | (Conflict, Rejected)
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateComment<T> {
    pub id: String,
    pub text: String,
    pub source: String,
    pub model_score: [T; NUM_CLASSES],
    pub status: CandidateStatus,
}

impl<T: Scalar> CandidateComment<T> {
    /// Maximum class probability, the mining score.
    pub fn score(&self) -> T {
        self.model_score.iter().copied().fold(T::zero(), T::max)
    }

    pub fn set_status(&mut self, next: CandidateStatus) -> Result<()> {
        if !self.status.can_become(next) {
            return Err(Error::State(format!(
                "candidate `{}` cannot move from {:?} to {next:?}",
                self.id, self.status
            )));
        }
        self.status = next;
        Ok(())
    }

    /// Turns an accepted candidate into a mined corpus sample.
    pub fn into_sample(self, labels: LabelVector) -> Result<Sample> {
        if self.status != CandidateStatus::Accepted {
            return Err(Error::State(format!("candidate `{}` is not accepted", self.id)));
        }
        Ok(Sample::new(self.id, self.text, labels).with_provenance(Provenance::Mined))
    }
}

/// New samples ready to merge, with per-class added counts.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AugmentationBatch {
    samples: Vec<Sample>,
    counts: [usize; NUM_CLASSES],
    /// Rows skipped during ingestion, one message each.
    pub warnings: Vec<String>,
}

impl AugmentationBatch {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut counts = [0; NUM_CLASSES];
        for s in &samples {
            if s.provenance == Provenance::Original {
                return Err(Error::Validation(format!(
                    "augmentation sample `{}` must carry paraphrase, manual or mined provenance",
                    s.id
                )));
            }
            for (c, &f) in counts.iter_mut().zip(s.labels.flags().iter()) {
                *c += usize::from(f);
            }
        }
        Ok(Self {
            samples,
            counts,
            warnings: Vec::new(),
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        self.counts
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::new(corpus::read_jsonl(std::io::BufReader::new(f))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        corpus::write_samples_jsonl(&self.samples, std::io::BufWriter::new(f))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParaphrasePair {
    pub source_id: String,
    pub text: String,
}

/// Reads `source_id,paraphrased_text` rows with a header line.
pub fn read_paraphrase_pairs<R: std::io::Read>(reader: R) -> Result<Vec<ParaphrasePair>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: i + 1,
            message: e.to_string(),
        })?;
        if rec.len() != 2 {
            return Err(Error::Parse {
                row: i + 1,
                message: format!("expected 2 fields, found {}", rec.len()),
            });
        }
        out.push(ParaphrasePair {
            source_id: rec[0].trim().to_owned(),
            text: rec[1].to_owned(),
        });
    }
    Ok(out)
}

/// Labels each paraphrase with its source sample's labels. Texts that match
/// an existing or earlier text after normalization are dropped; empty
/// texts are skipped with a warning.
pub fn ingest_paraphrases(base: &Corpus, pairs: &[ParaphrasePair], pre: &PreprocessConfig) -> Result<AugmentationBatch> {
    let mut seen: HashSet<String> = base.iter().map(|s| pre.normalize(&s.text)).collect();
    let mut per_source: BTreeMap<&str, usize> = BTreeMap::new();
    let mut samples = Vec::new();
    let mut warnings = Vec::new();
    for (i, pair) in pairs.iter().enumerate() {
        let source = base.get(&pair.source_id).ok_or_else(|| {
            Error::Validation(format!("paraphrase row {}: unknown source id `{}`", i + 1, pair.source_id))
        })?;
        if pair.text.trim().is_empty() {
            warnings.push(format!("paraphrase row {}: empty text skipped", i + 1));
            continue;
        }
        if !seen.insert(pre.normalize(&pair.text)) {
            continue;
        }
        let n = per_source.entry(pair.source_id.as_str()).or_default();
        *n += 1;
        let mut id = format!("{}-para-{}", source.id, n);
        while base.contains(&id) {
            *n += 1;
            id = format!("{}-para-{}", source.id, n);
        }
        let mut s = Sample::new(id, pair.text.clone(), source.labels).with_provenance(Provenance::Paraphrase);
        s.sublabel = source.sublabel;
        samples.push(s);
    }
    let mut batch = AugmentationBatch::new(samples)?;
    batch.warnings = warnings;
    Ok(batch)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExternalText {
    pub id: String,
    pub text: String,
}

#[derive(Deserialize)]
struct ExternalRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
}

/// External corpus: JSONL with a `text` field (optional `id`) when the
/// path ends in `.jsonl`, otherwise one text per non-empty line.
pub fn read_external(path: &Path) -> Result<Vec<ExternalText>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let jsonl = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("jsonl"));
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "external".into());
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, text) = if jsonl {
            let rec: ExternalRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
                row: i + 1,
                message: e.to_string(),
            })?;
            (rec.id, rec.text)
        } else {
            (None, line)
        };
        out.push(ExternalText {
            id: id.unwrap_or_else(|| format!("{stem}-{:06}", i + 1)),
            text,
        });
    }
    Ok(out)
}

/// Scores external texts and keeps those whose maximum class probability
/// reaches `threshold`, most confident first.
pub fn mine_candidates<T: Scalar, C: Classifier<T> + ?Sized>(
    texts: &[ExternalText],
    model: &C,
    threshold: T,
    source: &str,
) -> Result<Vec<CandidateComment<T>>> {
    if !(threshold > T::zero() && threshold < T::one()) {
        return Err(Error::Validation(format!("mining threshold must be in (0, 1), got {threshold}")));
    }
    let refs: Vec<&str> = texts.iter().map(|t| t.text.as_str()).collect();
    let scores = if refs.is_empty() { Vec::new() } else { model.predict_batch(&refs) };
    let mut out: Vec<CandidateComment<T>> = texts
        .iter()
        .zip(scores)
        .map(|(t, p)| CandidateComment {
            id: t.id.clone(),
            text: t.text.clone(),
            source: source.to_owned(),
            model_score: p,
            status: CandidateStatus::Pending,
        })
        .filter(|c| c.score() >= threshold)
        .collect();
    out.sort_by(|a, b| {
        b.score()
            .partial_cmp(&a.score())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(out)
}

/// Appends a batch to the corpus; ids must be fresh.
pub fn merge_accepted(base: &Corpus, batch: &AugmentationBatch) -> Result<Corpus> {
    for s in batch.samples() {
        if base.contains(&s.id) {
            return Err(Error::Validation(format!("batch id `{}` already exists in the corpus", s.id)));
        }
    }
    let mut samples = base.samples().to_vec();
    samples.extend(batch.samples().iter().cloned());
    Corpus::new(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labels::ViolenceClass;

    fn pre() -> PreprocessConfig {
        PreprocessConfig::default()
    }

    fn base() -> Corpus {
        Corpus::new(vec![
            Sample::new("a", "first text", LabelVector::single(ViolenceClass::Ethno)),
            Sample::new("b", "second text", LabelVector::single(ViolenceClass::Religio)),
            Sample::new("c", "third text", LabelVector::NON_VIOLENT),
        ])
        .unwrap()
    }

    fn pair(src: &str, text: &str) -> ParaphrasePair {
        ParaphrasePair {
            source_id: src.into(),
            text: text.into(),
        }
    }

    #[test]
    fn paraphrase_inherits_labels() {
        let b = ingest_paraphrases(&base(), &[pair("a", "a new wording")], &pre()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.samples()[0].labels, LabelVector::single(ViolenceClass::Ethno));
        assert_eq!(b.samples()[0].provenance, Provenance::Paraphrase);
        assert_eq!(b.counts(), [0, 1, 0, 0]);
    }

    #[test]
    fn duplicate_and_empty_rows() {
        let pairs = [pair("a", "first text"), pair("b", "  "), pair("b", "x y"), pair("c", "x  y")];
        let b = ingest_paraphrases(&base(), &pairs, &pre()).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.warnings.len(), 1);
        assert!(ingest_paraphrases(&base(), &[pair("zzz", "t")], &pre()).is_err());
    }

    #[test]
    fn status_transitions() {
        use CandidateStatus::*;
        let all = [Pending, Accepted, Rejected, Conflict];
        let allowed: Vec<_> = all
            .iter()
            .flat_map(|&a| all.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| a.can_become(b))
            .collect();
        assert_eq!(
            allowed,
            vec![(Pending, Accepted), (Pending, Rejected), (Pending, Conflict), (Conflict, Accepted), (Conflict, Rejected)]
        );
    }

    #[test]
    fn mining_filters_and_sorts() {
        let texts: Vec<ExternalText> = ["a", "b", "c"]
            .iter()
            .map(|t| ExternalText {
                id: t.to_string(),
                text: t.to_string(),
            })
            .collect();
        let model = |t: &str| match t {
            "a" => [0.9, 0.0, 0.0, 0.0],
            "b" => [0.3, 0.1, 0.0, 0.0],
            _ => [0.0, 0.0, 0.7, 0.2],
        };
        let c = mine_candidates(&texts, &model, 0.5_f64, "ext").unwrap();
        let scores: Vec<f64> = c.iter().map(|c| c.score()).collect();
        assert_eq!(scores, vec![0.9, 0.7]);
        assert!(mine_candidates(&texts, &model, 1.0_f64, "ext").is_err());
        assert!(mine_candidates(&[], &model, 0.5_f64, "ext").unwrap().is_empty());
    }

    #[test]
    fn merge_identity_and_collision() {
        let empty = AugmentationBatch::new(Vec::new()).unwrap();
        assert_eq!(merge_accepted(&base(), &empty).unwrap(), base());
        let dup = AugmentationBatch::new(vec![
            Sample::new("a", "x", LabelVector::NON_VIOLENT).with_provenance(Provenance::Mined)
        ])
        .unwrap();
        assert!(merge_accepted(&base(), &dup).is_err());
    }
}
