//! Labeled corpus: loading, validation, canonical serialization, class
//! statistics and stratified train/validation/test splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{DecisionLabel, LabelVector, ViolenceClass, NUM_CLASSES};
use crate::rng;

/// Canonical column order for corpus files.
pub const HEADER: [&str; 9] = [
    "id",
    "text",
    "religio",
    "ethno",
    "nondenominational",
    "noncommunal",
    "sublabel",
    "provenance",
    "needs_context",
];

const REQUIRED: [&str; 5] = ["text", "religio", "ethno", "nondenominational", "noncommunal"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    #[default]
    Original,
    Paraphrase,
    Manual,
    Mined,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Paraphrase => "paraphrase",
            Provenance::Manual => "manual",
            Provenance::Mined => "mined",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "original" => Some(Provenance::Original),
            "paraphrase" => Some(Provenance::Paraphrase),
            "manual" => Some(Provenance::Manual),
            "mined" => Some(Provenance::Mined),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub labels: LabelVector,
    /// Subclass code 1-4 carried through from the source data; never modeled.
    pub sublabel: Option<u8>,
    pub provenance: Provenance,
    pub needs_context: bool,
}

impl Sample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, labels: LabelVector) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            labels,
            sublabel: None,
            provenance: Provenance::Original,
            needs_context: false,
        }
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn decision(&self) -> DecisionLabel {
        self.labels.decision()
    }
}

/// One serialized row, shared by the JSONL reader and writer.
#[derive(Serialize, Deserialize)]
struct JsonRecord {
    #[serde(default)]
    id: Option<String>,
    text: String,
    religio: serde_json::Value,
    ethno: serde_json::Value,
    nondenominational: serde_json::Value,
    noncommunal: serde_json::Value,
    #[serde(default)]
    sublabel: Option<u8>,
    #[serde(default)]
    provenance: Option<String>,
    #[serde(default)]
    needs_context: Option<serde_json::Value>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => Ok(Format::Csv),
            Some("jsonl") | Some("json") => Ok(Format::Jsonl),
            _ => Err(Error::Config(format!(
                "cannot infer corpus format of {} (expected .csv or .jsonl)",
                path.display()
            ))),
        }
    }
}

/// An immutable, validated collection of samples.
#[derive(Clone, Debug)]
pub struct Corpus {
    samples: Vec<Sample>,
    index: HashMap<String, usize>,
    counts: [usize; NUM_CLASSES],
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.samples == other.samples
    }
}

impl Corpus {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let mut index = HashMap::with_capacity(samples.len());
        let mut counts = [0usize; NUM_CLASSES];
        for (i, s) in samples.iter().enumerate() {
            if s.text.trim().is_empty() {
                return Err(Error::Validation(format!("sample `{}` has empty text", s.id)));
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate sample id `{}`", s.id)));
            }
            for c in ViolenceClass::ALL {
                counts[c.index()] += usize::from(s.labels.get(c));
            }
        }
        Ok(Self {
            samples,
            index,
            counts,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new()).expect("empty corpus is valid")
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Positive count per class, in class column order.
    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        self.counts
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.index.get(id).map(|&i| &self.samples[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Sample> {
        self.samples.iter()
    }

    /// Samples with the given ids, in the order of `ids`.
    pub fn subset<S: AsRef<str>>(&self, ids: &[S]) -> Result<Corpus> {
        let samples = ids
            .iter()
            .map(|id| {
                self.get(id.as_ref())
                    .cloned()
                    .ok_or_else(|| Error::Validation(format!("unknown sample id `{}`", id.as_ref())))
            })
            .collect::<Result<Vec<_>>>()?;
        Corpus::new(samples)
    }

    /// Samples sorted by id, the canonical serialization order.
    pub fn canonical_order(&self) -> Vec<&Sample> {
        let mut v: Vec<&Sample> = self.samples.iter().collect();
        v.sort_by(|a, b| a.id.cmp(&b.id));
        v
    }

    /// SHA-256 of the canonical JSONL serialization, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_jsonl(self, &mut buf).expect("in-memory write");
        hex(&Sha256::digest(&buf))
    }

    pub fn load(path: &Path) -> Result<Corpus> {
        load_corpus(path, Format::from_path(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let format = Format::from_path(path)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        match format {
            Format::Csv => write_csv(self, &mut w)?,
            Format::Jsonl => write_jsonl(self, &mut w)?,
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_flag(raw: &str, column: &str, row: usize) -> Result<(bool, Option<u8>)> {
    let trimmed = raw.trim();
    let value: u8 = trimmed
        .parse()
        .ok()
        .or_else(|| {
            trimmed
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && (0.0..=4.0).contains(v))
                .map(|v| v as u8)
        })
        .ok_or_else(|| Error::Parse {
            row,
            message: format!("column `{column}` must be 0 or 1, got `{raw}`"),
        })?;
    match value {
        0 => Ok((false, None)),
        1 => Ok((true, None)),
        // source data encodes the subclass directly in the class column
        2..=4 => Ok((true, Some(value))),
        _ => Err(Error::Parse {
            row,
            message: format!("column `{column}` must be 0 or 1, got `{raw}`"),
        }),
    }
}

fn parse_bool(raw: &str, row: usize) -> Result<bool> {
    match raw.trim().to_ascii_lowercase().as_str() {
        "" | "0" | "false" => Ok(false),
        "1" | "true" => Ok(true),
        other => Err(Error::Parse {
            row,
            message: format!("needs_context must be 0/1, got `{other}`"),
        }),
    }
}

struct RawRow<'a> {
    row: usize,
    id: Option<String>,
    text: String,
    flags: [&'a str; NUM_CLASSES],
    sublabel: Option<u8>,
    provenance: Option<&'a str>,
    needs_context: bool,
}

fn build_sample(raw: RawRow<'_>) -> Result<Sample> {
    let row = raw.row;
    let mut flags = [false; NUM_CLASSES];
    let mut sublabel = raw.sublabel;
    for c in ViolenceClass::ALL {
        let (flag, sub) = parse_flag(raw.flags[c.index()], c.column(), row)?;
        flags[c.index()] = flag;
        if sublabel.is_none() {
            sublabel = sub;
        }
    }
    let id = raw.id.unwrap_or_else(|| format!("row-{row:06}"));
    let labels = LabelVector::new(flags).map_err(|e| {
        Error::Validation(format!("row {row} (id `{id}`): {e}"))
    })?;
    if let Some(s) = sublabel {
        if !(1..=4).contains(&s) {
            return Err(Error::Parse {
                row,
                message: format!("sublabel must be 1-4, got {s}"),
            });
        }
    }
    let provenance = match raw.provenance {
        None => Provenance::Original,
        Some(p) => Provenance::parse(p).ok_or_else(|| Error::Parse {
            row,
            message: format!("unknown provenance `{p}`"),
        })?,
    };
    if raw.text.trim().is_empty() {
        return Err(Error::Validation(format!("row {row} (id `{id}`): empty text")));
    }
    Ok(Sample {
        id,
        text: raw.text,
        labels,
        sublabel,
        provenance,
        needs_context: raw.needs_context,
    })
}

/// Loads and validates a corpus file.
///
/// A missing `id` column is tolerated (ids become `row-NNNNNN`) so that
/// the five-column source release loads unchanged.
pub fn load_corpus(path: &Path, format: Format) -> Result<Corpus> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let samples = match format {
        Format::Csv => read_csv(BufReader::new(file))?,
        Format::Jsonl => read_jsonl(BufReader::new(file))?,
    };
    Corpus::new(samples)
}

pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Vec<Sample>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 0,
            message: e.to_string(),
        })?
        .clone();
    let mut col: HashMap<&str, usize> = HashMap::new();
    for (i, h) in headers.iter().enumerate() {
        let name = h.trim().trim_start_matches('\u{feff}');
        let known = HEADER.iter().find(|&&k| k == name).ok_or_else(|| Error::Parse {
            row: 0,
            message: format!("unexpected column `{name}`"),
        })?;
        col.insert(known, i);
    }
    for req in REQUIRED {
        if !col.contains_key(req) {
            return Err(Error::Parse {
                row: 0,
                message: format!("missing required column `{req}`"),
            });
        }
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let field = |name: &str| col.get(name).and_then(|&j| rec.get(j));
        let sublabel = match field("sublabel").map(str::trim) {
            None | Some("") => None,
            Some(s) => Some(s.parse::<u8>().map_err(|_| Error::Parse {
                row,
                message: format!("bad sublabel `{s}`"),
            })?),
        };
        out.push(build_sample(RawRow {
            row,
            id: field("id").map(str::to_owned),
            text: field("text").unwrap_or_default().to_owned(),
            flags: [
                field("religio").unwrap_or_default(),
                field("ethno").unwrap_or_default(),
                field("nondenominational").unwrap_or_default(),
                field("noncommunal").unwrap_or_default(),
            ],
            sublabel,
            provenance: field("provenance"),
            needs_context: parse_bool(field("needs_context").unwrap_or_default(), row)?,
        })?);
    }
    Ok(out)
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Bool(b) => u8::from(*b).to_string(),
        other => other.to_string(),
    }
}

pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let row = i + 1;
        let line = line.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let flags = [
            json_scalar(&rec.religio),
            json_scalar(&rec.ethno),
            json_scalar(&rec.nondenominational),
            json_scalar(&rec.noncommunal),
        ];
        let needs_context = match &rec.needs_context {
            None | Some(serde_json::Value::Null) => false,
            Some(v) => parse_bool(&json_scalar(v), row)?,
        };
        out.push(build_sample(RawRow {
            row,
            id: rec.id,
            text: rec.text,
            flags: [&flags[0], &flags[1], &flags[2], &flags[3]],
            sublabel: rec.sublabel,
            provenance: rec.provenance.as_deref(),
            needs_context,
        })?);
    }
    Ok(out)
}

pub fn write_csv<W: Write>(corpus: &Corpus, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Validation(format!("csv write failed: {e}"));
    wtr.write_record(HEADER).map_err(csv_err)?;
    for s in corpus.canonical_order() {
        let [r, e, n, c] = s.labels.bits();
        wtr.write_record([
            s.id.as_str(),
            s.text.as_str(),
            &r.to_string(),
            &e.to_string(),
            &n.to_string(),
            &c.to_string(),
            &s.sublabel.map(|v| v.to_string()).unwrap_or_default(),
            s.provenance.as_str(),
            if s.needs_context { "1" } else { "0" },
        ])
        .map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::Validation(format!("csv write failed: {e}")))
}

pub fn sample_to_json(s: &Sample) -> serde_json::Value {
    let [r, e, n, c] = s.labels.bits();
    serde_json::to_value(JsonRecord {
        id: Some(s.id.clone()),
        text: s.text.clone(),
        religio: r.into(),
        ethno: e.into(),
        nondenominational: n.into(),
        noncommunal: c.into(),
        sublabel: s.sublabel,
        provenance: Some(s.provenance.as_str().to_owned()),
        needs_context: Some(u8::from(s.needs_context).into()),
    })
    .expect("record serializes")
}

/// Writes samples as JSONL in the given order.
pub fn write_samples_jsonl<'a, W: Write>(
    samples: impl IntoIterator<Item = &'a Sample>,
    mut w: W,
) -> Result<()> {
    for s in samples {
        let line = serde_json::to_string(&sample_to_json(s))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<jsonl>", e))?;
    }
    Ok(())
}

pub fn write_jsonl<W: Write>(corpus: &Corpus, w: W) -> Result<()> {
    write_samples_jsonl(corpus.canonical_order(), w)
}

/// Per-class fractions over a selected subset of a corpus.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassDistribution {
    pub fractions: [f64; NUM_CLASSES],
    /// Share of selected samples with no class flag (0 when `violent_only`).
    pub non_violent: f64,
    pub selected: usize,
}

impl ClassDistribution {
    pub fn get(&self, class: ViolenceClass) -> f64 {
        self.fractions[class.index()]
    }

    pub fn as_map(&self) -> BTreeMap<ViolenceClass, f64> {
        ViolenceClass::ALL
            .iter()
            .map(|&c| (c, self.fractions[c.index()]))
            .collect()
    }
}

/// Fraction of selected samples carrying each class flag.
pub fn class_distribution(corpus: &Corpus, violent_only: bool) -> Result<ClassDistribution> {
    let selected: Vec<&Sample> = corpus
        .iter()
        .filter(|s| !violent_only || s.labels.is_violent())
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyInput(if violent_only {
            "no violent samples to compute a distribution over".into()
        } else {
            "corpus is empty".into()
        }));
    }
    let n = selected.len() as f64;
    let mut fractions = [0.0; NUM_CLASSES];
    let mut non_violent = 0usize;
    for s in &selected {
        for c in ViolenceClass::ALL {
            if s.labels.get(c) {
                fractions[c.index()] += 1.0;
            }
        }
        non_violent += usize::from(!s.labels.is_violent());
    }
    Ok(ClassDistribution {
        fractions: fractions.map(|f| f / n),
        non_violent: non_violent as f64 / n,
        selected: selected.len(),
    })
}

/// Train/validation/test partition of a corpus by sample id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

pub const TEST_RATIO: f64 = 0.20;
pub const VAL_RATIO: f64 = 0.15;

impl SplitSpec {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }

    pub fn test_set(&self) -> HashSet<&str> {
        self.test.iter().map(String::as_str).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Checks that the three sets partition exactly the ids of `corpus`.
    pub fn validate_against(&self, corpus: &Corpus) -> Result<()> {
        let mut seen = HashSet::with_capacity(corpus.len());
        for id in self.train.iter().chain(&self.val).chain(&self.test) {
            if !corpus.contains(id) {
                return Err(Error::Validation(format!("split references unknown id `{id}`")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Validation(format!("id `{id}` appears in two splits")));
            }
        }
        if seen.len() != corpus.len() {
            return Err(Error::Validation(format!(
                "split covers {} of {} samples",
                seen.len(),
                corpus.len()
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `total` across strata proportional to
/// `sizes`. Every share stays within one unit of its exact quota.
fn apportion(sizes: &[usize], total: usize) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let quotas: Vec<f64> = sizes
        .iter()
        .map(|&s| s as f64 * total as f64 / n as f64)
        .collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = total - alloc.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if alloc[i] < sizes[i] {
            alloc[i] += 1;
            remaining -= 1;
        }
    }
    alloc
}

/// Stratified 80/20 test holdout, then 85/15 train/validation of the rest.
///
/// Strata are decision labels; within each stratum ids are sorted and then
/// shuffled by the `split` substream of `seed`, so the result depends only
/// on the corpus contents and the seed.
pub fn split(corpus: &Corpus, seed: u64) -> Result<SplitSpec> {
    let n = corpus.len();
    if n < 10 {
        return Err(Error::Validation(format!(
            "corpus of {n} samples is too small to split (need at least 10)"
        )));
    }
    let test_total = (n as f64 * TEST_RATIO).round() as usize;
    let rest = n - test_total;
    let val_total = (rest as f64 * VAL_RATIO).round() as usize;
    if test_total == 0 || val_total == 0 || rest == val_total {
        return Err(Error::Validation(format!(
            "corpus of {n} samples cannot populate all three splits"
        )));
    }

    let mut strata: Vec<Vec<String>> = vec![Vec::new(); DecisionLabel::ALL.len()];
    for s in corpus.iter() {
        strata[s.decision().index()].push(s.id.clone());
    }
    let mut rng = rng::substream(seed, "split");
    for ids in &mut strata {
        ids.sort();
        ids.shuffle(&mut rng);
    }
    let sizes: Vec<usize> = strata.iter().map(Vec::len).collect();
    let test_alloc = apportion(&sizes, test_total);
    let remaining: Vec<usize> = sizes.iter().zip(&test_alloc).map(|(s, t)| s - t).collect();
    let val_alloc = apportion(&remaining, val_total);

    let mut spec = SplitSpec {
        seed,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for (k, ids) in strata.into_iter().enumerate() {
        let (t, v) = (test_alloc[k], val_alloc[k]);
        spec.test.extend_from_slice(&ids[..t]);
        spec.val.extend_from_slice(&ids[t..t + v]);
        spec.train.extend_from_slice(&ids[t + v..]);
    }
    spec.train.sort();
    spec.val.sort();
    spec.test.sort();
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: [u8; 4]) -> LabelVector {
        LabelVector::from_bits(bits).unwrap()
    }

    fn synthetic(n: usize) -> Corpus {
        let samples = (0..n)
            .map(|i| {
                let labels = match i % 10 {
                    0..=5 => LabelVector::NON_VIOLENT,
                    6 | 7 => lv([0, 0, 0, 1]),
                    8 => lv([1, 0, 0, 0]),
                    _ => lv([0, 1, 0, 0]),
                };
                Sample::new(format!("s{i:05}"), format!("text {i}"), labels)
            })
            .collect();
        Corpus::new(samples).unwrap()
    }

    #[test]
    fn load_three_rows() {
        let data = "id,text,religio,ethno,nondenominational,noncommunal\n\
                    a,hello,1,0,0,0\nb,world,0,1,0,0\nc,\"x, y\",0,0,0,0\n";
        let corpus = Corpus::new(read_csv(data.as_bytes()).unwrap()).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.counts(), [1, 1, 0, 0]);
        assert_eq!(corpus.get("c").unwrap().text, "x, y");
    }

    #[test]
    fn exclusivity_violation_names_row() {
        let data = "id,text,religio,ethno,nondenominational,noncommunal\n\
                    a,ok,0,0,0,0\nbad,oops,1,0,0,1\n";
        let err = read_csv(data.as_bytes()).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Validation(_)));
        assert!(msg.contains("row 2") && msg.contains("bad"), "{msg}");
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let data = "id,text,religio,ethno,nondenominational,noncommunal\n\
                    a,ok,0,0,0,0\nb,ok,0,x,0,0\n";
        match read_csv(data.as_bytes()).unwrap_err() {
            Error::Parse { row, .. } => assert_eq!(row, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn duplicate_id_rejected() {
        let data = "id,text,religio,ethno,nondenominational,noncommunal\n\
                    a,one,0,0,0,0\na,two,0,0,0,0\n";
        let samples = read_csv(data.as_bytes()).unwrap();
        assert!(matches!(Corpus::new(samples), Err(Error::Validation(_))));
    }

    #[test]
    fn subclass_codes_in_class_columns_are_passed_through() {
        let data = "text,religio,ethno,nondenominational,noncommunal\n\
                    one,3,0,0,0\ntwo,0,0,0,0\n";
        let samples = read_csv(data.as_bytes()).unwrap();
        assert_eq!(samples[0].id, "row-000001");
        assert_eq!(samples[0].labels, lv([1, 0, 0, 0]));
        assert_eq!(samples[0].sublabel, Some(3));
    }

    #[test]
    fn unknown_column_rejected() {
        let data = "id,text,religio,ethno,nondenominational,noncommunal,extra\n";
        assert!(read_csv(data.as_bytes()).is_err());
    }

    #[test]
    fn jsonl_reader_accepts_bools_and_ints() {
        let data = r#"{"id":"a","text":"t","religio":1,"ethno":0,"nondenominational":0,"noncommunal":0,"needs_context":true}
{"id":"b","text":"u","religio":"0","ethno":0,"nondenominational":0,"noncommunal":1,"provenance":"mined"}
"#;
        let samples = read_jsonl(data.as_bytes()).unwrap();
        assert!(samples[0].needs_context);
        assert_eq!(samples[1].provenance, Provenance::Mined);
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let mut samples = synthetic(30).into_samples();
        samples[3].text = "quote \" and, comma\nnewline".into();
        samples[4].sublabel = Some(2);
        samples[5].needs_context = true;
        samples.reverse();
        let corpus = Corpus::new(samples).unwrap();
        let writers: [fn(&Corpus, &mut Vec<u8>) -> Result<()>; 2] = [|c, w| write_csv(c, w), |c, w| write_jsonl(c, w)];
        for writer in writers {
            let mut first = Vec::new();
            writer(&corpus, &mut first).unwrap();
            let reread = if first.starts_with(b"id,") {
                read_csv(first.as_slice()).unwrap()
            } else {
                read_jsonl(first.as_slice()).unwrap()
            };
            let mut second = Vec::new();
            writer(&Corpus::new(reread).unwrap(), &mut second).unwrap();
            assert_eq!(first, second);
        }
    }

    #[test]
    fn distribution_of_two_classes() {
        let samples = vec![
            Sample::new("a", "x", lv([1, 0, 0, 0])),
            Sample::new("b", "x", lv([1, 0, 0, 0])),
            Sample::new("c", "x", lv([0, 1, 0, 0])),
            Sample::new("d", "x", lv([0, 1, 0, 0])),
            Sample::new("e", "x", LabelVector::NON_VIOLENT),
        ];
        let corpus = Corpus::new(samples).unwrap();
        let d = class_distribution(&corpus, true).unwrap();
        assert_eq!(d.fractions, [0.5, 0.5, 0.0, 0.0]);
        assert!((d.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let all = class_distribution(&corpus, false).unwrap();
        assert!((all.non_violent - 0.2).abs() < 1e-12);
    }

    #[test]
    fn distribution_errors_on_empty_selection() {
        let corpus = Corpus::new(vec![Sample::new("a", "x", LabelVector::NON_VIOLENT)]).unwrap();
        assert!(matches!(class_distribution(&corpus, true), Err(Error::EmptyInput(_))));
        assert!(class_distribution(&Corpus::empty(), false).is_err());
    }

    #[test]
    fn split_sizes_for_1000() {
        let corpus = synthetic(1000);
        let spec = split(&corpus, 42).unwrap();
        assert_eq!(spec.sizes(), (680, 120, 200));
        spec.validate_against(&corpus).unwrap();
    }

    #[test]
    fn split_is_deterministic_and_order_independent() {
        let corpus = synthetic(257);
        let a = split(&corpus, 3).unwrap();
        let b = split(&corpus, 3).unwrap();
        assert_eq!(a, b);
        let mut reversed = corpus.clone().into_samples();
        reversed.reverse();
        let c = split(&Corpus::new(reversed).unwrap(), 3).unwrap();
        assert_eq!(a, c);
        assert_ne!(a, split(&corpus, 4).unwrap());
    }

    #[test]
    fn split_is_stratified() {
        let corpus = synthetic(1000);
        let spec = split(&corpus, 1).unwrap();
        let test = corpus.subset(&spec.test).unwrap();
        // 10% religio overall -> 20 of 200 test samples, within one.
        let religio = test.counts()[0] as i64;
        assert!((religio - 20).abs() <= 1, "{religio}");
    }

    #[test]
    fn split_rejects_tiny_corpus() {
        assert!(split(&synthetic(9), 0).is_err());
        assert!(split(&synthetic(10), 0).is_ok());
    }

    #[test]
    fn apportion_respects_quota() {
        let sizes = [7, 3, 11, 0, 5];
        let a = apportion(&sizes, 5);
        assert_eq!(a.iter().sum::<usize>(), 5);
        for (s, x) in sizes.iter().zip(&a) {
            let q = *s as f64 * 5.0 / 26.0;
            assert!((*x as f64 - q).abs() < 1.0);
        }
    }
}
