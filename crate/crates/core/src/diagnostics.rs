//! Error-analysis tools: frequent words per class, embedding similarity,
//! perturbation-based local explanations and trigger-word coverage.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::Serialize;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::labels::ViolenceClass;
use crate::linalg::weighted_ridge;
use crate::rng;
use crate::scalar::Scalar;
use crate::tokenizer::pre_tokenize;
use crate::trainer::{CheckpointOf, Classifier};

/// Top-`k` whitespace tokens among samples of `class`, ties broken
/// lexicographically.
pub fn frequent_words(corpus: &Corpus, class: ViolenceClass, k: usize) -> Result<Vec<(String, usize)>> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut members = 0;
    for s in corpus.iter().filter(|s| s.labels.get(class)) {
        members += 1;
        for t in s.text.split_whitespace() {
            *counts.entry(t).or_default() += 1;
        }
    }
    if members == 0 {
        return Err(Error::EmptyInput(format!("class {class} has no samples")));
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().map(|(w, c)| (w.to_owned(), c)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Mean of the input-embedding rows of the word's subword pieces.
pub fn word_vector<T: Scalar>(word: &str, checkpoint: &CheckpointOf<T>) -> Result<Vec<T>> {
    let ids = checkpoint.vocab().encode_words(word);
    if ids.is_empty() {
        return Err(Error::Validation(format!("`{word}` produces no subword tokens")));
    }
    let model = checkpoint.model();
    let dim = model.spec().embed_dim;
    let mut acc = vec![T::zero(); dim];
    for &id in &ids {
        let row = model
            .embedding_row(id)
            .ok_or_else(|| Error::Shape(format!("token id {id} outside the embedding table")))?;
        for (a, r) in acc.iter_mut().zip(row) {
            *a += *r;
        }
    }
    let n = T::from_count(ids.len());
    acc.iter_mut().for_each(|v| *v /= n);
    Ok(acc)
}

pub fn cosine<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::Shape(format!("vectors of length {} and {}", u.len(), v.len())));
    }
    let dot: T = u.iter().zip(v).map(|(&a, &b)| a * b).sum();
    let nu: T = u.iter().map(|&a| a * a).sum();
    let nv: T = v.iter().map(|&b| b * b).sum();
    if nu <= T::zero() || nv <= T::zero() {
        return Err(Error::Validation("cosine of a zero-norm vector".into()));
    }
    if u == v {
        return Ok(T::one());
    }
    Ok((dot / (nu.sqrt() * nv.sqrt())).max(-T::one()).min(T::one()))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityRow<T> {
    pub word_a: String,
    pub word_b: String,
    /// One value per encoder, in table column order.
    pub values: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimilarityTable<T> {
    pub encoders: Vec<String>,
    pub rows: Vec<SimilarityRow<T>>,
}

impl<T: Scalar> SimilarityTable<T> {
    /// `word_a,word_b,<encoder>...` with four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("word_a,word_b");
        for e in &self.encoders {
            out.push(',');
            out.push_str(e);
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{}", r.word_a, r.word_b);
            for v in &r.values {
                let _ = write!(out, ",{:.4}", v.as_f64());
            }
            out.push('\n');
        }
        out
    }

    pub fn get(&self, a: &str, b: &str, encoder: &str) -> Option<T> {
        let col = self.encoders.iter().position(|e| e == encoder)?;
        self.rows
            .iter()
            .find(|r| (r.word_a == a && r.word_b == b) || (r.word_a == b && r.word_b == a))
            .map(|r| r.values[col])
    }
}

/// Cosine similarity of every word pair under every named encoder.
pub fn similarity_table<T: Scalar>(
    pairs: &[(String, String)],
    encoders: &[(String, &CheckpointOf<T>)],
) -> Result<SimilarityTable<T>> {
    let mut rows = Vec::with_capacity(pairs.len());
    for (a, b) in pairs {
        let values = encoders
            .iter()
            .map(|(_, ck)| cosine(&word_vector(a, ck)?, &word_vector(b, ck)?))
            .collect::<Result<Vec<T>>>()?;
        rows.push(SimilarityRow {
            word_a: a.clone(),
            word_b: b.clone(),
            values,
        });
    }
    Ok(SimilarityTable {
        encoders: encoders.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureWeight<T> {
    pub token: String,
    pub weight: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExplanationOf<T> {
    pub text: String,
    pub target_class: ViolenceClass,
    /// Sorted by absolute weight, largest first.
    pub features: Vec<FeatureWeight<T>>,
    /// Weighted R² of the local linear surrogate.
    pub surrogate_fit: T,
    pub intercept: T,
    /// Model probability for the target class on the unperturbed text.
    pub score: T,
    pub n_samples: usize,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ExplainOptions {
    pub n_samples: usize,
    pub n_features: usize,
    pub seed: u64,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            n_features: 10,
            seed: 0,
        }
    }
}

const RIDGE_ALPHA: f64 = 1.0;

/// Fits a weighted linear model of the target-class probability on random
/// word-deletion masks of `text` and returns the strongest words.
///
/// Features are the distinct whitespace tokens; switching one off deletes
/// all its occurrences. Row 0 is the unperturbed text. Rows are weighted by
/// `sqrt(exp(-d² / w²))` with `d` the cosine distance of the mask to the
/// all-ones mask and `w = 0.25 √D`.
pub fn explain<T: Scalar, C: Classifier<T> + ?Sized>(
    text: &str,
    model: &C,
    target_class: ViolenceClass,
    opts: ExplainOptions,
) -> Result<ExplanationOf<T>> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    let mut features: Vec<&str> = Vec::new();
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let token_feature: Vec<usize> = tokens
        .iter()
        .map(|&t| {
            *slot.entry(t).or_insert_with(|| {
                features.push(t);
                features.len() - 1
            })
        })
        .collect();
    let d = features.len();
    if d == 0 {
        return Err(Error::EmptyInput("nothing to explain: text has no tokens".into()));
    }
    if opts.n_samples < 2 {
        return Err(Error::Config("explanations need at least 2 samples".into()));
    }

    let mut rng = rng::substream(opts.seed, "explain");
    let mut masks = vec![true; opts.n_samples * d];
    for row in 1..opts.n_samples {
        let off = rng.random_range(1..=d);
        for j in sample_indices(&mut rng, d, off) {
            masks[row * d + j] = false;
        }
    }
    let texts: Vec<String> = (0..opts.n_samples)
        .map(|row| {
            tokens
                .iter()
                .zip(&token_feature)
                .filter(|(_, &f)| masks[row * d + f])
                .map(|(t, _)| *t)
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let y: Vec<T> = model
        .predict_batch(&refs)
        .into_iter()
        .map(|p| p[target_class.index()])
        .collect();

    let width = 0.25 * (d as f64).sqrt();
    let weights: Vec<T> = (0..opts.n_samples)
        .map(|row| {
            let on = masks[row * d..(row + 1) * d].iter().filter(|&&m| m).count();
            let dist = 1.0 - (on as f64 / d as f64).sqrt();
            T::lit((-(dist * dist) / (width * width)).exp().sqrt())
        })
        .collect();
    let x: Vec<T> = masks.iter().map(|&m| if m { T::one() } else { T::zero() }).collect();
    let full = weighted_ridge(&x, d, &y, &weights, T::lit(RIDGE_ALPHA))?;

    let k = opts.n_features.min(d);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        full.coef[b]
            .abs()
            .partial_cmp(&full.coef[a].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let chosen = &order[..k];
    let xs: Vec<T> = (0..opts.n_samples)
        .flat_map(|row| chosen.iter().map(move |&j| (row, j)))
        .map(|(row, j)| x[row * d + j])
        .collect();
    let fit = weighted_ridge(&xs, k, &y, &weights, T::lit(RIDGE_ALPHA))?;

    let mut feats: Vec<FeatureWeight<T>> = chosen
        .iter()
        .zip(&fit.coef)
        .map(|(&j, &w)| FeatureWeight {
            token: features[j].to_owned(),
            weight: w,
        })
        .collect();
    feats.sort_by(|a, b| {
        b.weight
            .abs()
            .partial_cmp(&a.weight.abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(ExplanationOf {
        text: text.to_owned(),
        target_class,
        features: feats,
        surrogate_fit: fit.r2,
        intercept: fit.intercept,
        score: y[0],
        n_samples: opts.n_samples,
        seed: opts.seed,
    })
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            _ => out.push(c),
        }
    }
    out
}

impl<T: Scalar> ExplanationOf<T> {
    /// Standalone page: the text with explained words shaded by weight
    /// (red supports the class, blue opposes it) and a weight table.
    pub fn to_html(&self) -> String {
        let weights: HashMap<&str, f64> = self
            .features
            .iter()
            .map(|f| (f.token.as_str(), f.weight.as_f64()))
            .collect();
        let max = weights.values().fold(0.0_f64, |m, w| m.max(w.abs())).max(1e-12);
        let mut body = String::new();
        for tok in self.text.split_whitespace() {
            match weights.get(tok) {
                Some(&w) => {
                    let alpha = (w.abs() / max).clamp(0.15, 1.0);
                    let rgb = if w >= 0.0 { "220,50,47" } else { "38,139,210" };
                    let _ = write!(
                        body,
                        "<span style=\"background:rgba({rgb},{alpha:.2})\" title=\"{w:.4}\">{}</span> ",
                        escape_html(tok)
                    );
                }
                None => {
                    let _ = write!(body, "{} ", escape_html(tok));
                }
            }
        }
        let mut table = String::new();
        for f in &self.features {
            let _ = write!(
                table,
                "<tr><td>{}</td><td>{:+.4}</td></tr>",
                escape_html(&f.token),
                f.weight.as_f64()
            );
        }
        format!(
            "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Explanation</title>\
             <style>body{{font-family:sans-serif;max-width:48em;margin:2em auto}}\
             p.text{{line-height:2;font-size:1.2em}}td{{padding:0 1em}}</style></head><body>\n\
             <h1>{}</h1>\n<p>Prediction probability: {:.4} &middot; surrogate R²: {:.4} &middot; \
             {} samples, seed {}</p>\n<p class=\"text\">{}</p>\n\
             <table><tr><th>Word</th><th>Weight</th></tr>{}</table>\n</body></html>\n",
            self.target_class.display_name(),
            self.score.as_f64(),
            self.surrogate_fit.as_f64(),
            self.n_samples,
            self.seed,
            body.trim_end(),
            table
        )
    }
}

/// Fraction of texts containing at least one trigger word as a whole token.
pub fn trigger_coverage<S: AsRef<str>>(texts: &[S], triggers: &HashSet<String>) -> Result<f64> {
    if texts.is_empty() {
        return Err(Error::EmptyInput("no samples to measure trigger coverage on".into()));
    }
    let hits = texts
        .iter()
        .filter(|t| pre_tokenize(t.as_ref()).iter().any(|tok| triggers.contains(tok)))
        .count();
    Ok(hits as f64 / texts.len() as f64)
}

/// One word per line; blank lines and `#` comments are skipped.
pub fn load_word_list(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}
