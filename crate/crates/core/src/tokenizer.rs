//! WordPiece subword tokenizer compatible with BERT-style `vocab.txt` files.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Serialize;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const MASK: &str = "[MASK]";
const SPECIALS: [&str; 5] = [PAD, UNK, CLS, SEP, MASK];
const CONTINUATION: &str = "##";
const MAX_CHARS_PER_WORD: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct WordPiece {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    unk: u32,
    cls: u32,
    sep: u32,
}

/// Vocabulary construction options for the built-in encoders.
#[derive(Clone, Copy, Debug)]
pub struct VocabOptions {
    /// Whole words seen at least this often become single pieces.
    pub min_word_freq: usize,
    pub max_words: usize,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            min_word_freq: 1,
            max_words: 8000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TokenStats {
    /// Token count including the mandatory `[CLS]`/`[SEP]` markers, measured
    /// before truncation.
    pub token_count: usize,
    pub truncated: bool,
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            get_general_category(c),
            GeneralCategory::ConnectorPunctuation
                | GeneralCategory::DashPunctuation
                | GeneralCategory::OpenPunctuation
                | GeneralCategory::ClosePunctuation
                | GeneralCategory::InitialPunctuation
                | GeneralCategory::FinalPunctuation
                | GeneralCategory::OtherPunctuation
        )
}

/// Whitespace split with punctuation characters as standalone words.
pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    for chunk in text.split_whitespace() {
        let mut cur = String::new();
        for c in chunk.chars() {
            if c.is_control() {
                continue;
            }
            if is_punctuation(c) {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
    }
    words
}

impl WordPiece {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            ids.entry(t.clone()).or_insert(i as u32);
        }
        let get = |s: &str| {
            ids.get(s)
                .copied()
                .ok_or_else(|| Error::Config(format!("vocabulary lacks special token {s}")))
        };
        let (unk, cls, sep) = (get(UNK)?, get(CLS)?, get(SEP)?);
        Ok(Self {
            vocab: tokens,
            ids,
            unk,
            cls,
            sep,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_tokens(text.lines().map(|l| l.trim_end_matches('\r').to_owned()).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.vocab.join("\n");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Resolves a tokenizer id: a `vocab.txt` file or a directory holding one
    /// (a checkpoint directory or a downloaded model directory).
    pub fn resolve(tokenizer_id: &str) -> Result<Self> {
        let path = Path::new(tokenizer_id);
        if path.is_file() {
            return Self::load(path);
        }
        let vocab = path.join("vocab.txt");
        if vocab.is_file() {
            return Self::load(&vocab);
        }
        Err(Error::Config(format!(
            "tokenizer `{tokenizer_id}` is not installed: expected a vocab.txt file or a directory containing one"
        )))
    }

    /// Builds a vocabulary from training texts: specials, every character
    /// seen (as word-initial and continuation piece), then frequent words.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, opts: VocabOptions) -> Self {
        let mut word_freq: HashMap<String, usize> = HashMap::new();
        let mut chars = std::collections::BTreeSet::new();
        for text in texts {
            for w in pre_tokenize(text) {
                chars.extend(w.chars());
                *word_freq.entry(w).or_default() += 1;
            }
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for &c in &chars {
            tokens.push(c.to_string());
        }
        for &c in &chars {
            tokens.push(format!("{CONTINUATION}{c}"));
        }
        let mut words: Vec<(String, usize)> = word_freq
            .into_iter()
            .filter(|(w, f)| *f >= opts.min_word_freq && w.chars().count() > 1)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        tokens.extend(words.into_iter().take(opts.max_words).map(|(w, _)| w));
        Self::from_tokens(tokens).expect("specials present")
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    fn word_pieces(&self, word: &str, out: &mut Vec<u32>) {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_CHARS_PER_WORD {
            out.push(self.unk);
            return;
        }
        let mark = out.len();
        let mut start = 0;
        let mut piece = String::new();
        while start < chars.len() {
            let mut end = chars.len();
            let mut found = None;
            while start < end {
                piece.clear();
                if start > 0 {
                    piece.push_str(CONTINUATION);
                }
                piece.extend(&chars[start..end]);
                if let Some(&id) = self.ids.get(&piece) {
                    found = Some(id);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(id) => {
                    out.push(id);
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(self.unk);
                    return;
                }
            }
        }
    }

    /// Subword ids without special markers.
    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for w in pre_tokenize(text) {
            self.word_pieces(&w, &mut out);
        }
        out
    }

    /// `[CLS] pieces [SEP]`, truncated to `max_tokens` total.
    pub fn encode(&self, text: &str, max_tokens: usize) -> Vec<u32> {
        let mut ids = Vec::with_capacity(16);
        ids.push(self.cls);
        let body = self.encode_words(text);
        let room = max_tokens.saturating_sub(2);
        ids.extend(body.into_iter().take(room));
        ids.push(self.sep);
        ids
    }

    pub fn token_stats(&self, text: &str, max_tokens: usize) -> TokenStats {
        let token_count = self.encode_words(text).len() + 2;
        TokenStats {
            token_count,
            truncated: token_count > max_tokens,
        }
    }

    pub fn pieces(&self, text: &str) -> Vec<&str> {
        self.encode_words(text)
            .into_iter()
            .filter_map(|id| self.token(id))
            .collect()
    }

    pub fn piece_histogram(&self, text: &str) -> BTreeMap<u32, usize> {
        let mut h = BTreeMap::new();
        for id in self.encode_words(text) {
            *h.entry(id).or_default() += 1;
        }
        h
    }
}

/// Token accounting against an installed tokenizer.
pub fn token_stats(text: &str, tokenizer_id: &str, max_tokens: usize) -> Result<TokenStats> {
    Ok(WordPiece::resolve(tokenizer_id)?.token_stats(text, max_tokens))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> WordPiece {
        WordPiece::from_tokens(
            ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "un", "##aff", "##able", "aff", "a", "##b"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn greedy_longest_match() {
        let v = vocab();
        assert_eq!(v.pieces("unaffable"), vec!["un", "##aff", "##able"]);
        assert_eq!(v.pieces("ab zz"), vec!["a", "##b", "[UNK]"]);
    }

    #[test]
    fn punctuation_splits_words() {
        assert_eq!(pre_tokenize("হিন্দু।মুসলিম, ok"), vec!["হিন্দু", "।", "মুসলিম", ",", "ok"]);
    }

    #[test]
    fn empty_text_has_only_markers() {
        let stats = vocab().token_stats("", 512);
        assert_eq!(stats, TokenStats { token_count: 2, truncated: false });
    }

    #[test]
    fn long_rare_text_is_truncated() {
        let v = vocab();
        let text = vec!["zzqx"; 1000].join(" ");
        // oracle: the tokenizer itself counts one [UNK] per rare word
        let expected = v.encode_words(&text).len() + 2;
        assert_eq!(expected, 1002);
        let stats = v.token_stats(&text, 512);
        assert_eq!(stats.token_count, expected);
        assert!(stats.truncated);
        assert_eq!(v.encode(&text, 512).len(), 512);
    }

    #[test]
    fn built_vocab_covers_every_char() {
        let v = WordPiece::build(["কাফের নাস্তিক", "ধর্ম কাফের"], VocabOptions { min_word_freq: 2, max_words: 10 });
        assert!(v.id("কাফের").is_some());
        assert!(v.id("নাস্তিক").is_none());
        assert!(!v.encode_words("নাস্তিক").contains(&v.unk));
    }

    #[test]
    fn resolve_unknown_is_config_error() {
        assert!(matches!(
            WordPiece::resolve("/definitely/not/here"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn save_and_resolve_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = vocab();
        v.save(&dir.path().join("vocab.txt")).unwrap();
        let again = WordPiece::resolve(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(again, v);
        let stats = token_stats("unaffable", dir.path().to_str().unwrap(), 512).unwrap();
        assert_eq!(stats.token_count, 5);
    }
}
