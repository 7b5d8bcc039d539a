//! Deterministic text normalization applied before training and inference.
//!
//! Steps always run in the order fix_chars, strip_noise, replace_emojis,
//! remove_stopwords; each may be disabled. The pipeline is idempotent.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

pub const UNKNOWN_EMOJI: &str = ":unknown_emoji:";
const ZWJ: char = '\u{200D}';
const ZWNJ: char = '\u{200C}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Steps {
    pub fix_chars: bool,
    pub strip_noise: bool,
    pub replace_emojis: bool,
    pub remove_stopwords: bool,
}

impl Default for Steps {
    fn default() -> Self {
        Self {
            fix_chars: true,
            strip_noise: true,
            replace_emojis: true,
            remove_stopwords: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PreprocessConfig {
    stopwords: HashSet<String>,
    emoji_map: BTreeMap<String, String>,
    max_emoji_chars: usize,
    pub max_tokens: usize,
    pub steps: Steps,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            stopwords: HashSet::new(),
            emoji_map: BTreeMap::new(),
            max_emoji_chars: 0,
            max_tokens: 512,
            steps: Steps::default(),
        }
    }
}

/// `:[a-z_]+_emoji:`
pub fn is_emoji_token(s: &str) -> bool {
    s.strip_prefix(':')
        .and_then(|r| r.strip_suffix("_emoji:"))
        .is_some_and(|body| {
            !body.is_empty() && body.chars().all(|c| c.is_ascii_lowercase() || c == '_')
        })
}

impl PreprocessConfig {
    pub fn new(
        stopwords: impl IntoIterator<Item = String>,
        emoji_map: BTreeMap<String, String>,
        max_tokens: usize,
        steps: Steps,
    ) -> Result<Self> {
        if max_tokens < 8 {
            return Err(Error::Config(format!("max_tokens must be >= 8, got {max_tokens}")));
        }
        let mut map = BTreeMap::new();
        for (emoji, token) in emoji_map {
            if !is_emoji_token(&token) {
                return Err(Error::Config(format!(
                    "emoji map value `{token}` does not match :[a-z_]+_emoji:"
                )));
            }
            // variation selectors are stripped before lookup
            let key: String = emoji.chars().filter(|&c| !is_variation_selector(c)).collect();
            if key.is_empty() || !key.chars().next().is_some_and(is_emoji_start) {
                return Err(Error::Config(format!("emoji map key `{emoji}` is not an emoji")));
            }
            map.insert(key, token);
        }
        let max_emoji_chars = map.keys().map(|k| k.chars().count()).max().unwrap_or(0);
        Ok(Self {
            stopwords: stopwords
                .into_iter()
                .map(|s| s.trim().to_owned())
                .filter(|s| !s.is_empty())
                .collect(),
            emoji_map: map,
            max_emoji_chars,
            max_tokens,
            steps,
        })
    }

    /// Loads the stopword list (one token per line) and the emoji map
    /// (JSON object emoji -> token).
    pub fn from_files(
        stopwords: Option<&Path>,
        emoji_map: Option<&Path>,
        max_tokens: usize,
        steps: Steps,
    ) -> Result<Self> {
        let words = match stopwords {
            Some(p) => load_stopwords(p)?,
            None => Vec::new(),
        };
        let map = match emoji_map {
            Some(p) => load_emoji_map(p)?,
            None => BTreeMap::new(),
        };
        Self::new(words, map, max_tokens, steps)
    }

    pub fn stopwords(&self) -> &HashSet<String> {
        &self.stopwords
    }

    pub fn emoji_map(&self) -> &BTreeMap<String, String> {
        &self.emoji_map
    }
}

pub fn load_stopwords(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

pub fn load_emoji_map(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Data files shipped with the repository.
pub fn default_data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn is_variation_selector(c: char) -> bool {
    matches!(c, '\u{FE00}'..='\u{FE0F}')
}

fn is_skin_tone(c: char) -> bool {
    matches!(c, '\u{1F3FB}'..='\u{1F3FF}')
}

fn is_regional_indicator(c: char) -> bool {
    matches!(c, '\u{1F1E6}'..='\u{1F1FF}')
}

/// Characters that begin an emoji sequence.
pub fn is_emoji_start(c: char) -> bool {
    matches!(c,
        '\u{1F000}'..='\u{1FAFF}'
        | '\u{2600}'..='\u{27BF}'
        | '\u{2B00}'..='\u{2BFF}'
        | '\u{231A}'..='\u{231B}'
        | '\u{23E9}'..='\u{23FA}'
        | '\u{2934}'..='\u{2935}'
        | '\u{3030}' | '\u{303D}' | '\u{3297}' | '\u{3299}'
        | '\u{00A9}' | '\u{00AE}' | '\u{203C}' | '\u{2049}' | '\u{2122}' | '\u{2139}'
    )
}

/// Characters that may continue an emoji sequence after its first char.
fn is_emoji_modifier(c: char) -> bool {
    is_skin_tone(c)
        || is_variation_selector(c)
        || matches!(c, '\u{20E3}' | '\u{E0020}'..='\u{E007F}')
}

fn is_mark(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::NonspacingMark | GeneralCategory::SpacingMark | GeneralCategory::EnclosingMark
    )
}

fn is_letter(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::UppercaseLetter
            | GeneralCategory::LowercaseLetter
            | GeneralCategory::TitlecaseLetter
            | GeneralCategory::ModifierLetter
            | GeneralCategory::OtherLetter
    )
}

fn is_bengali(c: char) -> bool {
    matches!(c, '\u{0980}'..='\u{09FF}')
}

fn is_latin_letter(c: char) -> bool {
    is_letter(c)
        && matches!(c,
            'A'..='Z' | 'a'..='z'
            | '\u{00C0}'..='\u{024F}'
            | '\u{1E00}'..='\u{1EFF}')
}

fn is_digit(c: char) -> bool {
    get_general_category(c) == GeneralCategory::DecimalNumber
}

/// Letter classes kept by noise stripping; marks are handled separately.
fn is_kept_base(c: char) -> bool {
    (is_bengali(c) && is_letter(c)) || is_latin_letter(c) || is_digit(c)
}

/// True when the last non-joiner char of `out` can carry a combining mark.
fn mark_has_base(out: &str, kept_base: impl Fn(char) -> bool) -> bool {
    out.chars()
        .rev()
        .find(|&p| p != ZWJ && p != ZWNJ)
        .is_some_and(|p| kept_base(p) || is_mark(p))
}

/// NFC, then drop replacement characters and combining marks with no base.
pub fn fix_chars(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.nfc() {
        if c == '\u{FFFD}' {
            continue;
        }
        if is_mark(c) && !mark_has_base(&out, is_letter) {
            continue;
        }
        out.push(c);
    }
    out
}

fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Replaces garbage characters with spaces and collapses whitespace.
///
/// Kept: Bengali letters and their marks, Latin letters, digits, emoji
/// characters, joiners inside words, and whole `:name_emoji:` tokens.
pub fn strip_noise(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for token in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        if is_emoji_token(token) {
            out.push_str(token);
            continue;
        }
        for c in token.chars() {
            let keep = if is_mark(c) {
                is_bengali(c) && mark_has_base(&out, is_kept_base)
            } else if c == ZWJ || c == ZWNJ {
                out.chars().last().is_some_and(|p| is_kept_base(p) || is_mark(p) || is_emoji_start(p))
            } else {
                is_kept_base(c) || is_emoji_start(c) || is_emoji_modifier(c)
            };
            out.push(if keep { c } else { ' ' });
        }
    }
    collapse_whitespace(&out)
}

impl PreprocessConfig {
    fn lookup(&self, chars: &[char]) -> Option<&str> {
        let key: String = chars.iter().filter(|&&c| !is_variation_selector(c)).collect();
        self.emoji_map.get(&key).map(String::as_str)
    }

    /// Replaces every emoji sequence with its mapped token, space separated.
    pub fn replace_emojis(&self, text: &str) -> String {
        let chars: Vec<char> = text.chars().collect();
        let mut out = String::with_capacity(text.len() + 16);
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            if !is_emoji_start(c) && !is_skin_tone(c) {
                // stray modifiers carry no meaning on their own
                if !is_emoji_modifier(c) {
                    out.push(c);
                }
                i += 1;
                continue;
            }
            // extent of the full sequence: base, modifiers, ZWJ continuations
            let mut end = i + 1;
            if is_regional_indicator(c) && end < chars.len() && is_regional_indicator(chars[end]) {
                end += 1;
            }
            loop {
                while end < chars.len() && is_emoji_modifier(chars[end]) {
                    end += 1;
                }
                if end + 1 < chars.len() && chars[end] == ZWJ && is_emoji_start(chars[end + 1]) {
                    end += 2;
                } else {
                    // a dangling joiner belongs to the emoji, not the next word
                    while end < chars.len() && (chars[end] == ZWJ || chars[end] == ZWNJ) {
                        end += 1;
                    }
                    break;
                }
            }
            let seq = &chars[i..end];
            let without_tone: Vec<char> = seq.iter().copied().filter(|&c| !is_skin_tone(c)).collect();
            let token = self
                .lookup(seq)
                .or_else(|| self.lookup(&without_tone))
                .or_else(|| {
                    // longest mapped prefix, e.g. the base of an unmapped ZWJ family
                    (1..=seq.len().min(self.max_emoji_chars))
                        .rev()
                        .find_map(|k| self.lookup(&seq[..k]))
                })
                .unwrap_or(UNKNOWN_EMOJI);
            out.push(' ');
            out.push_str(token);
            out.push(' ');
            i = end;
        }
        collapse_whitespace(&out)
    }

    pub fn remove_stopwords(&self, text: &str) -> String {
        text.split_whitespace()
            .filter(|t| !self.stopwords.contains(*t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Runs the enabled steps in their fixed order.
    pub fn normalize(&self, text: &str) -> String {
        let mut s = if self.steps.fix_chars {
            fix_chars(text)
        } else {
            text.to_owned()
        };
        if self.steps.strip_noise {
            s = strip_noise(&s);
        }
        if self.steps.replace_emojis {
            s = self.replace_emojis(&s);
        }
        if self.steps.remove_stopwords {
            s = self.remove_stopwords(&s);
        }
        s
    }
}

pub fn normalize(text: &str, config: &PreprocessConfig) -> String {
    config.normalize(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn config(stopwords: &[&str]) -> PreprocessConfig {
        let mut map = BTreeMap::new();
        map.insert("🙏".to_owned(), ":folded_hands_emoji:".to_owned());
        map.insert("😂".to_owned(), ":face_with_tears_of_joy_emoji:".to_owned());
        map.insert("❤️".to_owned(), ":red_heart_emoji:".to_owned());
        map.insert("👍".to_owned(), ":thumbs_up_emoji:".to_owned());
        PreprocessConfig::new(
            stopwords.iter().map(|s| s.to_string()),
            map,
            512,
            Steps::default(),
        )
        .unwrap()
    }

    #[test]
    fn emoji_is_replaced_with_mapped_token() {
        let c = config(&[]);
        assert_eq!(c.normalize("ধন্যবাদ🙏"), "ধন্যবাদ :folded_hands_emoji:");
        assert_eq!(c.normalize("ভালো ❤️ খুব"), "ভালো :red_heart_emoji: খুব");
        assert_eq!(c.normalize("👍🏽"), ":thumbs_up_emoji:");
        assert_eq!(c.normalize("🦄"), UNKNOWN_EMOJI);
    }

    #[test]
    fn stopword_only_text_becomes_empty() {
        let c = config(&["এবং", "ও", "the"]);
        assert_eq!(c.normalize("এবং ও the"), "");
        assert_eq!(c.normalize(""), "");
    }

    /// Independent filter over the same rule table: a char survives iff it
    /// is an ASCII letter/digit; runs of anything else become one space.
    fn ascii_oracle(s: &str) -> String {
        let mapped: String = s
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { ' ' })
            .collect();
        mapped.split_whitespace().collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn noise_stripping_matches_oracle() {
        assert_eq!(strip_noise("abc!!!   def"), "abc def");
        assert_eq!(strip_noise("abc!!!   def"), ascii_oracle("abc!!!   def"));
        for s in ["a,b.c", "  (x) [y] {z}  ", "tab\tnew\nline", "ctrl\u{7}char", "#tag @user 42%"] {
            assert_eq!(strip_noise(s), ascii_oracle(s), "{s:?}");
        }
    }

    #[test]
    fn bengali_marks_and_joiners_survive() {
        let words = ["র‍্যাব", "হিন্দুদের", "ক্ষমা", "কোরআন", "৫০"];
        for w in words {
            assert_eq!(strip_noise(&fix_chars(w)), w.nfc().collect::<String>(), "{w}");
        }
        assert_eq!(strip_noise("হিন্দু।মুসলিম"), "হিন্দু মুসলিম");
    }

    #[test]
    fn fix_chars_repairs() {
        assert_eq!(fix_chars("a\u{FFFD}b"), "ab");
        // isolated vowel sign at start of text
        assert_eq!(fix_chars("\u{09BE}ক"), "ক");
        // decomposed o-kar composes under NFC
        assert_eq!(fix_chars("ক\u{09C7}\u{09BE}"), "ক\u{09CB}");
    }

    #[test]
    fn emoji_tokens_survive_noise_stripping() {
        assert_eq!(strip_noise("x :folded_hands_emoji: y"), "x :folded_hands_emoji: y");
        assert_eq!(strip_noise("x:folded_hands_emoji:"), "x folded hands emoji");
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut map = BTreeMap::new();
        map.insert("🙏".to_owned(), "folded hands".to_owned());
        assert!(PreprocessConfig::new(Vec::new(), map, 512, Steps::default()).is_err());
        assert!(PreprocessConfig::new(Vec::new(), BTreeMap::new(), 4, Steps::default()).is_err());
    }

    #[test]
    fn steps_can_be_disabled() {
        let mut c = config(&["x"]);
        c.steps.remove_stopwords = false;
        assert_eq!(c.normalize("x y!"), "x y");
        c.steps = Steps {
            fix_chars: false,
            strip_noise: false,
            replace_emojis: false,
            remove_stopwords: false,
        };
        assert_eq!(c.normalize("x  y!"), "x  y!");
    }

    fn token_multiset_without_emoji(s: &str) -> Vec<char> {
        let mut v: Vec<char> = s
            .chars()
            .filter(|&c| !c.is_whitespace() && !is_emoji_start(c) && !is_emoji_modifier(c) && c != ZWJ)
            .collect();
        v.sort();
        v
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let c = config(&["এবং", "the", "a"]);
            let once = c.normalize(&s);
            prop_assert_eq!(c.normalize(&once), once);
        }

        #[test]
        fn idempotent_on_mixed_script(s in "[a-z ক-হা-ৌ্‍‌!?।🙏😂👍🏽🦄\u{FE0F}\u{FFFD}0-9৫]{0,40}") {
            let c = config(&["এবং", "the", "a"]);
            let once = c.normalize(&s);
            prop_assert_eq!(c.normalize(&once), once);
        }

        #[test]
        fn emoji_replacement_keeps_other_chars(s in "[a-z ক-হ🙏😂🦄]{0,30}") {
            let c = config(&[]);
            let stripped = strip_noise(&s);
            let replaced = c.replace_emojis(&stripped);
            let before = token_multiset_without_emoji(&stripped);
            let after: Vec<char> = {
                let kept: String = replaced
                    .split_whitespace()
                    .filter(|t| !is_emoji_token(t))
                    .collect();
                let mut v: Vec<char> = kept.chars().collect();
                v.sort();
                v
            };
            prop_assert_eq!(before, after);
        }

        #[test]
        fn stopword_removal_only_drops_tokens(s in "[a-e ]{0,40}") {
            let c = config(&["a", "bb"]);
            let input: HashSet<String> = strip_noise(&s).split_whitespace().map(str::to_owned).collect();
            let out = c.normalize(&s);
            for t in out.split_whitespace() {
                prop_assert!(input.contains(t));
                prop_assert!(t != "a" && t != "bb");
            }
        }
    }
}
