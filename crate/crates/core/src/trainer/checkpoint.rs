use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{EncoderSpec, TinyEncoder};
use super::{Classifier, ModelConfig};
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::scalar::Scalar;
use crate::tokenizer::WordPiece;

pub(crate) const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CTLW";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub config: ModelConfig,
    pub encoder: EncoderSpec,
    pub vocab_size: usize,
    pub corpus_fingerprint: String,
    pub best_epoch: usize,
    pub val_loss_at_best: f64,
    pub val_macro_f1_at_best: f64,
    pub class_weights: [f64; NUM_CLASSES],
}

/// A trained encoder with its vocabulary. On disk: `config.json`,
/// `weights.bin` and `vocab.txt` in one directory.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointOf<T> {
    pub meta: CheckpointMeta,
    model: TinyEncoder<T>,
    vocab: WordPiece,
}

impl<T: Scalar> CheckpointOf<T> {
    pub fn new(meta: CheckpointMeta, model: TinyEncoder<T>, vocab: WordPiece) -> Self {
        Self { meta, model, vocab }
    }

    pub fn model(&self) -> &TinyEncoder<T> {
        &self.model
    }

    pub fn vocab(&self) -> &WordPiece {
        &self.vocab
    }

    pub fn probs(&self, text: &str) -> [T; NUM_CLASSES] {
        self.model.probs(&self.vocab.encode(text, self.meta.config.max_tokens))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("config.json");
        std::fs::write(&cfg, serde_json::to_string_pretty(&self.meta)? + "\n").map_err(|e| Error::io(&cfg, e))?;
        self.vocab.save(&dir.join("vocab.txt"))?;
        let path = dir.join("weights.bin");
        let mut buf = Vec::with_capacity(16 + 8 * self.model.num_params());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.model.num_params() as u64).to_le_bytes());
        for p in self.model.params() {
            buf.extend_from_slice(&p.as_f64().to_le_bytes());
        }
        let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg = dir.join("config.json");
        let text = std::fs::read_to_string(&cfg).map_err(|e| Error::io(&cfg, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint format {} is not supported (expected {FORMAT_VERSION})",
                meta.format_version
            )));
        }
        let vocab = WordPiece::load(&dir.join("vocab.txt"))?;
        if vocab.len() != meta.vocab_size {
            return Err(Error::Shape(format!(
                "vocab.txt has {} entries, config.json says {}",
                vocab.len(),
                meta.vocab_size
            )));
        }
        let path = dir.join("weights.bin");
        let mut bytes = Vec::new();
        std::fs::File::open(&path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(&path, e))?;
        let bad = |m: &str| Error::Validation(format!("{}: {m}", path.display()));
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("not a weights file"));
        }
        let count = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        if bytes.len() != 16 + 8 * count {
            return Err(bad("truncated weights"));
        }
        let params = bytes[16..]
            .chunks_exact(8)
            .map(|c| T::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        let model = TinyEncoder::from_params(meta.encoder.clone(), vocab.len(), params)?;
        Ok(Self { meta, model, vocab })
    }
}

impl<T: Scalar> Classifier<T> for CheckpointOf<T> {
    fn predict_one(&self, text: &str) -> [T; NUM_CLASSES] {
        self.probs(text)
    }
}
