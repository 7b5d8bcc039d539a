//! Run configuration: a TOML file, then `CTLAB_<FIELD>` environment
//! variables, then command-line flags, each overriding the previous.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use ctlab_core::trainer::ModelConfig;
use serde::Deserialize;

use crate::Invalid;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub split: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub emoji_map: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub ensemble: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub model: ModelConfig,
    pub annotation: AnnotationConfig,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotationConfig {
    pub annotators: Vec<String>,
    pub adjudicators: Vec<String>,
    pub addr: Option<String>,
    pub session_cap: Option<usize>,
    pub state_dir: Option<PathBuf>,
}

const PATH_KEYS: [&str; 7] = ["corpus", "split", "stopwords", "emoji_map", "checkpoint", "output_dir", "ensemble"];
const VALUE_KEYS: [&str; 2] = ["seed", "threshold"];
const MODEL_KEYS: [&str; 8] = [
    "encoder_id",
    "epochs",
    "batch_size",
    "learning_rate",
    "patience",
    "use_class_weights",
    "max_tokens",
    "weight_decay",
];

fn env_key(field: &str) -> String {
    format!("CTLAB_{}", field.to_ascii_uppercase())
}

/// Reads a scalar from its TOML literal form, falling back to a string.
fn parse_env_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

impl RunConfig {
    /// Loads `path` (if any) and applies environment overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Invalid(format!("cannot read config file {}: {e}", p.display())))?;
                let mut t: toml::Table =
                    toml::from_str(&text).map_err(|e| Invalid(format!("config file {}: {e}", p.display())))?;
                let base = p.parent().unwrap_or(Path::new("."));
                for key in PATH_KEYS {
                    if let Some(toml::Value::String(s)) = t.get_mut(key) {
                        if Path::new(s.as_str()).is_relative() {
                            *s = base.join(&*s).to_string_lossy().into_owned();
                        }
                    }
                }
                if let Some(toml::Value::Table(a)) = t.get_mut("annotation") {
                    if let Some(toml::Value::String(s)) = a.get_mut("state_dir") {
                        if Path::new(s.as_str()).is_relative() {
                            *s = base.join(&*s).to_string_lossy().into_owned();
                        }
                    }
                }
                t
            }
            None => toml::Table::new(),
        };
        for key in PATH_KEYS {
            if let Some(v) = env(&env_key(key)) {
                table.insert(key.into(), toml::Value::String(v));
            }
        }
        for key in VALUE_KEYS {
            if let Some(v) = env(&env_key(key)) {
                table.insert(key.into(), parse_env_value(&v));
            }
        }
        let model = table
            .entry("model")
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let model = model
            .as_table_mut()
            .ok_or_else(|| Invalid("config field `model` must be a table".into()))?;
        for key in MODEL_KEYS {
            if let Some(v) = env(&env_key(key)) {
                let value = if key == "encoder_id" {
                    toml::Value::String(v)
                } else {
                    parse_env_value(&v)
                };
                model.insert(key.into(), value);
            }
        }
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Invalid(format!("invalid configuration: {e}")))?;
        Ok(config)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        let dir = flag
            .map(Path::to_path_buf)
            .or_else(|| self.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("ctlab-out"));
        std::fs::create_dir_all(&dir).with_context(|| format!("cannot create output dir {}", dir.display()))?;
        Ok(dir)
    }
}
