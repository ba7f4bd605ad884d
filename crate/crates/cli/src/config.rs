//! Run configuration: defaults, a TOML file, then command-line overrides.

use std::path::{Path, PathBuf};

use plottag::model::{ModelConfig, Variant};
use plottag::train::TrainConfig;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::Failure;

pub const RESOLVED_CONFIG: &str = "config.toml";

/// Everything `train` needs, fully resolved before any stage starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    /// `csv` or `tsv`.
    pub corpus_format: String,
    pub lexicon: Option<PathBuf>,
    /// Word-vector text file, required by `cnn_fe_pretrained`.
    pub embeddings: Option<PathBuf>,
    /// One stopword per line; the built-in English list when absent.
    pub stopwords: Option<PathBuf>,
    /// Share of the training split held out for early stopping.
    pub val_fraction: f64,
    pub out: PathBuf,
    /// `vocab_size` caps the vocabulary and is replaced by the size actually
    /// built; `n_tags` is replaced by the size of the training tag set.
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: None,
            corpus_format: "csv".into(),
            lexicon: None,
            embeddings: None,
            stopwords: None,
            val_fraction: 0.2,
            out: PathBuf::from("runs/latest"),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

const PATH_KEYS: [&str; 5] = ["corpus", "lexicon", "embeddings", "stopwords", "out"];

/// Sources merged by [`resolve`], lowest precedence first.
#[derive(Debug, Default)]
pub struct Sources {
    pub file: Option<PathBuf>,
    /// `key=value` pairs with dotted keys such as `train.lr=0.001`.
    pub overrides: Vec<String>,
    /// Dedicated flags, applied after `overrides`.
    pub flags: Vec<(String, Value)>,
}

pub fn resolve(sources: &Sources) -> Result<RunConfig, Failure> {
    let mut table = Table::new();
    if let Some(path) = &sources.file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
        table = text.parse::<Table>().map_err(|e| Failure::Config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for key in PATH_KEYS {
            if let Some(Value::String(p)) = table.get_mut(key) {
                *p = base.join(&*p).to_string_lossy().into_owned();
            }
        }
    }
    for item in &sources.overrides {
        let (key, raw) =
            item.split_once('=').ok_or_else(|| Failure::Config(format!("override {item:?} is not key=value")))?;
        set(&mut table, key.trim(), parse_value(raw.trim()))?;
    }
    for (key, value) in &sources.flags {
        set(&mut table, key, value.clone())?;
    }
    let explicit_weights =
        table.get("train").and_then(Value::as_table).is_some_and(|t| t.contains_key("use_class_weights"));
    let mut config: RunConfig =
        Value::Table(table).try_into().map_err(|e| Failure::Config(format!("invalid configuration: {e}")))?;
    if !explicit_weights {
        config.train.use_class_weights = config.model.variant.default_class_weights();
    }
    Ok(config)
}

/// TOML literal when it parses as one, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set(table: &mut Table, key: &str, value: Value) -> Result<(), Failure> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|p| !p.is_empty()).ok_or_else(|| Failure::Config(format!("empty key in {key:?}")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| Failure::Config(format!("{key:?}: {p} is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Checks everything that can be checked without reading data.
    pub fn validate(&self) -> Result<(), Failure> {
        let variant = self.model.variant;
        if self.corpus.is_none() {
            return Err(Failure::Config("no corpus given (set `corpus` or pass --corpus)".into()));
        }
        self.corpus_format.parse::<plottag::corpus::CorpusFormat>().map_err(|e| Failure::Config(e.to_string()))?;
        if variant.uses_emotion_flow() && self.lexicon.is_none() {
            return Err(Failure::Config(format!("variant {variant} needs an emotion lexicon (--lexicon)")));
        }
        if variant.uses_pretrained_embeddings() && self.embeddings.is_none() {
            return Err(Failure::Config(format!("variant {variant} needs `embeddings`")));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Failure::Config(format!("val_fraction {} outside (0, 1)", self.val_fraction)));
        }
        self.train.validate().map_err(|e| Failure::Config(e.to_string()))?;
        // Data-dependent sizes are filled in later; check the rest now.
        let probe = ModelConfig {
            vocab_size: self.model.vocab_size.max(1),
            n_tags: self.model.n_tags.max(1),
            ..self.model.clone()
        };
        probe.validate().map_err(|e| Failure::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

pub fn variant_flag(v: Variant) -> (String, Value) {
    ("model.variant".into(), Value::String(v.as_str().into()))
}
