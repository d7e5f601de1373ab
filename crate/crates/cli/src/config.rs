//! TOML run configurations. Unknown keys are rejected; relative paths are
//! resolved against the directory holding the config file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ngram_objectives::data::{Corpus, TaskConfig};
use ngram_objectives::experiment::{BenchConfig, TrainConfig};
use ngram_objectives::model::{DecodeConfig, ModelConfig};
use ngram_objectives::ObjectiveSpec;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// ```toml
/// seed = 7
/// train_count = 2000
/// eval_count = 200
///
/// [corpus]
/// task = "salient"
/// vocab_size = 50
/// source_len = 20
/// n_salient = 3
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub seed: u64,
    pub train_count: usize,
    #[serde(default)]
    pub eval_count: usize,
    /// Defaults to `seed + 1`.
    pub eval_seed: Option<u64>,
    pub corpus: TaskConfig,
}

/// Model shape; anything left out is taken from the training corpus.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_size: Option<usize>,
    pub embed_dim: Option<usize>,
    pub max_source_len: Option<usize>,
    pub max_target_len: Option<usize>,
    pub init_scale: Option<f64>,
}

impl ModelSection {
    pub fn resolve(&self, train: &Corpus, eval: &Corpus) -> Result<ModelConfig> {
        let vocab_size = match (self.vocab_size, train.vocab_size()) {
            (Some(v), _) | (None, Some(v)) => v,
            (None, None) => bail!("model.vocab_size is required when the corpus has no header"),
        };
        let mut cfg = ModelConfig::new(
            vocab_size,
            self.max_source_len
                .unwrap_or_else(|| train.max_source_len().max(eval.max_source_len())),
            self.max_target_len
                .unwrap_or_else(|| train.max_target_len().max(eval.max_target_len())),
        );
        if let Some(e) = self.embed_dim {
            cfg.embed_dim = e;
        }
        if let Some(s) = self.init_scale {
            cfg.init_scale = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// ```toml
/// train_corpus = "data/train.jsonl"
/// eval_corpus = "data/eval.jsonl"
///
/// [objective]
/// ce = true
/// matches = [2]
///
/// [train]
/// steps = 300
/// lr = 0.01
///
/// [decode]
/// beam_width = 4
/// length_penalty = 2.0
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub train_corpus: PathBuf,
    pub eval_corpus: PathBuf,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default = "ObjectiveSpec::ce_only")]
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Decoded examples copied into the report.
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    5
}

/// ```toml
/// seed = 0
/// count = 256
///
/// [corpus]
/// task = "salient"
/// vocab_size = 50
/// source_len = 20
/// n_salient = 3
///
/// [bench]
/// steps = 20
/// rounds = 5
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchFileConfig {
    pub seed: u64,
    pub count: usize,
    pub corpus: TaskConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub bench: BenchConfig,
}
