//! A small attention encoder-decoder.
//!
//! Encoder: `h_i = tanh((emb[s_i] + spos_i) W_enc + b_enc)`, keys `h W_k`,
//! values `h W_v`. Decoder position `t` builds its query from the previous
//! target token (BOS at `t = 0`) and its position,
//! `q_t = (emb[y_{t-1}] + tpos_t) W_q`, attends over the keys with scores
//! `q·k/√E`, and emits `logits_t = [q_t ‖ c_t] W_out + b_out`.
//!
//! There is no recurrence, so row `t` of the teacher-forced logits is a
//! function of the source, the previous token and `t` alone. Decoding reuses
//! the same per-step function.

mod checkpoint;
mod decode;
mod forward;
mod optim;
mod params;
mod train;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use decode::{beam_decode, decode, greedy_decode, DecodeConfig};
pub use forward::{backward, encode, forward_teacher_forced, step_logits, Encoded, ForwardCache};
pub use optim::{lr_at, OptimState, Schedule};
pub use params::{init_model, ModelParams};
pub use train::{example_grads, train_step, StepStats};

use serde::{Deserialize, Serialize};

pub use crate::data::{BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::ngram::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    #[serde(default = "default_embed_dim")]
    pub embed_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
}

fn default_embed_dim() -> usize {
    32
}

fn default_init_scale() -> f64 {
    0.1
}

impl ModelConfig {
    pub fn new(vocab_size: usize, max_source_len: usize, max_target_len: usize) -> Self {
        Self {
            vocab_size,
            embed_dim: default_embed_dim(),
            max_source_len,
            max_target_len,
            init_scale: default_init_scale(),
        }
    }

    pub fn with_embed_dim(mut self, embed_dim: usize) -> Self {
        self.embed_dim = embed_dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 4 {
            return Err(Error::invalid(format!(
                "vocab_size {} leaves no room beyond PAD/BOS/EOS",
                self.vocab_size
            )));
        }
        if self.embed_dim < 2 {
            return Err(Error::invalid("embed_dim must be at least 2"));
        }
        if self.max_source_len == 0 || self.max_target_len == 0 {
            return Err(Error::invalid("maximum lengths must be positive"));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::invalid(format!("init_scale {} must be positive", self.init_scale)));
        }
        Ok(())
    }

    pub(crate) fn check_tokens(&self, what: &str, seq: &[TokenId]) -> Result<()> {
        if let Some(&bad) = seq.iter().find(|&&t| t as usize >= self.vocab_size) {
            return Err(Error::invalid(format!(
                "{what} token {bad} outside vocabulary of size {}",
                self.vocab_size
            )));
        }
        Ok(())
    }
}
