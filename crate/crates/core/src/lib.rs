//! Differentiable n-gram training objectives for sequence-to-sequence models.
//!
//! The crate provides:
//!
//! * [`objectives`]: cross-entropy, position-aligned n-gram rewards,
//!   position-free n-gram matches, clipped probabilistic n-gram precision and
//!   bag-of-n-grams, each with an exact gradient with respect to the logits;
//! * [`metrics`]: ROUGE-N and ROUGE-L on token ids;
//! * [`model`]: a small attention encoder-decoder with hand-written backward
//!   pass, AdamW and greedy/beam decoding;
//! * [`data`]: deterministic synthetic corpora and their JSON-lines format;
//! * [`experiment`]: training, evaluation and throughput harnesses;
//! * [`gradcheck`] and [`oracle`]: finite-difference and brute-force checks.
//!
//! With the default `parallel` feature, batch evaluation, corpus scoring and
//! the check suites run on rayon; without it the same code runs sequentially
//! and produces bit-identical results.

pub mod data;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ngram;
pub mod numeric;
pub mod objectives;
pub mod oracle;

pub use error::{Error, Result};
pub use ngram::TokenId;
pub use numeric::{Matrix, ProbMatrix, Rng};
pub use objectives::{LossOutput, ObjectiveSpec, Term};
