use super::ModelConfig;
use crate::error::{Error, Result};
use crate::numeric::{Matrix, Rng};

/// Trainable parameters. Weights act on row vectors (`y = x W`).
///
/// The same type doubles as a gradient accumulator and as optimizer moment
/// storage.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `D × E`
    pub embed: Matrix,
    /// `max_source_len × E`
    pub src_pos: Matrix,
    /// `max_target_len × E`
    pub tgt_pos: Matrix,
    /// `E × E`
    pub enc_w: Matrix,
    /// `1 × E`
    pub enc_b: Matrix,
    pub query_w: Matrix,
    pub key_w: Matrix,
    pub value_w: Matrix,
    /// `2E × D`
    pub out_w: Matrix,
    /// `1 × D`
    pub out_b: Matrix,
}

pub const TENSOR_NAMES: [&str; 10] = [
    "embed", "src_pos", "tgt_pos", "enc_w", "enc_b", "query_w", "key_w", "value_w", "out_w", "out_b",
];

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.vocab_size;
        let e = config.embed_dim;
        Self {
            config: config.clone(),
            embed: Matrix::zeros(d, e),
            src_pos: Matrix::zeros(config.max_source_len, e),
            tgt_pos: Matrix::zeros(config.max_target_len, e),
            enc_w: Matrix::zeros(e, e),
            enc_b: Matrix::zeros(1, e),
            query_w: Matrix::zeros(e, e),
            key_w: Matrix::zeros(e, e),
            value_w: Matrix::zeros(e, e),
            out_w: Matrix::zeros(2 * e, d),
            out_b: Matrix::zeros(1, d),
        }
    }

    /// Tensors in their fixed serialization order.
    pub fn tensors(&self) -> [(&'static str, &Matrix); 10] {
        [
            (TENSOR_NAMES[0], &self.embed),
            (TENSOR_NAMES[1], &self.src_pos),
            (TENSOR_NAMES[2], &self.tgt_pos),
            (TENSOR_NAMES[3], &self.enc_w),
            (TENSOR_NAMES[4], &self.enc_b),
            (TENSOR_NAMES[5], &self.query_w),
            (TENSOR_NAMES[6], &self.key_w),
            (TENSOR_NAMES[7], &self.value_w),
            (TENSOR_NAMES[8], &self.out_w),
            (TENSOR_NAMES[9], &self.out_b),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 10] {
        [
            &mut self.embed,
            &mut self.src_pos,
            &mut self.tgt_pos,
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.query_w,
            &mut self.key_w,
            &mut self.value_w,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    /// `self += scale * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, scale: f64) {
        for (dst, (_, src)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            dst.add_scaled(src, scale);
        }
    }

    /// Parameters whose logits depend only on the previous token:
    /// `logits_t = table(prev)`, regardless of source and position.
    ///
    /// Uses one-hot token embeddings, so `embed_dim` must be at least
    /// `vocab_size`. Meant for constructing decoding fixtures.
    pub fn rigged(config: &ModelConfig, table: impl Fn(u32) -> Vec<f64>) -> Result<Self> {
        config.validate()?;
        let d = config.vocab_size;
        let e = config.embed_dim;
        if e < d {
            return Err(Error::invalid(format!(
                "rigged parameters need embed_dim ({e}) >= vocab_size ({d})"
            )));
        }
        let mut p = ModelParams::zeros(config);
        for tok in 0..d {
            p.embed.set(tok, tok, 1.0);
            let row = table(tok as u32);
            if row.len() != d {
                return Err(Error::invalid(format!(
                    "rigged logits for token {tok} have length {}, expected {d}",
                    row.len()
                )));
            }
            p.out_w.row_mut(tok).copy_from_slice(&row);
        }
        for i in 0..e {
            p.query_w.set(i, i, 1.0);
        }
        Ok(p)
    }
}

/// Every entry uniform in `[-init_scale, init_scale)`, drawn tensor by tensor
/// in serialization order from one stream seeded with `seed`.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let s = config.init_scale;
    let mut rng = Rng::new(seed);
    let mut params = ModelParams::zeros(config);
    for m in params.tensors_mut() {
        for v in m.as_mut_slice() {
            *v = rng.uniform(-s, s);
        }
    }
    Ok(params)
}
