use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{encode, step_logits, Encoded, ModelParams, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::ngram::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_width: usize,
    /// Finished hypotheses score `logprob / len^length_penalty`.
    pub length_penalty: f64,
    /// EOS is masked while fewer than `min_len` tokens have been emitted.
    pub min_len: usize,
    /// Hard cap on emitted tokens (EOS included); also capped by the model's
    /// `max_target_len`.
    pub max_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: 1,
            length_penalty: 0.0,
            min_len: 1,
            max_len: 16,
        }
    }
}

impl DecodeConfig {
    pub fn greedy() -> Self {
        Self::default()
    }

    /// Width 4, length penalty 2.
    pub fn long_summary() -> Self {
        Self {
            beam_width: 4,
            length_penalty: 2.0,
            ..Self::default()
        }
    }

    /// Width 6, length penalty 1.
    pub fn short_summary() -> Self {
        Self {
            beam_width: 6,
            length_penalty: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::invalid("beam_width must be at least 1"));
        }
        if !(self.length_penalty >= 0.0 && self.length_penalty.is_finite()) {
            return Err(Error::invalid(format!(
                "length_penalty {} must be finite and non-negative",
                self.length_penalty
            )));
        }
        if self.min_len > self.max_len {
            return Err(Error::invalid(format!(
                "min_len {} exceeds max_len {}",
                self.min_len, self.max_len
            )));
        }
        Ok(())
    }

    pub fn score(&self, logprob: f64, len: usize) -> f64 {
        if self.length_penalty == 0.0 || len == 0 {
            logprob
        } else {
            logprob / (len as f64).powf(self.length_penalty)
        }
    }
}

/// Log-probabilities over the tokens allowed at step `t`; disallowed tokens
/// get `-inf`. PAD and BOS are never allowed, EOS only from `min_len` on.
fn step_logprobs(params: &ModelParams, enc: &Encoded, prev: TokenId, t: usize, cfg: &DecodeConfig) -> Result<Vec<f64>> {
    let mut logits = step_logits(params, enc, prev, t)?;
    logits[PAD as usize] = f64::NEG_INFINITY;
    logits[BOS as usize] = f64::NEG_INFINITY;
    if t < cfg.min_len {
        logits[EOS as usize] = f64::NEG_INFINITY;
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    for l in logits.iter_mut() {
        *l -= lse;
    }
    Ok(logits)
}

fn max_steps(params: &ModelParams, cfg: &DecodeConfig) -> usize {
    cfg.max_len.min(params.config.max_target_len)
}

/// Argmax decoding (lowest index on ties). EOS is not included in the output.
pub fn greedy_decode(params: &ModelParams, source: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    let enc = encode(params, source)?;
    let mut out = Vec::new();
    let mut prev = BOS;
    for t in 0..max_steps(params, cfg) {
        let lp = step_logprobs(params, &enc, prev, t, cfg)?;
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        let tok = best as TokenId;
        if tok == EOS {
            break;
        }
        out.push(tok);
        prev = tok;
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    logprob: f64,
}

/// Beam search over log-probabilities.
///
/// Each step expands every live hypothesis by every allowed token and keeps
/// the `beam_width` best expansions by cumulative log-probability (ties go to
/// the earlier beam, then the larger step log-probability, then the lower
/// token id). Expansions ending in EOS leave the beam as finished
/// hypotheses. Hypotheses still live when the length cap is reached are
/// treated as finished at that length. The result is the finished hypothesis
/// with the highest `logprob / len^α`, where `len` counts the EOS; earlier
/// finishers win ties. EOS is not included in the output.
pub fn beam_decode(params: &ModelParams, source: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
    cfg.validate()?;
    let enc = encode(params, source)?;
    let steps = max_steps(params, cfg);
    if steps == 0 {
        return Ok(Vec::new());
    }
    let mut live = vec![Hyp {
        tokens: Vec::new(),
        logprob: 0.0,
    }];
    // (tokens without EOS, logprob, scored length)
    let mut finished: Vec<(Vec<TokenId>, f64, usize)> = Vec::new();
    for t in 0..steps {
        let mut cands: Vec<(usize, TokenId, f64, f64)> = Vec::new();
        for (b, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(BOS);
            let lp = step_logprobs(params, &enc, prev, t, cfg)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l > f64::NEG_INFINITY {
                    cands.push((b, tok as TokenId, l, hyp.logprob + l));
                }
            }
        }
        cands.sort_by(|a, b| {
            b.3.partial_cmp(&a.3)
                .unwrap_or(Ordering::Equal)
                .then(a.0.cmp(&b.0))
                .then(b.2.partial_cmp(&a.2).unwrap_or(Ordering::Equal))
                .then(a.1.cmp(&b.1))
        });
        cands.truncate(cfg.beam_width);
        let mut next = Vec::with_capacity(cands.len());
        for (b, tok, _, total) in cands {
            let mut tokens = live[b].tokens.clone();
            if tok == EOS {
                finished.push((tokens, total, t + 1));
            } else {
                tokens.push(tok);
                next.push(Hyp { tokens, logprob: total });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    for hyp in live {
        let len = hyp.tokens.len();
        finished.push((hyp.tokens, hyp.logprob, len));
    }
    let mut best: Option<(usize, f64)> = None;
    for (i, (_, lp, len)) in finished.iter().enumerate() {
        let s = cfg.score(*lp, *len);
        if best.is_none_or(|(_, bs)| s > bs) {
            best = Some((i, s));
        }
    }
    Ok(best.map(|(i, _)| finished.swap_remove(i).0).unwrap_or_default())
}

/// Greedy when `beam_width == 1`, beam search otherwise.
pub fn decode(params: &ModelParams, source: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<TokenId>> {
    if cfg.beam_width == 1 {
        greedy_decode(params, source, cfg)
    } else {
        beam_decode(params, source, cfg)
    }
}
