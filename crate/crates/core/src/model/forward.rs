use super::{ModelParams, BOS};
use crate::error::{Error, Result};
use crate::ngram::TokenId;
use crate::numeric::Matrix;

/// `out = x W`.
fn vec_mat(x: &[f64], w: &Matrix, out: &mut [f64]) {
    out.fill(0.0);
    for (xi, wrow) in x.iter().zip(w.row_iter()) {
        for (o, wij) in out.iter_mut().zip(wrow) {
            *o += xi * wij;
        }
    }
}

/// `out += W dy` (gradient of `x W` with respect to `x`).
fn mat_vec_acc(w: &Matrix, dy: &[f64], out: &mut [f64]) {
    for (o, wrow) in out.iter_mut().zip(w.row_iter()) {
        *o += wrow.iter().zip(dy).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dW += xᵀ dy`.
fn outer_acc(dw: &mut Matrix, x: &[f64], dy: &[f64]) {
    for (i, xi) in x.iter().enumerate() {
        for (g, d) in dw.row_mut(i).iter_mut().zip(dy) {
            *g += xi * d;
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Encoder activations for one source sequence.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub source: Vec<TokenId>,
    /// Inputs `emb[s_i] + spos_i`, `S × E`.
    pub x: Matrix,
    pub h: Matrix,
    pub keys: Matrix,
    pub values: Matrix,
}

pub fn encode(params: &ModelParams, source: &[TokenId]) -> Result<Encoded> {
    let cfg = &params.config;
    if source.is_empty() {
        return Err(Error::invalid("empty source"));
    }
    if source.len() > cfg.max_source_len {
        return Err(Error::invalid(format!(
            "source length {} exceeds maximum {}",
            source.len(),
            cfg.max_source_len
        )));
    }
    cfg.check_tokens("source", source)?;
    let s = source.len();
    let e = cfg.embed_dim;
    let mut x = Matrix::zeros(s, e);
    let mut h = Matrix::zeros(s, e);
    let mut keys = Matrix::zeros(s, e);
    let mut values = Matrix::zeros(s, e);
    for (i, &tok) in source.iter().enumerate() {
        for ((xv, a), b) in x.row_mut(i).iter_mut().zip(params.embed.row(tok as usize)).zip(params.src_pos.row(i)) {
            *xv = a + b;
        }
        let hrow = h.row_mut(i);
        vec_mat(x.row(i), &params.enc_w, hrow);
        for (hv, b) in hrow.iter_mut().zip(params.enc_b.row(0)) {
            *hv = (*hv + b).tanh();
        }
        vec_mat(h.row(i), &params.key_w, keys.row_mut(i));
        vec_mat(h.row(i), &params.value_w, values.row_mut(i));
    }
    Ok(Encoded {
        source: source.to_vec(),
        x,
        h,
        keys,
        values,
    })
}

/// Decoder activations of one position.
struct Step {
    u: Vec<f64>,
    q: Vec<f64>,
    attn: Vec<f64>,
    context: Vec<f64>,
    logits: Vec<f64>,
}

fn step(params: &ModelParams, enc: &Encoded, prev: TokenId, t: usize) -> Step {
    let e = params.config.embed_dim;
    let scale = 1.0 / (e as f64).sqrt();
    let u: Vec<f64> = params
        .embed
        .row(prev as usize)
        .iter()
        .zip(params.tgt_pos.row(t))
        .map(|(a, b)| a + b)
        .collect();
    let mut q = vec![0.0; e];
    vec_mat(&u, &params.query_w, &mut q);

    let mut attn: Vec<f64> = enc.keys.row_iter().map(|k| dot(&q, k) * scale).collect();
    let max = attn.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for a in attn.iter_mut() {
        *a = (*a - max).exp();
        z += *a;
    }
    for a in attn.iter_mut() {
        *a /= z;
    }
    let mut context = vec![0.0; e];
    for (a, v) in attn.iter().zip(enc.values.row_iter()) {
        for (c, vj) in context.iter_mut().zip(v) {
            *c += a * vj;
        }
    }

    let mut logits = params.out_b.row(0).to_vec();
    let (wq, wc) = params.out_w.as_slice().split_at(e * params.config.vocab_size);
    let d = params.config.vocab_size;
    for (half, w) in [(&q, wq), (&context, wc)] {
        for (xi, wrow) in half.iter().zip(w.chunks_exact(d)) {
            for (l, wij) in logits.iter_mut().zip(wrow) {
                *l += xi * wij;
            }
        }
    }
    Step {
        u,
        q,
        attn,
        context,
        logits,
    }
}

fn check_position(params: &ModelParams, prev: TokenId, t: usize) -> Result<()> {
    let cfg = &params.config;
    if t >= cfg.max_target_len {
        return Err(Error::invalid(format!(
            "target position {t} beyond maximum length {}",
            cfg.max_target_len
        )));
    }
    cfg.check_tokens("previous", &[prev])
}

/// Logits for decoder position `t` given the previous token.
pub fn step_logits(params: &ModelParams, enc: &Encoded, prev: TokenId, t: usize) -> Result<Vec<f64>> {
    check_position(params, prev, t)?;
    Ok(step(params, enc, prev, t).logits)
}

/// Everything the backward pass needs from one teacher-forced forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub enc: Encoded,
    /// Previous-token inputs (BOS, y_0, …, y_{T-2}).
    pub prev: Vec<TokenId>,
    pub u: Matrix,
    pub q: Matrix,
    /// `T × S`
    pub attn: Matrix,
    pub context: Matrix,
    /// `T × D`
    pub logits: Matrix,
}

/// Teacher-forced logits, one row per target position.
pub fn forward_teacher_forced(params: &ModelParams, source: &[TokenId], target: &[TokenId]) -> Result<ForwardCache> {
    let cfg = &params.config;
    if target.len() > cfg.max_target_len {
        return Err(Error::invalid(format!(
            "target length {} exceeds maximum {}",
            target.len(),
            cfg.max_target_len
        )));
    }
    cfg.check_tokens("target", target)?;
    let enc = encode(params, source)?;
    let t_len = target.len();
    let e = cfg.embed_dim;
    let prev: Vec<TokenId> = std::iter::once(BOS).chain(target.iter().copied()).take(t_len).collect();
    let mut cache = ForwardCache {
        prev,
        u: Matrix::zeros(t_len, e),
        q: Matrix::zeros(t_len, e),
        attn: Matrix::zeros(t_len, enc.x.rows()),
        context: Matrix::zeros(t_len, e),
        logits: Matrix::zeros(t_len, cfg.vocab_size),
        enc,
    };
    for t in 0..t_len {
        let st = step(params, &cache.enc, cache.prev[t], t);
        cache.u.row_mut(t).copy_from_slice(&st.u);
        cache.q.row_mut(t).copy_from_slice(&st.q);
        cache.attn.row_mut(t).copy_from_slice(&st.attn);
        cache.context.row_mut(t).copy_from_slice(&st.context);
        cache.logits.row_mut(t).copy_from_slice(&st.logits);
    }
    Ok(cache)
}

/// Parameter gradient given `∂loss/∂logits`, accumulated into `grads`.
pub fn backward(params: &ModelParams, cache: &ForwardCache, dlogits: &Matrix, grads: &mut ModelParams) -> Result<()> {
    if dlogits.shape() != cache.logits.shape() {
        return Err(Error::invalid(format!(
            "logit gradient shape {:?} does not match logits {:?}",
            dlogits.shape(),
            cache.logits.shape()
        )));
    }
    let e = params.config.embed_dim;
    let scale = 1.0 / (e as f64).sqrt();
    let enc = &cache.enc;
    let s_len = enc.x.rows();
    let mut dkeys = Matrix::zeros(s_len, e);
    let mut dvalues = Matrix::zeros(s_len, e);
    let mut z = vec![0.0; 2 * e];
    let mut dz = vec![0.0; 2 * e];
    let mut dq = vec![0.0; e];
    let mut du = vec![0.0; e];
    let mut dattn = vec![0.0; s_len];

    for t in 0..cache.logits.rows() {
        let dl = dlogits.row(t);
        if dl.iter().all(|&g| g == 0.0) {
            continue;
        }
        let q = cache.q.row(t);
        let attn = cache.attn.row(t);
        z[..e].copy_from_slice(q);
        z[e..].copy_from_slice(cache.context.row(t));
        outer_acc(&mut grads.out_w, &z, dl);
        add_into(grads.out_b.row_mut(0), dl);
        dz.fill(0.0);
        mat_vec_acc(&params.out_w, dl, &mut dz);
        let (dq_out, dc) = dz.split_at(e);
        dq.copy_from_slice(dq_out);

        for (i, (da, v)) in dattn.iter_mut().zip(enc.values.row_iter()).enumerate() {
            *da = dot(dc, v);
            for (g, c) in dvalues.row_mut(i).iter_mut().zip(dc) {
                *g += attn[i] * c;
            }
        }
        let mean = dot(attn, &dattn);
        for (i, k) in enc.keys.row_iter().enumerate() {
            let dscore = attn[i] * (dattn[i] - mean) * scale;
            for (g, kj) in dq.iter_mut().zip(k) {
                *g += dscore * kj;
            }
            for (g, qj) in dkeys.row_mut(i).iter_mut().zip(q) {
                *g += dscore * qj;
            }
        }

        outer_acc(&mut grads.query_w, cache.u.row(t), &dq);
        du.fill(0.0);
        mat_vec_acc(&params.query_w, &dq, &mut du);
        add_into(grads.embed.row_mut(cache.prev[t] as usize), &du);
        add_into(grads.tgt_pos.row_mut(t), &du);
    }

    let mut dh = vec![0.0; e];
    let mut dx = vec![0.0; e];
    for i in 0..s_len {
        let h = enc.h.row(i);
        outer_acc(&mut grads.key_w, h, dkeys.row(i));
        outer_acc(&mut grads.value_w, h, dvalues.row(i));
        dh.fill(0.0);
        mat_vec_acc(&params.key_w, dkeys.row(i), &mut dh);
        mat_vec_acc(&params.value_w, dvalues.row(i), &mut dh);
        for (g, hv) in dh.iter_mut().zip(h) {
            *g *= 1.0 - hv * hv;
        }
        outer_acc(&mut grads.enc_w, enc.x.row(i), &dh);
        add_into(grads.enc_b.row_mut(0), &dh);
        dx.fill(0.0);
        mat_vec_acc(&params.enc_w, &dh, &mut dx);
        add_into(grads.embed.row_mut(enc.source[i] as usize), &dx);
        add_into(grads.src_pos.row_mut(i), &dx);
    }
    Ok(())
}
