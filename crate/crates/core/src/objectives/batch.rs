//! Mini-batch reduction over padded examples.

use super::{composite_terms, ObjectiveSpec, Term};
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::ngram::TokenId;
use crate::numeric::Matrix;

/// One padded example: logits and reference may extend past `true_len`.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub logits: &'a Matrix,
    pub reference: &'a [TokenId],
    pub true_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    /// Mean composite value over the batch.
    pub value: f64,
    /// Mean value of each term.
    pub terms: Vec<(Term, f64)>,
    /// Per-example `∂value/∂logits`, already scaled by `1/batch`. Rows past an
    /// example's true length are zero.
    pub grads: Vec<Matrix>,
}

/// Slice every example to its true length, evaluate the composite objective,
/// and average. Examples may run in parallel; the reduction is in index
/// order.
pub fn batch_loss(items: &[BatchItem<'_>], spec: &ObjectiveSpec) -> Result<BatchLoss> {
    if items.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    spec.validate()?;
    for (i, it) in items.iter().enumerate() {
        if it.true_len > it.logits.rows() || it.true_len > it.reference.len() {
            return Err(Error::invalid(format!(
                "example {i}: true length {} exceeds padded length",
                it.true_len
            )));
        }
    }

    let outputs = map_ordered(items, |it| {
        let logits = it.logits.head_rows(it.true_len);
        composite_terms(&logits, &it.reference[..it.true_len], spec)
    });

    let scale = 1.0 / items.len() as f64;
    let terms = spec.terms();
    let mut value = 0.0;
    let mut term_sums = vec![0.0; terms.len()];
    let mut grads = Vec::with_capacity(items.len());
    for (out, it) in outputs.into_iter().zip(items) {
        let out = out?;
        value += out.loss.value;
        for (sum, (_, v)) in term_sums.iter_mut().zip(&out.terms) {
            *sum += v;
        }
        let mut grad = Matrix::zeros(it.logits.rows(), it.logits.cols());
        for r in 0..it.true_len {
            for (g, v) in grad.row_mut(r).iter_mut().zip(out.loss.grad.row(r)) {
                *g = v * scale;
            }
        }
        grads.push(grad);
    }
    Ok(BatchLoss {
        value: value * scale,
        terms: terms.into_iter().zip(term_sums.into_iter().map(|s| s * scale)).collect(),
        grads,
    })
}
