use super::LossOutput;
use crate::error::Result;
use crate::ngram::TokenId;
use crate::numeric::{log_softmax_row, softmax, Matrix, ProbMatrix};

pub(super) fn cross_entropy(logits: &Matrix, reference: &[TokenId]) -> Result<LossOutput> {
    let probs = softmax(logits)?;
    cross_entropy_with_probs(logits, &probs, reference)
}

pub(super) fn cross_entropy_with_probs(
    logits: &Matrix,
    probs: &ProbMatrix,
    reference: &[TokenId],
) -> Result<LossOutput> {
    let mut value = 0.0;
    let mut scratch = vec![0.0; logits.cols()];
    let mut grad = probs.as_matrix().clone();
    for (t, &tok) in reference.iter().enumerate() {
        scratch.copy_from_slice(logits.row(t));
        log_softmax_row(&mut scratch);
        value -= scratch[tok as usize];
        grad.add_at(t, tok as usize, -1.0);
    }
    Ok(LossOutput { value, grad })
}
