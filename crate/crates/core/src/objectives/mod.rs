//! Sequence-level training objectives over a single example's logits.
//!
//! Every objective returns its value and the dense gradient with respect to
//! the logits. The piecewise parts (argmax tokens, table membership, which
//! side of a `min` is active) are read off the probe point and held fixed
//! while differentiating, so the gradient is exact wherever that structure is
//! locally constant.

mod bon;
mod ce;
mod overlap;
mod pp;
mod spec;

pub mod batch;

use crate::error::{Error, Result};
use crate::ngram::{argmax_seq, TokenId};
use crate::numeric::{softmax, softmax_backward, Matrix, ProbMatrix};

pub use batch::{batch_loss, BatchItem, BatchLoss};
pub use spec::{ObjectiveSpec, Term};

/// Objective value plus `∂value/∂logits`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    pub grad: Matrix,
}

/// Composite output with the per-term values that make up `value`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeOutput {
    pub loss: LossOutput,
    pub terms: Vec<(Term, f64)>,
}

pub(crate) fn check_example(logits: &Matrix, reference: &[TokenId]) -> Result<()> {
    if logits.rows() != reference.len() {
        return Err(Error::invalid(format!(
            "reference has {} tokens but logits have {} rows",
            reference.len(),
            logits.rows()
        )));
    }
    let vocab = logits.cols();
    if let Some(&bad) = reference.iter().find(|&&t| t as usize >= vocab) {
        return Err(Error::invalid(format!(
            "reference token {bad} outside vocabulary of size {vocab}"
        )));
    }
    Ok(())
}

fn check_order(n: usize, min: usize, name: &str) -> Result<()> {
    if n < min {
        return Err(Error::invalid(format!("{name} requires n >= {min}, got {n}")));
    }
    Ok(())
}

/// Probability-space terms accumulate `∂L/∂p` into `upstream` and return
/// their value.
fn prob_term(
    term: Term,
    probs: &ProbMatrix,
    argmax: &crate::ngram::ArgmaxSeq,
    reference: &[TokenId],
    upstream: &mut Matrix,
) -> Result<f64> {
    match term {
        Term::CrossEntropy => unreachable!("cross-entropy is handled in logit space"),
        Term::Rewards(n) => overlap::overlap_loss(argmax, reference, n, overlap::Mode::Positional, Some(upstream)),
        Term::Matches(n) => overlap::overlap_loss(argmax, reference, n, overlap::Mode::Anywhere, Some(upstream)),
        Term::Pp(n) => pp::pp_loss(argmax, reference, n, Some(upstream)),
        Term::Bon(n) => bon::bon_loss(probs, reference, n, Some(upstream)),
    }
}

fn single_term(logits: &Matrix, reference: &[TokenId], term: Term) -> Result<LossOutput> {
    check_example(logits, reference)?;
    term.validate()?;
    if term == Term::CrossEntropy {
        return ce::cross_entropy(logits, reference);
    }
    let probs = softmax(logits)?;
    let argmax = argmax_seq(&probs);
    let mut upstream = Matrix::zeros(logits.rows(), logits.cols());
    let value = prob_term(term, &probs, &argmax, reference, &mut upstream)?;
    let grad = softmax_backward(&probs, &upstream)?;
    Ok(LossOutput { value, grad })
}

/// `-Σ_t log p(ref_t)` with gradient `probs - onehot(ref)`.
pub fn cross_entropy(logits: &Matrix, reference: &[TokenId]) -> Result<LossOutput> {
    single_term(logits, reference, Term::CrossEntropy)
}

/// Position-aligned n-gram reward loss (`n >= 2`).
///
/// A reference window `ref[s..s+n]` is matched when the argmax tokens at the
/// same positions equal it; the matched occurrences of each distinct key
/// share one unit of weight. `value = 1 - Σ_keys mean(matched products) / K`
/// with `K = T - n + 1`.
pub fn ngram_rewards(logits: &Matrix, reference: &[TokenId], n: usize) -> Result<LossOutput> {
    check_order(n, 2, "n-gram rewards")?;
    single_term(logits, reference, Term::Rewards(n))
}

/// Position-free n-gram match loss (`n >= 1`): like [`ngram_rewards`] but an
/// argmax window counts if its gram occurs anywhere in the reference.
pub fn ngram_matches(logits: &Matrix, reference: &[TokenId], n: usize) -> Result<LossOutput> {
    check_order(n, 1, "n-gram matches")?;
    single_term(logits, reference, Term::Matches(n))
}

/// Negative probabilistic n-gram precision with counts clipped at the
/// reference counts.
pub fn pp2(logits: &Matrix, reference: &[TokenId], n: usize) -> Result<LossOutput> {
    check_order(n, 1, "probabilistic n-gram precision")?;
    single_term(logits, reference, Term::Pp(n))
}

/// Bag-of-n-grams loss `(2K - Σ_g min(BoN_θ(g), BoN_ref(g))) / 2K`.
pub fn bon(logits: &Matrix, reference: &[TokenId], n: usize) -> Result<LossOutput> {
    check_order(n, 1, "bag-of-n-grams")?;
    single_term(logits, reference, Term::Bon(n))
}

/// Any single term by selector.
pub fn term_loss(logits: &Matrix, reference: &[TokenId], term: Term) -> Result<LossOutput> {
    single_term(logits, reference, term)
}

/// Sum of every term enabled in `spec`, sharing one softmax and one argmax.
pub fn composite(logits: &Matrix, reference: &[TokenId], spec: &ObjectiveSpec) -> Result<LossOutput> {
    composite_terms(logits, reference, spec).map(|c| c.loss)
}

pub fn composite_terms(
    logits: &Matrix,
    reference: &[TokenId],
    spec: &ObjectiveSpec,
) -> Result<CompositeOutput> {
    spec.validate()?;
    check_example(logits, reference)?;
    let terms = spec.terms();

    let probs = softmax(logits)?;
    let argmax = argmax_seq(&probs);
    let mut upstream = Matrix::zeros(logits.rows(), logits.cols());
    let mut any_prob_term = false;
    let mut ce_grad = None;
    let mut values = Vec::with_capacity(terms.len());

    for term in terms {
        let v = if term == Term::CrossEntropy {
            let out = ce::cross_entropy_with_probs(logits, &probs, reference)?;
            ce_grad = Some(out.grad);
            out.value
        } else {
            any_prob_term = true;
            prob_term(term, &probs, &argmax, reference, &mut upstream)?
        };
        values.push((term, v));
    }

    let mut grad = if any_prob_term {
        softmax_backward(&probs, &upstream)?
    } else {
        Matrix::zeros(logits.rows(), logits.cols())
    };
    if let Some(g) = ce_grad {
        if any_prob_term {
            grad.add_scaled(&g, 1.0);
        } else {
            grad = g;
        }
    }
    let value = values.iter().map(|(_, v)| v).sum();
    Ok(CompositeOutput {
        loss: LossOutput { value, grad },
        terms: values,
    })
}


/// Distance from the probe point to the nearest `min`-branch switch for the
/// clipped objectives; `+∞` for terms without a `min`.
pub(crate) fn branch_gap(logits: &Matrix, reference: &[TokenId], term: Term) -> Result<f64> {
    let probs = softmax(logits)?;
    match term {
        Term::Pp(n) => pp::branch_gap(&argmax_seq(&probs), reference, n),
        Term::Bon(n) => bon::branch_gap(&probs, reference, n),
        _ => Ok(f64::INFINITY),
    }
}
