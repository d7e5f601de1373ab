use super::{backward, forward_teacher_forced, ModelParams, OptimState};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::objectives::{batch_loss, BatchItem, ObjectiveSpec, Term};

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Mean composite loss over the batch, before the update.
    pub loss: f64,
    pub terms: Vec<(Term, f64)>,
    pub lr: f64,
}

/// Batch loss and its parameter gradient at the current parameters.
///
/// Examples are forwarded and backpropagated in parallel; the per-example
/// gradients are summed in batch order.
pub fn example_grads(params: &ModelParams, batch: &Batch, spec: &ObjectiveSpec) -> Result<(StepStats, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let caches: Vec<_> = map_range(batch.len(), |i| forward_teacher_forced(params, batch.source(i), &batch.targets[i]))
        .into_iter()
        .collect::<Result<_>>()?;
    if caches.iter().any(|c: &super::ForwardCache| !c.logits.is_finite()) {
        return Err(Error::Diverged {
            step: 0,
            loss: f64::INFINITY,
        });
    }
    let items: Vec<BatchItem<'_>> = caches
        .iter()
        .enumerate()
        .map(|(i, c)| BatchItem {
            logits: &c.logits,
            reference: &batch.targets[i],
            true_len: batch.target_lengths[i],
        })
        .collect();
    let loss = batch_loss(&items, spec)?;
    let per_example: Vec<_> = map_range(batch.len(), |i| {
        let mut g = ModelParams::zeros(&params.config);
        backward(params, &caches[i], &loss.grads[i], &mut g).map(|_| g)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let mut grads = ModelParams::zeros(&params.config);
    for g in &per_example {
        grads.add_scaled(g, 1.0);
    }
    Ok((
        StepStats {
            loss: loss.value,
            terms: loss.terms,
            lr: 0.0,
        },
        grads,
    ))
}

/// One optimizer step on `batch` under `spec`.
pub fn train_step(
    params: &mut ModelParams,
    optim: &mut OptimState,
    batch: &Batch,
    spec: &ObjectiveSpec,
    lr: f64,
) -> Result<StepStats> {
    if !params.is_finite() {
        return Err(Error::Diverged {
            step: optim.step as usize,
            loss: f64::NAN,
        });
    }
    let (mut stats, grads) = example_grads(params, batch, spec).map_err(|e| match e {
        Error::Diverged { loss, .. } => Error::Diverged {
            step: optim.step as usize,
            loss,
        },
        other => other,
    })?;
    if !stats.loss.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged {
            step: optim.step as usize,
            loss: stats.loss,
        });
    }
    optim.apply(params, &grads, lr)?;
    if !params.is_finite() {
        return Err(Error::Diverged {
            step: optim.step as usize,
            loss: stats.loss,
        });
    }
    stats.lr = lr;
    Ok(stats)
}
