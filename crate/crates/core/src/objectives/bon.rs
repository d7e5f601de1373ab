//! Bag-of-n-grams loss against the reference n-gram counts, using the full
//! distributions rather than the argmax.

use crate::error::Result;
use crate::ngram::{build_ref_table, window_count, TokenId};
use crate::numeric::{Matrix, ProbMatrix};

fn gram_mass(probs: &ProbMatrix, gram: &[TokenId], windows: usize) -> f64 {
    (0..windows)
        .map(|t| {
            gram.iter()
                .enumerate()
                .map(|(i, &g)| probs.get(t + i, g as usize))
                .product::<f64>()
        })
        .sum()
}

pub(super) fn bon_loss(
    probs: &ProbMatrix,
    reference: &[TokenId],
    n: usize,
    upstream: Option<&mut Matrix>,
) -> Result<f64> {
    let windows = window_count(reference.len(), n);
    if windows == 0 {
        return Ok(1.0);
    }
    let table = build_ref_table(reference, n)?;
    let denom = 2.0 * windows as f64;

    // Grams outside the reference have reference count 0 and add min(·, 0) = 0.
    let mut clipped = 0.0;
    let mut active: Vec<&[TokenId]> = Vec::new();
    for (key, rec) in table.iter() {
        let mass = gram_mass(probs, key.tokens(), windows);
        let count = rec.ref_count as f64;
        if mass < count {
            clipped += mass;
            active.push(key.tokens());
        } else {
            clipped += count;
        }
    }
    let value = (denom - clipped) / denom;

    if let Some(upstream) = upstream {
        let coef = -1.0 / denom;
        for gram in active {
            for t in 0..windows {
                for i in 0..n {
                    let others: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| probs.get(t + j, gram[j] as usize))
                        .product();
                    upstream.add_at(t + i, gram[i] as usize, coef * others);
                }
            }
        }
    }
    Ok(value)
}

/// Smallest `|BoN_θ(g) - BoN_ref(g)|` over reference grams.
pub(crate) fn branch_gap(probs: &ProbMatrix, reference: &[TokenId], n: usize) -> Result<f64> {
    let windows = window_count(reference.len(), n);
    let table = build_ref_table(reference, n)?;
    Ok(table
        .iter()
        .map(|(k, r)| (gram_mass(probs, k.tokens(), windows) - r.ref_count as f64).abs())
        .fold(f64::INFINITY, f64::min))
}
