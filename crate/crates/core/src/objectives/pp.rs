//! Probabilistic n-gram precision over the argmax candidate, with each
//! gram's probabilistic count clipped at its reference count.

use indexmap::IndexMap;

use crate::error::Result;
use crate::ngram::{build_ref_table, window_count, ArgmaxSeq, TokenId};
use crate::numeric::Matrix;

struct CandGram {
    count: f64,
    starts: Vec<usize>,
}

pub(super) fn pp_loss(
    argmax: &ArgmaxSeq,
    reference: &[TokenId],
    n: usize,
    upstream: Option<&mut Matrix>,
) -> Result<f64> {
    let windows = window_count(reference.len(), n);
    if windows == 0 {
        return Ok(0.0);
    }
    let ref_table = build_ref_table(reference, n)?;
    let cand = &argmax.tokens;

    let mut grams: IndexMap<&[TokenId], CandGram> = IndexMap::new();
    for s in 0..windows {
        let g = grams.entry(&cand[s..s + n]).or_insert(CandGram {
            count: 0.0,
            starts: Vec::new(),
        });
        g.count += argmax.window_prob(s, n);
        g.starts.push(s);
    }

    let mut total = 0.0;
    let mut matched = 0.0;
    // `true` when the probabilistic side of the min is strictly smaller; on
    // ties the constant reference count is taken and contributes no gradient.
    let mut active = Vec::with_capacity(grams.len());
    for (gram, g) in &grams {
        let ref_count = ref_table.ref_count(gram) as f64;
        total += g.count;
        let on_prob_side = g.count < ref_count;
        matched += if on_prob_side { g.count } else { ref_count };
        active.push(on_prob_side);
    }
    let value = -matched / total;

    if let Some(upstream) = upstream {
        if matched == 0.0 {
            return Ok(value);
        }
        // d(-M/S) = -dM/S + M dS/S²
        let base = matched / (total * total);
        for ((_, g), &on_prob_side) in grams.iter().zip(&active) {
            let coef = if on_prob_side { base - 1.0 / total } else { base };
            for &s in &g.starts {
                for i in 0..n {
                    let others: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| argmax.max_probs[s + j])
                        .product();
                    upstream.add_at(s + i, cand[s + i] as usize, coef * others);
                }
            }
        }
    }
    Ok(value)
}

/// Smallest `|C̃(g) - C_ref(g)|` over candidate grams; how far the probe is
/// from flipping a `min` branch.
pub(crate) fn branch_gap(argmax: &ArgmaxSeq, reference: &[TokenId], n: usize) -> Result<f64> {
    let windows = window_count(reference.len(), n);
    let ref_table = build_ref_table(reference, n)?;
    let mut counts: IndexMap<&[TokenId], f64> = IndexMap::new();
    for s in 0..windows {
        *counts.entry(&argmax.tokens[s..s + n]).or_insert(0.0) += argmax.window_prob(s, n);
    }
    Ok(counts
        .iter()
        .map(|(g, c)| (c - ref_table.ref_count(g) as f64).abs())
        .fold(f64::INFINITY, f64::min))
}
