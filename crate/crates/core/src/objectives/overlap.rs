//! The two uncapped n-gram objectives: position-aligned rewards and
//! position-free matches. They differ only in which table key a candidate
//! window is filed under.

use crate::error::Result;
use crate::ngram::{build_ref_table, window_count, ArgmaxSeq, MatchedGram, TokenId};
use crate::numeric::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(super) enum Mode {
    /// Candidate window must equal the reference window at the same start.
    Positional,
    /// Candidate window must occur somewhere in the reference.
    Anywhere,
}

pub(super) fn overlap_loss(
    argmax: &ArgmaxSeq,
    reference: &[TokenId],
    n: usize,
    mode: Mode,
    upstream: Option<&mut Matrix>,
) -> Result<f64> {
    let windows = window_count(reference.len(), n);
    if windows == 0 {
        return Ok(0.0);
    }
    let mut table = build_ref_table(reference, n)?;
    let cand = &argmax.tokens;

    for s in 0..windows {
        let cand_gram = &cand[s..s + n];
        let key = match mode {
            Mode::Positional => {
                let ref_gram = &reference[s..s + n];
                if cand_gram != ref_gram {
                    continue;
                }
                ref_gram
            }
            Mode::Anywhere => cand_gram,
        };
        if let Some(rec) = table.get_mut(key) {
            rec.matched.push(MatchedGram {
                start: s,
                prob: argmax.window_prob(s, n),
            });
        }
    }

    // Σ_keys mean(products); a perfect prediction gives exactly U_n here.
    let mut reward = 0.0;
    for (_, rec) in table.iter() {
        if rec.matched.is_empty() {
            continue;
        }
        let sum: f64 = rec.matched.iter().map(|m| m.prob).sum();
        reward += sum / rec.matched.len() as f64;
    }
    let value = 1.0 - reward / windows as f64;

    if let Some(upstream) = upstream {
        for (_, rec) in table.iter() {
            if rec.matched.is_empty() {
                continue;
            }
            let weight = 1.0 / (windows as f64 * rec.matched.len() as f64);
            for m in &rec.matched {
                for i in 0..n {
                    let others: f64 = (0..n)
                        .filter(|&j| j != i)
                        .map(|j| argmax.max_probs[m.start + j])
                        .product();
                    let row = m.start + i;
                    upstream.add_at(row, cand[row] as usize, -weight * others);
                }
            }
        }
    }
    Ok(value)
}
