//! ROUGE-N and ROUGE-L on token ids.
//!
//! ROUGE-N uses clipped counts: each distinct gram contributes
//! `min(count in candidate, count in reference)`. ROUGE-L is the
//! sentence-level LCS form, `P = LCS/|cand|`, `R = LCS/|ref|`. Corpus scores
//! are plain means of the per-example precision, recall and F1.
//!
//! An empty denominator gives 0, except when candidate and reference both
//! have no units to count (no n-grams, or no tokens for ROUGE-L): the two
//! are then identical as multisets and score 1.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::ngram::{window_count, TokenId};

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_counts(overlap: usize, cand_total: usize, ref_total: usize) -> Self {
        if cand_total == 0 && ref_total == 0 {
            return Self {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(overlap, cand_total);
        let recall = ratio(overlap, ref_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

fn gram_counts(seq: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut counts = HashMap::new();
    for g in seq.windows(n) {
        *counts.entry(g).or_insert(0) += 1;
    }
    counts
}

/// Clipped n-gram overlap count.
pub fn ngram_overlap(cand: &[TokenId], reference: &[TokenId], n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("ROUGE-N requires n >= 1"));
    }
    let ref_counts = gram_counts(reference, n);
    Ok(gram_counts(cand, n)
        .into_iter()
        .map(|(g, c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
        .sum())
}

pub fn rouge_n(cand: &[TokenId], reference: &[TokenId], n: usize) -> Result<RougeScore> {
    let overlap = ngram_overlap(cand, reference, n)?;
    Ok(RougeScore::from_counts(
        overlap,
        window_count(cand.len(), n),
        window_count(reference.len(), n),
    ))
}

/// Longest common subsequence length, O(|a|·|b|) time, O(|b|) space.
pub fn lcs_length(a: &[TokenId], b: &[TokenId]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(cand: &[TokenId], reference: &[TokenId]) -> RougeScore {
    RougeScore::from_counts(lcs_length(cand, reference), cand.len(), reference.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleScores {
    /// One score per configured order, same order as `CorpusReport::orders`.
    pub rouge_n: Vec<RougeScore>,
    pub rouge_l: RougeScore,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusReport {
    pub orders: Vec<usize>,
    pub examples: Vec<ExampleScores>,
    pub mean_rouge_n: Vec<RougeScore>,
    pub mean_rouge_l: RougeScore,
    pub count: usize,
}

fn mean(scores: impl Iterator<Item = RougeScore>, count: usize) -> RougeScore {
    let mut acc = RougeScore::default();
    for s in scores {
        acc.precision += s.precision;
        acc.recall += s.recall;
        acc.f1 += s.f1;
    }
    let k = count as f64;
    RougeScore {
        precision: acc.precision / k,
        recall: acc.recall / k,
        f1: acc.f1 / k,
    }
}

/// Per-example ROUGE-N for each order plus ROUGE-L, with corpus means.
pub fn corpus_eval(pairs: &[(Vec<TokenId>, Vec<TokenId>)], orders: &[usize]) -> Result<CorpusReport> {
    if pairs.is_empty() {
        return Err(Error::invalid("corpus evaluation needs at least one pair"));
    }
    if orders.contains(&0) {
        return Err(Error::invalid("ROUGE-N requires n >= 1"));
    }
    let examples: Vec<ExampleScores> = map_ordered(pairs, |(c, r)| ExampleScores {
        rouge_n: orders.iter().map(|&n| rouge_n(c, r, n).expect("order checked")).collect(),
        rouge_l: rouge_l(c, r),
    });
    let count = examples.len();
    let mean_rouge_n = (0..orders.len())
        .map(|i| mean(examples.iter().map(|e| e.rouge_n[i]), count))
        .collect();
    let mean_rouge_l = mean(examples.iter().map(|e| e.rouge_l), count);
    Ok(CorpusReport {
        orders: orders.to_vec(),
        examples,
        mean_rouge_n,
        mean_rouge_l,
        count,
    })
}
