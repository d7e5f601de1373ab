//! N-gram extraction and counting over token ids, plus the argmax candidate
//! sequence that the match-based objectives key on.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::numeric::ProbMatrix;

pub type TokenId = u32;

/// Owned n-gram key. Equality and hashing are on raw token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NGramKey(Box<[TokenId]>);

impl NGramKey {
    pub fn new(tokens: &[TokenId]) -> Self {
        Self(tokens.into())
    }

    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.0
    }
}

impl std::borrow::Borrow<[TokenId]> for NGramKey {
    fn borrow(&self) -> &[TokenId] {
        &self.0
    }
}

/// One matched candidate occurrence: where it starts and the product of its
/// argmax probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchedGram {
    pub start: usize,
    pub prob: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GramRecord {
    pub ref_count: usize,
    pub matched: Vec<MatchedGram>,
}

/// Reference-side n-gram table. Keys iterate in first-occurrence order, so
/// every reduction over the table is deterministic.
#[derive(Debug, Clone, PartialEq)]
pub struct NGramTable {
    n: usize,
    entries: IndexMap<NGramKey, GramRecord>,
}

impl NGramTable {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, key: &[TokenId]) -> Option<&GramRecord> {
        self.entries.get(key)
    }

    pub fn get_mut(&mut self, key: &[TokenId]) -> Option<&mut GramRecord> {
        self.entries.get_mut(key)
    }

    pub fn ref_count(&self, key: &[TokenId]) -> usize {
        self.entries.get(key).map_or(0, |r| r.ref_count)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NGramKey, &GramRecord)> {
        self.entries.iter()
    }
}

fn check_order(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("n-gram order must be at least 1"));
    }
    Ok(())
}

/// Number of n-gram windows in a length-`len` sequence.
#[inline]
pub fn window_count(len: usize, n: usize) -> usize {
    (len + 1).saturating_sub(n)
}

/// `(t, seq[t..t+n])` for every window, in position order.
pub fn extract_ngrams(seq: &[TokenId], n: usize) -> Result<Vec<(usize, &[TokenId])>> {
    check_order(n)?;
    Ok(seq.windows(n).enumerate().collect())
}

pub fn build_ref_table(reference: &[TokenId], n: usize) -> Result<NGramTable> {
    check_order(n)?;
    let mut entries: IndexMap<NGramKey, GramRecord> = IndexMap::new();
    for gram in reference.windows(n) {
        match entries.get_mut(gram) {
            Some(rec) => rec.ref_count += 1,
            None => {
                entries.insert(
                    NGramKey::new(gram),
                    GramRecord {
                        ref_count: 1,
                        matched: Vec::new(),
                    },
                );
            }
        }
    }
    Ok(NGramTable { n, entries })
}

/// Distinct n-gram count of a sequence.
pub fn distinct_count(seq: &[TokenId], n: usize) -> Result<usize> {
    build_ref_table(seq, n).map(|t| t.len())
}

/// Per-row argmax of a probability block.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgmaxSeq {
    pub tokens: Vec<TokenId>,
    pub max_probs: Vec<f64>,
    /// Largest minus second-largest probability in each row.
    pub margins: Vec<f64>,
}

impl ArgmaxSeq {
    pub fn min_margin(&self) -> f64 {
        self.margins.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Product of max-probabilities over `start..start + n`.
    pub fn window_prob(&self, start: usize, n: usize) -> f64 {
        self.max_probs[start..start + n].iter().product()
    }
}

/// Lowest-index maximizer per row, its probability and the row's margin.
pub fn argmax_seq(probs: &ProbMatrix) -> ArgmaxSeq {
    let rows = probs.rows();
    let mut out = ArgmaxSeq {
        tokens: Vec::with_capacity(rows),
        max_probs: Vec::with_capacity(rows),
        margins: Vec::with_capacity(rows),
    };
    for r in 0..rows {
        let row = probs.row(r);
        let mut best = 0;
        let mut second = f64::NEG_INFINITY;
        for (j, &p) in row.iter().enumerate().skip(1) {
            if p > row[best] {
                second = row[best];
                best = j;
            } else if p > second {
                second = p;
            }
        }
        out.tokens.push(best as TokenId);
        out.max_probs.push(row[best]);
        out.margins.push(row[best] - second);
    }
    out
}
