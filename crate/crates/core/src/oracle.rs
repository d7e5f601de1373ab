//! Definition-literal reference implementations.
//!
//! Everything here is written straight from the formulas with nested loops
//! over positions: its own softmax, its own argmax, no n-gram tables and no
//! shared helpers with the optimized paths. It exists to be compared against,
//! both in tests and by the `oracle-check` command.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::metrics;
use crate::numeric::{Matrix, Rng};
use crate::objectives::{term_loss, Term};

type Tok = u32;

fn probs_of(logits: &Matrix) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let mut m = row[0];
        for &v in row {
            if v > m {
                m = v;
            }
        }
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.push(exps.iter().map(|e| e / z).collect());
    }
    out
}

fn argmax_of(p: &[Vec<f64>]) -> (Vec<Tok>, Vec<f64>) {
    let mut toks = Vec::new();
    let mut best = Vec::new();
    for row in p {
        let mut b = 0;
        for j in 0..row.len() {
            if row[j] > row[b] {
                b = j;
            }
        }
        toks.push(b as Tok);
        best.push(row[b]);
    }
    (toks, best)
}

fn same(a: &[Tok], i: usize, b: &[Tok], j: usize, n: usize) -> bool {
    (0..n).all(|k| a[i + k] == b[j + k])
}

fn windows(t: usize, n: usize) -> usize {
    (t + 1).saturating_sub(n)
}

pub fn cross_entropy(logits: &Matrix, reference: &[Tok]) -> f64 {
    let p = probs_of(logits);
    let mut v = 0.0;
    for t in 0..reference.len() {
        v -= p[t][reference[t] as usize].ln();
    }
    v
}

/// Rewards: a window counts when argmax and reference agree at the same
/// start; its product is divided by the number of matched starts that carry
/// the same reference gram.
pub fn rewards(logits: &Matrix, reference: &[Tok], n: usize) -> f64 {
    let k = windows(reference.len(), n);
    if k == 0 {
        return 0.0;
    }
    let p = probs_of(logits);
    let (cand, maxp) = argmax_of(&p);
    let mut total = 0.0;
    for s in 0..k {
        if !same(&cand, s, reference, s, n) {
            continue;
        }
        let mut matched_same_key = 0;
        for s2 in 0..k {
            if same(reference, s2, reference, s, n) && same(&cand, s2, reference, s2, n) {
                matched_same_key += 1;
            }
        }
        let mut prod = 1.0;
        for i in 0..n {
            prod *= maxp[s + i];
        }
        total += prod / matched_same_key as f64;
    }
    1.0 - total / k as f64
}

/// Matches: a window counts when its argmax gram appears anywhere in the
/// reference; divided by how many candidate windows carry that gram.
pub fn matches(logits: &Matrix, reference: &[Tok], n: usize) -> f64 {
    let k = windows(reference.len(), n);
    if k == 0 {
        return 0.0;
    }
    let p = probs_of(logits);
    let (cand, maxp) = argmax_of(&p);
    let mut total = 0.0;
    for s in 0..k {
        let in_ref = (0..k).any(|r| same(&cand, s, reference, r, n));
        if !in_ref {
            continue;
        }
        let mut occurrences = 0;
        for s2 in 0..k {
            if same(&cand, s2, &cand, s, n) {
                occurrences += 1;
            }
        }
        let mut prod = 1.0;
        for i in 0..n {
            prod *= maxp[s + i];
        }
        total += prod / occurrences as f64;
    }
    1.0 - total / k as f64
}

pub fn pp(logits: &Matrix, reference: &[Tok], n: usize) -> f64 {
    let k = windows(reference.len(), n);
    if k == 0 {
        return 0.0;
    }
    let p = probs_of(logits);
    let (cand, maxp) = argmax_of(&p);
    let mut num = 0.0;
    let mut den = 0.0;
    for s in 0..k {
        // each distinct candidate gram once, at its first start
        if (0..s).any(|s0| same(&cand, s0, &cand, s, n)) {
            continue;
        }
        let mut prob_count = 0.0;
        for s2 in 0..k {
            if same(&cand, s2, &cand, s, n) {
                let mut prod = 1.0;
                for i in 0..n {
                    prod *= maxp[s2 + i];
                }
                prob_count += prod;
            }
        }
        let ref_count = (0..k).filter(|&r| same(reference, r, &cand, s, n)).count() as f64;
        num += prob_count.min(ref_count);
        den += prob_count;
    }
    -num / den
}

pub fn bon(logits: &Matrix, reference: &[Tok], n: usize) -> f64 {
    let k = windows(reference.len(), n);
    if k == 0 {
        return 1.0;
    }
    let p = probs_of(logits);
    let mut sum_min = 0.0;
    for r in 0..k {
        if (0..r).any(|r0| same(reference, r0, reference, r, n)) {
            continue;
        }
        let ref_count = (0..k).filter(|&r2| same(reference, r2, reference, r, n)).count() as f64;
        let mut mass = 0.0;
        for t in 0..k {
            let mut prod = 1.0;
            for i in 0..n {
                prod *= p[t + i][reference[r + i] as usize];
            }
            mass += prod;
        }
        sum_min += mass.min(ref_count);
    }
    (2.0 * k as f64 - sum_min) / (2.0 * k as f64)
}

pub fn term(term: Term, logits: &Matrix, reference: &[Tok]) -> f64 {
    match term {
        Term::CrossEntropy => cross_entropy(logits, reference),
        Term::Rewards(n) => rewards(logits, reference, n),
        Term::Matches(n) => matches(logits, reference, n),
        Term::Pp(n) => pp(logits, reference, n),
        Term::Bon(n) => bon(logits, reference, n),
    }
}

/// LCS length by trying every subsequence of `a` (longest first) against `b`.
pub fn lcs_exhaustive(a: &[Tok], b: &[Tok]) -> usize {
    assert!(a.len() < 64, "exhaustive LCS is exponential");
    let mut best = 0;
    for mask in 0u64..(1u64 << a.len()) {
        let len = mask.count_ones() as usize;
        if len <= best {
            continue;
        }
        let sub: Vec<Tok> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| a[i]).collect();
        if is_subsequence(&sub, b) {
            best = len;
        }
    }
    best
}

pub fn is_subsequence(needle: &[Tok], hay: &[Tok]) -> bool {
    let mut it = hay.iter();
    needle.iter().all(|x| it.any(|y| y == x))
}

/// LCS length by memoized recursion on suffixes.
pub fn lcs_memo(a: &[Tok], b: &[Tok]) -> usize {
    fn go(a: &[Tok], b: &[Tok], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

/// Clipped n-gram overlap by direct counting.
pub fn rouge_overlap(cand: &[Tok], reference: &[Tok], n: usize) -> usize {
    let kc = windows(cand.len(), n);
    let kr = windows(reference.len(), n);
    let mut overlap = 0;
    for s in 0..kc {
        if (0..s).any(|s0| same(cand, s0, cand, s, n)) {
            continue;
        }
        let in_cand = (0..kc).filter(|&s2| same(cand, s2, cand, s, n)).count();
        let in_ref = (0..kr).filter(|&r| same(reference, r, cand, s, n)).count();
        overlap += in_cand.min(in_ref);
    }
    overlap
}

/// One family of oracle comparisons.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub instances: usize,
    pub max_abs_diff: f64,
    pub mismatches: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub tolerance: f64,
    pub checks: Vec<OracleCheck>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.mismatches == 0)
    }
}

/// Tolerance for objective values; the combinatorial checks must agree
/// exactly.
pub const ORACLE_TOLERANCE: f64 = 1e-12;

/// Random `(logits, reference)` pair: `T ≤ 10`, `D ≤ 8`, a three-token
/// reference alphabet, and about half of the rows pushed toward the
/// reference token so matches occur.
pub fn random_instance(rng: &mut Rng) -> (Matrix, Vec<Tok>) {
    let t = 1 + rng.below(10);
    let d = 2 + rng.below(7);
    let reference: Vec<Tok> = (0..t).map(|_| rng.below(d.min(3)) as Tok).collect();
    let mut logits = Matrix::zeros(t, d);
    for r in 0..t {
        for c in 0..d {
            logits.set(r, c, rng.uniform(-3.0, 3.0));
        }
        let tok = if rng.below(2) == 0 { reference[r] as usize } else { rng.below(d) };
        logits.add_at(r, tok, 2.5);
    }
    (logits, reference)
}

fn oracle_terms() -> Vec<Term> {
    let mut v = vec![Term::CrossEntropy];
    v.extend([2, 3, 4].map(Term::Rewards));
    v.extend([1, 2, 3, 4].map(Term::Matches));
    v.extend([1, 2, 3].map(Term::Pp));
    v.extend([1, 2, 3, 4].map(Term::Bon));
    v
}

fn random_tokens(rng: &mut Rng, max_len: usize, alphabet: usize) -> Vec<Tok> {
    let len = rng.below(max_len + 1);
    (0..len).map(|_| rng.below(alphabet) as Tok).collect()
}

/// Compares the optimized objectives, LCS and ROUGE overlap counts against
/// the definition-literal versions on `trials` random instances each.
/// `inject_mismatch` nudges one optimized value (harness self-test).
pub fn run_oracle_suite(trials: usize, seed: u64, inject_mismatch: bool) -> Result<OracleReport> {
    if trials == 0 {
        return Err(Error::invalid("oracle check with zero trials is vacuous"));
    }
    let mut checks = Vec::new();
    let mut record = |name: String, diffs: Vec<f64>, tol: f64| {
        checks.push(OracleCheck {
            name,
            instances: diffs.len(),
            max_abs_diff: diffs.iter().cloned().fold(0.0, f64::max),
            mismatches: diffs.iter().filter(|&&d| !(d <= tol)).count(),
        });
    };

    for (ti, term) in oracle_terms().into_iter().enumerate() {
        let diffs = map_range(trials, |i| -> Result<f64> {
            let mut rng = Rng::new(seed ^ ((ti as u64 + 1) << 40) ^ i as u64);
            let (logits, reference) = random_instance(&mut rng);
            let mut fast = term_loss(&logits, &reference, term)?.value;
            if inject_mismatch && ti == 0 && i == 0 {
                fast += 1e-9;
            }
            Ok((fast - self::term(term, &logits, &reference)).abs())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        record(term.label(), diffs, ORACLE_TOLERANCE);
    }

    let lcs = map_range(trials, |i| {
        let mut rng = Rng::new(seed ^ (1 << 60) ^ i as u64);
        let a = random_tokens(&mut rng, 10, 4);
        let b = random_tokens(&mut rng, 10, 4);
        let fast = metrics::lcs_length(&a, &b);
        let diff = |x: usize| (fast as f64 - x as f64).abs();
        diff(lcs_exhaustive(&a, &b)).max(diff(lcs_memo(&a, &b)))
    });
    record("lcs".into(), lcs, 0.0);

    for n in 1..=4 {
        let diffs = map_range(trials, |i| -> Result<f64> {
            let mut rng = Rng::new(seed ^ ((n as u64) << 56) ^ i as u64);
            let c = random_tokens(&mut rng, 12, 3);
            let r = random_tokens(&mut rng, 12, 3);
            let fast = metrics::ngram_overlap(&c, &r, n)?;
            Ok((fast as f64 - rouge_overlap(&c, &r, n) as f64).abs())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        record(format!("rouge{n}_overlap"), diffs, 0.0);
    }
    Ok(OracleReport {
        tolerance: ORACLE_TOLERANCE,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_and_catches_injection() {
        let ok = run_oracle_suite(50, 3, false).unwrap();
        assert!(ok.passed(), "{ok:?}");
        assert_eq!(ok.checks.len(), 20);
        assert!(!run_oracle_suite(50, 3, true).unwrap().passed());
        assert!(run_oracle_suite(0, 3, false).is_err());
    }

    #[test]
    fn lcs_oracles_agree_on_fixtures() {
        assert_eq!(lcs_exhaustive(&[1, 2, 3, 4], &[1, 3, 2, 4]), 3);
        assert_eq!(lcs_memo(&[1, 2, 3, 4], &[1, 3, 2, 4]), 3);
        assert_eq!(lcs_exhaustive(&[], &[1]), 0);
        assert_eq!(lcs_memo(&[2, 2], &[2]), 1);
    }

    #[test]
    fn overlap_fixture() {
        assert_eq!(rouge_overlap(&[1, 2, 4], &[1, 2, 3], 2), 1);
        assert_eq!(rouge_overlap(&[5, 5, 5], &[5, 5], 1), 2);
    }
}
