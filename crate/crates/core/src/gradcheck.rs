//! Central-difference verification of the analytic objective gradients.
//!
//! The match-based objectives are only piecewise smooth, so a probe is
//! accepted only when every row's argmax margin clears a floor and every
//! clipped count sits well away from its `min` switch. Inside that region the
//! match structure cannot change under a step of size `h`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec::map_range;
use crate::ngram::{argmax_seq, TokenId};
use crate::numeric::{softmax, Matrix, Rng};
use crate::objectives::{branch_gap, term_loss, LossOutput, Term};

/// Minimum distance between a clipped count and its reference count.
pub const BRANCH_GAP_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Matrix,
    pub numeric: Matrix,
    /// `max |a - n| / max(1, |a|)` over all entries.
    pub max_rel_error: f64,
    pub min_margin: f64,
    pub branch_gap: f64,
}

/// Checks `term` at `logits` against central differences with step `h`.
pub fn gradcheck(
    term: Term,
    logits: &Matrix,
    reference: &[TokenId],
    h: f64,
    margin_floor: f64,
) -> Result<GradCheckReport> {
    gradcheck_with(term, logits, reference, h, margin_floor, |l| term_loss(l, reference, term))
}

/// Like [`gradcheck`] but with a caller-supplied evaluation, which lets a
/// harness swap in a deliberately broken gradient.
pub fn gradcheck_with<F>(
    term: Term,
    logits: &Matrix,
    reference: &[TokenId],
    h: f64,
    margin_floor: f64,
    eval: F,
) -> Result<GradCheckReport>
where
    F: Fn(&Matrix) -> Result<LossOutput>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let probs = softmax(logits)?;
    let min_margin = argmax_seq(&probs).min_margin();
    if min_margin < margin_floor {
        return Err(Error::ProbeRejected {
            what: "argmax margin",
            value: min_margin,
            floor: margin_floor,
        });
    }
    let gap = branch_gap(logits, reference, term)?;
    if gap < BRANCH_GAP_FLOOR {
        return Err(Error::ProbeRejected {
            what: "min-branch gap",
            value: gap,
            floor: BRANCH_GAP_FLOOR,
        });
    }

    let analytic = eval(logits)?.grad;
    let mut numeric = Matrix::zeros(logits.rows(), logits.cols());
    let mut probe = logits.clone();
    let mut max_rel_error = 0.0_f64;
    for i in 0..logits.as_slice().len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let plus = eval(&probe)?.value;
        probe.as_mut_slice()[i] = orig - h;
        let minus = eval(&probe)?.value;
        probe.as_mut_slice()[i] = orig;

        let fd = (plus - minus) / (2.0 * h);
        numeric.as_mut_slice()[i] = fd;
        let a = analytic.as_slice()[i];
        max_rel_error = max_rel_error.max((a - fd).abs() / a.abs().max(1.0));
    }
    Ok(GradCheckReport {
        analytic,
        numeric,
        max_rel_error,
        min_margin,
        branch_gap: gap,
    })
}

/// Shape limits for random probes.
#[derive(Debug, Clone, Copy)]
pub struct ProbeConfig {
    pub max_len: usize,
    pub max_vocab: usize,
    pub margin_floor: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            max_len: 8,
            max_vocab: 12,
            margin_floor: 0.05,
        }
    }
}

/// Draws a random `(logits, reference)` pair that passes both probe filters
/// for `term`.
///
/// References come from a three-token alphabet so repeated grams are common,
/// and each row's logits are boosted toward the reference token most of the
/// time so that matched windows actually occur.
pub fn random_probe(rng: &mut Rng, term: Term, cfg: ProbeConfig) -> (Matrix, Vec<TokenId>) {
    let min_len = term.order().unwrap_or(1).max(1);
    let max_len = cfg.max_len.max(min_len);
    loop {
        let t = min_len + rng.below(max_len - min_len + 1);
        let d = 3 + rng.below(cfg.max_vocab.max(3) - 2);
        let alphabet = d.min(3);
        let reference: Vec<TokenId> = (0..t).map(|_| rng.below(alphabet) as TokenId).collect();
        let mut logits = Matrix::zeros(t, d);
        for r in 0..t {
            for c in 0..d {
                logits.set(r, c, rng.uniform(-1.0, 1.0));
            }
            let boosted = if rng.next_f64() < 0.75 {
                reference[r] as usize
            } else {
                rng.below(d)
            };
            logits.add_at(r, boosted, rng.uniform(0.5, 4.0));
        }
        let Ok(probs) = softmax(&logits) else { continue };
        if argmax_seq(&probs).min_margin() < cfg.margin_floor {
            continue;
        }
        match branch_gap(&logits, &reference, term) {
            Ok(g) if g >= BRANCH_GAP_FLOOR => return (logits, reference),
            _ => continue,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FamilyResult {
    pub term: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub tolerance: f64,
    pub step: f64,
    pub families: Vec<FamilyResult>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.families.iter().all(|f| f.failures == 0)
    }
}

/// Terms covered by the default gradient suite.
pub fn default_terms() -> Vec<Term> {
    let mut v = vec![Term::CrossEntropy];
    v.extend([2, 3, 4].map(Term::Rewards));
    v.extend([1, 2, 3, 4].map(Term::Matches));
    v.push(Term::Pp(2));
    v.extend([2, 3, 4].map(Term::Bon));
    v
}

/// Runs `probes` random checks per term. `corrupt` perturbs every analytic
/// gradient before comparison (harness self-test).
pub fn run_suite(
    terms: &[Term],
    probes: usize,
    h: f64,
    tolerance: f64,
    cfg: ProbeConfig,
    seed: u64,
    corrupt: bool,
) -> Result<SuiteReport> {
    let mut families = Vec::with_capacity(terms.len());
    for (ti, &term) in terms.iter().enumerate() {
        term.validate()?;
        let results = map_range(probes, |p| -> Result<f64> {
            let mut rng = Rng::new(seed ^ ((ti as u64) << 32) ^ p as u64);
            let (logits, reference) = random_probe(&mut rng, term, cfg);
            let report = gradcheck_with(term, &logits, &reference, h, cfg.margin_floor, |l| {
                let mut out = term_loss(l, &reference, term)?;
                if corrupt {
                    out.grad.as_mut_slice()[0] += 0.5;
                }
                Ok(out)
            })?;
            Ok(report.max_rel_error)
        });
        let mut fam = FamilyResult {
            term: term.label(),
            probes,
            max_rel_error: 0.0,
            failures: 0,
        };
        for r in results {
            let err = r?;
            fam.max_rel_error = fam.max_rel_error.max(err);
            if !(err < tolerance) {
                fam.failures += 1;
            }
        }
        families.push(fam);
    }
    Ok(SuiteReport {
        tolerance,
        step: h,
        families,
    })
}
