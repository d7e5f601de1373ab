//! Training, evaluation and throughput harnesses shared by the CLI, the
//! benches and the acceptance suite.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, Batch, Corpus};
use crate::error::{Error, Result};
use crate::exec::map_ordered;
use crate::metrics::{corpus_eval, CorpusReport};
use crate::model::{
    decode, forward_teacher_forced, init_model, lr_at, train_step, DecodeConfig, ModelConfig, ModelParams, OptimState,
};
use crate::ngram::TokenId;
use crate::objectives::{composite_terms, cross_entropy, ObjectiveSpec, Term};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Peak learning rate.
    pub lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    /// Total optimizer steps; batches cycle through reshuffled epochs.
    pub steps: usize,
    /// When set, replaces `steps` with `epochs × ⌈examples / batch_size⌉`.
    pub epochs: Option<usize>,
    pub batch_size: usize,
    /// Evaluate on the held-out corpus every this many steps (and after the
    /// last step).
    pub eval_every: usize,
    pub init_seed: u64,
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            warmup_steps: 100,
            weight_decay: 0.01,
            steps: 1000,
            epochs: None,
            batch_size: 16,
            eval_every: 100,
            init_seed: 0,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::invalid(format!("lr {} must be finite and non-negative", self.lr)));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be finite and non-negative"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::invalid("eval_every must be at least 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        match self.epochs {
            Some(e) => e * examples.div_ceil(self.batch_size.max(1)),
            None => self.steps,
        }
    }
}

/// Mean held-out loss of a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossEval {
    /// Mean composite loss per example.
    pub total: f64,
    /// Mean of each term per example; sums to `total`.
    pub terms: Vec<(Term, f64)>,
    /// Cross-entropy per target token, whether or not CE is in the objective.
    pub ce_per_token: f64,
}

impl LossEval {
    pub fn term(&self, term: Term) -> Option<f64> {
        self.terms.iter().find(|(t, _)| *t == term).map(|&(_, v)| v)
    }
}

pub fn evaluate_loss(params: &ModelParams, corpus: &Corpus, spec: &ObjectiveSpec) -> Result<LossEval> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty corpus"));
    }
    spec.validate()?;
    let per_example = map_ordered(&corpus.examples, |ex| -> Result<_> {
        let logits = forward_teacher_forced(params, &ex.source, &ex.target)?.logits;
        let comp = composite_terms(&logits, &ex.target, spec)?;
        let ce = cross_entropy(&logits, &ex.target)?.value;
        Ok((comp.terms, ce, ex.target.len()))
    });
    let terms = spec.terms();
    let mut sums = vec![0.0; terms.len()];
    let mut ce_sum = 0.0;
    let mut tokens = 0usize;
    for r in per_example {
        let (values, ce, len) = r?;
        for (s, (_, v)) in sums.iter_mut().zip(values) {
            *s += v;
        }
        ce_sum += ce;
        tokens += len;
    }
    let n = corpus.len() as f64;
    let terms: Vec<(Term, f64)> = terms.into_iter().zip(sums.into_iter().map(|s| s / n)).collect();
    Ok(LossEval {
        total: terms.iter().map(|(_, v)| v).sum(),
        terms,
        ce_per_token: if tokens == 0 { 0.0 } else { ce_sum / tokens as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    /// Optimizer steps completed.
    pub step: usize,
    /// Mean training-batch loss since the previous evaluation.
    pub train_loss: f64,
    pub eval: LossEval,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub final_params: ModelParams,
    pub final_optim: OptimState,
    /// Parameters at the evaluation with the lowest composite loss.
    pub best_params: ModelParams,
    pub best_optim: OptimState,
    pub best_step: usize,
    pub curve: Vec<EvalPoint>,
    pub examples_seen: usize,
    pub wall_secs: f64,
}

impl TrainOutcome {
    pub fn best_eval(&self) -> &LossEval {
        &self
            .curve
            .iter()
            .find(|p| p.step == self.best_step)
            .expect("best step is an evaluation point")
            .eval
    }

    pub fn examples_per_sec(&self) -> f64 {
        if self.wall_secs > 0.0 {
            self.examples_seen as f64 / self.wall_secs
        } else {
            0.0
        }
    }
}

/// Trains from a fresh initialization. The batch order of epoch `k` uses
/// shuffle seed `shuffle_seed + k`. `on_eval` sees every evaluation as it
/// happens.
pub fn train(
    config: &ModelConfig,
    train_corpus: &Corpus,
    eval_corpus: &Corpus,
    spec: &ObjectiveSpec,
    tc: &TrainConfig,
    mut on_eval: impl FnMut(&EvalPoint),
) -> Result<TrainOutcome> {
    tc.validate()?;
    spec.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let total = tc.total_steps(train_corpus.len());
    let mut params = init_model(config, tc.init_seed)?;
    let mut optim = OptimState::new(&params, tc.weight_decay);
    let start = Instant::now();

    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, ModelParams, OptimState)> = None;
    let mut epoch = 0u64;
    let mut batches: Vec<Batch> = Vec::new();
    let mut cursor = 0;
    let mut window_loss = 0.0;
    let mut window_steps = 0usize;
    let mut examples_seen = 0;

    let mut evaluate = |step: usize, params: &ModelParams, optim: &OptimState, window: f64| -> Result<()> {
        let eval = evaluate_loss(params, eval_corpus, spec)?;
        if best.as_ref().is_none_or(|(b, ..)| eval.total < *b) {
            best = Some((eval.total, step, params.clone(), optim.clone()));
        }
        let point = EvalPoint {
            step,
            train_loss: window,
            eval,
        };
        on_eval(&point);
        curve.push(point);
        Ok(())
    };

    for step in 0..total {
        if cursor == batches.len() {
            batches = make_batches(train_corpus, tc.batch_size, tc.shuffle_seed.wrapping_add(epoch))?;
            epoch += 1;
            cursor = 0;
        }
        let batch = &batches[cursor];
        cursor += 1;
        let lr = lr_at(step, tc.lr, tc.warmup_steps, total);
        let stats = train_step(&mut params, &mut optim, batch, spec, lr).map_err(|e| match e {
            Error::Diverged { loss, .. } => Error::Diverged { step: step + 1, loss },
            other => other,
        })?;
        examples_seen += batch.len();
        window_loss += stats.loss;
        window_steps += 1;
        if (step + 1) % tc.eval_every == 0 || step + 1 == total {
            evaluate(step + 1, &params, &optim, window_loss / window_steps as f64)?;
            window_loss = 0.0;
            window_steps = 0;
        }
    }
    if total == 0 {
        evaluate(0, &params, &optim, f64::NAN)?;
    }
    let wall_secs = start.elapsed().as_secs_f64();
    let (_, best_step, best_params, best_optim) = best.expect("at least one evaluation");
    Ok(TrainOutcome {
        final_params: params,
        final_optim: optim,
        best_params,
        best_optim,
        best_step,
        curve,
        examples_seen,
        wall_secs,
    })
}

/// Decoded outputs with their ROUGE scores against the targets (EOS
/// stripped).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeEval {
    pub outputs: Vec<Vec<TokenId>>,
    pub report: CorpusReport,
}

pub const ROUGE_ORDERS: [usize; 2] = [1, 2];

pub fn decode_eval(params: &ModelParams, corpus: &Corpus, cfg: &DecodeConfig) -> Result<DecodeEval> {
    cfg.validate()?;
    let outputs = map_ordered(&corpus.examples, |ex| decode(params, &ex.source, cfg))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(Vec<TokenId>, Vec<TokenId>)> = outputs
        .iter()
        .zip(&corpus.examples)
        .map(|(o, ex)| (o.clone(), ex.target_tokens().to_vec()))
        .collect();
    let report = corpus_eval(&pairs, &ROUGE_ORDERS)?;
    Ok(DecodeEval { outputs, report })
}

/// Scores every reference against itself; all scores are 1.
pub fn self_reference_eval(corpus: &Corpus) -> Result<CorpusReport> {
    let pairs: Vec<_> = corpus
        .examples
        .iter()
        .map(|ex| (ex.target_tokens().to_vec(), ex.target_tokens().to_vec()))
        .collect();
    corpus_eval(&pairs, &ROUGE_ORDERS)
}

/// The objective sets compared in the throughput sweep, with row labels.
pub fn bench_sweep() -> Vec<(String, ObjectiveSpec)> {
    let ce = ObjectiveSpec::ce_only;
    vec![
        ("CE".into(), ce()),
        ("+BoN".into(), ce().with_bon([2])),
        ("+P-P2".into(), ce().with_pp([2])),
        ("+2-gram rewards".into(), ce().with_rewards([2])),
        ("+2-gram matches".into(), ce().with_matches([2])),
        ("+(2,3,4)-gram rewards".into(), ce().with_rewards([2, 3, 4])),
        ("+(2,3,4)-gram matches".into(), ce().with_matches([2, 3, 4])),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub label: String,
    pub spec: String,
    pub docs_per_sec: f64,
    /// Throughput divided by the first row's.
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub batch_size: usize,
    /// Timed train steps per spec and round.
    pub steps: usize,
    /// Interleaved rounds; each spec keeps its fastest round.
    pub rounds: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 20,
            rounds: 5,
            seed: 0,
        }
    }
}

/// Training throughput (examples per second) of each spec on `corpus`.
///
/// Every spec starts from the same initialization and sees the same batches.
/// Specs are timed in interleaved rounds and each keeps its fastest round,
/// which suppresses scheduler noise.
pub fn bench_throughput(
    config: &ModelConfig,
    corpus: &Corpus,
    specs: &[(String, ObjectiveSpec)],
    bc: &BenchConfig,
) -> Result<Vec<BenchRow>> {
    if specs.is_empty() {
        return Err(Error::invalid("no objective specs to benchmark"));
    }
    if bc.steps == 0 || bc.rounds == 0 {
        return Err(Error::invalid("bench needs at least one step and one round"));
    }
    let init = init_model(config, bc.seed)?;
    let batches = make_batches(corpus, bc.batch_size, bc.seed)?;
    if batches.is_empty() {
        return Err(Error::invalid("bench corpus is empty"));
    }
    let mut best = vec![0.0f64; specs.len()];
    for _ in 0..bc.rounds {
        for (slot, (_, spec)) in best.iter_mut().zip(specs) {
            let mut params = init.clone();
            let mut optim = OptimState::new(&params, 0.01);
            let mut docs = 0;
            let start = Instant::now();
            for i in 0..bc.steps {
                let b = &batches[i % batches.len()];
                train_step(&mut params, &mut optim, b, spec, 1e-3)?;
                docs += b.len();
            }
            let rate = docs as f64 / start.elapsed().as_secs_f64().max(1e-12);
            *slot = slot.max(rate);
        }
    }
    let base = best[0];
    Ok(specs
        .iter()
        .zip(best)
        .map(|((label, spec), rate)| BenchRow {
            label: label.clone(),
            spec: spec.to_string(),
            docs_per_sec: rate,
            relative: rate / base,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_copy_task, gen_salient_task};

    #[test]
    fn evaluation_terms_sum_to_total() {
        let c = gen_salient_task(20, 8, 3, 30, 1).unwrap();
        let cfg = ModelConfig::new(20, 8, 4).with_embed_dim(8);
        let p = init_model(&cfg, 0).unwrap();
        let spec = ObjectiveSpec::ce_only().with_rewards([2, 3]).with_matches([2]).with_bon([2]);
        let e = evaluate_loss(&p, &c, &spec).unwrap();
        let sum: f64 = e.terms.iter().map(|(_, v)| v).sum();
        assert!((sum - e.total).abs() < 1e-12);
        // untrained: close to uniform over 20 tokens
        assert!((e.ce_per_token - 20f64.ln()).abs() < 0.2, "{}", e.ce_per_token);
        assert_eq!(e.term(Term::CrossEntropy).map(|v| v / 4.0), Some(e.ce_per_token));
    }

    #[test]
    fn training_is_reproducible_and_tracks_best() {
        let train_c = gen_copy_task(12, 3, 64, 1).unwrap();
        let eval_c = gen_copy_task(12, 3, 16, 2).unwrap();
        let cfg = ModelConfig::new(12, 3, 4).with_embed_dim(8);
        let tc = TrainConfig {
            steps: 30,
            eval_every: 10,
            warmup_steps: 5,
            batch_size: 8,
            lr: 1e-2,
            ..TrainConfig::default()
        };
        let spec = ObjectiveSpec::ce_only().with_matches([1]);
        let mut seen = Vec::new();
        let a = train(&cfg, &train_c, &eval_c, &spec, &tc, |p| seen.push(p.step)).unwrap();
        let b = train(&cfg, &train_c, &eval_c, &spec, &tc, |_| {}).unwrap();
        assert_eq!(seen, vec![10, 20, 30]);
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.final_params, b.final_params);
        let min = a.curve.iter().map(|p| p.eval.total).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_eval().total, min);
        assert_eq!(evaluate_loss(&a.best_params, &eval_c, &spec).unwrap().total, min);
        assert_eq!(a.examples_seen, 30 * 8);
        assert!(a.curve.last().unwrap().eval.total < evaluate_loss(&init_model(&cfg, 0).unwrap(), &eval_c, &spec).unwrap().total);
    }

    #[test]
    fn self_reference_scores_one() {
        let c = gen_salient_task(20, 8, 3, 10, 1).unwrap();
        let r = self_reference_eval(&c).unwrap();
        assert!(r.mean_rouge_n.iter().chain([&r.mean_rouge_l]).all(|s| s.f1 == 1.0));
    }

    #[test]
    fn bench_rows() {
        let c = gen_copy_task(12, 4, 32, 0).unwrap();
        let cfg = ModelConfig::new(12, 4, 5).with_embed_dim(8);
        let bc = BenchConfig {
            batch_size: 8,
            steps: 2,
            rounds: 1,
            seed: 0,
        };
        let rows = bench_throughput(&cfg, &c, &bench_sweep(), &bc).unwrap();
        assert_eq!(rows.len(), 7);
        assert_eq!(rows[0].relative, 1.0);
        assert!(rows.iter().all(|r| r.docs_per_sec > 0.0));
    }
}
