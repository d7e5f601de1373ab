use std::path::Path;

use anyhow::{anyhow, Context};
use ngram_objectives::data::{generate, read_corpus, write_corpus, Corpus};
use ngram_objectives::experiment::{
    bench_sweep, bench_throughput, decode_eval, self_reference_eval, train as run_training, EvalPoint, LossEval,
    ROUGE_ORDERS,
};
use ngram_objectives::gradcheck::{default_terms, run_suite, ProbeConfig};
use ngram_objectives::metrics::{CorpusReport, RougeScore};
use ngram_objectives::model::{load_checkpoint, save_checkpoint, DecodeConfig, ModelConfig};
use ngram_objectives::oracle::run_oracle_suite;
use ngram_objectives::{ObjectiveSpec, Term, TokenId};
use serde::Serialize;

use crate::config::{self, BenchFileConfig, GenConfig, RunConfig};
use crate::output::{fresh_dir, fresh_file, num, write_atomic, write_csv, write_json};
use crate::{BenchArgs, EvalArgs, GenDataArgs, GradcheckArgs, OracleCheckArgs, TrainArgs};

pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

/// Divergence maps to exit code 3; everything else is a validation error.
impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let diverged = error
            .chain()
            .any(|e| matches!(e.downcast_ref(), Some(ngram_objectives::Error::Diverged { .. })));
        Failure {
            code: if diverged { 3 } else { 1 },
            error,
        }
    }
}

impl From<ngram_objectives::Error> for Failure {
    fn from(e: ngram_objectives::Error) -> Self {
        anyhow::Error::from(e).into()
    }
}

fn check_failed(msg: String) -> Failure {
    Failure {
        code: 2,
        error: anyhow!(msg),
    }
}

type CmdResult = Result<(), Failure>;

pub fn gen_data(args: GenDataArgs) -> CmdResult {
    let mut cfg: GenConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.corpus.validate().context("corpus config")?;
    if cfg.train_count == 0 {
        return Err(anyhow!("train_count must be positive").into());
    }
    let eval_seed = cfg.eval_seed.unwrap_or(cfg.seed.wrapping_add(1));
    let train = generate(&cfg.corpus, cfg.train_count, cfg.seed)?;
    let eval = generate(&cfg.corpus, cfg.eval_count, eval_seed)?;
    fresh_dir(&args.out)?;
    let mut written = vec![("train.jsonl", &train)];
    if cfg.eval_count > 0 {
        written.push(("eval.jsonl", &eval));
    }
    for (name, corpus) in written {
        let path = args.out.join(name);
        write_atomic(&path, |tmp| Ok(write_corpus(corpus, tmp)?))?;
        println!("wrote {} ({} examples)", path.display(), corpus.len());
    }
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<Corpus> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn term_map(terms: &[(Term, f64)]) -> serde_json::Map<String, serde_json::Value> {
    terms.iter().map(|(t, v)| (t.label(), serde_json::json!(v))).collect()
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    train_loss: f64,
    total: f64,
    terms: serde_json::Map<String, serde_json::Value>,
    ce_per_token: f64,
}

impl CurveRow {
    fn new(p: &EvalPoint) -> Self {
        Self {
            step: p.step,
            train_loss: p.train_loss,
            total: p.eval.total,
            terms: term_map(&p.eval.terms),
            ce_per_token: p.eval.ce_per_token,
        }
    }
}

#[derive(Serialize)]
struct RougeSummary {
    orders: Vec<usize>,
    rouge_n: Vec<RougeScore>,
    rouge_l: RougeScore,
    count: usize,
}

impl From<&CorpusReport> for RougeSummary {
    fn from(r: &CorpusReport) -> Self {
        Self {
            orders: r.orders.clone(),
            rouge_n: r.mean_rouge_n.clone(),
            rouge_l: r.mean_rouge_l,
            count: r.count,
        }
    }
}

#[derive(Serialize)]
struct Sample {
    source: Vec<TokenId>,
    target: Vec<TokenId>,
    output: Vec<TokenId>,
}

#[derive(Serialize)]
struct TrainReport<'a> {
    config: &'a RunConfig,
    model: &'a ModelConfig,
    steps: usize,
    curve: Vec<CurveRow>,
    best_step: usize,
    best_eval: &'a LossEval,
    rouge: RougeSummary,
    samples: Vec<Sample>,
    wall_secs: f64,
    examples_per_sec: f64,
}

fn loss_csv(spec: &ObjectiveSpec, curve: &[EvalPoint]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["step".to_string(), "train_loss".into(), "total".into()];
    header.extend(spec.terms().into_iter().map(Term::label));
    header.push("ce_per_token".into());
    let rows = curve
        .iter()
        .map(|p| {
            let mut r = vec![p.step.to_string(), num(p.train_loss), num(p.eval.total)];
            r.extend(p.eval.terms.iter().map(|(_, v)| num(*v)));
            r.push(num(p.eval.ce_per_token));
            r
        })
        .collect();
    (header, rows)
}

fn rouge_csv(report: &CorpusReport) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header = vec!["example".to_string()];
    let names: Vec<String> = report
        .orders
        .iter()
        .map(|n| format!("rouge{n}"))
        .chain(["rougeL".to_string()])
        .collect();
    for n in &names {
        header.extend(["precision", "recall", "f1"].map(|k| format!("{n}_{k}")));
    }
    let cells = |scores: Vec<&RougeScore>| -> Vec<String> {
        scores
            .into_iter()
            .flat_map(|s| [num(s.precision), num(s.recall), num(s.f1)])
            .collect()
    };
    let mut rows: Vec<Vec<String>> = report
        .examples
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut r = vec![i.to_string()];
            r.extend(cells(e.rouge_n.iter().chain([&e.rouge_l]).collect()));
            r
        })
        .collect();
    let mut mean = vec!["mean".to_string()];
    mean.extend(cells(report.mean_rouge_n.iter().chain([&report.mean_rouge_l]).collect()));
    rows.push(mean);
    (header, rows)
}

fn print_rouge(report: &CorpusReport) {
    println!("{:<8} {:>9} {:>9} {:>9}", "metric", "precision", "recall", "f1");
    for (n, s) in report.orders.iter().zip(&report.mean_rouge_n) {
        println!("{:<8} {:>9.4} {:>9.4} {:>9.4}", format!("ROUGE-{n}"), s.precision, s.recall, s.f1);
    }
    let l = &report.mean_rouge_l;
    println!("{:<8} {:>9.4} {:>9.4} {:>9.4}", "ROUGE-L", l.precision, l.recall, l.f1);
}

pub fn train(args: TrainArgs) -> CmdResult {
    let mut cfg: RunConfig = config::load(&args.config)?;
    cfg.train_corpus = config::resolve(&args.config, &cfg.train_corpus);
    cfg.eval_corpus = config::resolve(&args.config, &cfg.eval_corpus);
    if let Some(s) = args.seed {
        cfg.train.init_seed = s;
        cfg.train.shuffle_seed = s;
    }
    cfg.objective.validate()?;
    cfg.train.validate()?;
    cfg.decode.validate()?;
    let train_c = read(&cfg.train_corpus)?;
    let eval_c = read(&cfg.eval_corpus)?;
    if train_c.is_empty() || eval_c.is_empty() {
        return Err(anyhow!("training and evaluation corpora must be non-empty").into());
    }
    let model = cfg.model.resolve(&train_c, &eval_c)?;
    fresh_dir(&args.out)?;

    let steps = cfg.train.total_steps(train_c.len());
    println!("training {} for {steps} steps on {} examples", cfg.objective, train_c.len());
    let outcome = run_training(&model, &train_c, &eval_c, &cfg.objective, &cfg.train, |p| {
        println!(
            "step {:>6}  train {:.5}  eval {:.5}  ce/token {:.5}",
            p.step, p.train_loss, p.eval.total, p.eval.ce_per_token
        );
    })?;

    save_checkpoint(&args.out.join("model.ckpt"), &outcome.best_params, Some(&outcome.best_optim))?;
    save_checkpoint(&args.out.join("final.ckpt"), &outcome.final_params, Some(&outcome.final_optim))?;

    let decoded = decode_eval(&outcome.best_params, &eval_c, &cfg.decode)?;
    let (header, rows) = loss_csv(&cfg.objective, &outcome.curve);
    write_csv(&args.out.join("loss_curve.csv"), &header, &rows)?;
    let (header, rows) = rouge_csv(&decoded.report);
    write_csv(&args.out.join("rouge.csv"), &header, &rows)?;

    let samples = eval_c
        .examples
        .iter()
        .zip(&decoded.outputs)
        .take(cfg.samples)
        .map(|(ex, out)| Sample {
            source: ex.source.clone(),
            target: ex.target.clone(),
            output: out.clone(),
        })
        .collect();
    let report = TrainReport {
        config: &cfg,
        model: &model,
        steps,
        curve: outcome.curve.iter().map(CurveRow::new).collect(),
        best_step: outcome.best_step,
        best_eval: outcome.best_eval(),
        rouge: RougeSummary::from(&decoded.report),
        samples,
        wall_secs: outcome.wall_secs,
        examples_per_sec: outcome.examples_per_sec(),
    };
    write_json(&args.out.join("report.json"), &report)?;
    println!("best step {} (eval loss {:.5})", outcome.best_step, outcome.best_eval().total);
    print_rouge(&decoded.report);
    Ok(())
}

pub fn eval(args: EvalArgs) -> CmdResult {
    let corpus = read(&args.corpus)?;
    if corpus.is_empty() {
        return Err(anyhow!("corpus {} is empty", args.corpus.display()).into());
    }
    let mut decode: DecodeConfig = match &args.config {
        Some(p) => config::load(p)?,
        None => DecodeConfig::default(),
    };
    if let Some(v) = args.beam_width {
        decode.beam_width = v;
    }
    if let Some(v) = args.length_penalty {
        decode.length_penalty = v;
    }
    if let Some(v) = args.min_len {
        decode.min_len = v;
    }
    if let Some(v) = args.max_len {
        decode.max_len = v;
    }
    decode.validate()?;
    if let Some(out) = &args.out {
        fresh_dir(out)?;
    }

    let (report, outputs) = if args.self_reference {
        (self_reference_eval(&corpus)?, None)
    } else {
        let path = args.checkpoint.as_ref().expect("clap requires a checkpoint");
        let ckpt = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
        if let Some(v) = corpus.vocab_size() {
            if v > ckpt.params.config.vocab_size {
                return Err(anyhow!(
                    "corpus vocabulary {v} exceeds the model's {}",
                    ckpt.params.config.vocab_size
                )
                .into());
            }
        }
        let d = decode_eval(&ckpt.params, &corpus, &decode)?;
        (d.report, Some(d.outputs))
    };
    print_rouge(&report);

    if let Some(out) = &args.out {
        let (header, rows) = rouge_csv(&report);
        write_csv(&out.join("rouge.csv"), &header, &rows)?;
        #[derive(Serialize)]
        struct EvalReport<'a> {
            decode: Option<&'a DecodeConfig>,
            orders: &'a [usize],
            summary: RougeSummary,
            outputs: Option<Vec<Vec<TokenId>>>,
        }
        write_json(
            &out.join("rouge.json"),
            &EvalReport {
                decode: (!args.self_reference).then_some(&decode),
                orders: &ROUGE_ORDERS,
                summary: RougeSummary::from(&report),
                outputs,
            },
        )?;
    }
    Ok(())
}

fn write_report<T: Serialize>(out: Option<&Path>, value: &T) -> anyhow::Result<()> {
    if let Some(path) = out {
        fresh_file(path)?;
        write_json(path, value)?;
    }
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> CmdResult {
    let terms = match &args.spec {
        Some(s) => s.parse::<ObjectiveSpec>()?.terms(),
        None => default_terms(),
    };
    if terms.is_empty() {
        return Err(anyhow!("no objective families selected").into());
    }
    if args.probes == 0 {
        return Err(anyhow!("gradient check with zero probes is vacuous").into());
    }
    if !(args.tolerance > 0.0 && args.step > 0.0) {
        return Err(anyhow!("tolerance and step must be positive").into());
    }
    let report = run_suite(
        &terms,
        args.probes,
        args.step,
        args.tolerance,
        ProbeConfig::default(),
        args.seed,
        args.corrupt,
    )?;
    println!("{:<10} {:>6} {:>14} {:>8}", "family", "probes", "max rel error", "failed");
    for f in &report.families {
        println!("{:<10} {:>6} {:>14.3e} {:>8}", f.term, f.probes, f.max_rel_error, f.failures);
    }
    write_report(args.out.as_deref(), &report)?;
    if report.passed() {
        println!("gradient check passed (tolerance {:e})", args.tolerance);
        Ok(())
    } else {
        Err(check_failed(format!("gradient check failed (tolerance {:e})", args.tolerance)))
    }
}

pub fn oracle_check(args: OracleCheckArgs) -> CmdResult {
    let report = run_oracle_suite(args.trials, args.seed, args.inject_mismatch)?;
    println!("{:<16} {:>9} {:>14} {:>10}", "check", "instances", "max abs diff", "mismatches");
    for c in &report.checks {
        println!("{:<16} {:>9} {:>14.3e} {:>10}", c.name, c.instances, c.max_abs_diff, c.mismatches);
    }
    write_report(args.out.as_deref(), &report)?;
    if report.passed() {
        println!("oracle check passed");
        Ok(())
    } else {
        Err(check_failed("oracle check found mismatches".into()))
    }
}

pub fn bench(args: BenchArgs) -> CmdResult {
    let mut cfg: BenchFileConfig = config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
        cfg.bench.seed = s;
    }
    let corpus = generate(&cfg.corpus, cfg.count, cfg.seed)?;
    let model = cfg.model.resolve(&corpus, &corpus)?;
    fresh_dir(&args.out)?;
    let rows = bench_throughput(&model, &corpus, &bench_sweep(), &cfg.bench)?;
    let header = ["objective", "spec", "docs_per_sec", "relative", "display"].map(String::from);
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.spec.clone(),
                format!("{:.2}", r.docs_per_sec),
                format!("{:.2}", r.relative),
                format!("{:.1} (×{:.2})", r.docs_per_sec, r.relative),
            ]
        })
        .collect();
    write_csv(&args.out.join("bench.csv"), &header, &csv_rows)?;
    write_json(&args.out.join("bench.json"), &rows)?;
    println!("{:<24} {:>12} {:>9}", "objective", "docs/s", "relative");
    for r in &rows {
        println!("{:<24} {:>12.1} {:>8.2}×", r.label, r.docs_per_sec, r.relative);
    }
    Ok(())
}
