//! `ngobj`: experiments with differentiable n-gram objectives.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 a check
//! failed, 3 training diverged.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ngobj", version, about = "Differentiable n-gram objective experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/eval corpora from a TOML config.
    GenData(GenDataArgs),
    /// Train a model; writes checkpoints, a JSON report and a loss curve.
    Train(TrainArgs),
    /// Decode a corpus with a checkpoint and score it with ROUGE.
    Eval(EvalArgs),
    /// Check analytic objective gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Compare the objectives and metrics against brute-force oracles.
    OracleCheck(OracleCheckArgs),
    /// Measure training throughput across objective sets.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; must not exist or be empty.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides both the init and shuffle seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "self_reference")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// TOML decode settings (beam_width, length_penalty, min_len, max_len).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beam_width: Option<usize>,
    #[arg(long)]
    pub length_penalty: Option<f64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Score the references against themselves instead of decoding.
    #[arg(long, conflicts_with = "checkpoint")]
    pub self_reference: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct GradcheckArgs {
    /// Objective families to check, e.g. `ce+rewards:2,3+bon:2`. Defaults to
    /// every family.
    #[arg(long)]
    pub spec: Option<String>,
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturb the analytic gradients to confirm the check can fail.
    #[arg(long, hide = true)]
    pub corrupt: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct OracleCheckArgs {
    #[arg(long, default_value_t = 1000)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Nudge one optimized value to confirm the check can fail.
    #[arg(long, hide = true)]
    pub inject_mismatch: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::OracleCheck(a) => commands::oracle_check(a),
        Command::Bench(a) => commands::bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code)
        }
    }
}
