//! `longi`: phantom generation, flow precomputation, training, evaluation,
//! prediction and gradient self-checks.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
//! Failures print a single `error kind=<kind> code=<code>: <message>` line on
//! standard error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use longi_core::embedding::EmbeddingMode;
use longi_core::flowfield::FlowMethod;
use longi_core::trainer::Aggregation;
use longi_core::{Error, ErrorKind};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "LONGI_THREADS";

#[derive(Debug, Parser)]
#[command(name = "longi", version, about = "Longitudinal 3D volume classification")]
struct Cli {
    /// Worker threads; defaults to $LONGI_THREADS, then to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML experiment configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a balanced two-class phantom cohort and its manifest.
    Synth(SynthArgs),
    /// Pair scans and precompute per-year flows.
    Flow(FlowArgs),
    /// Train on the training subjects of a pair index.
    Train(TrainArgs),
    /// Score a split and write an evaluation report.
    Eval(EvalArgs),
    /// Write per-sample scores, optionally with attention sample points.
    Predict(PredictArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    size: Option<usize>,
    /// Comma-separated scan times in years.
    #[arg(long, value_delimiter = ',')]
    timepoints: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct FlowArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    method: Option<FlowMethod>,
    #[arg(long)]
    target_gap: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Pair index file or the directory holding it.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    mode: Option<EmbeddingMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subjects to train on.
    #[arg(long, value_enum, default_value = "train")]
    split: SplitChoice,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitChoice,
    /// Score per pair or as the mean over each subject's pairs.
    #[arg(long)]
    aggregate: Option<Aggregation>,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Restrict to these sample ids (`subject@time`); repeatable.
    #[arg(long = "id")]
    ids: Vec<String>,
    /// Also dump attention sample points per sample.
    #[arg(long)]
    attention: bool,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Directory for the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numerical => 3,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numerical => "numerical",
    }
}

fn fail(kind: ErrorKind, message: &str) -> ExitCode {
    let line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("error kind={} code={}: {line}", kind_name(kind), exit_code(kind));
    ExitCode::from(exit_code(kind))
}

fn init_threads(flag: Option<usize>) -> Result<(), Error> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidArgument(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))
        })?),
        Err(_) => None,
    };
    let threads = flag.or(from_env).unwrap_or(0);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> longi_core::Result<Vec<PathBuf>> {
    init_threads(cli.threads)?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Flow(a) => commands::flow(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Predict(a) => commands::predict(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(ErrorKind::Usage, first);
        }
    };
    match run(cli) {
        Ok(artifacts) => {
            for path in artifacts {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
