//! `spine`: generate data, train, evaluate, analyze, distill and grow
//! set-operation models from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical
//! divergence. Diagnostics go to stderr; results go to stdout or files.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use spine::SpineError;

#[derive(Parser, Debug)]
#[command(name = "spine", version, about = "Piecewise models from differentiable set operations")]
pub struct Cli {
    /// Flat `key = value` file whose entries act as flags; typed flags win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Worker threads. Results are reduced in a fixed order, so any count
    /// reproduces the single-threaded numbers.
    #[arg(long, global = true, env = "SPINE_THREADS")]
    pub threads: Option<usize>,

    /// More log output on stderr (repeatable); RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a generated dataset as CSV.
    #[command(args_override_self = true)]
    Gen(GenArgs),
    /// Build a model from structure text and fit it.
    #[command(args_override_self = true)]
    Train(TrainArgs),
    /// Loss and accuracy of a saved model.
    #[command(args_override_self = true)]
    Eval(EvalArgs),
    /// Saliency, perturbation, active-set or component exports.
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
    /// Convert a log-exp model to max-min form and fine-tune it.
    #[command(args_override_self = true)]
    Distill(DistillArgs),
    /// Replicate the polytopes active on a region and fine-tune.
    #[command(args_override_self = true)]
    Target(TargetArgs),
    /// Train one structure in log-exp and directly in max-min form and
    /// count the components each ends up using.
    #[command(name = "demo-maxmin-failure", args_override_self = true)]
    DemoMaxminFailure(DemoArgs),
}

pub const SUBCOMMANDS: [&str; 7] = ["gen", "train", "eval", "analyze", "distill", "target", "demo-maxmin-failure"];

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    SimReg,
    Spiral,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(value_enum)]
    pub kind: Generator,
    /// Rows (sim-reg) or rows per class (spiral).
    #[arg(long)]
    pub n: Option<usize>,
    /// Noise scale; 0.1 for sim-reg and 0.05 for spiral by default.
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Noise-free targets on an even grid (sim-reg only).
    #[arg(long)]
    pub noiseless: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Where a dataset comes from.
#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// A CSV file, or an IDX image file followed by its label file.
    #[arg(long, num_args = 1..=2, required = true, value_name = "PATH")]
    pub data: Vec<PathBuf>,
    /// Target column names (comma separated); the last column by default.
    #[arg(long, value_delimiter = ',')]
    pub target: Vec<String>,
    /// Force how the target column is read.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Standardize IDX pixels with the MNIST mean and deviation.
    #[arg(long)]
    pub mnist_norm: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum KindArg {
    Regression,
    Classification,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossArg {
    Mse,
    Nll,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Structure text, or a file containing it.
    #[arg(long)]
    pub structure: String,
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    /// Mini-batch size; 0 trains full batch.
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    /// Defaults to nll for class labels and mse otherwise.
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reduce inputs to this many features with a learned linear map.
    #[arg(long)]
    pub pre_linear: Option<usize>,
    /// Leave inputs unscaled instead of z-scoring them.
    #[arg(long)]
    pub raw_inputs: bool,
    /// Held-out data to report at the end (same format as --data).
    #[arg(long, num_args = 1..=2, conflicts_with = "split")]
    pub test: Vec<PathBuf>,
    /// Hold out this fraction of --data for testing (stratified for labels).
    #[arg(long)]
    pub split: Option<f64>,
    /// Log every this many epochs at info level.
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Noise-free version of the same inputs; adds a second row.
    #[arg(long)]
    pub against: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Evaluate in the exact max-min form instead of the model's own.
    #[arg(long)]
    pub maxmin: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Saliency,
    Perturb,
    Active,
    Components,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum)]
    pub mode: Mode,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub head: usize,
    /// Input swept by perturb and components; others sit at their means.
    #[arg(long, default_value_t = 0)]
    pub axis: usize,
    /// Sweep range; the data range of --axis by default.
    #[arg(long, allow_negative_numbers = true)]
    pub lo: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub hi: Option<f64>,
    #[arg(long, default_value_t = 500)]
    pub bins: usize,
    /// Perturbation draws per parameter.
    #[arg(long, default_value_t = 64)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct DistillArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to save the max-min model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub history_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TargetArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// `x0:lo:hi[,x1:lo:hi...]`, a row index list, or `auto[:bins]`.
    #[arg(long, required_unless_present = "auto", conflicts_with = "auto")]
    pub region: Option<String>,
    /// Pick the worst-fit bin along the first input.
    #[arg(long)]
    pub auto: bool,
    #[arg(long, default_value_t = 0.05)]
    pub noise_scale: f64,
    /// Maximum polytope count as a multiple of --baseline-polytopes.
    #[arg(long, default_value_t = 4.0)]
    pub growth_cap: f64,
    /// Count the cap is relative to; the incoming model's by default.
    #[arg(long)]
    pub baseline_polytopes: Option<usize>,
    #[arg(long, default_value_t = 500)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub batch: usize,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to save the grown model.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Before/after metrics as CSV.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 25)]
    pub unions: usize,
    #[arg(long, default_value_t = 3)]
    pub intersections: usize,
    #[arg(long, default_value_t = 10.0)]
    pub a: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub data_seed: u64,
}

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
    Diverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Diverged(_) => 3,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Data(m) => write!(f, "{m}"),
            Failure::Diverged(m) => write!(f, "training diverged: {m}"),
        }
    }
}

impl From<SpineError> for Failure {
    fn from(e: SpineError) -> Self {
        let m = e.to_string();
        match e {
            SpineError::Numerical { .. } | SpineError::NonFiniteGradient { .. } => Failure::Diverged(m),
            SpineError::Config(_) | SpineError::Parse { .. } | SpineError::Structure(_) => Failure::Usage(m),
            SpineError::Input(_)
            | SpineError::Data(_)
            | SpineError::Csv { .. }
            | SpineError::Idx { .. }
            | SpineError::Io { .. }
            | SpineError::Json(_) => Failure::Data(m),
        }
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect(), &SUBCOMMANDS) {
        Ok(a) => a,
        Err(m) => {
            eprintln!("usage error: {m}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::command().try_get_matches_from(args).and_then(|m| Cli::from_arg_matches(&m)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("usage error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if !spine::par::set_threads(n) {
            log::warn!("--threads {n} ignored: built without the thread pool");
        }
    }
    match commands::run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
