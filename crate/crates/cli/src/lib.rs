//! Command-line workflows: synth, train, eval, explain, ablate.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;

/// Relative output paths are resolved against this directory when set.
pub const OUTPUT_ROOT_ENV: &str = "FUZZY_ATTN_OUTPUT_ROOT";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(fuzzy_attn::Error),
}

impl CliError {
    /// 2 for usage, configuration and I/O problems; 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(fuzzy_attn::Error::Numeric(_)) => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(fuzzy_attn::Error::Numeric(m)) => write!(f, "numeric failure: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fuzzy_attn::Error> for CliError {
    fn from(e: fuzzy_attn::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Core(fuzzy_attn::Error::Format(e.to_string()))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

pub fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

/// Applies the output-root override to a relative path.
pub fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() && !root.is_empty() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

#[derive(Parser, Debug)]
#[command(name = "fuzzy-attn", version, about = "Fuzzy-attention transformer for paired fNIRS trials")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic paired-trial corpus.
    Synth(SynthArgs),
    /// Train a model and write checkpoint, history and run manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write firing reports, rule t-maps, prototypes and synchrony tests.
    Explain(ExplainArgs),
    /// Run an ablation grid and write a CSV of metrics per cell.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub dyads: usize,
    #[arg(long, default_value_t = 20)]
    pub per_condition: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(short, long, default_value = "data.ftrial")]
    pub output: PathBuf,
    /// JSON file overriding generator parameters.
    #[arg(long)]
    pub gen_config: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct ModelArgs {
    /// channel-first or time-first.
    #[arg(long)]
    pub structure: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    #[arg(long)]
    pub ffn_hidden: Option<usize>,
    /// Rules per fuzzy layer.
    #[arg(long)]
    pub rules: Option<usize>,
    /// Attention per layer, e.g. `fuzzy,dot,fuzzy`; one value applies to all.
    #[arg(long)]
    pub attn: Option<String>,
    #[arg(long)]
    pub head_hidden: Option<usize>,
}

#[derive(Args, Debug, Default, Clone)]
pub struct OptimArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Base learning rate before batch-size scaling.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long, default_value = "train")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// JSON run config; explicit flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitName {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Run manifest holding the split indices (needed unless `--split all`).
    #[arg(long)]
    pub run: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SplitName::All)]
    pub split: SplitName,
    #[arg(short, long, default_value = "eval")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Trial index to report in detail; repeatable.
    #[arg(long)]
    pub sample: Vec<usize>,
    /// Encoder block to explain; defaults to the deepest fuzzy block.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(short, long, default_value = "explanation.json")]
    pub output: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Grid {
    /// Every non-empty set of layers using fuzzy attention (dot elsewhere).
    Replace,
    /// Rules per layer.
    Rules,
    /// Encoder depth.
    Depth,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long, value_enum)]
    pub grid: Grid,
    /// Comma-separated cell values for the rules and depth grids.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(short, long, default_value = "ablate")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub quiet: bool,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub optim: OptimArgs,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Explain(a) => commands::explain(&a),
        Command::Ablate(a) => commands::ablate(&a),
    }
}
