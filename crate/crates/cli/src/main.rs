//! `flowconf` command-line driver.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! data errors (unreadable captures, malformed artifacts, numerical
//! failures).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use flowconf::features::{BalanceStrategy, FeatureKind};
use flowconf::ingest::AssemblyMode;

#[derive(Debug, Parser)]
#[command(name = "flowconf", version, about = "Flow classification with confidence-based abstention")]
pub struct Cli {
    /// Base seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for outputs; relative `--out` paths resolve against it.
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    /// Experiment config (TOML) supplying defaults for every subcommand.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// More log output (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Parse captures into labeled flows (JSONL).
    Ingest(IngestArgs),
    /// Turn flows into a feature CSV.
    Featurize(FeaturizeArgs),
    /// Equalize class counts in a feature CSV.
    Balance(BalanceArgs),
    /// Train an encoder on a feature CSV.
    TrainEncoder(TrainArgs),
    /// Write L2-normalized embeddings for a feature CSV.
    Embed(EmbedArgs),
    /// Fit centroids and the Gaussian mixture on training embeddings.
    FitGmm(FitGmmArgs),
    /// Set the abstention threshold of a fitted model.
    Calibrate(CalibrateArgs),
    /// Write per-sample decisions.
    Classify(ClassifyArgs),
    /// Score a decisions file.
    Evaluate(EvaluateArgs),
    /// F1/coverage over a grid of thresholds.
    Sweep(SweepArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
    /// Run the full experiment described by `--config`.
    Run,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    #[value(name = "dns_gated")]
    DnsGated,
    #[value(name = "keep_all")]
    KeepAll,
}

impl From<ModeArg> for AssemblyMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::DnsGated => AssemblyMode::DnsGated,
            ModeArg::KeepAll => AssemblyMode::KeepAll,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Timeseries,
    Sizeseq,
}

impl From<KindArg> for FeatureKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Timeseries => FeatureKind::TimeSeries,
            KindArg::Sizeseq => FeatureKind::SizeSequence,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Augment,
    Oversample,
}

impl From<StrategyArg> for BalanceStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Augment => BalanceStrategy::Augment,
            StrategyArg::Oversample => BalanceStrategy::Oversample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Ce,
    Supcon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum HeadArg {
    Softmax,
    Embedding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    Gmm,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Flows,
    Embeddings,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Capture files (pcap or pcapng).
    #[arg(long, required = true, num_args = 1..)]
    pub pcap: Vec<PathBuf>,
    /// Labeling rules (JSON). Without rules flows stay unlabeled.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "dns_gated")]
    pub mode: ModeArg,
    /// Session id for every capture (default: each file's stem).
    #[arg(long)]
    pub session_id: Option<String>,
    /// Drop flows that no rule matched.
    #[arg(long, requires = "rules")]
    pub domain_only: bool,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FeaturizeArgs {
    #[arg(long)]
    pub flows: PathBuf,
    #[arg(long, value_enum, default_value = "timeseries")]
    pub kind: KindArg,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BalanceArgs {
    #[arg(long = "in", value_name = "FILE")]
    pub input: PathBuf,
    /// Strategy (default: from config, else augment).
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Samples per class (default: the largest class).
    #[arg(long)]
    pub target: Option<usize>,
    /// Flows the features came from; required for augmentation.
    #[arg(long)]
    pub flows: Option<PathBuf>,
    #[arg(long)]
    pub max_shift: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_enum, default_value = "supcon")]
    pub loss: LossArg,
    /// Must agree with the loss; inferred when omitted.
    #[arg(long, value_enum)]
    pub head: Option<HeadArg>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub lstm1: Option<usize>,
    #[arg(long)]
    pub lstm2: Option<usize>,
    #[arg(long)]
    pub dense: Option<usize>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitGmmArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// Mixture components (default: number of classes).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Calibrate at this percentile right away.
    #[arg(long)]
    pub percentile: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub percentile: Option<f64>,
    /// Where to write the calibrated model (default: update in place).
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long, value_enum, default_value = "gmm")]
    pub pipeline: PipelineArg,
    /// Confidence model (gmm) or softmax encoder (softmax).
    #[arg(long)]
    pub model: PathBuf,
    /// Test embeddings (gmm pipeline).
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Test features (softmax pipeline).
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Softmax threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub decisions: PathBuf,
    /// Comma-separated class list (default: inferred from the file).
    #[arg(long, value_delimiter = ',')]
    pub classes: Option<Vec<String>>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value = "gmm")]
    pub pipeline: PipelineArg,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// `percentile`, `softmax`, `start:stop:step` or a comma list.
    #[arg(long)]
    pub grid: Option<String>,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(value_enum)]
    pub kind: SynthKind,
    /// JSON profile: flow class profiles, or an embedding spec.
    #[arg(long)]
    pub profile: Option<PathBuf>,
    /// Embeddings only: number of classes, the last one background.
    #[arg(long, default_value_t = 2)]
    pub classes: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.05)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 0.1)]
    pub outlier_fraction: f64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 1 } else { 2 })
        }
    }
}
