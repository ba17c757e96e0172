use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "ternsim", version, about = "Cycle and traffic simulator for a ternary/INT8 LLM accelerator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate one configuration (plus its all-off baseline for ratios).
    Run(RunArgs),
    /// Sweep the 2^3 grid over lop / hlp / dual-mode.
    Ablate(RunArgs),
    /// Run the invariant and oracle suite.
    Verify(VerifyArgs),
    /// Write synthetic ternary weights to a directory.
    GenWeights(GenWeightsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

impl OnOff {
    pub fn enabled(self) -> bool {
        self == OnOff::On
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FeatureArg {
    Onchip,
    Offchip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrefillArg {
    Simulate,
    Warm,
}

/// Overrides shared by every subcommand that builds a configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub topk: Option<usize>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dmodel: Option<usize>,
    #[arg(long)]
    pub dffn: Option<usize>,
    #[arg(long, value_enum)]
    pub lop: Option<OnOff>,
    #[arg(long, value_enum)]
    pub hlp: Option<OnOff>,
    #[arg(long = "dual-mode", value_enum)]
    pub dual_mode: Option<OnOff>,
    #[arg(long = "lop-features", value_enum)]
    pub lop_features: Option<FeatureArg>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Prompt length.
    #[arg(long = "seq-len")]
    pub seq_len: Option<usize>,
    #[arg(long = "decode-steps")]
    pub decode_steps: Option<usize>,
    /// Simulate the prompt, or fill the cache untimed and simulate decode only.
    #[arg(long, value_enum)]
    pub prefill: Option<PrefillArg>,
    /// Load weights from a directory instead of generating them.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// CSV output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSONL trace path. For `ablate`, one file per grid point with a
    /// `.lopX-hlpX-dualX` suffix before the extension.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Print the report as JSON.
    #[arg(long)]
    pub json: bool,
    /// Clock used to convert cycles/token into tokens/s in the summary.
    #[arg(long = "freq-ghz")]
    pub freq_ghz: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct GenWeightsArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Fraction of zero weights.
    #[arg(long = "zero-fraction")]
    pub zero_fraction: Option<f64>,
}
