use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use wvm_core::{Correction, ThresholdMethod, WeightsMode};

#[derive(Debug, Parser)]
#[command(name = "wvm", version, about = "Causal predictor discovery by Wasserstein variance minimization")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a random SCM and write data.csv, truth.json and a manifest.
    Simulate(SimulateArgs),
    /// Test every predictor (or block) for being a direct cause of y.
    Wvm(WvmArgs),
    /// Exhaustive invariant causal prediction baseline.
    Icp(IcpArgs),
    /// Repeated simulate + discover + score runs.
    Bench(BenchArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Worker threads; defaults to all cores.
    #[arg(long, env = "WVM_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    pub p: usize,
    #[arg(long, default_value_t = 6)]
    pub parents: usize,
    #[arg(long, default_value_t = 12.0)]
    pub avg_degree: f64,
    #[arg(long, default_value_t = 5)]
    pub envs: usize,
    #[arg(long, default_value_t = 500)]
    pub n_per_env: usize,
    /// 1-based position of the target in the causal order.
    #[arg(long)]
    pub target_position: Option<usize>,
    /// Lower and upper limit for the intervention scale bounds, e.g. "2,5".
    #[arg(long, value_parser = parse_pair)]
    pub scale_bounds: Option<(f64, f64)>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdArg {
    Bootstrap,
    Gamma,
    Mc,
}

impl From<ThresholdArg> for ThresholdMethod {
    fn from(t: ThresholdArg) -> Self {
        match t {
            ThresholdArg::Bootstrap => ThresholdMethod::Bootstrap,
            ThresholdArg::Gamma => ThresholdMethod::Gamma,
            ThresholdArg::Mc => ThresholdMethod::MonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CorrectionArg {
    None,
    Bonferroni,
}

impl From<CorrectionArg> for Correction {
    fn from(c: CorrectionArg) -> Self {
        match c {
            CorrectionArg::None => Correction::None,
            CorrectionArg::Bonferroni => Correction::Bonferroni,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum WeightsArg {
    Proportional,
    Uniform,
}

impl From<WeightsArg> for WeightsMode {
    fn from(w: WeightsArg) -> Self {
        match w {
            WeightsArg::Proportional => WeightsMode::Proportional,
            WeightsArg::Uniform => WeightsMode::Uniform,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct WvmArgs {
    /// CSV with header env,y,<predictors...>.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value_t = ThresholdArg::Bootstrap)]
    pub threshold: ThresholdArg,
    #[arg(long, default_value_t = wvm_core::thresholds::DEFAULT_BOOTSTRAP_REPS)]
    pub bootstrap_reps: usize,
    #[arg(long, default_value_t = 10_000)]
    pub mc_paths: usize,
    /// Quantile-density bandwidth constant.
    #[arg(long, default_value_t = 1.0)]
    pub bandwidth_scale: f64,
    /// Keep only the first K predictors entering a Lasso path.
    #[arg(long)]
    pub preselect: Option<usize>,
    #[arg(long, value_enum, default_value_t = CorrectionArg::None)]
    pub correction: CorrectionArg,
    #[arg(long, value_enum, default_value_t = WeightsArg::Proportional)]
    pub weights: WeightsArg,
    /// Test groups instead of single predictors: "x1,x2;x3" or 1-based
    /// indices "1,2;3".
    #[arg(long)]
    pub blocks: Option<String>,
    #[arg(long, default_value_t = 2)]
    pub restarts: usize,
    /// Fit without an intercept.
    #[arg(long)]
    pub no_intercept: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct IcpArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub alpha: f64,
    /// Refuse to run above this many predictors (2^p tests).
    #[arg(long, default_value_t = wvm_core::icp::DEFAULT_MAX_P)]
    pub max_p: usize,
    #[arg(long)]
    pub preselect: Option<usize>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 10)]
    pub reps: usize,
    /// JSON file with simulation and method settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the number of predictors from the config.
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// manifest.json written by an earlier run.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write outputs here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Worker threads for the re-run (default 1).
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s
        .split_once(',')
        .ok_or_else(|| format!("expected two comma-separated numbers, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok((parse(a)?, parse(b)?))
}
