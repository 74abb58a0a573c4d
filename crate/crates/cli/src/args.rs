//! Argument and config-file definitions.
//!
//! Every engine hyperparameter is a key in the TOML config file and has a
//! matching flag override; flags win over the file, the file wins over the
//! built-in defaults.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use pacer_core::config::EngineConfig;

#[derive(Parser)]
#[command(name = "pacer", version, about = "Confidence-screened sampling with one consensus-conditioned revision round")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Run the full pipeline against a live endpoint.
    Run(RunCmd),
    /// Re-run the pipeline from a recorded session store.
    Replay(ReplayCmd),
    /// Monte-Carlo checks of the revision/voting analysis.
    Simulate(SimulateCmd),
    /// Aggregate run reports into accuracy-versus-tokens CSV rows.
    Pareto(ParetoCmd),
    /// Dump one recorded trace's stability trajectory.
    Inspect(InspectCmd),
}

/// Engine knobs as optional flag overrides.
#[derive(Args, Default)]
pub struct EngineOverrides {
    /// Config file (TOML); flag overrides win.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_try: Option<u32>,
    #[arg(long)]
    pub n_init: Option<u32>,
    /// Screening percentile in (0, 100).
    #[arg(long)]
    pub eta: Option<f64>,
    /// Candidates in the consensus packet.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Token budget per representative rationale.
    #[arg(long)]
    pub l_sum: Option<usize>,
    /// Token budget per review completion.
    #[arg(long)]
    pub l_rev: Option<usize>,
    /// Top-k logprobs per decoding step.
    #[arg(long)]
    pub k: Option<usize>,
    /// Uncertainty window size.
    #[arg(long)]
    pub window: Option<usize>,
    /// Vote-weight temperature.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Sum raw stabilities instead of exp-transformed weights.
    #[arg(long)]
    pub raw_weights: bool,
    /// Skip the revision round on unanimous pools.
    #[arg(long)]
    pub skip_unanimous: bool,
    #[arg(long)]
    pub trace_tail_budget: Option<usize>,
    #[arg(long)]
    pub max_tokens: Option<u64>,
    /// Concurrent in-flight streams.
    #[arg(long)]
    pub parallel: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub sampling_temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub model: Option<String>,
}

/// Optional `[backend]` section of the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default)]
pub struct BackendSection {
    pub base_url: Option<String>,
    pub api_key_env: Option<String>,
}

#[derive(Deserialize)]
#[serde(default)]
struct ConfigFile {
    #[serde(flatten)]
    engine: EngineConfig,
    backend: BackendSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self { engine: EngineConfig::default(), backend: BackendSection::default() }
    }
}

impl EngineOverrides {
    /// Defaults ← config file ← flags.
    pub fn resolve(&self) -> Result<(EngineConfig, BackendSection)> {
        let file = match &self.config {
            Some(path) => {
                let raw = std::fs::read_to_string(path)
                    .with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str::<ConfigFile>(&raw)
                    .with_context(|| format!("parsing config {}", path.display()))?
            }
            None => ConfigFile::default(),
        };
        let mut cfg = file.engine;
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        take!(
            n_try, n_init, eta, top_n, l_sum, l_rev, k, window, temperature, trace_tail_budget,
            max_tokens, parallel, seed, sampling_temperature, top_p, model
        );
        if self.raw_weights {
            cfg.raw_weights = true;
        }
        if self.skip_unanimous {
            cfg.skip_unanimous = true;
        }
        cfg.validate()?;
        Ok((cfg, file.backend))
    }
}

#[derive(Args)]
pub struct RunCmd {
    /// Problem statement file (use --prompt for inline text).
    #[arg(long, conflicts_with = "prompt")]
    pub problem_file: Option<PathBuf>,
    /// Inline problem statement.
    #[arg(long)]
    pub prompt: Option<String>,
    /// Identifier used for ground-truth matching; defaults to the file stem.
    #[arg(long)]
    pub problem_id: Option<String>,
    /// OpenAI-compatible API root, e.g. http://localhost:8000/v1.
    #[arg(long)]
    pub base_url: Option<String>,
    /// Environment variable holding the API key (value is never logged).
    #[arg(long)]
    pub api_key_env: Option<String>,
    /// Record every stream to this session store.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Also write the JSON report to this path.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: EngineOverrides,
}

#[derive(Args)]
pub struct ReplayCmd {
    /// Recorded session store to replay.
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long)]
    pub problem_id: Option<String>,
    /// Problem text; defaults to the recorded warmup prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub overrides: EngineOverrides,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimulateMode {
    /// Vote-error sweep over the (pool size, per-trace accuracy) grid.
    VoteSweep,
    /// One vote-error row at --pool-size/--p-prime.
    VotePoint,
    /// Pre/post-review accuracy over a margin grid.
    Revision,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WeightsArg {
    Unit,
    LogNormal,
}

#[derive(Args)]
pub struct SimulateCmd {
    #[arg(long, value_enum, default_value = "vote-sweep")]
    pub mode: SimulateMode,
    /// Pool sizes for the sweep (repeatable).
    #[arg(long = "pool-size", num_args = 1.., default_values_t = [1u32, 5, 11, 33, 101])]
    pub pool_sizes: Vec<u32>,
    /// Per-trace correctness values for the sweep (repeatable).
    #[arg(long = "p-prime", num_args = 1.., default_values_t = [0.55, 0.6, 0.7, 0.9])]
    pub p_primes: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distinct wrong answers wrong votes scatter over.
    #[arg(long, default_value_t = 3)]
    pub arity: u32,
    #[arg(long, value_enum, default_value = "unit")]
    pub weights: WeightsArg,
    /// Log-normal weight parameters (used with --weights log-normal).
    #[arg(long, default_value_t = 0.0)]
    pub weight_mu: f64,
    #[arg(long, default_value_t = 0.5)]
    pub weight_sigma: f64,
    /// Pre-review correctness (revision mode).
    #[arg(long, default_value_t = 0.6)]
    pub p: f64,
    /// Constant repair rate (revision mode).
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Constant damage rate (revision mode).
    #[arg(long, default_value_t = 0.2)]
    pub beta: f64,
    /// Margin grid (revision mode).
    #[arg(long, num_args = 1.., default_values_t = [0.0])]
    pub margins: Vec<f64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct ParetoCmd {
    /// Two-column ground-truth file: problem-id then answer.
    #[arg(long)]
    pub truth: PathBuf,
    /// Report JSON files produced by `run`/`replay`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct InspectCmd {
    /// Recorded session store.
    #[arg(long)]
    pub store: PathBuf,
    /// Stream tag, e.g. warmup/0 or online/64 (default: first record).
    #[arg(long)]
    pub tag: Option<String>,
    /// Top-k for the recomputation (default: the recorded request's k).
    #[arg(long)]
    pub k: Option<usize>,
    /// Window size for the recomputation.
    #[arg(long, default_value_t = 1024)]
    pub window: usize,
}
