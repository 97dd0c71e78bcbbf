//! The `gpm` command line. Each subcommand runs one harness and writes a
//! directory of artifacts: `manifest.json` (tool version, resolved config,
//! seed, corpus hashes), per-item `results.jsonl`, and `summary.json` /
//! `summary.txt`. With a fixed seed and a local model the directory is
//! byte-identical across runs.
//!
//! Exit status is 0 for a completed run (even if every task failed), 2 for
//! configuration errors and 1 for anything else.

mod artifacts;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gpm_core::models::ModelKind;

pub use artifacts::{ArtifactDir, Manifest, TOOL};
pub use config::{config_err, ConfigError, FileConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gpm", version, about = "Pattern-completion harnesses for text-completion models")]
pub struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads inside the harness.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct ModelArgs {
    /// remote, mock_scripted, mock_oracle, random_policy, pcfg_searcher or
    /// period_repeat.
    #[arg(long, value_parser = parse_kind)]
    pub model: Option<ModelKind>,
    /// Prompt-to-completion JSON table for mock_scripted.
    #[arg(long)]
    pub script: Option<PathBuf>,
}

fn parse_kind(s: &str) -> Result<ModelKind, String> {
    s.parse().map_err(|e: gpm_core::models::ModelError| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a PCFG dataset over a grid of (k, w) cells.
    PcfgGen {
        #[arg(long, value_delimiter = ',', default_values_t = gpm_core::pcfg::STANDARD_KS)]
        k: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = gpm_core::pcfg::STANDARD_WS)]
        w: Vec<usize>,
        /// Tasks per cell.
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the query outputs out of the dataset file.
        #[arg(long)]
        public: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt a model with every task of a PCFG dataset.
    PcfgEval {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        /// Remap the digit tokens through a random alphabet.
        #[arg(long)]
        alphabet_seed: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the enumerative searcher on every task of a PCFG dataset.
    PcfgSolve {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        max_ops: Option<usize>,
        #[arg(long)]
        max_leaves: Option<usize>,
        #[arg(long)]
        node_budget: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model on a directory of ARC task files.
    ArcEval {
        #[arg(long)]
        suite: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        alphabet_seed: Option<u64>,
        /// Predictions per test input.
        #[arg(long, default_value_t = 1)]
        candidates: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extrapolate functions, drawing loops or a recorded motion.
    CompleteEval {
        /// sin, grow_sin, decay_sin, decay_sin_squared, loops or sweep.
        #[arg(long)]
        task: String,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 11)]
        trials: usize,
        /// Periods of context for the function families.
        #[arg(long)]
        context_periods: Option<usize>,
        /// narrow, medium or wide, for loops.
        #[arg(long, default_value = "medium")]
        preset: String,
        /// Motion trace file for sweep; synthesized when absent.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Online return-conditioned improvement on Grid or CartPole.
    ImproveRun {
        /// grid or cartpole.
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        #[arg(long, default_value_t = 20)]
        warmup: usize,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        ordering: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Marker-in-cup trajectory improvement across context orderings.
    MarkerDemo {
        #[command(flatten)]
        model: ModelArgs,
        /// An ordering name, or `all` for sorted_asc, shuffled and
        /// sorted_no_rewards.
        #[arg(long, default_value = "all")]
        ordering: String,
        /// Goal positions to try.
        #[arg(long, default_value_t = 11)]
        scenes: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status. The summary goes to stdout, errors to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(summary) => {
            print!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_status(&e)
        }
    }
}

pub fn exit_status(e: &anyhow::Error) -> i32 {
    if e.downcast_ref::<ConfigError>().is_some() {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

/// Like [`run`] but returns the summary instead of printing it.
pub fn run_quiet<I, T>(args: I) -> anyhow::Result<String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| config_err(e.to_string()))?;
    execute(cli)
}

/// Runs a parsed command and returns its text summary.
pub fn execute(cli: Cli) -> anyhow::Result<String> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let parallel = cli.parallel.or(file.parallel).unwrap_or(1);
    if parallel == 0 {
        return Err(config_err("--parallel must be at least 1"));
    }
    commands::dispatch(cli.command, &file, parallel)
}
