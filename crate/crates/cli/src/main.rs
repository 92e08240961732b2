//! `atba` command-line tool: corpus generation, boundary scoring, alignment,
//! evaluation and benchmarks.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser, Debug)]
#[command(
    name = "atba",
    version,
    about = "Transition-aware boundary alignment for weakly supervised action segmentation"
)]
pub struct Cli {
    /// Worker threads for per-video work (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the generator seed or seeds the benchmarks.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Text,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Top `M - 1` class-agnostic boundaries, no transition alignment.
    ClassAgnostic,
    /// Maximum-likelihood segmentation by the frame-level dynamic program.
    ViterbiOracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FusionArg {
    Combined,
    TransitionOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    AlignmentScaling,
    OracleEquivalence,
    OracleContrast,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus described by a generator spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class-agnostic boundary score of every frame.
    Score {
        #[arg(long)]
        probs: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Write the scores here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pseudo labels for one video, or for every video of a corpus.
    Align {
        #[arg(long, required_unless_present = "corpus", conflicts_with = "corpus", requires = "transcript")]
        probs: Option<PathBuf>,
        #[arg(long)]
        transcript: Option<PathBuf>,
        /// Corpus manifest; labels go to `--out`, a report against the
        /// corpus ground truth is printed.
        #[arg(long, requires = "out")]
        corpus: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        #[arg(long, value_enum, default_value_t = FusionArg::Combined, conflicts_with = "baseline")]
        fusion: FusionArg,
        /// Labels file (single video) or output directory (corpus).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare predicted and ground-truth label directories.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        background: Option<u32>,
    },
    /// Timing and equivalence tables.
    Bench {
        #[arg(long, value_enum)]
        suite: Suite,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Frame counts for the scaling suite.
        #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000])]
        frames: Vec<usize>,
        /// Transcript length for the scaling and contrast suites.
        #[arg(long)]
        actions: Option<usize>,
        /// Random instances for the equivalence suite.
        #[arg(long, default_value_t = 1000)]
        instances: usize,
    },
}

fn error_report(err: &anyhow::Error) -> serde_json::Value {
    let core = err.chain().find_map(|e| e.downcast_ref::<atba::Error>());
    json!({
        "error": {
            "kind": core.map_or("cli", atba::Error::kind),
            "message": err.to_string(),
            "path": core.and_then(atba::Error::path).map(|p| p.display().to_string()),
            "causes": err.chain().skip(1).map(ToString::to_string).collect::<Vec<_>>(),
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_report(&err));
            ExitCode::FAILURE
        }
    }
}
