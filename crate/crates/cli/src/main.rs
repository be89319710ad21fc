mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{CompareArgs, Ctx, EvalArgs, PoolArgs, SynthArgs};
use crate::config::{Overrides, RunConfig};
use crate::error::{CliError, Result};

/// Offline evaluation of embedding retrieval against noisy keyword labels.
#[derive(Debug, Parser)]
#[command(name = "noisyir", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    seed_sampling: Option<u64>,
    #[arg(long, global = true)]
    seed_bootstrap: Option<u64>,
    /// Worker threads for search and evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Keyword document frequencies and IDF weights.
    Idf,
    /// Per-year label statistics and overlap scenarios.
    Drift,
    /// Stratified query sample.
    Sample,
    /// Pool per-window hidden states into document embeddings.
    Pool(PoolArgs),
    /// Normalize each system's embeddings into a search index.
    Index {
        #[arg(long = "system")]
        systems: Vec<String>,
    },
    /// Top-k neighbors for every sampled query.
    Search {
        #[arg(long = "system")]
        systems: Vec<String>,
    },
    /// Score ranked runs into metrics reports.
    Eval(EvalArgs),
    /// Paired bootstrap between systems.
    Compare(CompareArgs),
    /// Result tables from the metrics reports.
    Report,
    /// Every stage from idf through report.
    Run,
    /// Write a synthetic dataset and config.
    Synth(SynthArgs),
}

fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Command::Synth(args) = &cli.command {
        return commands::synth(args);
    }
    let overrides = Overrides {
        out_dir: cli.out_dir,
        seed_sampling: cli.seed_sampling,
        seed_bootstrap: cli.seed_bootstrap,
    };
    let ctx = Ctx::new(RunConfig::load(cli.config.as_deref(), &overrides)?);
    match &cli.command {
        Command::Idf => ctx.idf(),
        Command::Drift => ctx.drift(),
        Command::Sample => ctx.sample(),
        Command::Pool(args) => ctx.pool(args),
        Command::Index { systems } => ctx.index(systems),
        Command::Search { systems } => ctx.search(systems),
        Command::Eval(args) => ctx.eval(args),
        Command::Compare(args) => ctx.compare(args),
        Command::Report => ctx.report(),
        Command::Run => ctx.run_all(),
        Command::Synth(_) => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("invalid arguments");
            let err = CliError::Usage(first.trim_start_matches("error: ").to_owned());
            eprintln!("{}", err.to_json());
            return ExitCode::from(2);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
