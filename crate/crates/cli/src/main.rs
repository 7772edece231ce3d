//! Experiment runner for the quenched-statistics pipeline.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::{load_config, ExperimentConfig};
use runner::{Pipeline, RunError};

#[derive(Parser)]
#[command(
    name = "quasip",
    version,
    about = "Transfer-operator cocycles, Green-Kubo covariance and ASIP diagnostics \
             for random piecewise expanding interval maps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the grid size.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a template configuration file.
    Init {
        /// Destination path.
        #[arg(long, default_value = "config.json")]
        config: PathBuf,
    },
    /// Full pipeline: densities, decay, covariance, blocks, simulation,
    /// diagnostics.
    Run(CommonArgs),
    /// Equivariant density only.
    Density(CommonArgs),
    /// Uniform-decay estimate only.
    Decay(CommonArgs),
    /// Asymptotic covariance only.
    Sigma(CommonArgs),
    /// Block decomposition only.
    Blocks(CommonArgs),
    /// Path ensemble only.
    Simulate(CommonArgs),
    /// Invariant suite: pass/fail per property.
    Verify(CommonArgs),
}

fn apply_overrides(mut cfg: ExperimentConfig, args: &CommonArgs) -> ExperimentConfig {
    if let Some(seed) = args.seed {
        cfg.simulation.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.display().to_string();
    }
    if let Some(k) = args.k {
        cfg.grid_k = k;
    }
    cfg
}

fn build_pipeline(args: &CommonArgs) -> Result<Pipeline, ExitCode> {
    if let Some(threads) = args.threads {
        // a second init in-process is fine; the pool is already running
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    let cfg = match load_config(&args.config) {
        Ok(cfg) => apply_overrides(cfg, args),
        Err(e) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(1));
        }
    };
    if let Err(e) = cfg.validate() {
        eprintln!("error: {e}");
        return Err(ExitCode::from(1));
    }
    Pipeline::new(cfg).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}

fn finish(result: Result<(), RunError>) -> ExitCode {
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Hypothesis(m)) => {
            eprintln!("hypothesis failure: {m}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Init { config } => {
            let template = ExperimentConfig::template();
            let text = match serde_json::to_string_pretty(&template) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if let Err(e) = std::fs::write(&config, text + "\n") {
                eprintln!("error: cannot write {}: {e}", config.display());
                return ExitCode::from(1);
            }
            println!("wrote {}", config.display());
            ExitCode::SUCCESS
        }
        Command::Run(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.run().map(|_| ())),
            Err(code) => code,
        },
        Command::Density(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.stage_density()),
            Err(code) => code,
        },
        Command::Decay(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.stage_decay().map(|_| ())),
            Err(code) => code,
        },
        Command::Sigma(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.stage_sigma().map(|_| ())),
            Err(code) => code,
        },
        Command::Blocks(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.stage_blocks().map(|_| ())),
            Err(code) => code,
        },
        Command::Simulate(args) => match build_pipeline(&args) {
            Ok(p) => finish(p.stage_simulate()),
            Err(code) => code,
        },
        Command::Verify(args) => match build_pipeline(&args) {
            Ok(p) => match p.verify() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(2),
                Err(e) => finish(Err(e)),
            },
            Err(code) => code,
        },
    }
}
