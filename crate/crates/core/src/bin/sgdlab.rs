//! Experiment runner and acceptance checker for the SGD laboratory.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sgdlab::config::load_run_config;
use sgdlab::experiments::run_experiment;
use sgdlab::models::load_model;
use sgdlab::verify::{self, VerifyOptions};

#[derive(Parser)]
#[command(
    name = "sgdlab",
    version,
    about = "Constant step-size SGD as a Markov chain: experiments, tables and acceptance checks"
)]
struct Cli {
    /// Worker threads for replica-level parallelism (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment described by a config file.
    Run {
        /// Config file (TOML mirroring the run settings).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip SVG plots; CSV tables are always written.
        #[arg(long)]
        no_plots: bool,
    },
    /// Run the acceptance criteria, one report line each; nonzero exit on
    /// any FAIL.
    Verify {
        /// Optional config supplying seed and chain-length budget.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for all Monte Carlo criteria.
        #[arg(long)]
        seed: Option<u64>,
        /// Cap on single-chain length; criteria needing longer chains are
        /// reported SKIP.
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Load a model file and print its derived constants.
    InspectModel {
        /// Model file (TOML).
        path: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return ExitCode::FAILURE;
        }
        // Ignore "already initialized": only possible if set elsewhere first.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> sgdlab::Result<ExitCode> {
    match command {
        Command::Run { config, seed, out, no_plots } => {
            let mut cfg = load_run_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(dir) = out {
                cfg.out_dir = dir;
            }
            if no_plots {
                cfg.plots = false;
            }
            let manifest = run_experiment(&cfg)?;
            println!("{} artifacts in {}", cfg.experiment.name(), cfg.out_dir.display());
            println!("manifest: {}", manifest.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { config, seed, horizon } => {
            let mut opts = VerifyOptions::default();
            if let Some(path) = config {
                let cfg = load_run_config(&path)?;
                opts.seed = cfg.seed;
                opts.max_chain = Some(cfg.horizon);
            }
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(h) = horizon {
                opts.max_chain = Some(h);
            }
            let outcomes = verify::run_all(&opts);
            for o in &outcomes {
                println!("{}", o.line());
            }
            println!("{}", verify::summary_line(&outcomes));
            if verify::all_ok(&outcomes) {
                Ok(ExitCode::SUCCESS)
            } else {
                Ok(ExitCode::FAILURE)
            }
        }
        Command::InspectModel { path } => {
            let model = load_model(&path)?;
            print!("{}", model.report());
            Ok(ExitCode::SUCCESS)
        }
    }
}
