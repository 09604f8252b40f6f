//! Experiment runner: single runs, ε′ sweeps, black-box benchmarks and
//! trade-off summaries, all driven by a flat `key = value` config file.

pub mod bench;
pub mod config;
pub mod runner;
pub mod summarize;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{EpsPrime, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "maskopt",
    version,
    about = "Penalized structure optimization experiments"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Experiment config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Use this seed instead of the config's seed list.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of concurrent runs.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a single (eps', seed) setting.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Penalty coefficient; defaults to the first entry of eps_prime_list.
        #[arg(long, allow_hyphen_values = true)]
        eps_prime: Option<EpsPrime>,
    },
    /// Train every (eps', seed) pair in the config.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the black-box subset-count benchmark for every (eps', seed) pair.
    Bench {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Aggregate completed runs into tradeoff.csv and layers.csv.
    Summarize {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(run: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&run.config)?;
    if let Some(seed) = run.seed {
        cfg.seeds = vec![seed];
    }
    std::fs::create_dir_all(&run.out).with_context(|| format!("creating {}", run.out.display()))?;
    std::fs::copy(&run.config, run.out.join("config.txt")).context("copying config")?;
    Ok(cfg)
}

/// Executes one parsed command line, printing a short report to stdout.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { run, eps_prime } => {
            let cfg = load(&run)?;
            let eps = eps_prime.unwrap_or(cfg.eps_primes[0]);
            let (train_set, test_set) = runner::load_data(&cfg)?;
            let row = runner::run_one(&cfg, &train_set, &test_set, eps, cfg.seeds[0], &run.out)?;
            println!(
                "eps'={} seed={} test_error={:.4} usage_rate={:.4} layers={:?}",
                eps, row.seed, row.final_test_error, row.final_usage_rate, row.per_layer_counts
            );
        }
        Command::Sweep { run } => {
            let cfg = load(&run)?;
            let rows = runner::run_sweep(&cfg, &run.out, run.jobs)?;
            println!("{} runs written to {}", rows.len(), run.out.display());
        }
        Command::Bench { run } => {
            let cfg = load(&run)?;
            let rows = bench::run_bench(&cfg, &run.out, run.jobs)?;
            let exact = rows.iter().filter(|r| r.exact).count();
            println!("{exact}/{} runs reached the exact relevant set", rows.len());
        }
        Command::Summarize { out } => {
            let table = summarize::summarize(&out)?;
            println!("eps_prime,runs,median_usage_rate,median_test_error,median_per_layer_counts");
            for t in table {
                let layers: Vec<String> = t.layers.iter().map(|s| s.median.to_string()).collect();
                println!(
                    "{},{},{:.4},{:.4},{}",
                    t.eps_prime,
                    t.runs,
                    t.usage.median,
                    t.test_error.median,
                    layers.join(";")
                );
            }
        }
    }
    Ok(())
}
