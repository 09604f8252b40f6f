//! Black-box runs of the `θ` optimizer on the subset-count objective.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use anyhow::{Context, Result};
use maskopt_core::blackbox::{run_black_box, subset_count_loss, BlackBoxConfig};
use maskopt_core::{deterministic_mask, unit_selection_coeffs};
use rayon::prelude::*;

use crate::config::{EpsPrime, ExperimentConfig};

pub const BENCH_SUMMARY_FILE: &str = "bench_summary.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub eps_prime: f64,
    pub seed: u64,
    /// Relevant bits switched on by the deterministic mask.
    pub relevant_on: usize,
    /// Irrelevant bits switched off by the deterministic mask.
    pub irrelevant_off: usize,
    /// Relevant bits all on and irrelevant bits all off.
    pub exact: bool,
    pub theta_mean: f64,
}

fn run_single(cfg: &ExperimentConfig, eps: EpsPrime, seed: u64, out: &Path) -> Result<BenchRow> {
    let b = &cfg.bench;
    let relevant: Vec<usize> = (0..b.relevant).collect();
    let c = unit_selection_coeffs(b.dim)?;
    let config = BlackBoxConfig {
        lambda: cfg.lambda,
        eta_theta: Some(cfg.eta_theta.resolve(b.dim)),
        theta_init: cfg.theta_init,
        snapshot_every: b.snapshot_every,
        ..BlackBoxConfig::new(b.dim, b.iterations, seed)
    };
    let run = run_black_box(&config, |m| subset_count_loss(m, &relevant), &c, eps.0)?;

    let dir = out
        .join("bench")
        .join(format!("eps_{eps}"))
        .join(format!("seed_{seed}"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    run.write_trajectory_csv(BufWriter::new(File::create(dir.join("trajectory.csv"))?))?;

    let mask = deterministic_mask(&run.theta);
    let relevant_on = (0..b.relevant).filter(|&i| mask.get(i)).count();
    let irrelevant_off = (b.relevant..b.dim).filter(|&i| !mask.get(i)).count();
    Ok(BenchRow {
        eps_prime: eps.0,
        seed,
        relevant_on,
        irrelevant_off,
        exact: relevant_on == b.relevant && irrelevant_off == b.dim - b.relevant,
        theta_mean: run.theta.mean(),
    })
}

/// Runs every `(ε′, seed)` pair and writes trajectories plus `bench_summary.csv`.
pub fn run_bench(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<BenchRow>> {
    fs::create_dir_all(out)?;
    let settings: Vec<(EpsPrime, u64)> = cfg
        .eps_primes
        .iter()
        .flat_map(|&e| cfg.seeds.iter().map(move |&s| (e, s)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let rows = pool.install(|| {
        settings
            .par_iter()
            .map(|&(eps, seed)| run_single(cfg, eps, seed, out))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut w = csv::Writer::from_path(out.join(BENCH_SUMMARY_FILE))?;
    w.write_record([
        "eps_prime",
        "seed",
        "relevant_on",
        "irrelevant_off",
        "exact",
        "theta_mean",
    ])?;
    for r in &rows {
        w.write_record([
            r.eps_prime.to_string(),
            r.seed.to_string(),
            r.relevant_on.to_string(),
            r.irrelevant_off.to_string(),
            r.exact.to_string(),
            r.theta_mean.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(rows)
}
