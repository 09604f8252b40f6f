//! Pseudo-boolean benchmarks for the `θ` optimizer alone: the loss is a
//! deterministic function of the sampled mask, there are no weights and no
//! mini-batches.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::complexity::ComplexityCoefficients;
use crate::error::{Error, Result};
use crate::relaxation::{
    compute_utilities, normalize_epsilon, sample_masks, update_theta, BernoulliTheta, StructureMask,
};

/// Number of relevant bits that are off: `Σ_{i ∈ R} (1 - m_i)`.
///
/// Minimized by switching every relevant bit on; bits outside `relevant` never
/// affect the value.
pub fn subset_count_loss(mask: &StructureMask, relevant: &[usize]) -> f64 {
    relevant.iter().filter(|&&i| !mask.get(i)).count() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlackBoxConfig {
    pub dim: usize,
    pub lambda: usize,
    /// `None` means `1 / dim`.
    pub eta_theta: Option<f64>,
    pub theta_init: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Keep a `θ` snapshot every this many iterations (the final state is always kept).
    pub snapshot_every: usize,
}

impl BlackBoxConfig {
    pub fn new(dim: usize, iterations: usize, seed: u64) -> Self {
        Self {
            dim,
            lambda: 2,
            eta_theta: None,
            theta_init: 0.5,
            iterations,
            seed,
            snapshot_every: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlackBoxRun {
    pub theta: BernoulliTheta,
    /// `(iteration, θ after that iteration)`; iteration `0` is the initial state.
    pub trajectory: Vec<(usize, BernoulliTheta)>,
}

impl BlackBoxRun {
    /// Writes `iteration,theta_mean,theta_0,...,theta_{d-1}`.
    pub fn write_trajectory_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let d = self.theta.dim();
        write!(out, "iteration,theta_mean")?;
        for i in 0..d {
            write!(out, ",theta_{i}")?;
        }
        writeln!(out)?;
        for (it, theta) in &self.trajectory {
            write!(out, "{it},{}", theta.mean())?;
            for p in theta.probs() {
                write!(out, ",{p}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// Runs sample → rank → penalized update for `config.iterations` steps.
pub fn run_black_box(
    config: &BlackBoxConfig,
    loss: impl Fn(&StructureMask) -> f64,
    c: &ComplexityCoefficients,
    eps_prime: f64,
) -> Result<BlackBoxRun> {
    if c.len() != config.dim {
        return Err(Error::DimensionMismatch {
            context: "complexity coefficients",
            expected: config.dim,
            got: c.len(),
        });
    }
    if config.snapshot_every == 0 {
        return Err(Error::invalid("snapshot_every must be >= 1"));
    }
    let eps = normalize_epsilon(eps_prime, c)?;
    let eta = config.eta_theta.unwrap_or(1.0 / config.dim as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = BernoulliTheta::uniform(config.dim, config.theta_init)?;
    let mut trajectory = vec![(0, theta.clone())];
    for it in 1..=config.iterations {
        let masks = sample_masks(&theta, config.lambda, &mut rng)?;
        let losses: Vec<f64> = masks.iter().map(&loss).collect();
        let utilities = compute_utilities(&losses)?;
        theta = update_theta(&theta, &masks, &utilities, c, eps, eta)?;
        if it % config.snapshot_every == 0 || it == config.iterations {
            trajectory.push((it, theta.clone()));
        }
    }
    Ok(BlackBoxRun { theta, trajectory })
}
