//! Single training runs and ε′ × seed sweeps.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use maskopt_core::net::write_weights;
use maskopt_core::trainer::TrainHistory;
use maskopt_core::{
    deterministic_mask, load_mnist_idx, synthetic_subset_task, train, weight_usage_rate,
    BernoulliTheta, Dataset, MaskedTopology, Precision, Real, TrainError,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{EpsPrime, ExperimentConfig, Task};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const SUMMARY_HEADER: [&str; 5] = [
    "eps_prime",
    "seed",
    "final_test_error",
    "final_usage_rate",
    "per_layer_counts",
];

/// Final numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub eps_prime: f64,
    pub seed: u64,
    pub final_test_error: f64,
    pub final_usage_rate: f64,
    /// Selected units per hidden layer, or selected connections per target layer.
    pub per_layer_counts: Vec<usize>,
}

impl SummaryRow {
    pub fn record(&self) -> [String; 5] {
        let counts: Vec<String> = self.per_layer_counts.iter().map(usize::to_string).collect();
        [
            self.eps_prime.to_string(),
            self.seed.to_string(),
            self.final_test_error.to_string(),
            self.final_usage_rate.to_string(),
            counts.join(";"),
        ]
    }

    pub fn from_record(record: &csv::StringRecord) -> Result<Self> {
        let field = |i: usize| record.get(i).context("summary row is missing a column");
        let counts = field(4)?;
        Ok(Self {
            eps_prime: field(0)?.parse().context("eps_prime")?,
            seed: field(1)?.parse().context("seed")?,
            final_test_error: field(2)?.parse().context("final_test_error")?,
            final_usage_rate: field(3)?.parse().context("final_usage_rate")?,
            per_layer_counts: if counts.is_empty() {
                Vec::new()
            } else {
                counts
                    .split(';')
                    .map(|c| c.parse().context("per_layer_counts"))
                    .collect::<Result<_>>()?
            },
        })
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(SUMMARY_HEADER)?;
    for row in rows {
        w.write_record(row.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    r.records()
        .map(|rec| SummaryRow::from_record(&rec?).with_context(|| format!("in {}", path.display())))
        .collect()
}

/// Number of `θ_i >= 0.5` in each bit group of the topology.
pub fn per_layer_counts(topology: &MaskedTopology, theta: &BernoulliTheta) -> Vec<usize> {
    let mask = deterministic_mask(theta);
    topology
        .bit_groups()
        .into_iter()
        .map(|range| range.filter(|&i| mask.get(i)).count())
        .collect()
}

/// `<out>/eps_<ε′>/seed_<seed>`.
pub fn run_dir(out: &Path, eps: EpsPrime, seed: u64) -> PathBuf {
    out.join(format!("eps_{eps}")).join(format!("seed_{seed}"))
}

/// Loads (or generates) the train and test sets named by the config.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let (train_set, test_set) = match cfg.task {
        Task::Mnist => {
            let paths = cfg.data.as_ref().with_context(|| {
                format!(
                    "no dataset paths: set data_root or the IDX path keys, or {}",
                    crate::config::DATA_ROOT_ENV
                )
            })?;
            paths.check_exist()?;
            (
                load_mnist_idx(&paths.train_images, &paths.train_labels)?,
                load_mnist_idx(&paths.test_images, &paths.test_labels)?,
            )
        }
        Task::Synthetic => {
            let s = &cfg.synthetic;
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            (
                synthetic_subset_task(s.relevant, s.noise, s.train, &mut rng)?,
                synthetic_subset_task(s.relevant, s.noise, s.test, &mut rng)?,
            )
        }
    };
    let limit = |ds: Dataset, n: Option<usize>| match n {
        Some(n) if n < ds.len() => ds.take(n),
        _ => ds,
    };
    Ok((
        limit(train_set, cfg.train_limit),
        limit(test_set, cfg.test_limit),
    ))
}

fn write_history(path: &Path, history: &TrainHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iteration",
        "epoch",
        "mean_sampled_loss",
        "theta_mean",
        "usage_rate",
    ])?;
    for r in &history.iterations {
        w.write_record([
            r.iteration.to_string(),
            r.epoch.to_string(),
            r.mean_sampled_loss.to_string(),
            r.theta_mean.to_string(),
            r.usage_rate.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn train_and_save<F: Real>(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    topology: &MaskedTopology,
    eps: EpsPrime,
    seed: u64,
    dir: &Path,
) -> Result<SummaryRow> {
    let tc = cfg.train_config(eps, seed);
    let outcome = match train::<F>(&tc, train_set, Some(test_set), topology) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            iteration,
            cause,
            partial,
        }) => {
            write_history(&dir.join("history.csv"), &partial.history)?;
            anyhow::bail!("run eps'={eps} seed={seed} diverged at iteration {iteration}: {cause}");
        }
        Err(TrainError::Invalid(e)) => return Err(e.into()),
    };
    write_history(&dir.join("history.csv"), &outcome.history)?;
    let mut theta_out = BufWriter::new(File::create(dir.join("theta.txt"))?);
    outcome.theta.write_checkpoint(&mut theta_out)?;
    theta_out.flush()?;
    let mut weights_out = BufWriter::new(File::create(dir.join("weights.bin"))?);
    write_weights(topology, &outcome.weights, &mut weights_out)?;
    weights_out.flush()?;

    let row = SummaryRow {
        eps_prime: eps.0,
        seed,
        final_test_error: outcome
            .history
            .final_test_error()
            .context("no test evaluation")?,
        final_usage_rate: weight_usage_rate(topology, &deterministic_mask(&outcome.theta))?,
        per_layer_counts: per_layer_counts(topology, &outcome.theta),
    };
    write_summary(&dir.join(SUMMARY_FILE), std::slice::from_ref(&row))?;
    Ok(row)
}

/// Trains one `(ε′, seed)` setting and writes its artifacts under [`run_dir`].
pub fn run_one(
    cfg: &ExperimentConfig,
    train_set: &Dataset,
    test_set: &Dataset,
    eps: EpsPrime,
    seed: u64,
    out: &Path,
) -> Result<SummaryRow> {
    let topology = cfg.topology(train_set.feature_dim(), train_set.classes())?;
    let dir = run_dir(out, eps, seed);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    match cfg.precision {
        Precision::F32 => {
            train_and_save::<f32>(cfg, train_set, test_set, &topology, eps, seed, &dir)
        }
        Precision::F64 => {
            train_and_save::<f64>(cfg, train_set, test_set, &topology, eps, seed, &dir)
        }
    }
}

/// Runs every `(ε′, seed)` pair on up to `jobs` threads and writes the
/// combined `summary.csv` in `out`.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SummaryRow>> {
    let (train_set, test_set) = load_data(cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
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
            .map(|&(eps, seed)| run_one(cfg, &train_set, &test_set, eps, seed, out))
            .collect::<Result<Vec<_>>>()
    })?;
    write_summary(&out.join(SUMMARY_FILE), &rows)?;
    Ok(rows)
}
