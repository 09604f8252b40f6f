//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error, as is repeating a key. Recognized keys and defaults:
//!
//! | key | default | meaning |
//! |-----|---------|---------|
//! | `task` | `mnist` | `mnist` or `synthetic` |
//! | `mode` | `unit` | `unit` (hidden-unit selection) or `connection` (dense-block connection selection) |
//! | `widths` | `784,64,64,10` | layer widths, unit mode |
//! | `L_block` | `3` | dense-block layers, connection mode |
//! | `growth` | `12` | dense-block layer width, connection mode |
//! | `epochs` | `30` | |
//! | `batch` | `32` | mini-batch size |
//! | `lr0` | `0.01` | initial SGD learning rate |
//! | `momentum` | `0.9` | |
//! | `weight_decay` | `1e-4` | |
//! | `decay_biases` | `true` | |
//! | `lambda` | `2` | masks sampled per iteration |
//! | `eta_theta_mode` | `inverse_dim` | `inverse_dim` or a positive number |
//! | `theta_init` | `0.5` | |
//! | `eps_prime_list` | `0` | comma-separated; accepts `2^-6`, `-2^0`, `0.25` |
//! | `seeds` | `0` | comma-separated list or half-open range `a..b` |
//! | `precision` | `f64` | `f32` or `f64` |
//! | `eval_every` | `1` | epochs between test evaluations |
//! | `data_root` | | directory holding the four IDX files |
//! | `train_images`, `train_labels`, `test_images`, `test_labels` | | explicit IDX paths |
//! | `train_limit`, `test_limit` | all | keep only the first n samples |
//! | `synthetic_relevant`, `synthetic_noise` | `4`, `12` | synthetic task features |
//! | `synthetic_train`, `synthetic_test`, `synthetic_seed` | `2000`, `500`, `0` | synthetic task sizes |
//! | `bench_dim`, `bench_relevant`, `bench_iterations`, `bench_snapshot_every` | `20`, `10`, `20000`, `100` | black-box runs |
//!
//! Relative dataset paths resolve against the config file's directory. When no
//! path or `data_root` is given, the `MASKOPT_DATA_ROOT` environment variable is
//! used as the data root.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{anyhow, bail, ensure, Context, Result};
use maskopt_core::trainer::LossTransform;
use maskopt_core::{
    EtaTheta, MaskMode, MaskedTopology, PenaltyPath, Precision, Seeds, SgdConfig, TrainConfig,
};

pub const DATA_ROOT_ENV: &str = "MASKOPT_DATA_ROOT";

const KEYS: &[&str] = &[
    "task",
    "mode",
    "widths",
    "L_block",
    "growth",
    "epochs",
    "batch",
    "lr0",
    "momentum",
    "weight_decay",
    "decay_biases",
    "lambda",
    "eta_theta_mode",
    "theta_init",
    "eps_prime_list",
    "seeds",
    "precision",
    "eval_every",
    "data_root",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_limit",
    "test_limit",
    "synthetic_relevant",
    "synthetic_noise",
    "synthetic_train",
    "synthetic_test",
    "synthetic_seed",
    "bench_dim",
    "bench_relevant",
    "bench_iterations",
    "bench_snapshot_every",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Mnist,
    Synthetic,
}

impl FromStr for Task {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(Task::Mnist),
            "synthetic" => Ok(Task::Synthetic),
            _ => bail!("unknown task {s:?} (expected mnist or synthetic)"),
        }
    }
}

/// A user-facing penalty coefficient `ε′`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsPrime(pub f64);

impl FromStr for EpsPrime {
    type Err = anyhow::Error;

    /// Accepts plain numbers and signed powers of two (`2^-6`, `-2^0`).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (sign, body) = match s.strip_prefix('-') {
            Some(rest) if rest.contains('^') => (-1.0, rest),
            _ => (1.0, s),
        };
        let value = match body.split_once('^') {
            Some((base, exp)) => {
                let base: f64 = base
                    .trim()
                    .parse()
                    .with_context(|| format!("bad base in {s:?}"))?;
                let exp: i32 = exp
                    .trim()
                    .parse()
                    .with_context(|| format!("bad exponent in {s:?}"))?;
                sign * base.powi(exp)
            }
            None => body
                .parse()
                .with_context(|| format!("bad eps_prime {s:?}"))?,
        };
        ensure!(value.is_finite(), "eps_prime {s:?} is not finite");
        Ok(EpsPrime(value))
    }
}

impl fmt::Display for EpsPrime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

impl DataPaths {
    pub fn under(root: &Path) -> Self {
        Self {
            train_images: root.join("train-images-idx3-ubyte"),
            train_labels: root.join("train-labels-idx1-ubyte"),
            test_images: root.join("t10k-images-idx3-ubyte"),
            test_labels: root.join("t10k-labels-idx1-ubyte"),
        }
    }

    pub fn check_exist(&self) -> Result<()> {
        for p in [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ] {
            ensure!(p.is_file(), "missing dataset file {}", p.display());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub relevant: usize,
    pub noise: usize,
    pub train: usize,
    pub test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub dim: usize,
    pub relevant: usize,
    pub iterations: usize,
    pub snapshot_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub mode: MaskMode,
    pub widths: Vec<usize>,
    pub block_layers: usize,
    pub growth: usize,
    pub epochs: usize,
    pub batch: usize,
    pub sgd: SgdConfig,
    pub lambda: usize,
    pub eta_theta: EtaTheta,
    pub theta_init: f64,
    pub eps_primes: Vec<EpsPrime>,
    pub seeds: Vec<u64>,
    pub precision: Precision,
    pub eval_every: usize,
    /// Resolved IDX paths; `None` until a root or explicit paths are known.
    pub data: Option<DataPaths>,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
    pub synthetic: SyntheticSpec,
    pub bench: BenchSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            task: Task::Mnist,
            mode: MaskMode::Unit,
            widths: vec![784, 64, 64, 10],
            block_layers: 3,
            growth: 12,
            epochs: 30,
            batch: 32,
            sgd: SgdConfig::default(),
            lambda: 2,
            eta_theta: EtaTheta::InverseDim,
            theta_init: 0.5,
            eps_primes: vec![EpsPrime(0.0)],
            seeds: vec![0],
            precision: Precision::F64,
            eval_every: 1,
            data: None,
            train_limit: None,
            test_limit: None,
            synthetic: SyntheticSpec {
                relevant: 4,
                noise: 12,
                train: 2000,
                test: 500,
                seed: 0,
            },
            bench: BenchSpec {
                dim: 20,
                relevant: 10,
                iterations: 20_000,
                snapshot_every: 100,
            },
        }
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| anyhow!("{key}: bad entry {s:?}: {e}"))
        })
        .collect()
}

fn parse_seeds(value: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = value.split_once("..") {
        let a: u64 = a.trim().parse().context("seeds: bad range start")?;
        let b: u64 = b.trim().parse().context("seeds: bad range end")?;
        return Ok((a..b).collect());
    }
    parse_list("seeds", value)
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("{key}: expected true or false, got {value:?}"),
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("{key}: bad value {value:?}: {e}"))
}

/// Splits `text` into key/value pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut pairs = BTreeMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("line {}: expected key = value", no + 1))?;
        let key = key.trim();
        ensure!(KEYS.contains(&key), "line {}: unknown key {key:?}", no + 1);
        let value = value.trim().to_string();
        ensure!(
            pairs.insert(key.to_string(), value).is_none(),
            "line {}: duplicate key {key:?}",
            no + 1
        );
    }
    Ok(pairs)
}

impl ExperimentConfig {
    /// Parses config text. `base_dir` anchors relative dataset paths;
    /// `env_root` is the fallback data root.
    pub fn parse(text: &str, base_dir: &Path, env_root: Option<&Path>) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut cfg = Self::default();
        let get = |k: &str| pairs.get(k).map(String::as_str);
        if let Some(v) = get("task") {
            cfg.task = v.parse()?;
        }
        if let Some(v) = get("mode") {
            cfg.mode = parse_value("mode", v)?;
        }
        if let Some(v) = get("widths") {
            cfg.widths = parse_list("widths", v)?;
        }
        macro_rules! scalar {
            ($($key:literal => $field:expr),* $(,)?) => {
                $(if let Some(v) = get($key) {
                    $field = parse_value($key, v)?;
                })*
            };
        }
        scalar! {
            "L_block" => cfg.block_layers,
            "growth" => cfg.growth,
            "epochs" => cfg.epochs,
            "batch" => cfg.batch,
            "lr0" => cfg.sgd.lr0,
            "momentum" => cfg.sgd.momentum,
            "weight_decay" => cfg.sgd.weight_decay,
            "lambda" => cfg.lambda,
            "theta_init" => cfg.theta_init,
            "eval_every" => cfg.eval_every,
            "synthetic_relevant" => cfg.synthetic.relevant,
            "synthetic_noise" => cfg.synthetic.noise,
            "synthetic_train" => cfg.synthetic.train,
            "synthetic_test" => cfg.synthetic.test,
            "synthetic_seed" => cfg.synthetic.seed,
            "bench_dim" => cfg.bench.dim,
            "bench_relevant" => cfg.bench.relevant,
            "bench_iterations" => cfg.bench.iterations,
            "bench_snapshot_every" => cfg.bench.snapshot_every,
        }
        if let Some(v) = get("decay_biases") {
            cfg.sgd.decay_biases = parse_bool("decay_biases", v)?;
        }
        if let Some(v) = get("eta_theta_mode") {
            cfg.eta_theta = match v {
                "inverse_dim" => EtaTheta::InverseDim,
                other => EtaTheta::Fixed(parse_value("eta_theta_mode", other)?),
            };
        }
        if let Some(v) = get("eps_prime_list") {
            cfg.eps_primes = parse_list("eps_prime_list", v)?;
        }
        if let Some(v) = get("seeds") {
            cfg.seeds = parse_seeds(v)?;
        }
        if let Some(v) = get("precision") {
            cfg.precision = match v {
                "f32" => Precision::F32,
                "f64" => Precision::F64,
                _ => bail!("precision: expected f32 or f64, got {v:?}"),
            };
        }
        if let Some(v) = get("train_limit") {
            cfg.train_limit = Some(parse_value("train_limit", v)?);
        }
        if let Some(v) = get("test_limit") {
            cfg.test_limit = Some(parse_value("test_limit", v)?);
        }

        let root = get("data_root")
            .map(|r| base_dir.join(r))
            .or_else(|| env_root.map(Path::to_path_buf));
        let mut data = root.as_deref().map(DataPaths::under);
        for key in ["train_images", "train_labels", "test_images", "test_labels"] {
            if let Some(v) = get(key) {
                let paths = data.get_or_insert_with(|| DataPaths::under(base_dir));
                let slot = match key {
                    "train_images" => &mut paths.train_images,
                    "train_labels" => &mut paths.train_labels,
                    "test_images" => &mut paths.test_images,
                    _ => &mut paths.test_labels,
                };
                *slot = base_dir.join(v);
            }
        }
        cfg.data = data;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, using the environment's data root as fallback.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let env_root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        Self::parse(&text, base, env_root.as_deref())
            .with_context(|| format!("in config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.eps_primes.is_empty(), "eps_prime_list is empty");
        ensure!(!self.seeds.is_empty(), "seeds is empty");
        ensure!(
            self.epochs >= 1 && self.batch >= 1,
            "epochs and batch must be >= 1"
        );
        if self.mode == MaskMode::Unit {
            ensure!(
                self.widths.len() >= 3,
                "widths needs input, at least one hidden layer and output"
            );
        } else {
            ensure!(
                self.block_layers >= 1 && self.growth >= 1,
                "L_block and growth must be >= 1"
            );
        }
        ensure!(
            self.bench.relevant <= self.bench.dim,
            "bench_relevant exceeds bench_dim"
        );
        ensure!(
            self.bench.snapshot_every >= 1,
            "bench_snapshot_every must be >= 1"
        );
        self.train_config(self.eps_primes[0], self.seeds[0])
            .validate()?;
        Ok(())
    }

    /// The network for inputs of `input` features and `classes` outputs.
    pub fn topology(&self, input: usize, classes: usize) -> Result<MaskedTopology> {
        let topo = match self.mode {
            MaskMode::Unit => {
                let (first, last) = (self.widths[0], self.widths[self.widths.len() - 1]);
                ensure!(
                    first == input && last == classes,
                    "widths {:?} do not match the data ({input} features, {classes} classes)",
                    self.widths
                );
                MaskedTopology::unit(input, &self.widths[1..self.widths.len() - 1], classes)?
            }
            MaskMode::Connection => {
                MaskedTopology::dense_block(input, self.growth, self.block_layers, classes)?
            }
        };
        Ok(topo)
    }

    pub fn train_config(&self, eps: EpsPrime, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            eta_theta: self.eta_theta,
            eps_prime: eps.0,
            theta_init: self.theta_init,
            batch_size: self.batch,
            epochs: self.epochs,
            sgd: self.sgd,
            seeds: Seeds::from_run_seed(seed),
            penalty: PenaltyPath::Enabled,
            loss_transform: LossTransform::Identity,
            precision: self.precision,
            eval_every: self.eval_every,
        }
    }
}
