//! Joint optimization of network weights and the structure distribution.
//!
//! Each iteration draws one mini-batch, samples `λ` masks from `p(M | θ)`,
//! evaluates every mask on that same batch, updates `θ` with the penalized
//! natural gradient (then clamps it), and finally takes an SGD step on the
//! weights with the mask-averaged gradient. Both updates use the losses and
//! gradients computed at the weights from the start of the iteration.

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::complexity::{
    connection_selection_coeffs, unit_selection_coeffs, weight_usage_rate, ComplexityCoefficients,
};
use crate::data::{iterations_per_epoch, minibatch_iterator, Dataset};
use crate::error::{check_dim, Error, Result};
use crate::net::{forward, he_init, loss_and_gradient, softmax_rows, WeightStore};
use crate::real::Real;
use crate::relaxation::{
    baseline_update_theta, compute_utilities, deterministic_mask, normalize_epsilon, sample_masks,
    update_theta, BernoulliTheta, StructureMask,
};
use crate::sgd::{lr_schedule, sgd_step, OptimizerState, SgdConfig};
use crate::topology::{MaskMode, MaskedTopology};

/// Learning rate of `θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EtaTheta {
    /// `1 / d`.
    InverseDim,
    Fixed(f64),
}

impl EtaTheta {
    pub fn resolve(self, d: usize) -> f64 {
        match self {
            EtaTheta::InverseDim => 1.0 / d as f64,
            EtaTheta::Fixed(eta) => eta,
        }
    }
}

/// Which `θ` update rule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyPath {
    /// Penalized update with `ε = ε' / max(c)`.
    Enabled,
    /// Unpenalized update; `ε'` is ignored.
    Disabled,
}

/// Transform applied to sampled losses before ranking. The ranking utilities
/// make any strictly increasing transform a no-op; this exists to check that.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossTransform {
    Identity,
    Affine { scale: f64, shift: f64 },
}

impl LossTransform {
    fn apply(self, loss: f64) -> f64 {
        match self {
            LossTransform::Identity => loss,
            LossTransform::Affine { scale, shift } => scale * loss + shift,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

/// Seeds of the three independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub mask: u64,
    pub init: u64,
    pub shuffle: u64,
}

impl Seeds {
    /// Derives the three stream seeds from one run seed.
    pub fn from_run_seed(seed: u64) -> Self {
        Self {
            mask: splitmix64(seed ^ 0x6d61_736b),
            init: splitmix64(seed ^ 0x696e_6974),
            shuffle: splitmix64(seed ^ 0x7368_7566),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: usize,
    pub eta_theta: EtaTheta,
    pub eps_prime: f64,
    pub theta_init: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub sgd: SgdConfig,
    pub seeds: Seeds,
    pub penalty: PenaltyPath,
    pub loss_transform: LossTransform,
    pub precision: Precision,
    /// Evaluate the test set every this many epochs (and always after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 2,
            eta_theta: EtaTheta::InverseDim,
            eps_prime: 0.0,
            theta_init: 0.5,
            batch_size: 32,
            epochs: 1,
            sgd: SgdConfig::default(),
            seeds: Seeds::from_run_seed(0),
            penalty: PenaltyPath::Enabled,
            loss_transform: LossTransform::Identity,
            precision: Precision::F64,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda < 2 {
            return Err(Error::invalid(format!(
                "lambda must be >= 2, got {}",
                self.lambda
            )));
        }
        if let EtaTheta::Fixed(eta) = self.eta_theta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::invalid(format!(
                    "eta_theta must be positive, got {eta}"
                )));
            }
        }
        if !self.eps_prime.is_finite() {
            return Err(Error::invalid("eps_prime must be finite"));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return Err(Error::invalid(
                "batch size, epochs and eval_every must be >= 1",
            ));
        }
        self.sgd.validate()
    }
}

/// The complexity coefficients matching the topology's mask mode: one per unit,
/// or the weight count of each gated connection.
pub fn default_coefficients(topology: &MaskedTopology) -> Result<ComplexityCoefficients> {
    match topology.mode() {
        MaskMode::Unit => unit_selection_coeffs(topology.mask_dim()),
        MaskMode::Connection => connection_selection_coeffs(topology),
    }
}

/// `epochs * ⌈n / batch_size⌉`.
pub fn total_iterations(n: usize, batch_size: usize, epochs: usize) -> usize {
    epochs * iterations_per_epoch(n, batch_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub epoch: usize,
    pub mean_sampled_loss: f64,
    pub theta_mean: f64,
    /// Weight usage rate of the deterministic mask after the update.
    pub usage_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Test error under the deterministic mask, when a test set was given and
    /// this epoch was evaluated.
    pub test_error: Option<f64>,
    pub usage_rate: f64,
    pub theta_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub iterations: Vec<IterationRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn final_test_error(&self) -> Option<f64> {
        self.epochs.iter().rev().find_map(|e| e.test_error)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub weights: WeightStore<F>,
    pub theta: BernoulliTheta,
    pub history: TrainHistory,
}

/// State after one iteration, passed to the observer of [`train_observed`].
pub struct StepView<'a, F> {
    pub iteration: usize,
    pub epoch: usize,
    pub masks: &'a [StructureMask],
    pub losses: &'a [f64],
    pub theta: &'a BernoulliTheta,
    pub weights: &'a WeightStore<F>,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<F: std::fmt::Debug> {
    #[error(transparent)]
    Invalid(#[from] Error),
    /// A loss or gradient became non-finite; `partial` holds the trajectory up to
    /// the last completed iteration.
    #[error("training diverged at iteration {iteration}: {cause}")]
    Diverged {
        iteration: usize,
        cause: Error,
        partial: Box<TrainOutcome<F>>,
    },
}

pub fn train<F: Real>(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    topology: &MaskedTopology,
) -> Result<TrainOutcome<F>, TrainError<F>> {
    train_observed(config, train_set, test_set, topology, |_| {})
}

pub fn train_observed<F: Real>(
    config: &TrainConfig,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    topology: &MaskedTopology,
    mut observer: impl FnMut(&StepView<'_, F>),
) -> Result<TrainOutcome<F>, TrainError<F>> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training set is empty").into());
    }
    check_dim(
        "training features",
        topology.input_dim(),
        train_set.feature_dim(),
    )?;
    if let Some(test) = test_set {
        check_dim("test features", topology.input_dim(), test.feature_dim())?;
    }
    let d = topology.mask_dim();
    let coeffs = default_coefficients(topology)?;
    let eps = normalize_epsilon(config.eps_prime, &coeffs)?;
    let eta_theta = config.eta_theta.resolve(d);

    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seeds.mask);
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seeds.init);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seeds.shuffle);

    let mut theta = BernoulliTheta::uniform(d, config.theta_init)?;
    let mut weights: WeightStore<F> = he_init(topology, &mut init_rng);
    let mut optimizer = OptimizerState::new(&config.sgd, &weights)?;
    let mut history = TrainHistory::default();
    let mut iteration = 0;

    macro_rules! diverge {
        ($cause:expr) => {
            return Err(TrainError::Diverged {
                iteration,
                cause: $cause,
                partial: Box::new(TrainOutcome {
                    weights,
                    theta,
                    history,
                }),
            })
        };
    }

    for epoch in 0..config.epochs {
        optimizer.lr = lr_schedule(config.sgd.lr0, epoch, config.epochs);
        let batches = minibatch_iterator::<F>(train_set, config.batch_size, shuffle_rng.random())?;
        for batch in batches {
            let masks = sample_masks(&theta, config.lambda, &mut mask_rng)?;
            let mut losses = Vec::with_capacity(masks.len());
            let mut grads = Vec::with_capacity(masks.len());
            for mask in &masks {
                match loss_and_gradient(&weights, topology, mask, &batch) {
                    Ok((loss, grad)) => {
                        losses.push(loss);
                        grads.push(grad);
                    }
                    Err(e @ Error::NonFinite(_)) => diverge!(e),
                    Err(e) => return Err(e.into()),
                }
            }

            let ranked: Vec<f64> = losses
                .iter()
                .map(|&l| config.loss_transform.apply(l))
                .collect();
            let utilities = match compute_utilities(&ranked) {
                Ok(u) => u,
                Err(e @ Error::NonFinite(_)) => diverge!(e),
                Err(e) => return Err(e.into()),
            };
            theta = match config.penalty {
                PenaltyPath::Enabled => {
                    update_theta(&theta, &masks, &utilities, &coeffs, eps, eta_theta)?
                }
                PenaltyPath::Disabled => {
                    baseline_update_theta(&theta, &masks, &utilities, eta_theta)?
                }
            };
            assert!(theta.is_clamped(), "theta left [1/d, 1-1/d]");

            let grad = WeightStore::mean(&grads)?;
            if let Err(e) = sgd_step(&mut weights, &grad, &mut optimizer) {
                match e {
                    Error::NonFinite(_) => diverge!(e),
                    e => return Err(e.into()),
                }
            }

            history.iterations.push(IterationRecord {
                iteration,
                epoch,
                mean_sampled_loss: losses.iter().sum::<f64>() / losses.len() as f64,
                theta_mean: theta.mean(),
                usage_rate: weight_usage_rate(topology, &deterministic_mask(&theta))?,
            });
            observer(&StepView {
                iteration,
                epoch,
                masks: &masks,
                losses: &losses,
                theta: &theta,
                weights: &weights,
            });
            iteration += 1;
        }

        let last = epoch + 1 == config.epochs;
        let test_error = match test_set {
            Some(test) if last || (epoch + 1) % config.eval_every == 0 => Some(evaluate(
                &weights,
                topology,
                &deterministic_mask(&theta),
                test,
            )?),
            _ => None,
        };
        history.epochs.push(EpochRecord {
            epoch,
            test_error,
            usage_rate: weight_usage_rate(topology, &deterministic_mask(&theta))?,
            theta_mean: theta.mean(),
        });
    }

    Ok(TrainOutcome {
        weights,
        theta,
        history,
    })
}

const EVAL_CHUNK: usize = 1024;

fn argmax_rows<F: Real>(scores: &Array2<F>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn predict_with_mask<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    inputs: ArrayView2<'_, F>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(inputs.nrows());
    for chunk in inputs.axis_chunks_iter(Axis(0), EVAL_CHUNK) {
        out.extend(argmax_rows(&forward(weights, topology, mask, chunk)?));
    }
    Ok(out)
}

/// Class predictions under the most probable mask (`m_i = 1` iff `θ_i >= 0.5`).
pub fn predict_deterministic<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    theta: &BernoulliTheta,
    inputs: ArrayView2<'_, F>,
) -> Result<Vec<usize>> {
    predict_with_mask(weights, topology, &deterministic_mask(theta), inputs)
}

/// Default number of sampled masks for stochastic prediction.
pub const DEFAULT_PREDICTION_SAMPLES: usize = 100;

/// Softmax outputs averaged over `n_samples` masks drawn from `p(M | θ)`.
pub fn stochastic_probabilities<F: Real, R: Rng + ?Sized>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    theta: &BernoulliTheta,
    inputs: ArrayView2<'_, F>,
    n_samples: usize,
    rng: &mut R,
) -> Result<Array2<F>> {
    if n_samples == 0 {
        return Err(Error::invalid("stochastic prediction needs n_samples >= 1"));
    }
    check_dim("theta", topology.mask_dim(), theta.dim())?;
    let mut acc = Array2::<F>::zeros((inputs.nrows(), topology.output_dim()));
    for _ in 0..n_samples {
        let mask = sample_single(theta, rng);
        let probs = softmax_rows(&forward(weights, topology, &mask, inputs)?);
        acc.scaled_add(F::one(), &probs);
    }
    acc.mapv_inplace(|x| x / F::from_usize(n_samples).unwrap());
    Ok(acc)
}

fn sample_single<R: Rng + ?Sized>(theta: &BernoulliTheta, rng: &mut R) -> StructureMask {
    StructureMask::from_bools(
        theta
            .probs()
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect(),
    )
}

/// Argmax of the mask-averaged predictive distribution.
pub fn predict_stochastic<F: Real, R: Rng + ?Sized>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    theta: &BernoulliTheta,
    inputs: ArrayView2<'_, F>,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    Ok(argmax_rows(&stochastic_probabilities(
        weights, topology, theta, inputs, n_samples, rng,
    )?))
}

/// Fraction of `test_set` misclassified under a fixed mask.
pub fn evaluate<F: Real>(
    weights: &WeightStore<F>,
    topology: &MaskedTopology,
    mask: &StructureMask,
    test_set: &Dataset,
) -> Result<f64> {
    if test_set.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let inputs = test_set.inputs().mapv(F::from_f64_lossy);
    let predictions = predict_with_mask(weights, topology, mask, inputs.view())?;
    let wrong = predictions
        .iter()
        .zip(test_set.labels())
        .filter(|(p, l)| p != l)
        .count();
    Ok(wrong as f64 / test_set.len() as f64)
}
