//! Penalized probabilistic structure optimization for small neural networks.
//!
//! A multivariate Bernoulli distribution `p(M | θ)` over binary structure masks
//! is trained by stochastic natural gradient, jointly with the network weights
//! (trained by SGD). A weighted bit-count penalty `ε Σ c_i m_i` pushes the
//! distribution toward smaller structures; `ε = 0` gives the unpenalized
//! algorithm.
//!
//! Module map:
//!
//! - [`relaxation`]: masks, `θ`, ranking utilities and the `θ` update
//! - [`complexity`]: coefficients `c` and weight-usage accounting
//! - [`topology`], [`net`]: mask-gated networks, forward/backward passes
//! - [`sgd`]: Nesterov SGD and the step learning-rate schedule
//! - [`trainer`]: the joint training loop, prediction and evaluation
//! - [`data`]: IDX loading, a synthetic task, mini-batching
//! - [`blackbox`]: pseudo-boolean benchmarks for the `θ` optimizer alone

pub mod blackbox;
pub mod complexity;
pub mod data;
pub mod error;
pub mod net;
pub mod real;
pub mod relaxation;
pub mod sgd;
pub mod topology;
pub mod trainer;

pub use complexity::{
    connection_selection_coeffs, unit_selection_coeffs, weight_usage_rate, ComplexityCoefficients,
};
pub use data::{load_mnist_idx, minibatch_iterator, synthetic_subset_task, Dataset};
pub use error::{Error, Result};
pub use net::{Batch, Gradients, WeightStore};
pub use real::Real;
pub use relaxation::{
    clamp_theta, compute_utilities, deterministic_mask, normalize_epsilon, sample_masks,
    update_theta, BernoulliTheta, StructureMask, UtilityVector,
};
pub use sgd::{lr_schedule, OptimizerState, SgdConfig};
pub use topology::{MaskMode, MaskedTopology};
pub use trainer::{
    evaluate, predict_deterministic, predict_stochastic, train, EtaTheta, PenaltyPath, Precision,
    Seeds, TrainConfig, TrainError, TrainHistory, TrainOutcome,
};
