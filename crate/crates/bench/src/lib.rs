//! Fixtures shared by the benchmarks.

use maskopt_core::{Batch, Dataset, MaskedTopology};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// The 784-64-64-10 unit-selection network.
pub fn mnist_mlp() -> MaskedTopology {
    MaskedTopology::unit(784, &[64, 64], 10).expect("valid topology")
}

/// `n` random samples with features in `[0, 1]`.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, features: usize, classes: usize) -> Dataset {
    let inputs = Array2::from_shape_fn((n, features), |_| rng.random::<f64>());
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Dataset::new(inputs, labels, classes).expect("consistent dataset")
}

pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, features: usize, classes: usize) -> Batch<f64> {
    random_dataset(rng, n, features, classes).as_batch()
}
