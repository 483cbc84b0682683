//! Differentiable objectives with exact gradient oracles.
//!
//! A [`Task`] is immutable once built. Every random choice it makes (initial
//! parameters, minibatch draws, gradient noise) is derived from an explicit
//! seed, so `gradient(params, batch_seed)` is a pure function.

mod dataset;
mod logistic;
mod mlp;
mod quadratic;
mod rosenbrock;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dataset::{
    load_idx, parse_idx_images, parse_idx_labels, synthetic_classification, Dataset, IdxImages, Normalization,
    SplitFractions, SplitSizes, MNIST_NORMALIZATION,
};
pub use logistic::LogisticTask;
pub use mlp::MlpTask;
pub use quadratic::QuadraticTask;
pub use rosenbrock::RosenbrockTask;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bad magic number at offset 0: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },
    #[error("truncated IDX data at offset {offset}: need {needed} bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid task specification: {0}")]
    Invalid(String),
    #[error("dataset serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, TaskError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

pub trait Task: Send + Sync {
    fn name(&self) -> String;

    /// Parameter dimension `n`.
    fn dim(&self) -> usize;

    fn initial_params(&self, seed: u64) -> Vec<f64>;

    /// Stochastic gradient; deterministic given `(params, batch_seed)`.
    fn gradient(&self, params: &[f64], batch_seed: u64) -> Vec<f64>;

    /// Exact gradient of `loss(params, Split::Train)`.
    fn full_gradient(&self, params: &[f64]) -> Vec<f64>;

    fn loss(&self, params: &[f64], split: Split) -> f64;

    /// Accuracy for classification tasks.
    fn metric(&self, _params: &[f64], _split: Split) -> Option<f64> {
        None
    }

    /// Whether `split` holds any data.
    fn has_split(&self, split: Split) -> bool {
        split == Split::Train
    }

    /// False when moving `params[coord]` by `±h` crosses a non-differentiable
    /// point of the loss, which makes a central difference meaningless there.
    fn smooth_at(&self, _params: &[f64], _coord: usize, _h: f64) -> bool {
        true
    }
}

/// Batch seed for step `step` (0-based) of a run seeded with `run_seed`.
pub fn batch_seed(run_seed: u64, step: usize) -> u64 {
    run_seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(step as u64)
        .rotate_left(17)
}

/// Independent random stream for one purpose under one seed.
pub(crate) fn rng_for(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(purpose);
    rng
}

pub(crate) mod stream {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const DATA: u64 = 4;
    pub const SHUFFLE: u64 = 5;
    pub const MATRIX: u64 = 6;
}

/// Mean softmax cross-entropy helper: returns `-log softmax(logits)[label]`
/// and writes `softmax(logits) - onehot(label)` into `dlogits`.
pub(crate) fn softmax_xent(logits: &[f64], label: usize, dlogits: Option<&mut [f64]>) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let log_sum = sum.ln() + max;
    if let Some(d) = dlogits {
        for (j, (dj, z)) in d.iter_mut().zip(logits).enumerate() {
            *dj = (z - log_sum).exp() - if j == label { 1.0 } else { 0.0 };
        }
    }
    log_sum - logits[label]
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_xent_uniform_logits() {
        let mut d = [0.0; 4];
        let l = softmax_xent(&[0.0; 4], 2, Some(&mut d));
        assert!((l - 4f64.ln()).abs() < 1e-15);
        assert_eq!(d, [0.25, 0.25, -0.75, 0.25]);
    }

    #[test]
    fn softmax_xent_is_shift_invariant_and_stable() {
        let a = softmax_xent(&[1000.0, 1001.0], 1, None);
        let b = softmax_xent(&[0.0, 1.0], 1, None);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rng_streams_differ() {
        use rand::Rng;
        let a: u64 = rng_for(1, stream::INIT).random();
        let b: u64 = rng_for(1, stream::BATCH).random();
        let c: u64 = rng_for(1, stream::INIT).random();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }
}
