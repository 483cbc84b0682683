use std::sync::Arc;

use super::{argmax, rng_for, softmax_xent, stream, Dataset, Result, Split, Task, TaskError};
use crate::exec::{self, Execution};

/// Multinomial logistic regression: mean softmax cross-entropy of `W x + b`
/// plus `l2 / 2 * ||W||^2` (biases are not penalized).
///
/// Parameters are laid out as `W` (classes x features, row-major) then `b`.
#[derive(Debug, Clone)]
pub struct LogisticTask {
    data: Arc<Dataset>,
    l2: f64,
    batch: usize,
    exec: Execution,
}

impl LogisticTask {
    /// `batch == 0` or a batch at least the train size means full-batch gradients.
    pub fn new(data: Arc<Dataset>, l2: f64, batch: usize) -> Result<Self> {
        if data.is_empty() || data.splits().train == 0 {
            return Err(TaskError::EmptyDataset);
        }
        if !(l2 >= 0.0) || !l2.is_finite() {
            return Err(TaskError::Invalid(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(Self {
            data,
            l2,
            batch,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    fn classes(&self) -> usize {
        self.data.n_classes()
    }

    fn logits(&self, params: &[f64], x: &[f64], out: &mut [f64]) {
        let (c, d) = (self.classes(), self.data.n_features());
        let bias = &params[c * d..];
        for (k, z) in out.iter_mut().enumerate() {
            *z = bias[k] + crate::numerics::dot(&params[k * d..(k + 1) * d], x);
        }
    }

    fn gradient_over(&self, params: &[f64], rows: &[usize]) -> Vec<f64> {
        let (c, d) = (self.classes(), self.data.n_features());
        let n = rows.len() as f64;
        let mut g = exec::chunked_sum(self.exec, rows.len(), self.dim(), |range, acc| {
            let mut z = vec![0.0; c];
            let mut dz = vec![0.0; c];
            for &i in &rows[range] {
                let (x, y) = self.data.sample(i);
                self.logits(params, x, &mut z);
                softmax_xent(&z, y, Some(&mut dz));
                for k in 0..c {
                    for (a, xj) in acc[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *a += dz[k] * xj;
                    }
                    acc[c * d + k] += dz[k];
                }
            }
        });
        for (i, gi) in g.iter_mut().enumerate() {
            *gi /= n;
            if i < c * d {
                *gi += self.l2 * params[i];
            }
        }
        g
    }
}

impl Task for LogisticTask {
    fn name(&self) -> String {
        format!("logistic(l2={},batch={})", self.l2, self.batch)
    }

    fn dim(&self) -> usize {
        self.classes() * (self.data.n_features() + 1)
    }

    /// Logistic regression starts from zero; the seed is unused.
    fn initial_params(&self, _seed: u64) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    fn gradient(&self, params: &[f64], batch_seed: u64) -> Vec<f64> {
        let train = self.data.splits().train;
        if self.batch == 0 || self.batch >= train {
            return self.full_gradient(params);
        }
        let mut rng = rng_for(batch_seed, stream::BATCH);
        let rows = rand::seq::index::sample(&mut rng, train, self.batch).into_vec();
        self.gradient_over(params, &rows)
    }

    fn full_gradient(&self, params: &[f64]) -> Vec<f64> {
        let rows: Vec<usize> = self.data.split_range(Split::Train).collect();
        self.gradient_over(params, &rows)
    }

    fn loss(&self, params: &[f64], split: Split) -> f64 {
        let range = self.data.split_range(split);
        if range.is_empty() {
            return f64::NAN;
        }
        let c = self.classes();
        let total = exec::chunked_sum(self.exec, range.len(), 1, |r, acc| {
            let mut z = vec![0.0; c];
            for i in r {
                let (x, y) = self.data.sample(range.start + i);
                self.logits(params, x, &mut z);
                acc[0] += softmax_xent(&z, y, None);
            }
        })[0];
        let w = &params[..c * self.data.n_features()];
        total / range.len() as f64 + 0.5 * self.l2 * crate::numerics::dot(w, w)
    }

    fn metric(&self, params: &[f64], split: Split) -> Option<f64> {
        let range = self.data.split_range(split);
        if range.is_empty() {
            return None;
        }
        let mut z = vec![0.0; self.classes()];
        let hits = range
            .clone()
            .filter(|&i| {
                let (x, y) = self.data.sample(i);
                self.logits(params, x, &mut z);
                argmax(&z) == y
            })
            .count();
        Some(hits as f64 / range.len() as f64)
    }

    fn has_split(&self, split: Split) -> bool {
        !self.data.split_range(split).is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::tasks::{synthetic_classification, Normalization, SplitSizes};

    fn two_class() -> Arc<Dataset> {
        let x = Matrix::from_rows(&[&[1.0, 2.0], &[3.0, -1.0], &[-2.0, 0.5], &[0.0, 4.0]]).unwrap();
        let splits = SplitSizes {
            train: 4,
            val: 0,
            test: 0,
        };
        Arc::new(Dataset::new(x, vec![0, 0, 1, 1], 2, splits, Normalization::None).unwrap())
    }

    #[test]
    fn zero_weights_balanced_loss_is_ln2() {
        let t = LogisticTask::new(two_class(), 0.0, 0).unwrap();
        let l = t.loss(&t.initial_params(0), Split::Train);
        assert!((l - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_at_origin_is_half_mean_difference() {
        let t = LogisticTask::new(two_class(), 0.0, 0).unwrap();
        let g = t.full_gradient(&[0.0; 6]);
        let mu0 = [2.0, 0.5];
        let mu1 = [-1.0, 2.25];
        for j in 0..2 {
            // each row carries a quarter of the difference with opposite signs
            assert!((g[j] - g[2 + j] - 0.5 * (mu1[j] - mu0[j])).abs() < 1e-15);
            assert!((g[j] - 0.25 * (mu1[j] - mu0[j])).abs() < 1e-15);
        }
        assert_eq!(&g[4..], &[0.0, 0.0]);
    }

    #[test]
    fn l2_penalizes_weights_only() {
        let t = LogisticTask::new(two_class(), 0.5, 0).unwrap();
        let p = [1.0, 0.0, 0.0, 0.0, 3.0, 0.0];
        let base = LogisticTask::new(two_class(), 0.0, 0).unwrap();
        assert!((t.loss(&p, Split::Train) - base.loss(&p, Split::Train) - 0.25).abs() < 1e-15);
        let (g, g0) = (t.full_gradient(&p), base.full_gradient(&p));
        assert!((g[0] - g0[0] - 0.5).abs() < 1e-15);
        assert_eq!(g[4], g0[4]);
    }

    #[test]
    fn minibatch_is_seeded_and_execution_independent() {
        let d = Arc::new(synthetic_classification(300, 4, 3, 2.0, 1).unwrap());
        let p: Vec<f64> = (0..15).map(|i| 0.01 * i as f64).collect();
        let par = LogisticTask::new(d.clone(), 0.0, 32).unwrap();
        let seq = par.clone().with_execution(Execution::Sequential);
        assert_eq!(par.gradient(&p, 4), par.gradient(&p, 4));
        assert_ne!(par.gradient(&p, 4), par.gradient(&p, 5));
        assert_eq!(par.gradient(&p, 4), seq.gradient(&p, 4));
        assert_eq!(
            par.loss(&p, Split::Train).to_bits(),
            seq.loss(&p, Split::Train).to_bits()
        );
    }

    #[test]
    fn negative_l2_rejected() {
        assert!(LogisticTask::new(two_class(), -1.0, 0).is_err());
    }
}
