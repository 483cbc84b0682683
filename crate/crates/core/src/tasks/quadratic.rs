use rand_distr::{Distribution, StandardNormal};

use super::{rng_for, stream, Result, Split, Task, TaskError};
use crate::numerics::{self, Matrix};

/// `f(theta) = 1/2 theta^T A theta` with symmetric positive definite `A`.
///
/// With `noise > 0` the stochastic gradient adds `noise * xi`, where `xi` is a
/// standard normal vector drawn from the batch seed.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    hessian: Matrix,
    noise: f64,
    label: String,
}

impl QuadraticTask {
    /// Random rotation of a diagonal spectrum log-spaced in `[1, condition]`.
    pub fn new(n: usize, condition: f64, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(TaskError::Invalid("quadratic dimension must be positive".into()));
        }
        if !(condition >= 1.0) || !condition.is_finite() {
            return Err(TaskError::Invalid(format!("condition must be >= 1, got {condition}")));
        }
        let eig: Vec<f64> = (0..n)
            .map(|i| {
                if n == 1 {
                    1.0
                } else {
                    condition.powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        let mut rng = rng_for(seed, stream::MATRIX);
        let basis = loop {
            let data: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let g = Matrix::new(n, n, data).expect("finite gaussian draws");
            let q = numerics::orthonormal_basis(&g, 1e-8);
            if q.len() == n {
                break q;
            }
        };
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = (0..n).map(|p| basis[p][i] * eig[p] * basis[p][j]).sum();
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        Ok(Self {
            hessian: Matrix::new(n, n, a).expect("finite"),
            noise: 0.0,
            label: format!("quadratic(n={n},cond={condition})"),
        })
    }

    /// Quadratic with an explicit symmetric positive definite Hessian.
    pub fn from_hessian(hessian: Matrix) -> Result<Self> {
        if !hessian.is_square() {
            return Err(TaskError::Invalid("Hessian must be square".into()));
        }
        let label = format!("quadratic(n={})", hessian.rows());
        Ok(Self {
            hessian,
            noise: 0.0,
            label,
        })
    }

    pub fn with_noise(mut self, noise: f64) -> Self {
        self.noise = noise;
        self
    }

    pub fn hessian(&self) -> &Matrix {
        &self.hessian
    }
}

impl Task for QuadraticTask {
    fn name(&self) -> String {
        if self.noise > 0.0 {
            format!("{}+noise({})", self.label, self.noise)
        } else {
            self.label.clone()
        }
    }

    fn dim(&self) -> usize {
        self.hessian.rows()
    }

    fn initial_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, stream::INIT);
        (0..self.dim()).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn gradient(&self, params: &[f64], batch_seed: u64) -> Vec<f64> {
        let mut g = self.full_gradient(params);
        if self.noise > 0.0 {
            let mut rng = rng_for(batch_seed, stream::NOISE);
            for gi in &mut g {
                let xi: f64 = StandardNormal.sample(&mut rng);
                *gi += self.noise * xi;
            }
        }
        g
    }

    fn full_gradient(&self, params: &[f64]) -> Vec<f64> {
        self.hessian.matvec(params).expect("parameter dimension")
    }

    fn loss(&self, params: &[f64], _split: Split) -> f64 {
        0.5 * numerics::dot(params, &self.full_gradient(params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_has_zero_gradient_and_loss() {
        let t = QuadraticTask::new(5, 10.0, 1).unwrap();
        assert_eq!(t.full_gradient(&[0.0; 5]), vec![0.0; 5]);
        assert_eq!(t.loss(&[0.0; 5], Split::Train), 0.0);
    }

    #[test]
    fn one_dimensional_example() {
        let t = QuadraticTask::from_hessian(Matrix::diagonal(&[2.0])).unwrap();
        assert_eq!(t.gradient(&[3.0], 0), vec![6.0]);
        assert_eq!(t.loss(&[3.0], Split::Train), 9.0);
    }

    #[test]
    fn spectrum_is_log_spaced() {
        let t = QuadraticTask::new(4, 1000.0, 9).unwrap();
        let eig = numerics::symmetric_eigenvalues(t.hessian()).unwrap();
        for (e, want) in eig.iter().zip([1.0, 10.0, 100.0, 1000.0]) {
            assert!((e - want).abs() < 1e-9 * want, "{eig:?}");
        }
    }

    #[test]
    fn noisy_gradient_is_seeded() {
        let t = QuadraticTask::new(3, 5.0, 2).unwrap().with_noise(0.5);
        let p = [0.1, 0.2, 0.3];
        assert_eq!(t.gradient(&p, 7), t.gradient(&p, 7));
        assert_ne!(t.gradient(&p, 7), t.gradient(&p, 8));
        assert_ne!(t.gradient(&p, 7), t.full_gradient(&p));
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(QuadraticTask::new(0, 2.0, 0).is_err());
        assert!(QuadraticTask::new(3, 0.5, 0).is_err());
    }
}
