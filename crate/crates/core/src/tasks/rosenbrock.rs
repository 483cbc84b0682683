use super::{Result, Split, Task, TaskError};

/// Chained Rosenbrock function
/// `sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2`, minimum 0 at all-ones.
#[derive(Debug, Clone)]
pub struct RosenbrockTask {
    n: usize,
}

impl RosenbrockTask {
    pub fn new(n: usize) -> Result<Self> {
        if n < 2 || n % 2 != 0 {
            return Err(TaskError::Invalid(format!(
                "Rosenbrock dimension must be even and >= 2, got {n}"
            )));
        }
        Ok(Self { n })
    }
}

impl Task for RosenbrockTask {
    fn name(&self) -> String {
        format!("rosenbrock(n={})", self.n)
    }

    fn dim(&self) -> usize {
        self.n
    }

    /// The classical start `(-1.2, 1, -1.2, 1, ...)`; the seed is unused.
    fn initial_params(&self, _seed: u64) -> Vec<f64> {
        (0..self.n).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect()
    }

    fn gradient(&self, params: &[f64], _batch_seed: u64) -> Vec<f64> {
        self.full_gradient(params)
    }

    fn full_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for i in 0..self.n - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        g
    }

    fn loss(&self, x: &[f64], _split: Split) -> f64 {
        (0..self.n - 1)
            .map(|i| 100.0 * (x[i + 1] - x[i] * x[i]).powi(2) + (1.0 - x[i]).powi(2))
            .sum()
    }
}
