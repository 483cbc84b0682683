use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use super::{argmax, rng_for, softmax_xent, stream, Dataset, Result, Split, Task, TaskError};
use crate::exec::{self, Execution};

/// Fully connected ReLU network trained with mean softmax cross-entropy.
///
/// Each layer stores `W` (out x in, row-major) followed by `b`. The ReLU
/// derivative at exactly zero is taken as 0.
#[derive(Debug, Clone)]
pub struct MlpTask {
    data: Arc<Dataset>,
    widths: Vec<usize>,
    offsets: Vec<usize>,
    batch: usize,
    exec: Execution,
}

struct Workspace {
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
}

impl MlpTask {
    pub fn new(data: Arc<Dataset>, hidden: &[usize], batch: usize) -> Result<Self> {
        if data.is_empty() || data.splits().train == 0 {
            return Err(TaskError::EmptyDataset);
        }
        if hidden.contains(&0) {
            return Err(TaskError::Invalid("hidden widths must be >= 1".into()));
        }
        if data.n_classes() < 2 {
            return Err(TaskError::Invalid("need at least two classes".into()));
        }
        let mut widths = vec![data.n_features()];
        widths.extend_from_slice(hidden);
        widths.push(data.n_classes());
        let mut offsets = vec![0];
        for w in widths.windows(2) {
            offsets.push(offsets.last().unwrap() + w[1] * (w[0] + 1));
        }
        Ok(Self {
            data,
            widths,
            offsets,
            batch,
            exec: Execution::default(),
        })
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn hidden(&self) -> &[usize] {
        &self.widths[1..self.widths.len() - 1]
    }

    fn layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn workspace(&self) -> Workspace {
        Workspace {
            acts: self.widths.iter().map(|&w| vec![0.0; w]).collect(),
            deltas: self.widths.iter().map(|&w| vec![0.0; w]).collect(),
        }
    }

    /// Fills `ws.acts`; the last entry holds the logits.
    fn forward(&self, params: &[f64], x: &[f64], ws: &mut Workspace) {
        ws.acts[0].copy_from_slice(x);
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let layer = &params[self.offsets[l]..self.offsets[l + 1]];
            let (w, b) = layer.split_at(fan_out * fan_in);
            let (prev, next) = ws.acts.split_at_mut(l + 1);
            let (input, out) = (&prev[l], &mut next[0]);
            let last = l + 1 == self.layers();
            for o in 0..fan_out {
                let z = b[o] + crate::numerics::dot(&w[o * fan_in..(o + 1) * fan_in], input);
                out[o] = if last || z > 0.0 { z } else { 0.0 };
            }
        }
    }

    /// Adds this sample's gradient into `acc` and returns its loss.
    fn backward(&self, params: &[f64], x: &[f64], y: usize, ws: &mut Workspace, acc: &mut [f64]) -> f64 {
        self.forward(params, x, ws);
        let top = self.layers();
        let loss = softmax_xent(&ws.acts[top], y, Some(&mut ws.deltas[top]));
        for l in (0..top).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let off = self.offsets[l];
            let w = &params[off..off + fan_out * fan_in];
            let (g_w, g_b) = acc[off..self.offsets[l + 1]].split_at_mut(fan_out * fan_in);
            let (lower, upper) = ws.deltas.split_at_mut(l + 1);
            let delta = &upper[0];
            let input = &ws.acts[l];
            for o in 0..fan_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g_b[o] += d;
                for (g, a) in g_w[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let below = &mut lower[l];
                below.iter_mut().for_each(|v| *v = 0.0);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (v, wij) in below.iter_mut().zip(&w[o * fan_in..(o + 1) * fan_in]) {
                        *v += d * wij;
                    }
                }
                for (v, a) in below.iter_mut().zip(input) {
                    if *a <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        loss
    }

    fn gradient_over(&self, params: &[f64], rows: &[usize]) -> Vec<f64> {
        let mut g = exec::chunked_sum(self.exec, rows.len(), self.dim(), |range, acc| {
            let mut ws = self.workspace();
            for &i in &rows[range] {
                let (x, y) = self.data.sample(i);
                self.backward(params, x, y, &mut ws, acc);
            }
        });
        let n = rows.len() as f64;
        g.iter_mut().for_each(|v| *v /= n);
        g
    }

    /// Signs of every hidden pre-activation over the train split.
    fn activation_pattern(&self, params: &[f64]) -> Vec<bool> {
        let mut ws = self.workspace();
        let mut out = Vec::new();
        for i in self.data.split_range(Split::Train) {
            self.forward(params, self.data.sample(i).0, &mut ws);
            for a in &ws.acts[1..self.layers()] {
                out.extend(a.iter().map(|&v| v > 0.0));
            }
        }
        out
    }
}

impl Task for MlpTask {
    fn name(&self) -> String {
        let hidden: Vec<String> = self.hidden().iter().map(|w| w.to_string()).collect();
        format!("mlp(hidden=[{}],batch={})", hidden.join(","), self.batch)
    }

    fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// He-normal hidden weights, zero biases. The output layer is drawn at a
    /// tenth of the LeCun scale so the untrained network predicts roughly
    /// uniform class probabilities.
    fn initial_params(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, stream::INIT);
        let mut p = vec![0.0; self.dim()];
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let std = if l + 1 == self.layers() {
                0.1 / (fan_in as f64).sqrt()
            } else {
                (2.0 / fan_in as f64).sqrt()
            };
            for w in &mut p[self.offsets[l]..self.offsets[l] + fan_out * fan_in] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = std * z;
            }
        }
        p
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
        let top = self.layers();
        let total = exec::chunked_sum(self.exec, range.len(), 1, |r, acc| {
            let mut ws = self.workspace();
            for i in r {
                let (x, y) = self.data.sample(range.start + i);
                self.forward(params, x, &mut ws);
                acc[0] += softmax_xent(&ws.acts[top], y, None);
            }
        })[0];
        total / range.len() as f64
    }

    fn metric(&self, params: &[f64], split: Split) -> Option<f64> {
        let range = self.data.split_range(split);
        if range.is_empty() {
            return None;
        }
        let top = self.layers();
        let hits = exec::chunked_sum(self.exec, range.len(), 1, |r, acc| {
            let mut ws = self.workspace();
            for i in r {
                let (x, y) = self.data.sample(range.start + i);
                self.forward(params, x, &mut ws);
                if argmax(&ws.acts[top]) == y {
                    acc[0] += 1.0;
                }
            }
        })[0];
        Some(hits / range.len() as f64)
    }

    fn has_split(&self, split: Split) -> bool {
        !self.data.split_range(split).is_empty()
    }

    fn smooth_at(&self, params: &[f64], coord: usize, h: f64) -> bool {
        let base = self.activation_pattern(params);
        let mut p = params.to_vec();
        [h, -h].iter().all(|&s| {
            p[coord] = params[coord] + s;
            self.activation_pattern(&p) == base
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::tasks::{synthetic_classification, Normalization, SplitSizes};

    #[test]
    fn layout_and_dimension() {
        let d = Arc::new(synthetic_classification(40, 3, 4, 1.0, 0).unwrap());
        let t = MlpTask::new(d, &[5, 2], 8).unwrap();
        assert_eq!(t.dim(), 5 * 4 + 2 * 6 + 4 * 3);
        assert_eq!(t.hidden(), &[5, 2]);
        assert!(t.name().contains("[5,2]"));
    }

    #[test]
    fn hand_computed_network() {
        // 1 input, 1 hidden unit, 2 classes
        let x = Matrix::from_rows(&[&[2.0]]).unwrap();
        let splits = SplitSizes {
            train: 1,
            val: 0,
            test: 0,
        };
        let d = Arc::new(Dataset::new(x, vec![1], 2, splits, Normalization::None).unwrap());
        let t = MlpTask::new(d, &[1], 0).unwrap();
        // w1=0.5 b1=0.5 -> h=1.5; W2=(1,-1) b2=(0,0) -> logits (1.5,-1.5)
        let p = [0.5, 0.5, 1.0, -1.0, 0.0, 0.0];
        let e = (-3.0f64).exp();
        let (p0, p1) = (1.0 / (1.0 + e), e / (1.0 + e));
        assert!((t.loss(&p, Split::Train) - (-p1.ln())).abs() < 1e-14);
        let g = t.full_gradient(&p);
        let dh = p0 * 1.0 + (p1 - 1.0) * -1.0;
        let want = [dh * 2.0, dh, p0 * 1.5, (p1 - 1.0) * 1.5, p0, p1 - 1.0];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-14, "{g:?}");
        }
    }

    #[test]
    fn dead_unit_passes_no_gradient() {
        let x = Matrix::from_rows(&[&[1.0]]).unwrap();
        let splits = SplitSizes {
            train: 1,
            val: 0,
            test: 0,
        };
        let d = Arc::new(Dataset::new(x, vec![0], 2, splits, Normalization::None).unwrap());
        let t = MlpTask::new(d, &[1], 0).unwrap();
        // pre-activation exactly zero
        let g = t.full_gradient(&[1.0, -1.0, 1.0, -1.0, 0.0, 0.0]);
        assert_eq!(&g[..2], &[0.0, 0.0]);
    }

    #[test]
    fn untrained_loss_near_uniform() {
        let d = Arc::new(synthetic_classification(500, 784, 10, 3.0, 2).unwrap());
        let t = MlpTask::new(d, &[128, 128], 64).unwrap();
        let l = t.loss(&t.initial_params(7), Split::Train);
        assert!((l - 10f64.ln()).abs() < 0.2, "{l}");
    }

    #[test]
    fn deterministic_and_execution_independent() {
        let d = Arc::new(synthetic_classification(200, 6, 3, 2.0, 3).unwrap());
        let par = MlpTask::new(d, &[8], 32).unwrap();
        let seq = par.clone().with_execution(Execution::Sequential);
        let p = par.initial_params(1);
        assert_eq!(p, seq.initial_params(1));
        assert_ne!(p, par.initial_params(2));
        assert_eq!(par.gradient(&p, 9), seq.gradient(&p, 9));
        assert_eq!(par.loss(&p, Split::Val).to_bits(), seq.loss(&p, Split::Val).to_bits());
        assert_eq!(par.metric(&p, Split::Test), seq.metric(&p, Split::Test));
    }

    #[test]
    fn rejects_zero_width() {
        let d = Arc::new(synthetic_classification(20, 2, 2, 1.0, 0).unwrap());
        assert!(MlpTask::new(d, &[4, 0], 8).is_err());
    }
}
