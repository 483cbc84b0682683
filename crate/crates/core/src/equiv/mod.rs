//! Executable checks of the equivalence results: trajectories of two
//! optimizers fed the same gradients, basis changes of linear memory,
//! convergence of nearby spans, and finite-difference gradient checks.

mod suites;

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{self, Matrix, NumericsError};
use crate::optim::{OptimError, Optimizer, Rllc, RllcConfig};
use crate::propagators::{self, Propagator, PropagatorError};
use crate::tasks::{self, Split, Task};

pub use suites::{closed_form_rule, impulse_response, verify, Check, Suite, SuiteReport, UnknownSuite};

/// Below this ratio of extreme eigenvalues of `M^T M` the memory counts as
/// rank deficient and the basis-independence argument no longer applies.
pub const RANK_PROXY_THRESHOLD: f64 = 1e-10;

/// Gram condition above which least-squares coefficients on the memory can
/// amplify a perturbation of the gradient more than a hundredfold
/// (`cond(M) = sqrt(cond(M^T M)) > 100`).
pub const SPAN_INSTABILITY_CONDITION: f64 = 1e4;

#[derive(Debug, thiserror::Error)]
pub enum EquivError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Task(#[from] tasks::TaskError),
}

pub type Result<T> = std::result::Result<T, EquivError>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tolerance {
    Absolute(f64),
    /// Deviation divided by the largest displacement from the start seen so far.
    Relative(f64),
}

/// Where the gradients of a trajectory comparison come from.
#[derive(Clone)]
pub enum GradientStream {
    /// Open loop: i.i.d. standard normal gradients times `scale`, ignoring
    /// the parameters.
    Seeded { seed: u64, scale: f64 },
    /// Closed loop: each trajectory queries `task` at its own parameters,
    /// starting from `task.initial_params(seed)`, with shared batch seeds.
    Task { task: Arc<dyn Task>, seed: u64 },
}

impl std::fmt::Debug for GradientStream {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GradientStream::Seeded { seed, scale } => write!(f, "Seeded(seed={seed}, scale={scale})"),
            GradientStream::Task { task, seed } => write!(f, "Task({}, seed={seed})", task.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryReport {
    pub steps: usize,
    /// Largest `max_i |theta1_i - theta2_i|` over all steps.
    pub max_param_deviation: f64,
    pub max_relative_deviation: f64,
    /// 1-based step at which the deviation first exceeded the tolerance.
    pub first_divergence_step: Option<usize>,
    /// 1-based step whose memory first had full rank, if any optimizer
    /// exposes corrections.
    pub rank_established_step: Option<usize>,
    /// Smallest rank proxy seen from `rank_established_step` on.
    pub rank_floor: Option<f64>,
    /// Steps after rank was established whose rank proxy fell below
    /// [`RANK_PROXY_THRESHOLD`].
    pub deficient_steps: usize,
}

impl TrajectoryReport {
    pub fn diverged(&self) -> bool {
        self.first_divergence_step.is_some()
    }
}

fn stream_draw(seed: u64, step: usize, dim: usize, scale: f64) -> Vec<f64> {
    let mut rng = crate::tasks::rng_for(tasks::batch_seed(seed, step), 7);
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Feeds the same gradient stream to two optimizers and compares their
/// parameter trajectories step by step.
pub fn compare_trajectories(
    opt1: &mut dyn Optimizer,
    opt2: &mut dyn Optimizer,
    stream: &GradientStream,
    steps: usize,
    tol: Tolerance,
) -> Result<TrajectoryReport> {
    let n = opt1.dim();
    if opt2.dim() != n {
        return Err(EquivError::DimensionMismatch(format!(
            "optimizers have dimensions {n} and {}",
            opt2.dim()
        )));
    }
    let theta0 = match stream {
        GradientStream::Seeded { .. } => vec![0.0; n],
        GradientStream::Task { task, seed } => {
            if task.dim() != n {
                return Err(EquivError::DimensionMismatch(format!(
                    "task has dimension {}, optimizers {n}",
                    task.dim()
                )));
            }
            task.initial_params(*seed)
        }
    };
    let mut th1 = theta0.clone();
    let mut th2 = theta0.clone();
    let mut report = TrajectoryReport {
        steps,
        max_param_deviation: 0.0,
        max_relative_deviation: 0.0,
        first_divergence_step: None,
        rank_established_step: None,
        rank_floor: None,
        deficient_steps: 0,
    };
    let mut scale = 0.0f64;
    for t in 0..steps {
        let (g1, g2) = match stream {
            GradientStream::Seeded { seed, scale } => {
                let g = stream_draw(*seed, t, n, *scale);
                (g.clone(), g)
            }
            GradientStream::Task { task, seed } => {
                let bs = tasks::batch_seed(*seed, t);
                (task.gradient(&th1, bs), task.gradient(&th2, bs))
            }
        };
        let d1 = opt1.step(&g1)?;
        let d2 = opt2.step(&g2)?;
        let mut dev = 0.0f64;
        for i in 0..n {
            th1[i] += d1[i];
            th2[i] += d2[i];
            dev = dev.max((th1[i] - th2[i]).abs());
            scale = scale.max((th1[i] - theta0[i]).abs()).max((th2[i] - theta0[i]).abs());
        }
        // NaN deviations count as divergence
        let dev = if dev.is_nan() { f64::INFINITY } else { dev };
        let rel = if dev == 0.0 { 0.0 } else { dev / scale };
        report.max_param_deviation = report.max_param_deviation.max(dev);
        report.max_relative_deviation = report.max_relative_deviation.max(rel);
        let exceeded = match tol {
            Tolerance::Absolute(x) => dev > x,
            Tolerance::Relative(x) => rel > x,
        };
        if exceeded && report.first_divergence_step.is_none() {
            report.first_divergence_step = Some(t + 1);
        }
        let proxies: Vec<f64> = [opt1.last_correction(), opt2.last_correction()]
            .into_iter()
            .flatten()
            .map(|c| c.rank_proxy)
            .collect();
        if let Some(p) = proxies.iter().copied().reduce(f64::min) {
            if report.rank_established_step.is_none() && p >= RANK_PROXY_THRESHOLD {
                report.rank_established_step = Some(t + 1);
            }
            if report.rank_established_step.is_some() {
                report.rank_floor = Some(report.rank_floor.map_or(p, |f| f.min(p)));
                if p < RANK_PROXY_THRESHOLD {
                    report.deficient_steps += 1;
                }
            }
        }
    }
    Ok(report)
}

/// Runs unregularized RLLC over `p` against RLLC over `Q^{-1} B Q` with
/// initial law `Q^{-1} L0` and compares the two trajectories.
#[allow(clippy::too_many_arguments)]
pub fn check_basis_independence(
    p: &Propagator,
    q: &Matrix,
    c1: f64,
    c2: f64,
    law0: &[f64],
    stream: &GradientStream,
    dim: usize,
    steps: usize,
    tol: Tolerance,
) -> Result<TrajectoryReport> {
    let q_inv = numerics::invert(q)?;
    let conjugated = p.conjugate(q)?;
    let mapped_law = q_inv.matvec(law0)?;
    let cfg = RllcConfig::new(c1, c2, 0.0);
    let mut a = Rllc::new(dim, p.clone(), cfg, law0.to_vec())?;
    let mut b = Rllc::new(dim, conjugated, cfg, mapped_law)?;
    compare_trajectories(&mut a, &mut b, stream, steps, tol)
}

/// Random `k x k` matrix `U diag(s) V^T` with singular values spread
/// log-uniformly over `[1, max_condition)`, so its condition number is
/// below `max_condition`.
pub fn random_conditioned_matrix(k: usize, max_condition: f64, seed: u64) -> Matrix {
    let mut rng = crate::tasks::rng_for(seed, 8);
    let mut orthogonal = || loop {
        let data: Vec<f64> = (0..k * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let basis = numerics::orthonormal_basis(&Matrix::new(k, k, data).expect("finite"), 1e-8);
        if basis.len() == k {
            return basis;
        }
    };
    let u = orthogonal();
    let v = orthogonal();
    let span = max_condition.ln() * (1.0 - 1e-9);
    let s: Vec<f64> = (0..k)
        .map(|i| {
            if k == 1 {
                1.0
            } else {
                (span * i as f64 / (k - 1) as f64).exp()
            }
        })
        .collect();
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            data[i * k + j] = (0..k).map(|p| u[p][i] * s[p] * v[p][j]).sum();
        }
    }
    Matrix::new(k, k, data).expect("finite")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanPoint {
    pub eps: f64,
    pub angle: f64,
    /// Condition number of `M^T M` for the split pair's truncated rules.
    pub gram_condition: f64,
    pub unstable: bool,
}

/// For each `eps`, the largest principal angle between the spans of
/// `M(lambda + eps) ⊕ M(lambda - eps)` and `M_2(lambda)` truncated to `len`.
pub fn demo_span_convergence(lambda: f64, eps_list: &[f64], len: usize) -> Result<Vec<SpanPoint>> {
    let jordan = Propagator::jordan_momentum(2, lambda)?;
    eps_list
        .iter()
        .map(|&eps| {
            if eps == 0.0 {
                return Err(EquivError::Invalid("eps = 0 makes both units coincide".into()));
            }
            let (hi, lo) = (lambda + eps, lambda - eps);
            if !(hi.abs() < 1.0 && lo.abs() < 1.0) {
                return Err(EquivError::Invalid(format!("decays {lo} and {hi} must lie in (-1, 1)")));
            }
            let pair = Propagator::momentum(hi).union(&Propagator::momentum(lo));
            let angle = propagators::span_angle(&pair, &jordan, len)?.radians;
            let eig = numerics::symmetric_eigenvalues(&pair.abstract_rules(len)?.gram())?;
            let gram_condition = if eig[0] > 0.0 {
                eig[eig.len() - 1] / eig[0]
            } else {
                f64::INFINITY
            };
            Ok(SpanPoint {
                eps,
                angle,
                gram_condition,
                unstable: gram_condition > SPAN_INSTABILITY_CONDITION,
            })
        })
        .collect()
}

/// Relative errors are taken against `max(|fd|, |analytic|, GRADCHECK_FLOOR)`
/// so that coordinates with a vanishing gradient are judged on absolute error.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates rejected because a perturbation crosses a kink.
    pub skipped: usize,
    pub max_rel_error: f64,
    pub worst_coordinate: Option<usize>,
}

/// Compares `full_gradient` with central differences of the train loss on
/// up to `coords` random coordinates at which the loss is smooth.
pub fn gradient_check(task: &dyn Task, params: &[f64], coords: usize, h: f64, seed: u64) -> GradCheck {
    use rand::seq::SliceRandom;
    let n = task.dim();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::tasks::rng_for(seed, 9));
    let grad = task.full_gradient(params);
    let mut out = GradCheck {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst_coordinate: None,
    };
    let mut p = params.to_vec();
    for i in order {
        if out.checked == coords {
            break;
        }
        if !task.smooth_at(params, i, h) {
            out.skipped += 1;
            continue;
        }
        p[i] = params[i] + h;
        let up = task.loss(&p, Split::Train);
        p[i] = params[i] - h;
        let down = task.loss(&p, Split::Train);
        p[i] = params[i];
        let fd = (up - down) / (2.0 * h);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(GRADCHECK_FLOOR);
        let err = if err.is_nan() { f64::INFINITY } else { err };
        if err > out.max_rel_error || out.worst_coordinate.is_none() {
            out.max_rel_error = out.max_rel_error.max(err);
            out.worst_coordinate = Some(i);
        }
        out.checked += 1;
    }
    out
}
