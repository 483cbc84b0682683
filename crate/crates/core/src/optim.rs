//! Optimizers as state-update / parameter-update pairs.
//!
//! Every optimizer consumes one gradient per [`Optimizer::step`] and returns
//! the parameter delta for that step; the caller owns the parameters. The
//! classical baselines live next to the two linear-memory families:
//! [`FixedLaw`] (constant learning law) and [`Rllc`] (learning law corrected
//! retrospectively from each new gradient).

use crate::numerics::{self, Matrix, NumericsError};
use crate::propagators::{Propagator, PropagatorError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OptimError {
    #[error("gradient has length {found}, optimizer expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("learning law has length {found}, memory has {expected} units")]
    LawMismatch { expected: usize, found: usize },
    #[error("non-finite gradient entry at index {index}")]
    NonFiniteGradient { index: usize },
    #[error("memory rule returned a {found:?} matrix, expected {expected:?}")]
    RuleOutput {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

/// Snapshot of a law-based optimizer: the learning law and the norm of every
/// memory unit.
#[derive(Debug, Clone, PartialEq)]
pub struct LawProbe {
    pub law: Vec<f64>,
    pub column_norms: Vec<f64>,
}

pub trait Optimizer: Send {
    /// Parameter dimension `n`.
    fn dim(&self) -> usize;

    /// Feeds one gradient and returns the parameter delta.
    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>>;

    fn label(&self) -> String;

    /// Learning law and memory norms, for optimizers that have them.
    fn probe(&self) -> Option<LawProbe> {
        None
    }

    /// Diagnostics of the most recent learning-law correction (RLLC only).
    fn last_correction(&self) -> Option<&Correction> {
        None
    }
}

impl<O: Optimizer + ?Sized> Optimizer for Box<O> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        (**self).step(grad)
    }
    fn label(&self) -> String {
        (**self).label()
    }
    fn probe(&self) -> Option<LawProbe> {
        (**self).probe()
    }
    fn last_correction(&self) -> Option<&Correction> {
        (**self).last_correction()
    }
}

fn check_grad(expected: usize, grad: &[f64]) -> Result<()> {
    if grad.len() != expected {
        return Err(OptimError::DimensionMismatch {
            expected,
            found: grad.len(),
        });
    }
    if let Some(index) = grad.iter().position(|x| !x.is_finite()) {
        return Err(OptimError::NonFiniteGradient { index });
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(OptimError::InvalidHyperparameter(format!(
            "{name} must be positive, got {v}"
        )))
    }
}

fn non_negative(name: &str, v: f64) -> Result<f64> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(OptimError::InvalidHyperparameter(format!(
            "{name} must be non-negative, got {v}"
        )))
    }
}

fn unit_interval(name: &str, v: f64) -> Result<f64> {
    if (0.0..1.0).contains(&v) {
        Ok(v)
    } else {
        Err(OptimError::InvalidHyperparameter(format!(
            "{name} must lie in [0, 1), got {v}"
        )))
    }
}

/// Plain gradient descent: `delta = -lr g`.
#[derive(Debug, Clone)]
pub struct Sgd {
    dim: usize,
    lr: f64,
}

impl Sgd {
    pub fn new(dim: usize, lr: f64) -> Result<Self> {
        Ok(Self {
            dim,
            lr: positive("lr", lr)?,
        })
    }
}

impl Optimizer for Sgd {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.dim, grad)?;
        Ok(grad.iter().map(|g| -self.lr * g).collect())
    }

    fn label(&self) -> String {
        format!("SGD(lr={})", self.lr)
    }
}

/// Heavy-ball momentum: `m <- beta m + g`, `delta = -lr m`.
#[derive(Debug, Clone)]
pub struct MomentumSgd {
    lr: f64,
    beta: f64,
    velocity: Vec<f64>,
}

impl MomentumSgd {
    pub fn new(dim: usize, lr: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            lr: positive("lr", lr)?,
            beta: unit_interval("beta", beta)?,
            velocity: vec![0.0; dim],
        })
    }
}

impl Optimizer for MomentumSgd {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.velocity.len(), grad)?;
        Ok(self
            .velocity
            .iter_mut()
            .zip(grad)
            .map(|(m, g)| {
                *m = self.beta * *m + g;
                -self.lr * *m
            })
            .collect())
    }

    fn label(&self) -> String {
        format!("Momentum(lr={},beta={})", self.lr, self.beta)
    }
}

/// Nesterov accelerated gradient in velocity form:
/// `v <- beta v + lr g`, `delta = -(lr g + beta v)`.
#[derive(Debug, Clone)]
pub struct Nesterov {
    lr: f64,
    beta: f64,
    velocity: Vec<f64>,
}

impl Nesterov {
    pub fn new(dim: usize, lr: f64, beta: f64) -> Result<Self> {
        Ok(Self {
            lr: positive("lr", lr)?,
            beta: unit_interval("beta", beta)?,
            velocity: vec![0.0; dim],
        })
    }
}

impl Optimizer for Nesterov {
    fn dim(&self) -> usize {
        self.velocity.len()
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.velocity.len(), grad)?;
        Ok(self
            .velocity
            .iter_mut()
            .zip(grad)
            .map(|(v, g)| {
                *v = self.beta * *v + self.lr * g;
                -(self.lr * g + self.beta * *v)
            })
            .collect())
    }

    fn label(&self) -> String {
        format!("NAG(lr={},beta={})", self.lr, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(dim: usize, cfg: AdamConfig) -> Result<Self> {
        positive("lr", cfg.lr)?;
        unit_interval("beta1", cfg.beta1)?;
        unit_interval("beta2", cfg.beta2)?;
        non_negative("eps", cfg.eps)?;
        Ok(Self {
            cfg,
            first: vec![0.0; dim],
            second: vec![0.0; dim],
            t: 0,
        })
    }
}

impl Optimizer for Adam {
    fn dim(&self) -> usize {
        self.first.len()
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.first.len(), grad)?;
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        Ok(self
            .first
            .iter_mut()
            .zip(self.second.iter_mut())
            .zip(grad)
            .map(|((m, v), g)| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                -lr * m_hat / (v_hat.sqrt() + eps)
            })
            .collect())
    }

    fn label(&self) -> String {
        format!("Adam(lr={})", self.cfg.lr)
    }
}

/// Linear memory with a constant learning law:
/// `M <- M B + g a^T`, `delta = -base_lr M L`.
#[derive(Debug, Clone)]
pub struct FixedLaw {
    propagator: Propagator,
    memory: Matrix,
    law: Vec<f64>,
    base_lr: f64,
}

impl FixedLaw {
    pub fn new(dim: usize, propagator: Propagator, law: Vec<f64>, base_lr: f64) -> Result<Self> {
        if law.len() != propagator.dim() {
            return Err(OptimError::LawMismatch {
                expected: propagator.dim(),
                found: law.len(),
            });
        }
        Ok(Self {
            memory: Matrix::zeros(dim.max(1), propagator.dim()),
            propagator,
            law,
            base_lr: positive("base_lr", base_lr)?,
        })
    }

    pub fn memory(&self) -> &Matrix {
        &self.memory
    }
}

impl Optimizer for FixedLaw {
    fn dim(&self) -> usize {
        self.memory.rows()
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.memory.rows(), grad)?;
        self.propagator.advance(&mut self.memory, grad)?;
        let mut delta = self.memory.matvec(&self.law)?;
        delta.iter_mut().for_each(|d| *d *= -self.base_lr);
        Ok(delta)
    }

    fn label(&self) -> String {
        format!("Fixed[{}](lr={})", self.propagator.label(), self.base_lr)
    }

    fn probe(&self) -> Option<LawProbe> {
        Some(LawProbe {
            law: self.law.clone(),
            column_norms: self.memory.column_norms(),
        })
    }
}

/// A memory update rule `(M, H, g) -> (M', H')` with any hidden state `H`
/// kept inside the implementor.
pub trait MemoryRule: Send {
    /// Number of memory units `k`.
    fn units(&self) -> usize;

    /// Replaces `memory` by the updated memory for gradient `grad`. The
    /// result must keep the `n x k` shape.
    fn update(&mut self, memory: &mut Matrix, grad: &[f64]) -> Result<()>;

    fn label(&self) -> String;
}

/// The linear rule `M <- M B + g a^T` of a propagator.
#[derive(Debug, Clone)]
pub struct LinearMemory(pub Propagator);

impl MemoryRule for LinearMemory {
    fn units(&self) -> usize {
        self.0.dim()
    }

    fn update(&mut self, memory: &mut Matrix, grad: &[f64]) -> Result<()> {
        Ok(self.0.advance(memory, grad)?)
    }

    fn label(&self) -> String {
        self.0.label().to_string()
    }
}

/// Memory rule backed by a closure returning the new memory matrix.
pub struct FnRule<F> {
    units: usize,
    label: String,
    f: F,
}

impl<F> FnRule<F>
where
    F: FnMut(&Matrix, &[f64]) -> Matrix + Send,
{
    pub fn new(units: usize, label: impl Into<String>, f: F) -> Self {
        Self {
            units,
            label: label.into(),
            f,
        }
    }
}

impl<F> MemoryRule for FnRule<F>
where
    F: FnMut(&Matrix, &[f64]) -> Matrix + Send,
{
    fn units(&self) -> usize {
        self.units
    }

    fn update(&mut self, memory: &mut Matrix, grad: &[f64]) -> Result<()> {
        *memory = (self.f)(memory, grad);
        Ok(())
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Single memory unit holding the descent direction (negated delta) of
/// another optimizer's most recent step. With law `(1)` and `c1 = 1` the RLLC
/// wrapper reproduces the inner optimizer; `c2 > 0` turns the law into an
/// adaptive learning rate for it.
pub struct LastStepRule<O> {
    inner: O,
}

impl<O: Optimizer> LastStepRule<O> {
    pub fn new(inner: O) -> Self {
        Self { inner }
    }
}

impl<O: Optimizer> MemoryRule for LastStepRule<O> {
    fn units(&self) -> usize {
        1
    }

    fn update(&mut self, memory: &mut Matrix, grad: &[f64]) -> Result<()> {
        let delta = self.inner.step(grad)?;
        let mut col = Matrix::zeros(delta.len().max(1), 1);
        for (i, d) in delta.iter().enumerate() {
            col.set(i, 0, -d);
        }
        *memory = col;
        Ok(())
    }

    fn label(&self) -> String {
        format!("last-step[{}]", self.inner.label())
    }
}

/// Outcome of one learning-law correction `L <- L + c2 M^+ g`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    /// `M^+ g` for the memory before this step's update.
    pub coefficients: Vec<f64>,
    /// `<p, g>` where `p = M (M^+ g)` is the projection of `g` onto the
    /// memory span.
    pub alignment: f64,
    /// `<p, p>`.
    pub projection_sq: f64,
    /// Smallest over largest eigenvalue of `M^T M`; zero for empty memory.
    pub rank_proxy: f64,
    /// The unregularized system was singular and the correction was skipped.
    pub skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RllcConfig {
    pub c1: f64,
    pub c2: f64,
    pub epsilon: f64,
}

impl RllcConfig {
    pub fn new(c1: f64, c2: f64, epsilon: f64) -> Self {
        Self { c1, c2, epsilon }
    }
}

/// Retrospective learning-law correction around any memory rule.
///
/// Each step runs, in this order:
/// 1. `L <- L + c2 (M^T M + eps I)^{-1} M^T g` using the memory from the
///    previous step,
/// 2. `M <- U(M, g)`,
/// 3. `delta = -c1 M L`.
///
/// With `eps == 0` a rank-deficient memory has no well-defined correction;
/// the step then leaves `L` unchanged and records `skipped`.
pub struct Rllc<R = LinearMemory> {
    rule: R,
    memory: Matrix,
    law: Vec<f64>,
    cfg: RllcConfig,
    steps: usize,
    last: Option<Correction>,
}

impl Rllc<LinearMemory> {
    pub fn new(dim: usize, propagator: Propagator, cfg: RllcConfig, law0: Vec<f64>) -> Result<Self> {
        Self::with_rule(dim, LinearMemory(propagator), cfg, law0)
    }
}

impl<R: MemoryRule> Rllc<R> {
    pub fn with_rule(dim: usize, rule: R, cfg: RllcConfig, law0: Vec<f64>) -> Result<Self> {
        let k = rule.units();
        if k == 0 {
            return Err(OptimError::InvalidHyperparameter("memory rule has no units".into()));
        }
        if law0.len() != k {
            return Err(OptimError::LawMismatch {
                expected: k,
                found: law0.len(),
            });
        }
        positive("c1", cfg.c1)?;
        non_negative("c2", cfg.c2)?;
        non_negative("epsilon", cfg.epsilon)?;
        if dim == 0 {
            return Err(OptimError::InvalidHyperparameter(
                "parameter dimension must be positive".into(),
            ));
        }
        Ok(Self {
            rule,
            memory: Matrix::zeros(dim, k),
            law: law0,
            cfg,
            steps: 0,
            last: None,
        })
    }

    /// Replaces the current memory matrix, for constructing specific states.
    pub fn set_memory(&mut self, memory: Matrix) -> Result<()> {
        if memory.shape() != self.memory.shape() {
            return Err(OptimError::RuleOutput {
                expected: self.memory.shape(),
                found: memory.shape(),
            });
        }
        self.memory = memory;
        Ok(())
    }

    pub fn memory(&self) -> &Matrix {
        &self.memory
    }

    pub fn law(&self) -> &[f64] {
        &self.law
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn config(&self) -> RllcConfig {
        self.cfg
    }

    fn correct_law(&mut self, grad: &[f64]) -> Result<Correction> {
        let solved = numerics::pinv_system(&self.memory, grad, self.cfg.epsilon);
        let (coefficients, gram, skipped) = match solved {
            Ok((x, gram)) => (x, gram, false),
            Err(NumericsError::Singular { .. }) if self.cfg.epsilon == 0.0 => {
                (vec![0.0; self.law.len()], self.memory.gram(), true)
            }
            Err(e) => return Err(e.into()),
        };
        let eig = numerics::symmetric_eigenvalues(&gram)?;
        let top = eig.last().copied().unwrap_or(0.0);
        let rank_proxy = if top > 0.0 { (eig[0] / top).max(0.0) } else { 0.0 };
        let p = self.memory.matvec(&coefficients)?;
        let alignment = numerics::dot(&p, grad);
        let projection_sq = numerics::dot(&p, &p);
        for (l, c) in self.law.iter_mut().zip(&coefficients) {
            *l += self.cfg.c2 * c;
        }
        Ok(Correction {
            coefficients,
            alignment,
            projection_sq,
            rank_proxy,
            skipped,
        })
    }
}

impl<R: MemoryRule> Optimizer for Rllc<R> {
    fn dim(&self) -> usize {
        self.memory.rows()
    }

    fn step(&mut self, grad: &[f64]) -> Result<Vec<f64>> {
        check_grad(self.memory.rows(), grad)?;
        let correction = self.correct_law(grad)?;
        let expected = self.memory.shape();
        self.rule.update(&mut self.memory, grad)?;
        if self.memory.shape() != expected {
            return Err(OptimError::RuleOutput {
                expected,
                found: self.memory.shape(),
            });
        }
        let mut delta = self.memory.matvec(&self.law)?;
        delta.iter_mut().for_each(|d| *d *= -self.cfg.c1);
        self.steps += 1;
        self.last = Some(correction);
        Ok(delta)
    }

    fn label(&self) -> String {
        format!("RLLC[{}](c1={},c2={})", self.rule.label(), self.cfg.c1, self.cfg.c2)
    }

    fn probe(&self) -> Option<LawProbe> {
        Some(LawProbe {
            law: self.law.clone(),
            column_norms: self.memory.column_norms(),
        })
    }

    fn last_correction(&self) -> Option<&Correction> {
        self.last.as_ref()
    }
}
