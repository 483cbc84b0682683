//! Named property suites behind `rllc verify`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use super::{
    check_basis_independence, compare_trajectories, demo_span_convergence, gradient_check, random_conditioned_matrix,
    GradientStream, Result, Tolerance,
};
use crate::exec::{self, Execution};
use crate::numerics::Matrix;
use crate::optim::{FixedLaw, MomentumSgd, Nesterov, Optimizer, Rllc, RllcConfig, Sgd};
use crate::propagators::{Block, Propagator};
use crate::tasks::{synthetic_classification, LogisticTask, MlpTask, QuadraticTask, RosenbrockTask, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Equivalences,
    BasisIndependence,
    AbstractRules,
    SpanConvergence,
    Gradients,
    All,
}

impl Suite {
    pub const NAMES: [&'static str; 6] = [
        "equivalences",
        "basis-independence",
        "abstract-rules",
        "span-convergence",
        "gradients",
        "all",
    ];

    fn parts(self) -> Vec<Suite> {
        match self {
            Suite::All => vec![
                Suite::Equivalences,
                Suite::BasisIndependence,
                Suite::AbstractRules,
                Suite::SpanConvergence,
                Suite::Gradients,
            ],
            s => vec![s],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown suite '{0}' (expected one of: equivalences, basis-independence, abstract-rules, span-convergence, gradients, all)")]
pub struct UnknownSuite(pub String);

impl FromStr for Suite {
    type Err = UnknownSuite;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s {
            "equivalences" => Suite::Equivalences,
            "basis-independence" => Suite::BasisIndependence,
            "abstract-rules" => Suite::AbstractRules,
            "span-convergence" => Suite::SpanConvergence,
            "gradients" => Suite::Gradients,
            "all" => Suite::All,
            other => return Err(UnknownSuite(other.to_string())),
        })
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = [
            Suite::Equivalences,
            Suite::BasisIndependence,
            Suite::AbstractRules,
            Suite::SpanConvergence,
            Suite::Gradients,
            Suite::All,
        ]
        .iter()
        .position(|s| s == self)
        .unwrap();
        f.write_str(Suite::NAMES[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn at_most(name: impl Into<String>, value: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            passed: value <= tolerance,
            detail: detail.into(),
        }
    }

    fn holds(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            value: f64::NAN,
            tolerance: f64::NAN,
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w = self
            .checks
            .iter()
            .map(|c| c.name.chars().count())
            .max()
            .unwrap_or(0)
            .max(5);
        writeln!(
            f,
            "{:<6} {:<w$} {:>12} {:>12}  detail",
            "result", "check", "value", "tolerance"
        )?;
        for c in &self.checks {
            let num = |x: f64| {
                if x.is_nan() {
                    "-".to_string()
                } else {
                    format!("{x:.3e}")
                }
            };
            writeln!(
                f,
                "{:<6} {:<w$} {:>12} {:>12}  {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                num(c.value),
                num(c.tolerance),
                c.detail
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(f, "{}: {} checks, {} failed", self.suite, self.checks.len(), failed)
    }
}

/// Runs the named suite. Errors inside a check are reported as failures.
pub fn verify(suite: Suite, exec: Execution) -> SuiteReport {
    let mut checks = Vec::new();
    for part in suite.parts() {
        let result = match part {
            Suite::Equivalences => equivalences(),
            Suite::BasisIndependence => basis_independence(exec),
            Suite::AbstractRules => abstract_rules(),
            Suite::SpanConvergence => span_convergence(),
            Suite::Gradients => gradients(),
            Suite::All => unreachable!(),
        };
        match result {
            Ok(c) => checks.extend(c),
            Err(e) => checks.push(Check::holds(format!("{part}: setup"), false, e.to_string())),
        }
    }
    SuiteReport { suite, checks }
}

fn momentum_pair(beta: f64) -> Propagator {
    Propagator::momentum(beta).union(&Propagator::momentum(0.0))
}

fn equivalences() -> Result<Vec<Check>> {
    let (n, lr, beta, steps) = (10, 0.01, 0.9, 1000);
    let quad: Arc<dyn Task> = Arc::new(QuadraticTask::new(n, 100.0, 17)?);
    let streams = [
        ("quadratic", GradientStream::Task { task: quad, seed: 0 }),
        ("seeded", GradientStream::Seeded { seed: 5, scale: 1.0 }),
    ];
    let mut checks = Vec::new();
    for (sname, stream) in &streams {
        let cases: [(&str, Vec<f64>, Box<dyn Optimizer>); 3] = [
            ("SGD", vec![0.0, lr], Box::new(Sgd::new(n, lr)?)),
            ("momentum", vec![lr, 0.0], Box::new(MomentumSgd::new(n, lr, beta)?)),
            ("NAG", vec![lr * beta, lr], Box::new(Nesterov::new(n, lr, beta)?)),
        ];
        for (name, law, mut reference) in cases {
            let mut fixed = FixedLaw::new(n, momentum_pair(beta), law.clone(), 1.0)?;
            let r = compare_trajectories(&mut fixed, &mut *reference, stream, steps, Tolerance::Absolute(1e-10))?;
            checks.push(Check::at_most(
                format!(
                    "fixed law ({:.4}, {:.4}) = {name} ({sname}, {steps} steps)",
                    law[0], law[1]
                ),
                r.max_param_deviation,
                1e-10,
                "max |theta diff|",
            ));
        }
    }

    let data = Arc::new(synthetic_classification(400, 6, 3, 3.0, 2)?);
    let tasks: Vec<(Arc<dyn Task>, f64)> = vec![
        (Arc::new(QuadraticTask::new(8, 50.0, 1)?), 0.002),
        (Arc::new(RosenbrockTask::new(4)?), 1e-4),
        (Arc::new(LogisticTask::new(data, 1e-3, 32)?), 0.05),
    ];
    let propagators = [
        Propagator::momentum(0.9),
        momentum_pair(0.9),
        Propagator::jordan_momentum(2, 0.6)?,
        Propagator::complex_momentum(0.5, 0.3),
        Propagator::parse("M(0.9)+M(0.5)+M(0)")?,
    ];
    for (task, lr) in &tasks {
        for p in &propagators {
            let law0 = vec![1.0; p.dim()];
            let n = task.dim();
            let mut rllc = Rllc::new(n, p.clone(), RllcConfig::new(*lr, 0.0, 1e-8), law0.clone())?;
            let mut fixed = FixedLaw::new(n, p.clone(), law0, *lr)?;
            let stream = GradientStream::Task {
                task: task.clone(),
                seed: 3,
            };
            let r = compare_trajectories(&mut rllc, &mut fixed, &stream, 200, Tolerance::Absolute(1e-14))?;
            checks.push(Check::at_most(
                format!("RLLC c2=0 = fixed law ({}, {})", p.label(), task.name()),
                r.max_param_deviation,
                1e-14,
                "max |theta diff| over 200 steps",
            ));
        }
    }
    Ok(checks)
}

fn basis_independence(exec: Execution) -> Result<Vec<Check>> {
    let (n, steps, c1, c2) = (10, 300, 0.01, 0.001);
    let det: Arc<dyn Task> = Arc::new(QuadraticTask::new(n, 10.0, 23)?);
    let noisy: Arc<dyn Task> = Arc::new(QuadraticTask::new(n, 10.0, 23)?.with_noise(0.1));
    let streams = [
        ("deterministic quadratic", GradientStream::Task { task: det, seed: 1 }),
        ("stochastic quadratic", GradientStream::Task { task: noisy, seed: 2 }),
    ];
    let propagators = [momentum_pair(0.9), Propagator::jordan_momentum(2, 0.6)?];
    let law0 = [1.0, 1.0];
    let mut checks = Vec::new();

    for (sname, stream) in &streams {
        let r = check_basis_independence(
            &propagators[0],
            &Matrix::identity(2),
            c1,
            c2,
            &law0,
            stream,
            n,
            steps,
            Tolerance::Absolute(0.0),
        )?;
        checks.push(Check::at_most(
            format!("Q = I ({sname})"),
            r.max_param_deviation,
            0.0,
            "exact",
        ));
        let q = Matrix::diagonal(&[2.0, 0.5]);
        let r = check_basis_independence(
            &propagators[0],
            &q,
            c1,
            c2,
            &law0,
            stream,
            n,
            steps,
            Tolerance::Relative(1e-8),
        )?;
        checks.push(Check::at_most(
            format!("Q = diag(2, 0.5) ({sname})"),
            r.max_relative_deviation,
            1e-8,
            "relative deviation",
        ));
    }

    let seeds: Vec<u64> = (0..20).collect();
    for p in &propagators {
        for (sname, stream) in &streams {
            let reports = exec::map(exec, &seeds, |&seed| {
                let q = random_conditioned_matrix(2, 10.0, seed);
                check_basis_independence(p, &q, c1, c2, &law0, stream, n, steps, Tolerance::Relative(1e-6))
            });
            let mut worst = 0.0f64;
            let mut deficient = 0;
            let mut floor = f64::INFINITY;
            for r in reports {
                let r = r?;
                worst = worst.max(r.max_relative_deviation);
                deficient += r.deficient_steps;
                floor = floor.min(r.rank_floor.unwrap_or(0.0));
            }
            checks.push(Check::at_most(
                format!("20 random Q, cond < 10, {} ({sname})", p.label()),
                worst,
                1e-6,
                format!("relative deviation; rank floor {floor:.2e}, {deficient} rank-deficient steps"),
            ));
        }
    }
    Ok(checks)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Closed form of `(a^T B^i)_unit` and the magnitude scale it is judged against.
fn closed_form_point(block: &Block, unit: usize, i: usize) -> Option<(f64, f64)> {
    match *block {
        Block::Jordan { lambda, .. } => {
            if i < unit {
                return Some((0.0, 0.0));
            }
            let v = binomial(i, unit) * lambda.powi((i - unit) as i32);
            Some((v, v.abs()))
        }
        Block::ComplexJordan { re, im, .. } => {
            let level = unit / 2;
            if i < level {
                return Some((0.0, 0.0));
            }
            let e = (i - level) as i32;
            let (r, theta) = (re.hypot(im), im.atan2(re));
            let modulus = binomial(i, level) * r.powi(e);
            let v = if unit.is_multiple_of(2) {
                modulus * (e as f64 * theta).cos()
            } else {
                -modulus * (e as f64 * theta).sin()
            };
            Some((v, modulus))
        }
        Block::Custom => None,
    }
}

fn locate(p: &Propagator, unit: usize) -> Option<(&Block, usize)> {
    let mut start = 0;
    for b in p.blocks() {
        let size = b.units()?;
        if unit < start + size {
            return Some((b, unit - start));
        }
        start += size;
    }
    None
}

/// Closed-form abstract rule of one unit: `lambda^i` for momentum,
/// `C(i, u) lambda^(i-u)` for unit `u` of a Jordan block, and the real part
/// and negated imaginary part of `C(i, u) z^(i-u)` for complex blocks.
/// `None` for propagators without a canonical block structure.
pub fn closed_form_rule(p: &Propagator, unit: usize, len: usize) -> Option<Vec<f64>> {
    let (block, local) = locate(p, unit)?;
    (0..len)
        .map(|i| closed_form_point(block, local, i).map(|(v, _)| v))
        .collect()
}

/// Abstract rule obtained by feeding one unit gradient into the memory
/// update and then zeros.
pub fn impulse_response(p: &Propagator, unit: usize, len: usize) -> Result<Vec<f64>> {
    let mut m = Matrix::zeros(1, p.dim());
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        p.advance(&mut m, &[if t == 0 { 1.0 } else { 0.0 }])?;
        out.push(m.get(0, unit));
    }
    Ok(out)
}

fn abstract_rules() -> Result<Vec<Check>> {
    const LEN: usize = 60;
    let specs = [
        "M(0)",
        "M(0.5)",
        "M(0.9)",
        "M(-0.7)",
        "Mk(2,0.3)",
        "Mk(3,0.9)",
        "Mk(4,0.6)",
        "CM(0.3,0.2)",
        "CM(0,0.9)",
        "CMk(2,0.3,0.2)",
        "CMk(3,0.5,-0.4)",
        "M(0.9)+M(0)+Mk(2,0.6)+CMk(2,0.3,0.2)",
    ];
    let mut checks = Vec::new();
    for spec in specs {
        let p = Propagator::parse(spec)?;
        let rules = p.abstract_rules(LEN)?;
        let (mut closed_err, mut impulse_err) = (0.0f64, 0.0f64);
        for u in 0..p.dim() {
            let (block, local) = locate(&p, u).expect("canonical blocks");
            let impulse = impulse_response(&p, u, LEN)?;
            for i in 0..LEN {
                let got = rules.get(i, u);
                let (want, scale) = closed_form_point(block, local, i).expect("canonical blocks");
                let scale = scale.max(f64::MIN_POSITIVE);
                closed_err = closed_err.max((got - want).abs() / scale);
                impulse_err = impulse_err.max((got - impulse[i]).abs() / scale);
            }
        }
        checks.push(Check::at_most(
            format!("{} closed form, {LEN} positions", p.label()),
            closed_err,
            1e-10,
            "relative to closed-form magnitude",
        ));
        checks.push(Check::at_most(
            format!("{} impulse response, {LEN} positions", p.label()),
            impulse_err,
            1e-12,
            "relative to closed-form magnitude",
        ));
    }
    let alpha: f64 = 0.3;
    let r = Propagator::jordan_momentum(2, alpha)?.abstract_rule(1, 5)?.coefficients;
    let golden = [0.0, 1.0, 2.0 * alpha, 3.0 * alpha * alpha, 4.0 * alpha.powi(3)];
    let err = r.iter().zip(golden).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    checks.push(Check::at_most(
        "M2(0.3) unit 2 = 0, 1, 2a, 3a^2, 4a^3",
        err,
        1e-15,
        "absolute",
    ));
    Ok(checks)
}

fn span_convergence() -> Result<Vec<Check>> {
    let pts = demo_span_convergence(0.75, &[0.1, 0.05, 0.01], 50)?;
    let angles: Vec<String> = pts.iter().map(|p| format!("{:.3e}", p.angle)).collect();
    let decreasing = pts.windows(2).all(|w| w[1].angle < w[0].angle) && pts.iter().all(|p| p.angle > 0.0);
    let mut checks = vec![Check::holds(
        "angle(M(0.75+e)+M(0.75-e), M2(0.75)) decreasing over e = 0.1, 0.05, 0.01",
        decreasing,
        format!("angles {}", angles.join(", ")),
    )];
    let tiny = demo_span_convergence(0.75, &[0.001], 50)?[0];
    checks.push(Check::holds(
        "e = 0.001 flagged as ill-conditioned",
        tiny.unstable,
        format!("Gram condition {:.3e}, angle {:.3e}", tiny.gram_condition, tiny.angle),
    ));
    checks.push(Check::holds(
        "e = 0 rejected",
        demo_span_convergence(0.75, &[0.0], 50).is_err(),
        "units coincide",
    ));
    Ok(checks)
}

fn gradients() -> Result<Vec<Check>> {
    const H: f64 = 1e-6;
    const COORDS: usize = 20;
    let mut checks = Vec::new();
    let mut run = |name: String, task: &dyn Task, params: &[f64], tol: f64| {
        let r = gradient_check(task, params, COORDS, H, 99);
        let enough = r.checked == COORDS.min(task.dim());
        checks.push(Check {
            name,
            value: r.max_rel_error,
            tolerance: tol,
            passed: enough && r.max_rel_error <= tol,
            detail: format!("{} coordinates, {} skipped at kinks", r.checked, r.skipped),
        });
    };
    let perturbed = |task: &dyn Task, seed: u64, scale: f64| -> Vec<f64> {
        let base = task.initial_params(seed);
        base.iter()
            .enumerate()
            .map(|(i, x)| x + scale * ((i as f64 * 1.7 + seed as f64).sin()))
            .collect()
    };

    let quad = QuadraticTask::new(10, 100.0, 4)?;
    run("quadratic(n=10, cond=100)".into(), &quad, &quad.initial_params(1), 1e-6);
    let noisy = QuadraticTask::new(10, 100.0, 4)?.with_noise(0.5);
    run(
        "stochastic quadratic (expected gradient)".into(),
        &noisy,
        &noisy.initial_params(2),
        1e-6,
    );
    let rosen = RosenbrockTask::new(10)?;
    run(
        "rosenbrock(n=10) at start".into(),
        &rosen,
        &rosen.initial_params(0),
        1e-6,
    );
    run(
        "rosenbrock(n=10) perturbed".into(),
        &rosen,
        &perturbed(&rosen, 3, 0.3),
        1e-6,
    );

    let data = Arc::new(synthetic_classification(300, 10, 3, 2.0, 8)?);
    let logistic = LogisticTask::new(data.clone(), 1e-2, 32)?;
    run(
        "logistic(l2=0.01)".into(),
        &logistic,
        &perturbed(&logistic, 5, 0.2),
        1e-5,
    );
    let mlp = MlpTask::new(data, &[16, 8], 32)?;
    run(
        "mlp(hidden=[16,8]) non-kink coordinates".into(),
        &mlp,
        &mlp.initial_params(6),
        1e-3,
    );
    Ok(checks)
}
