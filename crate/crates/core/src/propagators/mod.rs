//! Linear memory-update rules `M <- M B + g a^T` and their algebra.
//!
//! A [`Propagator`] bundles the transition matrix `B` and injection vector
//! `a`. Column `j` of the memory matrix is memory unit `j`; with the
//! row-vector convention above, `B[i][j]` is the weight with which unit `i`
//! feeds unit `j` on every step.

mod expr;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::numerics::{self, Matrix, NumericsError};

pub use expr::{parse, ParseError};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PropagatorError {
    #[error("Jordan block size must be at least 1")]
    ZeroBlockSize,
    #[error("memory unit {unit} out of range for propagator of dimension {dim}")]
    UnitOutOfRange { unit: usize, dim: usize },
    #[error("abstract rule length must be at least 1")]
    EmptyRule,
    #[error("span length {len} is shorter than propagator dimension {dim}")]
    SpanTooShort { len: usize, dim: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

pub type Result<T> = std::result::Result<T, PropagatorError>;

/// Canonical building block a propagator was assembled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Block {
    /// Real Jordan block `M_m(lambda)`; `size == 1` is plain momentum.
    Jordan { size: usize, lambda: f64 },
    /// Complex Jordan block `CM_m(re + im i)`; occupies `2 * size` units.
    ComplexJordan { size: usize, re: f64, im: f64 },
    /// Anything produced by conjugation or direct construction.
    Custom,
}

impl Block {
    /// Number of memory units the block occupies.
    pub fn units(&self) -> Option<usize> {
        match *self {
            Block::Jordan { size, .. } => Some(size),
            Block::ComplexJordan { size, .. } => Some(2 * size),
            Block::Custom => None,
        }
    }

    fn expr(&self) -> Option<String> {
        match *self {
            Block::Jordan { size: 1, lambda } => Some(format!("M({lambda})")),
            Block::Jordan { size, lambda } => Some(format!("Mk({size},{lambda})")),
            Block::ComplexJordan { size: 1, re, im } => Some(format!("CM({re},{im})")),
            Block::ComplexJordan { size, re, im } => Some(format!("CMk({size},{re},{im})")),
            Block::Custom => None,
        }
    }

    fn label(&self) -> String {
        match *self {
            Block::Jordan { size: 1, lambda } => format!("M({lambda})"),
            Block::Jordan { size, lambda } => format!("M{size}({lambda})"),
            Block::ComplexJordan { size: 1, re, im } => format!("CM({})", complex_label(re, im)),
            Block::ComplexJordan { size, re, im } => format!("CM{size}({})", complex_label(re, im)),
            Block::Custom => "custom".to_string(),
        }
    }
}

fn complex_label(re: f64, im: f64) -> String {
    match (re == 0.0, im < 0.0) {
        (true, _) => format!("{im}i"),
        (false, true) => format!("{re}-{}i", -im),
        (false, false) => format!("{re}+{im}i"),
    }
}

/// A `k`-dimensional linear memory-update rule `(B, a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Propagator {
    transition: Matrix,
    injection: Vec<f64>,
    label: String,
    blocks: Vec<Block>,
}

impl Propagator {
    /// Arbitrary `(B, a)` pair.
    pub fn new(transition: Matrix, injection: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if !transition.is_square() || transition.rows() != injection.len() {
            return Err(PropagatorError::DimensionMismatch(format!(
                "transition {:?} with injection of length {}",
                transition.shape(),
                injection.len()
            )));
        }
        if injection.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite {
                what: "injection vector",
            }
            .into());
        }
        Ok(Self {
            transition,
            injection,
            label: label.into(),
            blocks: vec![Block::Custom],
        })
    }

    fn from_block(transition: Matrix, injection: Vec<f64>, block: Block) -> Self {
        Self {
            transition,
            injection,
            label: block.label(),
            blocks: vec![block],
        }
    }

    /// Real momentum `M(beta)`: `m <- beta m + g`.
    pub fn momentum(beta: f64) -> Self {
        Self::from_block(
            Matrix::diagonal(&[beta]),
            vec![1.0],
            Block::Jordan { size: 1, lambda: beta },
        )
    }

    /// Complex momentum `CM(re + im i)`: a pair of units holding the real and
    /// imaginary parts of a complex momentum vector.
    ///
    /// `B = [[re, -im], [im, re]]` and the gradient enters the first unit.
    /// Under the `M B` row convention the second unit carries the imaginary
    /// part of the conjugate recurrence `m <- g + conj(gamma) m`, which has
    /// the same real part.
    pub fn complex_momentum(re: f64, im: f64) -> Self {
        Self::complex_jordan_momentum(1, re, im).expect("size 1 is valid")
    }

    /// Jordan block propagator `M_m(lambda)`.
    ///
    /// Unit 1 is the momentum of the gradient, unit `i` the momentum of unit
    /// `i - 1`; `B` has `lambda` on the diagonal and ones directly above it.
    pub fn jordan_momentum(size: usize, lambda: f64) -> Result<Self> {
        if size == 0 {
            return Err(PropagatorError::ZeroBlockSize);
        }
        let mut b = Matrix::diagonal(&vec![lambda; size]);
        for i in 1..size {
            b.set(i - 1, i, 1.0);
        }
        let mut a = vec![0.0; size];
        a[0] = 1.0;
        Ok(Self::from_block(b, a, Block::Jordan { size, lambda }))
    }

    /// Complex Jordan block propagator `CM_m(re + im i)` of dimension `2m`.
    pub fn complex_jordan_momentum(size: usize, re: f64, im: f64) -> Result<Self> {
        if size == 0 {
            return Err(PropagatorError::ZeroBlockSize);
        }
        let k = 2 * size;
        let mut b = Matrix::zeros(k, k);
        for blk in 0..size {
            let o = 2 * blk;
            b.set(o, o, re);
            b.set(o, o + 1, -im);
            b.set(o + 1, o, im);
            b.set(o + 1, o + 1, re);
            if blk > 0 {
                b.set(o - 2, o, 1.0);
                b.set(o - 1, o + 1, 1.0);
            }
        }
        let mut a = vec![0.0; k];
        a[0] = 1.0;
        Ok(Self::from_block(b, a, Block::ComplexJordan { size, re, im }))
    }

    /// Union `self ⊕ other`: block-diagonal transition, concatenated
    /// injection, units evolving independently.
    pub fn union(&self, other: &Propagator) -> Propagator {
        let mut injection = self.injection.clone();
        injection.extend_from_slice(&other.injection);
        let mut blocks = self.blocks.clone();
        blocks.extend(other.blocks.iter().cloned());
        Propagator {
            transition: self.transition.block_diag(&other.transition),
            injection,
            label: format!("{}⊕{}", self.label, other.label),
            blocks,
        }
    }

    /// Union of a non-empty sequence of propagators, left to right.
    pub fn union_all<'a>(parts: impl IntoIterator<Item = &'a Propagator>) -> Option<Propagator> {
        let mut iter = parts.into_iter();
        let first = iter.next()?.clone();
        Some(iter.fold(first, |acc, p| acc.union(p)))
    }

    pub fn parse(expr: &str) -> Result<Self> {
        Ok(parse(expr)?)
    }

    pub fn dim(&self) -> usize {
        self.injection.len()
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn injection(&self) -> &[f64] {
        &self.injection
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Expression in the `M(..)+CM(..)+Mk(..)+CMk(..)` grammar that parses
    /// back to this propagator, if it was built from canonical blocks.
    pub fn to_expr(&self) -> Option<String> {
        let parts: Option<Vec<String>> = self.blocks.iter().map(Block::expr).collect();
        parts.map(|p| p.join("+"))
    }

    /// Decay `beta` if this is exactly `M(beta) ⊕ M(0)`, the pair on which a
    /// fixed learning law can express SGD, momentum SGD and NAG.
    pub fn momentum_sgd_pair(&self) -> Option<f64> {
        match self.blocks.as_slice() {
            [Block::Jordan { size: 1, lambda }, Block::Jordan { size: 1, lambda: zero }] if *zero == 0.0 => {
                Some(*lambda)
            }
            _ => None,
        }
    }

    /// One memory update `M <- M B + g a^T`, in place.
    pub fn advance(&self, memory: &mut Matrix, grad: &[f64]) -> Result<()> {
        let k = self.dim();
        if memory.cols() != k || memory.rows() != grad.len() {
            return Err(PropagatorError::DimensionMismatch(format!(
                "memory {:?} with gradient of length {} for a {}-unit propagator",
                memory.shape(),
                grad.len(),
                k
            )));
        }
        let b = &self.transition;
        let mut scratch = vec![0.0; k];
        for (i, &gi) in grad.iter().enumerate() {
            let row = memory.row_mut(i);
            for (j, s) in scratch.iter_mut().enumerate() {
                *s = gi * self.injection[j];
            }
            for (p, &mp) in row.iter().enumerate() {
                if mp == 0.0 {
                    continue;
                }
                for (s, &bpj) in scratch.iter_mut().zip(b.row(p)) {
                    *s += mp * bpj;
                }
            }
            row.copy_from_slice(&scratch);
        }
        Ok(())
    }

    /// First `len` terms of the abstract rule `(a^T B^i)_unit` of one unit.
    pub fn abstract_rule(&self, unit: usize, len: usize) -> Result<AbstractRule> {
        if unit >= self.dim() {
            return Err(PropagatorError::UnitOutOfRange { unit, dim: self.dim() });
        }
        let all = self.abstract_rules(len)?;
        Ok(AbstractRule {
            unit,
            coefficients: all.column(unit),
        })
    }

    /// All abstract rules at once: row `i` of the result is `a^T B^i`.
    pub fn abstract_rules(&self, len: usize) -> Result<Matrix> {
        if len == 0 {
            return Err(PropagatorError::EmptyRule);
        }
        let k = self.dim();
        let mut rows = Vec::with_capacity(len * k);
        let mut row = self.injection.clone();
        for _ in 0..len {
            rows.extend_from_slice(&row);
            row = self.transition.left_mul_row(&row)?;
        }
        Ok(Matrix::new(len, k, rows)?)
    }

    /// Spectral norm `sigma_max(B)` by power iteration on `B^T B`.
    ///
    /// This bounds the spectral radius from above and is the quantity that
    /// must stay below one for old gradients to fade.
    pub fn spectral_norm(&self) -> SpectralEstimate {
        spectral_norm(&self.transition)
    }

    /// Change of basis: `B' = Q^{-1} B Q`, `a' = Q^T a`.
    ///
    /// This is the rule under which memory `M Q` and law `Q^{-1} L` reproduce
    /// the original optimization process.
    pub fn conjugate(&self, q: &Matrix) -> Result<Propagator> {
        if q.shape() != (self.dim(), self.dim()) {
            return Err(PropagatorError::DimensionMismatch(format!(
                "basis change {:?} for a {}-unit propagator",
                q.shape(),
                self.dim()
            )));
        }
        let q_inv = numerics::invert(q)?;
        let b = numerics::matrix_multiply(&numerics::matrix_multiply(&q_inv, &self.transition)?, q)?;
        let a = q.tr_matvec(&self.injection)?;
        Ok(Propagator {
            transition: b,
            injection: a,
            label: format!("Q^-1({})Q", self.label),
            blocks: vec![Block::Custom],
        })
    }
}

impl fmt::Display for Propagator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

/// Truncated abstract rule of one memory unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractRule {
    pub unit: usize,
    pub coefficients: Vec<f64>,
}

impl AbstractRule {
    /// Magnitude of the last retained coefficient.
    pub fn tail(&self) -> f64 {
        self.coefficients.last().map_or(0.0, |c| c.abs())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

const POWER_ITERATION_LIMIT: usize = 10_000;

pub fn spectral_norm(b: &Matrix) -> SpectralEstimate {
    let k = b.cols();
    let bt = b.transpose();
    let mut v: Vec<f64> = (0..k).map(|i| 1.0 + 0.1 * (i as f64 + 1.0).sqrt()).collect();
    let n0 = numerics::norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut prev = f64::NAN;
    let mut stable = 0;
    for it in 1..=POWER_ITERATION_LIMIT {
        let bv = b.matvec(&v).expect("square");
        let rayleigh = numerics::dot(&bv, &bv);
        let w = bt.matvec(&bv).expect("square");
        let wn = numerics::norm(&w);
        if wn == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                converged: true,
                iterations: it,
            };
        }
        if (rayleigh - prev).abs() <= 1e-16 * rayleigh {
            stable += 1;
            if stable >= 3 {
                return SpectralEstimate {
                    value: rayleigh.sqrt(),
                    converged: true,
                    iterations: it,
                };
            }
        } else {
            stable = 0;
        }
        prev = rayleigh;
        v = w.into_iter().map(|x| x / wn).collect();
    }
    SpectralEstimate {
        value: prev.sqrt(),
        converged: false,
        iterations: POWER_ITERATION_LIMIT,
    }
}

/// Largest principal angle between the spans of two propagators' truncated
/// abstract rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpanAngle {
    pub radians: f64,
    pub rank_p: usize,
    pub rank_q: usize,
    /// Either span had fewer independent rules than units.
    pub rank_deficient: bool,
}

/// Columns whose Gram-Schmidt residual drops below this fraction of their
/// norm are treated as dependent.
pub const SPAN_RANK_RTOL: f64 = 1e-10;

pub fn span_angle(p: &Propagator, q: &Propagator, len: usize) -> Result<SpanAngle> {
    let dim = p.dim().max(q.dim());
    if len < dim {
        return Err(PropagatorError::SpanTooShort { len, dim });
    }
    let bp = numerics::orthonormal_basis(&p.abstract_rules(len)?, SPAN_RANK_RTOL);
    let bq = numerics::orthonormal_basis(&q.abstract_rules(len)?, SPAN_RANK_RTOL);
    let rank_deficient = bp.len() < p.dim() || bq.len() < q.dim();
    let (small, large) = if bp.len() <= bq.len() { (&bp, &bq) } else { (&bq, &bp) };
    let radians = if small.is_empty() {
        0.0
    } else {
        // sin of the largest angle is the norm of what the smaller span
        // leaves outside the larger one.
        let residual: Vec<Vec<f64>> = small
            .iter()
            .map(|s| {
                let mut r = s.clone();
                for l in large {
                    let c = numerics::dot(l, s);
                    for (ri, li) in r.iter_mut().zip(l) {
                        *ri -= c * li;
                    }
                }
                r
            })
            .collect();
        let cols: Vec<&[f64]> = residual.iter().map(Vec::as_slice).collect();
        let sigma = numerics::singular_values(&Matrix::from_columns(&cols)?)[0];
        sigma.min(1.0).asin()
    };
    Ok(SpanAngle {
        radians,
        rank_p: bp.len(),
        rank_q: bq.len(),
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn momentum_layout() {
        let p = Propagator::momentum(0.9);
        assert_eq!(p.transition(), &Matrix::diagonal(&[0.9]));
        assert_eq!(p.injection(), &[1.0]);
        let z = Propagator::momentum(0.0);
        assert_eq!(z.transition().get(0, 0), 0.0);
    }

    #[test]
    fn momentum_abstract_rule_is_geometric() {
        let r = Propagator::momentum(0.5).abstract_rule(0, 4).unwrap();
        assert_eq!(r.coefficients, vec![1.0, 0.5, 0.25, 0.125]);
        assert_eq!(r.tail(), 0.125);
    }

    #[test]
    fn complex_momentum_layout() {
        let p = Propagator::complex_momentum(0.0, 0.9);
        let expected = Matrix::from_rows(&[&[0.0, -0.9], &[0.9, 0.0]]).unwrap();
        assert_eq!(p.transition(), &expected);
        assert_eq!(p.injection(), &[1.0, 0.0]);
        assert_eq!(p.label(), "CM(0.9i)");
    }

    #[test]
    fn complex_momentum_with_zero_imaginary_part_decouples() {
        let p = Propagator::complex_momentum(0.9, 0.0);
        let mut m = Matrix::zeros(2, 2);
        let mut reference = [0.0; 2];
        for t in 0..20 {
            let g = [t as f64 - 3.0, 0.5 * t as f64];
            p.advance(&mut m, &g).unwrap();
            for i in 0..2 {
                reference[i] = 0.9 * reference[i] + g[i];
            }
            assert_eq!(m.column(0), reference.to_vec());
            assert_eq!(m.column(1), vec![0.0, 0.0]);
        }
    }

    #[test]
    fn complex_momentum_real_part_follows_complex_recurrence() {
        // Real parts of (0.9 i)^j.
        let r = Propagator::complex_momentum(0.0, 0.9).abstract_rule(0, 5).unwrap();
        assert!(close(&r.coefficients, &[1.0, 0.0, -0.81, 0.0, 0.6561], 1e-15));
    }

    #[test]
    fn jordan_block_size_one_is_momentum() {
        let j = Propagator::jordan_momentum(1, 0.9).unwrap();
        let m = Propagator::momentum(0.9);
        assert_eq!(j.transition(), m.transition());
        assert_eq!(j.injection(), m.injection());
    }

    #[test]
    fn jordan_block_second_unit_rule() {
        let alpha: f64 = 0.3;
        let r = Propagator::jordan_momentum(2, alpha)
            .unwrap()
            .abstract_rule(1, 5)
            .unwrap();
        let expected = [0.0, 1.0, 2.0 * alpha, 3.0 * alpha.powi(2), 4.0 * alpha.powi(3)];
        assert!(close(&r.coefficients, &expected, 1e-15));
        let r = Propagator::jordan_momentum(2, 0.3)
            .unwrap()
            .abstract_rule(1, 4)
            .unwrap();
        assert!(close(&r.coefficients, &[0.0, 1.0, 0.6, 0.27], 1e-15));
    }

    #[test]
    fn jordan_block_matrix_orientation() {
        let p = Propagator::jordan_momentum(3, 0.5).unwrap();
        let expected = Matrix::from_rows(&[&[0.5, 1.0, 0.0], &[0.0, 0.5, 1.0], &[0.0, 0.0, 0.5]]).unwrap();
        assert_eq!(p.transition(), &expected);
        assert_eq!(p.injection(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_sized_blocks_rejected() {
        assert_eq!(Propagator::jordan_momentum(0, 0.5), Err(PropagatorError::ZeroBlockSize));
        assert_eq!(
            Propagator::complex_jordan_momentum(0, 0.5, 0.1),
            Err(PropagatorError::ZeroBlockSize)
        );
    }

    #[test]
    fn complex_jordan_size_one_is_complex_momentum() {
        let a = Propagator::complex_jordan_momentum(1, 0.3, 0.4).unwrap();
        let b = Propagator::complex_momentum(0.3, 0.4);
        assert_eq!(a, b);
    }

    #[test]
    fn complex_jordan_two_matches_block_display() {
        let (al, be) = (0.3, 0.2);
        let p = Propagator::complex_jordan_momentum(2, al, be).unwrap();
        let expected = Matrix::from_rows(&[
            &[al, -be, 1.0, 0.0],
            &[be, al, 0.0, 1.0],
            &[0.0, 0.0, al, -be],
            &[0.0, 0.0, be, al],
        ])
        .unwrap();
        assert_eq!(p.transition(), &expected);
        assert_eq!(p.injection(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn complex_jordan_with_real_eigenvalue_acts_like_real_jordan_on_even_units() {
        let m = 3;
        let cj = Propagator::complex_jordan_momentum(m, 0.7, 0.0).unwrap();
        let rj = Propagator::jordan_momentum(m, 0.7).unwrap();
        let mut mc = Matrix::zeros(2, 2 * m);
        let mut mr = Matrix::zeros(2, m);
        for t in 0..30 {
            let g = [(t as f64 * 0.7).cos(), (t as f64).sqrt()];
            cj.advance(&mut mc, &g).unwrap();
            rj.advance(&mut mr, &g).unwrap();
            for u in 0..m {
                assert_eq!(mc.column(2 * u), mr.column(u));
                assert_eq!(mc.column(2 * u + 1), vec![0.0, 0.0]);
            }
        }
    }

    #[test]
    fn union_of_momentum_and_sgd_units() {
        let p = Propagator::momentum(0.9).union(&Propagator::momentum(0.0));
        assert_eq!(p.transition(), &Matrix::diagonal(&[0.9, 0.0]));
        assert_eq!(p.injection(), &[1.0, 1.0]);
        assert_eq!(p.label(), "M(0.9)⊕M(0)");
        assert_eq!(p.momentum_sgd_pair(), Some(0.9));
        assert_eq!(Propagator::momentum(0.9).momentum_sgd_pair(), None);
    }

    #[test]
    fn union_dimensions_add() {
        let p = Propagator::jordan_momentum(3, 0.6).unwrap();
        let q = Propagator::complex_momentum(0.1, 0.2);
        assert_eq!(p.union(&q).dim(), p.dim() + q.dim());
    }

    #[test]
    fn fourier_style_union_layout() {
        let b = 0.9;
        let p = Propagator::union_all(&[
            Propagator::momentum(b),
            Propagator::momentum(-b),
            Propagator::complex_momentum(0.0, b),
        ])
        .unwrap();
        assert_eq!(p.dim(), 4);
        let expected = Matrix::from_rows(&[
            &[0.9, 0.0, 0.0, 0.0],
            &[0.0, -0.9, 0.0, 0.0],
            &[0.0, 0.0, 0.0, -0.9],
            &[0.0, 0.0, 0.9, 0.0],
        ])
        .unwrap();
        assert_eq!(p.transition(), &expected);
        assert_eq!(p.injection(), &[1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn abstract_rule_errors() {
        let p = Propagator::momentum(0.5);
        assert_eq!(
            p.abstract_rule(1, 3),
            Err(PropagatorError::UnitOutOfRange { unit: 1, dim: 1 })
        );
        assert_eq!(p.abstract_rule(0, 0), Err(PropagatorError::EmptyRule));
    }

    #[test]
    fn spectral_norm_examples() {
        let s = Propagator::momentum(0.9).spectral_norm();
        assert!(s.converged && (s.value - 0.9).abs() < 1e-15);
        let s = Propagator::complex_momentum(0.6, 0.8).spectral_norm();
        assert!((s.value - 1.0).abs() < 1e-12);
        let s = Propagator::momentum(0.9)
            .union(&Propagator::momentum(0.7))
            .spectral_norm();
        assert!((s.value - 0.9).abs() < 1e-9);
        assert_eq!(Propagator::momentum(0.0).spectral_norm().value, 0.0);
    }

    #[test]
    fn conjugate_by_identity_is_noop() {
        let p = Propagator::jordan_momentum(2, 0.6).unwrap();
        let c = p.conjugate(&Matrix::identity(2)).unwrap();
        assert_eq!(c.transition(), p.transition());
        assert_eq!(c.injection(), p.injection());
    }

    #[test]
    fn conjugate_by_swap_relabels_units() {
        let p = Propagator::momentum(0.9).union(&Propagator::momentum(0.0));
        let swap = Matrix::from_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap();
        let c = p.conjugate(&swap).unwrap();
        let q = Propagator::momentum(0.0).union(&Propagator::momentum(0.9));
        assert_eq!(c.transition(), q.transition());
        assert_eq!(c.injection(), q.injection());
    }

    #[test]
    fn conjugate_rejects_singular_or_misshaped() {
        let p = Propagator::momentum(0.9).union(&Propagator::momentum(0.0));
        let singular = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]).unwrap();
        assert!(matches!(
            p.conjugate(&singular),
            Err(PropagatorError::Numerics(NumericsError::Singular { .. }))
        ));
        assert!(matches!(
            p.conjugate(&Matrix::identity(3)),
            Err(PropagatorError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn span_angle_basics() {
        let p = Propagator::momentum(0.9);
        assert!(span_angle(&p, &p, 50).unwrap().radians < 1e-14);
        assert!(span_angle(&p, &Propagator::momentum(0.5), 50).unwrap().radians > 0.0);
        assert_eq!(
            span_angle(&Propagator::jordan_momentum(3, 0.5).unwrap(), &p, 2),
            Err(PropagatorError::SpanTooShort { len: 2, dim: 3 })
        );
    }

    #[test]
    fn span_angle_flags_dependent_rules() {
        // M(0) has a single nonzero coefficient; two copies span one dimension.
        let p = Propagator::momentum(0.0).union(&Propagator::momentum(0.0));
        let a = span_angle(&p, &Propagator::momentum(0.0), 10).unwrap();
        assert!(a.rank_deficient);
        assert_eq!(a.rank_p, 1);
        assert_eq!(a.radians, 0.0);
    }

    #[test]
    fn expression_round_trip() {
        let p = Propagator::parse("M(0.9)+M(0)+Mk(2,0.6)+CMk(2,0.3,0.2)+CM(0,0.9)").unwrap();
        let expr = p.to_expr().unwrap();
        assert_eq!(expr, "M(0.9)+M(0)+Mk(2,0.6)+CMk(2,0.3,0.2)+CM(0,0.9)");
        assert_eq!(Propagator::parse(&expr).unwrap(), p);
        assert_eq!(p.label(), "M(0.9)⊕M(0)⊕M2(0.6)⊕CM2(0.3+0.2i)⊕CM(0.9i)");
        assert_eq!(p.blocks().iter().filter_map(Block::units).sum::<usize>(), p.dim());
    }
}
