//! Dense small-matrix primitives.
//!
//! Everything here is sized for the shapes the optimizers actually touch:
//! tall memory matrices (`n x k`, `k` at most a handful) and tiny square
//! `k x k` systems. Storage is row-major, so a memory matrix row is the
//! `k` coefficients of one parameter coordinate.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Default ridge term for [`relaxed_pinv_apply`].
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Relative pivot threshold below which an unregularized Gram system is
/// treated as singular.
pub const SINGULAR_PIVOT_RTOL: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum NumericsError {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },
    #[error("singular system: pivot {pivot:.3e} below threshold {threshold:.3e}")]
    Singular { pivot: f64, threshold: f64 },
    #[error("matrix is not positive definite: pivot {pivot:.3e} at index {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },
    #[error("matrix must have at least one row and one column")]
    Empty,
    #[error("negative regularization epsilon {0}")]
    NegativeEpsilon(f64),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

fn mismatch(op: &'static str, expected: impl fmt::Display, found: impl fmt::Display) -> NumericsError {
    NumericsError::DimensionMismatch {
        op,
        expected: expected.to_string(),
        found: found.to_string(),
    }
}

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(NumericsError::Empty);
        }
        if data.len() != rows * cols {
            return Err(mismatch("Matrix::new", rows * cols, data.len()));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(NumericsError::NonFinite { what: "matrix entries" });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(mismatch("Matrix::from_rows", "rows of equal length", "ragged rows"));
        }
        Self::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix whose columns are the given slices.
    pub fn from_columns(columns: &[&[f64]]) -> Result<Self> {
        let rows = columns.first().map_or(0, |c| c.len());
        if columns.iter().any(|c| c.len() != rows) {
            return Err(mismatch(
                "Matrix::from_columns",
                "columns of equal length",
                "ragged columns",
            ));
        }
        let cols = columns.len();
        let mut data = vec![0.0; rows * cols];
        for (j, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                data[i * cols + j] = v;
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "Matrix::zeros needs positive dimensions");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(k: usize) -> Self {
        Self::diagonal(&vec![1.0; k])
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let k = diag.len();
        let mut m = Self::zeros(k, k);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * k + i] = d;
        }
        m
    }

    /// Block-diagonal composition `diag(self, other)`.
    pub fn block_diag(&self, other: &Matrix) -> Matrix {
        let rows = self.rows + other.rows;
        let cols = self.cols + other.cols;
        let mut out = Matrix::zeros(rows, cols);
        for i in 0..self.rows {
            out.row_mut(i)[..self.cols].copy_from_slice(self.row(i));
        }
        for i in 0..other.rows {
            out.row_mut(self.rows + i)[self.cols..].copy_from_slice(other.row(i));
        }
        out
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub(crate) fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub(crate) fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.get(i, j);
            }
        }
        out
    }

    pub fn scale(&self, s: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if self.shape() != other.shape() {
            return Err(mismatch(
                "Matrix::sub",
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm(&self.data)
    }

    /// Euclidean norm of every column.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut sq = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, x) in sq.iter_mut().zip(self.row(i)) {
                *s += x * x;
            }
        }
        sq.into_iter().map(f64::sqrt).collect()
    }

    /// `self * v` for a vector of length `cols`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(mismatch("Matrix::matvec", self.cols, v.len()));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    /// `self^T * v` for a vector of length `rows`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(mismatch("Matrix::tr_matvec", self.rows, v.len()));
        }
        let mut out = vec![0.0; self.cols];
        for (i, &vi) in v.iter().enumerate() {
            for (o, x) in out.iter_mut().zip(self.row(i)) {
                *o += x * vi;
            }
        }
        Ok(out)
    }

    /// `v^T * self` as a row vector, for `v` of length `rows`.
    pub fn left_mul_row(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.tr_matvec(v)
    }

    /// Gram matrix `self^T self`, accumulated row by row.
    pub fn gram(&self) -> Matrix {
        let k = self.cols;
        let mut g = Matrix::zeros(k, k);
        for i in 0..self.rows {
            let r = self.row(i);
            for a in 0..k {
                let ra = r[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..k {
                    g.data[a * k + b] += ra * r[b];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                g.data[a * k + b] = g.data[b * k + a];
            }
        }
        g
    }
}

/// Dense product `a * b`.
pub fn matrix_multiply(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(mismatch(
            "matrix_multiply",
            format!("inner dimension {}", a.cols),
            format!("inner dimension {}", b.rows),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (p, &aip) in a.row(i).iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            for (o, &bpj) in out_row.iter_mut().zip(b.row(p)) {
                *o += aip * bpj;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Matrix,
}

impl Cholesky {
    /// Factors `a`, rejecting any pivot `<= min_pivot`.
    pub fn factor(a: &Matrix, min_pivot: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(mismatch(
                "Cholesky::factor",
                "square matrix",
                format!("{:?}", a.shape()),
            ));
        }
        let k = a.rows;
        let mut l = Matrix::zeros(k, k);
        for j in 0..k {
            let mut d = a.get(j, j);
            for p in 0..j {
                d -= l.get(j, p) * l.get(j, p);
            }
            if !d.is_finite() || d <= min_pivot {
                return Err(NumericsError::NotPositiveDefinite { index: j, pivot: d });
            }
            let djj = d.sqrt();
            l.set(j, j, djj);
            for i in j + 1..k {
                let mut s = a.get(i, j);
                for p in 0..j {
                    s -= l.get(i, p) * l.get(j, p);
                }
                l.set(i, j, s / djj);
            }
        }
        Ok(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix {
        &self.lower
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let k = self.lower.rows;
        if b.len() != k {
            return Err(mismatch("Cholesky::solve", k, b.len()));
        }
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..k {
            let mut s = y[i];
            for p in 0..i {
                s -= l.get(i, p) * y[p];
            }
            y[i] = s / l.get(i, i);
        }
        for i in (0..k).rev() {
            let mut s = y[i];
            for p in i + 1..k {
                s -= l.get(p, i) * y[p];
            }
            y[i] = s / l.get(i, i);
        }
        Ok(y)
    }
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if !a.is_square() || b.len() != a.rows {
        return Err(mismatch(
            "solve_spd",
            format!("square system of size {}", b.len()),
            format!("{:?}", a.shape()),
        ));
    }
    Cholesky::factor(a, 0.0)?.solve(b)
}

/// Ridge-regularized pseudo-inverse applied to a vector:
/// `(M^T M + eps I)^{-1} M^T g`.
///
/// With `eps == 0` this is the exact Moore-Penrose coefficient vector of the
/// projection of `g` onto the column span of `M`, and a rank-deficient `M` is
/// reported as [`NumericsError::Singular`]. Only the `k x k` Gram system is
/// ever formed.
pub fn relaxed_pinv_apply(m: &Matrix, g: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    pinv_system(m, g, epsilon).map(|(x, _)| x)
}

/// Same as [`relaxed_pinv_apply`] but also returns the Gram matrix `M^T M`
/// (without the ridge term) so callers can inspect conditioning.
pub fn pinv_system(m: &Matrix, g: &[f64], epsilon: f64) -> Result<(Vec<f64>, Matrix)> {
    if !(epsilon >= 0.0) {
        return Err(NumericsError::NegativeEpsilon(epsilon));
    }
    if g.len() != m.rows {
        return Err(mismatch("relaxed_pinv_apply", m.rows, g.len()));
    }
    if g.iter().any(|x| !x.is_finite()) {
        return Err(NumericsError::NonFinite {
            what: "right-hand side",
        });
    }
    let gram = m.gram();
    let rhs = m.tr_matvec(g)?;
    let k = m.cols;
    let mut shifted = gram.clone();
    for i in 0..k {
        shifted.data[i * k + i] += epsilon;
    }
    let largest = (0..k).map(|i| shifted.get(i, i)).fold(0.0, f64::max);
    let factor = if epsilon == 0.0 {
        let threshold = SINGULAR_PIVOT_RTOL * largest;
        Cholesky::factor(&shifted, threshold).map_err(|e| match e {
            NumericsError::NotPositiveDefinite { pivot, .. } => NumericsError::Singular { pivot, threshold },
            other => other,
        })?
    } else {
        Cholesky::factor(&shifted, 0.0)?
    };
    let x = factor.solve(&rhs)?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite {
            what: "pseudo-inverse result",
        });
    }
    Ok((x, gram))
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial
/// pivoting.
pub fn invert(q: &Matrix) -> Result<Matrix> {
    if !q.is_square() {
        return Err(mismatch("invert", "square matrix", format!("{:?}", q.shape())));
    }
    let k = q.rows;
    let scale = q.max_abs();
    let threshold = SINGULAR_PIVOT_RTOL * scale.max(f64::MIN_POSITIVE);
    let mut a = q.clone();
    let mut inv = Matrix::identity(k);
    for col in 0..k {
        let (pivot_row, pivot_abs) = (col..k)
            .map(|r| (r, a.get(r, col).abs()))
            .fold((col, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot_abs <= threshold {
            return Err(NumericsError::Singular {
                pivot: pivot_abs,
                threshold,
            });
        }
        if pivot_row != col {
            for j in 0..k {
                a.data.swap(col * k + j, pivot_row * k + j);
                inv.data.swap(col * k + j, pivot_row * k + j);
            }
        }
        let p = a.get(col, col);
        for j in 0..k {
            a.data[col * k + j] /= p;
            inv.data[col * k + j] /= p;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a.get(r, col);
            if f == 0.0 {
                continue;
            }
            for j in 0..k {
                a.data[r * k + j] -= f * a.data[col * k + j];
                inv.data[r * k + j] -= f * inv.data[col * k + j];
            }
        }
    }
    if !inv.is_finite() {
        return Err(NumericsError::NonFinite { what: "inverse" });
    }
    Ok(inv)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, sorted
/// ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Result<Vec<f64>> {
    if !a.is_square() {
        return Err(mismatch(
            "symmetric_eigenvalues",
            "square matrix",
            format!("{:?}", a.shape()),
        ));
    }
    let k = a.rows;
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..k)
            .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j).powi(2))
            .sum();
        let diag: f64 = (0..k).map(|i| m.get(i, i).powi(2)).sum();
        if off <= 1e-30 * diag || off == 0.0 {
            break;
        }
        for p in 0..k {
            for q in p + 1..k {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..k {
                    let mrp = m.get(r, p);
                    let mrq = m.get(r, q);
                    m.set(r, p, c * mrp - s * mrq);
                    m.set(r, q, s * mrp + c * mrq);
                }
                for r in 0..k {
                    let mpr = m.get(p, r);
                    let mqr = m.get(q, r);
                    m.set(p, r, c * mpr - s * mqr);
                    m.set(q, r, s * mpr + c * mqr);
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..k).map(|i| m.get(i, i)).collect();
    eig.sort_by(f64::total_cmp);
    Ok(eig)
}

/// Singular values of `a` (any shape) by one-sided Jacobi, sorted
/// descending. Accurate to roughly machine precision relative to `||a||`.
pub fn singular_values(a: &Matrix) -> Vec<f64> {
    let work = if a.rows >= a.cols { a.clone() } else { a.transpose() };
    let (rows, cols) = work.shape();
    let mut columns: Vec<Vec<f64>> = (0..cols).map(|j| work.column(j)).collect();
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&columns[p], &columns[p]);
                let beta = dot(&columns[q], &columns[q]);
                let gamma = dot(&columns[p], &columns[q]);
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let xp = columns[p][i];
                    let xq = columns[q][i];
                    columns[p][i] = c * xp - s * xq;
                    columns[q][i] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Orthonormal basis of the column span of `a` by modified Gram-Schmidt with
/// one reorthogonalization pass. Columns whose residual falls below
/// `rel_tol` times their original norm are dropped.
pub fn orthonormal_basis(a: &Matrix, rel_tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(a.cols);
    for j in 0..a.cols {
        let mut v = a.column(j);
        let original = norm(&v);
        if original == 0.0 {
            continue;
        }
        for _pass in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= c * qi;
                }
            }
        }
        let residual = norm(&v);
        if residual > rel_tol * original {
            v.iter_mut().for_each(|x| *x /= residual);
            basis.push(v);
        }
    }
    basis
}
