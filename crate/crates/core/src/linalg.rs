//! Small dense linear algebra for Jacobians of low-dimensional maps.
//!
//! Matrices are square, at most [`MAX_DIM`] wide, and stored inline so they
//! can be passed around by value along orbits without allocation.

use std::fmt;

use thiserror::Error;

/// Largest supported matrix dimension.
pub const MAX_DIM: usize = 8;

/// Relative off-diagonal threshold for the one-sided Jacobi sweeps.
const JACOBI_TOL: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix dimension {0} outside supported range 1..={MAX_DIM}")]
    UnsupportedDimension(usize),
    #[error("expected {expected} entries, got {got}")]
    EntryCount { expected: usize, got: usize },
    #[error("non-finite matrix entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("matrix is singular")]
    Singular,
}

/// Square real matrix of dimension `1..=MAX_DIM`, row-major.
#[derive(Clone, Copy, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: [f64; MAX_DIM * MAX_DIM],
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows: Vec<&[f64]> = (0..self.dim).map(|i| self.row(i)).collect();
        f.debug_struct("Matrix").field("dim", &self.dim).field("rows", &rows).finish()
    }
}

fn check_dim(dim: usize) -> Result<(), LinalgError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(LinalgError::UnsupportedDimension(dim));
    }
    Ok(())
}

impl Matrix {
    pub fn zeros(dim: usize) -> Result<Self, LinalgError> {
        check_dim(dim)?;
        Ok(Self { dim, data: [0.0; MAX_DIM * MAX_DIM] })
    }

    pub fn identity(dim: usize) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        Ok(m)
    }

    pub fn diag(values: &[f64]) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(values.len())?;
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m.validate()?;
        Ok(m)
    }

    /// Builds a matrix from `dim * dim` row-major entries.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self, LinalgError> {
        let mut m = Self::zeros(dim)?;
        if entries.len() != dim * dim {
            return Err(LinalgError::EntryCount { expected: dim * dim, got: entries.len() });
        }
        for i in 0..dim {
            m.data[i * MAX_DIM..i * MAX_DIM + dim].copy_from_slice(&entries[i * dim..(i + 1) * dim]);
        }
        m.validate()?;
        Ok(m)
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let dim = rows.len();
        let mut m = Self::zeros(dim)?;
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(LinalgError::EntryCount { expected: dim, got: row.len() });
            }
            m.data[i * MAX_DIM..i * MAX_DIM + dim].copy_from_slice(row);
        }
        m.validate()?;
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * MAX_DIM + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * MAX_DIM + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * MAX_DIM..row * MAX_DIM + self.dim]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim).map(|i| self.row(i).to_vec()).collect()
    }

    /// Returns an error naming the first non-finite entry, if any.
    pub fn validate(&self) -> Result<(), LinalgError> {
        for i in 0..self.dim {
            for j in 0..self.dim {
                if !self.get(i, j).is_finite() {
                    return Err(LinalgError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        let mut t = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                t.set(i, j, self.get(j, i));
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Self {
        let mut m = *self;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m.set(i, j, self.get(i, j) * factor);
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        (0..self.dim).flat_map(|i| self.row(i).iter().copied()).fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        (0..self.dim).flat_map(|i| self.row(i).iter().copied()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>, LinalgError> {
        if v.len() != self.dim {
            return Err(LinalgError::DimensionMismatch { left: self.dim, right: v.len() });
        }
        Ok((0..self.dim).map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum()).collect())
    }

    /// Matrix inverse by Gauss-Jordan elimination with partial pivoting.
    pub fn inverse(&self) -> Result<Self, LinalgError> {
        self.validate()?;
        let n = self.dim;
        let mut a = *self;
        let mut inv = Self::identity(n)?;
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| a.get(i, col).abs().total_cmp(&a.get(j, col).abs())).unwrap_or(col);
            if a.get(pivot, col) == 0.0 {
                return Err(LinalgError::Singular);
            }
            a.swap_rows(col, pivot);
            inv.swap_rows(col, pivot);
            let p = a.get(col, col);
            for j in 0..n {
                a.set(col, j, a.get(col, j) / p);
                inv.set(col, j, inv.get(col, j) / p);
            }
            for i in 0..n {
                if i == col {
                    continue;
                }
                let factor = a.get(i, col);
                if factor == 0.0 {
                    continue;
                }
                for j in 0..n {
                    a.set(i, j, a.get(i, j) - factor * a.get(col, j));
                    inv.set(i, j, inv.get(i, j) - factor * inv.get(col, j));
                }
            }
        }
        inv.validate().map_err(|_| LinalgError::Singular)?;
        Ok(inv)
    }

    fn swap_rows(&mut self, a: usize, b: usize) {
        if a != b {
            for j in 0..self.dim {
                self.data.swap(a * MAX_DIM + j, b * MAX_DIM + j);
            }
        }
    }
}

/// Product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.dim != b.dim {
        return Err(LinalgError::DimensionMismatch { left: a.dim, right: b.dim });
    }
    let n = a.dim;
    let mut c = Matrix::zeros(n)?;
    for i in 0..n {
        for k in 0..n {
            let aik = a.get(i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c.data[i * MAX_DIM + j] += aik * b.get(k, j);
            }
        }
    }
    Ok(c)
}

/// Singular values sorted non-increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularSpectrum {
    values: Vec<f64>,
}

impl SingularSpectrum {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Largest singular value, i.e. the operator norm.
    pub fn largest(&self) -> f64 {
        self.values[0]
    }

    pub fn smallest(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn product(&self) -> f64 {
        self.values.iter().product()
    }
}

/// Singular values of `a` by one-sided (Hestenes) Jacobi rotations.
///
/// Column pairs are orthogonalised in cyclic sweeps until every pair satisfies
/// `|<c_p, c_q>| <= 1e-15 * |c_p| |c_q|`; the singular values are then the
/// column norms. The relative stopping rule keeps small singular values
/// accurate for graded matrices.
pub fn singular_values(a: &Matrix) -> Result<SingularSpectrum, LinalgError> {
    a.validate()?;
    let n = a.dim;
    // columns stored as rows of the transpose for contiguous access
    let mut cols = a.transpose();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for k in 0..n {
                    let (x, y) = (cols.get(p, k), cols.get(q, k));
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for k in 0..n {
                    let (x, y) = (cols.get(p, k), cols.get(q, k));
                    cols.set(p, k, c * x - s * y);
                    cols.set(q, k, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut values: Vec<f64> = (0..n).map(|i| cols.row(i).iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    values.sort_by(|x, y| y.total_cmp(x));
    Ok(SingularSpectrum { values })
}

/// `sup |Av|` over unit vectors `v`.
pub fn operator_norm(a: &Matrix) -> Result<f64, LinalgError> {
    Ok(singular_values(a)?.largest())
}

/// Determinant as a sign and natural-log magnitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogDet {
    pub sign: i8,
    pub log_magnitude: f64,
}

impl LogDet {
    pub const ZERO: LogDet = LogDet { sign: 0, log_magnitude: f64::NEG_INFINITY };

    pub fn is_singular(&self) -> bool {
        self.sign == 0
    }

    pub fn abs(&self) -> f64 {
        self.log_magnitude.exp()
    }

    pub fn value(&self) -> f64 {
        f64::from(self.sign) * self.abs()
    }

    /// Determinant of a product.
    pub fn compose(&self, other: &LogDet) -> LogDet {
        if self.is_singular() || other.is_singular() {
            return LogDet::ZERO;
        }
        LogDet { sign: self.sign * other.sign, log_magnitude: self.log_magnitude + other.log_magnitude }
    }
}

/// Sign and log magnitude of `det(a)` via partial-pivot elimination.
pub fn log_abs_det(a: &Matrix) -> Result<LogDet, LinalgError> {
    a.validate()?;
    let n = a.dim;
    let mut lu = *a;
    let mut sign: i8 = 1;
    let mut log_magnitude = 0.0;
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| lu.get(i, col).abs().total_cmp(&lu.get(j, col).abs())).unwrap_or(col);
        let p = lu.get(pivot, col);
        if p == 0.0 {
            return Ok(LogDet::ZERO);
        }
        if pivot != col {
            lu.swap_rows(col, pivot);
            sign = -sign;
        }
        if p < 0.0 {
            sign = -sign;
        }
        log_magnitude += p.abs().ln();
        for i in (col + 1)..n {
            let factor = lu.get(i, col) / p;
            if factor == 0.0 {
                continue;
            }
            for j in col..n {
                lu.set(i, j, lu.get(i, j) - factor * lu.get(col, j));
            }
        }
    }
    Ok(LogDet { sign, log_magnitude })
}

/// Running product `A_k ... A_1` kept as a normalised matrix times `exp(log_scale)`.
///
/// Long Jacobian chains over- or underflow in plain arithmetic; renormalising
/// after each factor keeps the stored matrix at unit max-entry while the
/// determinant is accumulated separately as a sum of logs.
#[derive(Debug, Clone, Copy)]
pub struct LogScaledProduct {
    matrix: Matrix,
    log_scale: f64,
    log_det: LogDet,
}

impl LogScaledProduct {
    pub fn identity(dim: usize) -> Result<Self, LinalgError> {
        Ok(Self { matrix: Matrix::identity(dim)?, log_scale: 0.0, log_det: LogDet { sign: 1, log_magnitude: 0.0 } })
    }

    /// Replaces the product `P` with `factor * P`.
    pub fn push_left(&mut self, factor: &Matrix) -> Result<(), LinalgError> {
        self.log_det = self.log_det.compose(&log_abs_det(factor)?);
        self.matrix = matmul(factor, &self.matrix)?;
        self.renormalise()
    }

    /// Replaces the product `P` with `P * factor`.
    pub fn push_right(&mut self, factor: &Matrix) -> Result<(), LinalgError> {
        self.log_det = self.log_det.compose(&log_abs_det(factor)?);
        self.matrix = matmul(&self.matrix, factor)?;
        self.renormalise()
    }

    fn renormalise(&mut self) -> Result<(), LinalgError> {
        let s = self.matrix.max_abs();
        if s > 0.0 && s.is_finite() {
            self.matrix = self.matrix.scale(1.0 / s);
            self.log_scale += s.ln();
        }
        self.matrix.validate()
    }

    pub fn log_det(&self) -> LogDet {
        self.log_det
    }

    /// `ln ||P||`.
    pub fn log_norm(&self) -> Result<f64, LinalgError> {
        Ok(operator_norm(&self.matrix)?.ln() + self.log_scale)
    }

    /// The product itself; may overflow for long chains.
    pub fn to_matrix(&self) -> Matrix {
        self.matrix.scale(self.log_scale.exp())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn identity_spectrum() {
        let s = singular_values(&Matrix::identity(3).unwrap()).unwrap();
        assert_eq!(s.values(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_spectrum_sorted() {
        let s = singular_values(&Matrix::diag(&[0.2, 4.0]).unwrap()).unwrap();
        assert_eq!(s.values(), &[4.0, 0.2]);
    }

    #[test]
    fn operator_norm_examples() {
        assert_eq!(operator_norm(&Matrix::identity(2).unwrap()).unwrap(), 1.0);
        assert_eq!(operator_norm(&Matrix::diag(&[5.0, 0.25]).unwrap()).unwrap(), 5.0);
        let (s, c) = 30f64.to_radians().sin_cos();
        let rot = Matrix::from_rows(&[[c, -s], [s, c]]).unwrap();
        assert!(rel(operator_norm(&rot).unwrap(), 1.0) < 1e-14);
    }

    #[test]
    fn log_det_examples() {
        let id = log_abs_det(&Matrix::identity(3).unwrap()).unwrap();
        assert_eq!(id, LogDet { sign: 1, log_magnitude: 0.0 });
        let d = log_abs_det(&Matrix::diag(&[0.2, 4.0]).unwrap()).unwrap();
        assert_eq!(d.sign, 1);
        assert!((d.log_magnitude - 0.8f64.ln()).abs() < 1e-15);
        assert!((d.log_magnitude + 0.22314).abs() < 1e-5);
        let s = log_abs_det(&Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(s.sign, 0);
        assert_eq!(s.log_magnitude, f64::NEG_INFINITY);
    }

    #[test]
    fn negative_determinant_sign() {
        let m = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(log_abs_det(&m).unwrap().sign, -1);
        let m = Matrix::diag(&[-2.0, 3.0, 1.0]).unwrap();
        let d = log_abs_det(&m).unwrap();
        assert_eq!(d.sign, -1);
        assert!((d.value() + 6.0).abs() < 1e-12);
    }

    #[test]
    fn matmul_examples() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(matmul(&a, &Matrix::identity(2).unwrap()).unwrap(), a);
        let p = matmul(&Matrix::diag(&[2.0, 3.0]).unwrap(), &Matrix::diag(&[5.0, 7.0]).unwrap()).unwrap();
        assert_eq!(p, Matrix::diag(&[10.0, 21.0]).unwrap());
        let b = Matrix::identity(3).unwrap();
        assert!(matches!(matmul(&a, &b), Err(LinalgError::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            Matrix::from_rows(&[[f64::NAN, 0.0], [0.0, 1.0]]),
            Err(LinalgError::NonFinite { row: 0, col: 0 })
        ));
        assert!(matches!(Matrix::zeros(0), Err(LinalgError::UnsupportedDimension(0))));
        assert!(matches!(Matrix::zeros(9), Err(LinalgError::UnsupportedDimension(9))));
        let mut m = Matrix::identity(2).unwrap();
        m.set(1, 0, f64::INFINITY);
        assert!(singular_values(&m).is_err());
        assert!(log_abs_det(&m).is_err());
    }

    #[test]
    fn inverse_of_cat_matrix() {
        let cat = Matrix::from_rows(&[[2.0, 1.0], [1.0, 1.0]]).unwrap();
        let inv = cat.inverse().unwrap();
        let expected = [[1.0, -1.0], [-1.0, 2.0]];
        for (i, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((inv.get(i, j) - e).abs() < 1e-15);
            }
        }
        let singular = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert_eq!(singular.inverse(), Err(LinalgError::Singular));
    }

    #[test]
    fn scaled_product_survives_overflow() {
        let a = Matrix::diag(&[1e10, 1e-10]).unwrap();
        let mut p = LogScaledProduct::identity(2).unwrap();
        for _ in 0..100 {
            p.push_left(&a).unwrap();
        }
        assert!(rel(p.log_norm().unwrap(), 1000.0 * 10f64.ln()) < 1e-12);
        assert!(p.log_det().log_magnitude.abs() < 1e-9);
        assert_eq!(p.log_det().sign, 1);
    }

    #[test]
    fn one_by_one() {
        let m = Matrix::from_rows(&[[-3.0]]).unwrap();
        assert_eq!(singular_values(&m).unwrap().values(), &[3.0]);
        assert_eq!(log_abs_det(&m).unwrap().sign, -1);
    }
}
