//! Symmetric-matrix primitives.
//!
//! Everything in this crate that is a covariance, a Fisher information matrix
//! or a noise level is a [`SymMatrix`]. The free functions here implement the
//! handful of operations the rest of the crate needs on top of that type:
//! PSD tests, the Loewner order, log-determinants, PSD square roots and the
//! straight-line matrix integral `∫_{K1}^{K2} f(K) dK`.

use std::fmt;
use std::num::NonZeroUsize;
use std::ops::{Add, Sub};

use gauss_quad::GaussLegendre;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Relative slack used by the default PSD tolerance.
pub const PSD_REL_TOL: f64 = 1e-9;

/// Default number of Gauss–Legendre nodes for [`matrix_line_integral`].
pub const DEFAULT_LINE_NODES: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix must have dimension at least 1")]
    Empty,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("matrix is not positive definite (min eigenvalue {min_eig:e})")]
    NotPositiveDefinite { min_eig: f64 },
    #[error("matrix is not positive semi-definite (min eigenvalue {min_eig:e})")]
    NotPsd { min_eig: f64 },
    #[error("Loewner order violated: min eigenvalue of upper - lower is {min_eig:e}")]
    OrderViolation { min_eig: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// A real symmetric `n x n` matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2`, so `get(i, j) == get(j, i)`
/// holds exactly for every value of this type.
#[derive(Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self, MatError> {
        if m.nrows() != m.ncols() {
            return Err(MatError::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        if m.nrows() == 0 {
            return Err(MatError::Empty);
        }
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if !m[(i, j)].is_finite() {
                    return Err(MatError::NonFinite { row: i, col: j });
                }
            }
        }
        Ok(Self::symmetrized(m))
    }

    /// Builds from a row-major array of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatError> {
        let n = rows.len();
        if n == 0 {
            return Err(MatError::Empty);
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(MatError::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        Self::from_matrix(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self, MatError> {
        if entries.len() != dim * dim {
            return Err(MatError::DimensionMismatch(entries.len(), dim * dim));
        }
        Self::from_matrix(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(DMatrix::zeros(dim, dim))
    }

    pub fn scaled_identity(dim: usize, value: f64) -> Self {
        Self(DMatrix::identity(dim, dim) * value)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Symmetrizes without validation. Used for results of internal arithmetic.
    pub(crate) fn symmetrized(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.0[(i, j)]).collect())
            .collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `tr(self · other)`.
    pub fn trace_product(&self, other: &SymMatrix) -> f64 {
        self.0.component_mul(&other.0).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// `B · self · Bᵀ`.
    pub fn congruence(&self, b: &DMatrix<f64>) -> SymMatrix {
        Self::symmetrized(b * &self.0 * b.transpose())
    }

    pub fn mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.0 * v
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigh().0
    }

    /// Eigen-decomposition with eigenvalues ascending; columns of the matrix
    /// are the matching unit eigenvectors.
    pub fn eigh(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.dim();
        if n == 1 {
            return (vec![self.0[(0, 0)]], DMatrix::identity(1, 1));
        }
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
        (values, vectors)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    /// Largest absolute eigenvalue.
    pub fn spectral_norm(&self) -> f64 {
        let ev = self.eigenvalues();
        ev[0].abs().max(ev[ev.len() - 1].abs())
    }

    /// Rebuilds `V diag(g(λ)) Vᵀ` from the eigen-decomposition.
    pub fn map_eigenvalues(&self, g: impl Fn(f64) -> f64) -> SymMatrix {
        let (values, vectors) = self.eigh();
        let d = DMatrix::from_diagonal(&DVector::from_iterator(
            values.len(),
            values.iter().map(|&l| g(l)),
        ));
        Self::symmetrized(&vectors * d * vectors.transpose())
    }

    /// Inverse of a positive definite matrix.
    pub fn inverse_pd(&self) -> Result<SymMatrix, MatError> {
        match self.0.clone().cholesky() {
            Some(ch) => Ok(Self::symmetrized(ch.inverse())),
            None => Err(MatError::NotPositiveDefinite {
                min_eig: self.min_eigenvalue(),
            }),
        }
    }

    fn check_same_dim(&self, other: &SymMatrix) -> Result<(), MatError> {
        if self.dim() != other.dim() {
            return Err(MatError::DimensionMismatch(self.dim(), other.dim()));
        }
        Ok(())
    }
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SymMatrix{:?}", self.to_rows())
    }
}

impl Add for &SymMatrix {
    type Output = SymMatrix;
    fn add(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 + &rhs.0)
    }
}

impl Sub for &SymMatrix {
    type Output = SymMatrix;
    fn sub(self, rhs: &SymMatrix) -> SymMatrix {
        SymMatrix(&self.0 - &rhs.0)
    }
}

impl Serialize for SymMatrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SymMatrix {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        SymMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

/// `PSD_REL_TOL · (1 + max |λ|)`.
pub fn default_psd_tol(m: &SymMatrix) -> f64 {
    PSD_REL_TOL * (1.0 + m.spectral_norm())
}

pub fn is_psd(m: &SymMatrix, tol: f64) -> bool {
    m.min_eigenvalue() >= -tol
}

/// `A ⪯ B` within `tol`, i.e. `λ_min(B − A) ≥ −tol`.
pub fn loewner_leq(a: &SymMatrix, b: &SymMatrix, tol: f64) -> Result<bool, MatError> {
    a.check_same_dim(b)?;
    Ok(is_psd(&(b - a), tol))
}

/// Min eigenvalue of `upper − lower`, divided by `1 + ‖upper‖₂`.
///
/// Nonnegative iff `lower ⪯ upper`. This is the residual every Loewner-order
/// check in the crate reports.
pub fn loewner_residual(lower: &SymMatrix, upper: &SymMatrix) -> Result<f64, MatError> {
    lower.check_same_dim(upper)?;
    Ok((upper - lower).min_eigenvalue() / (1.0 + upper.spectral_norm()))
}

/// Natural log-determinant of a positive definite matrix.
pub fn logdet(m: &SymMatrix) -> Result<f64, MatError> {
    let singular = || MatError::NotPositiveDefinite {
        min_eig: m.min_eigenvalue(),
    };
    let ch = m.as_matrix().clone().cholesky().ok_or_else(singular)?;
    let l = ch.l_dirty();
    let mut acc = 0.0;
    for i in 0..m.dim() {
        let d = l[(i, i)];
        if !(d > 0.0) {
            return Err(singular());
        }
        acc += d.ln();
    }
    if !acc.is_finite() {
        return Err(singular());
    }
    Ok(2.0 * acc)
}

/// The unique PSD square root.
///
/// Eigenvalues in `[−tol, 0)` with the default tolerance are treated as zero.
pub fn sqrt_psd(m: &SymMatrix) -> Result<SymMatrix, MatError> {
    let min_eig = m.min_eigenvalue();
    if min_eig < -default_psd_tol(m) {
        return Err(MatError::NotPsd { min_eig });
    }
    Ok(m.map_eigenvalues(|l| l.max(0.0).sqrt()))
}

/// Gauss–Legendre nodes and weights mapped to `[0, 1]`.
pub fn legendre_unit_rule(nodes: usize) -> Result<Vec<(f64, f64)>, MatError> {
    let deg = NonZeroUsize::new(nodes)
        .ok_or_else(|| MatError::InvalidArgument("quadrature needs at least one node".into()))?;
    let rule = GaussLegendre::new(deg);
    Ok(rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .collect())
}

/// `∫₀¹ tr(field(K(t)) · (K2 − K1)) dt` along `K(t) = K1 + t (K2 − K1)`.
///
/// For a gradient field this is the path-independent matrix integral
/// `∫_{K1}^{K2} field(K) dK`; e.g. `field(K) = ½ (K + Σ)⁻¹` integrates to
/// `½ (ln|K2 + Σ| − ln|K1 + Σ|)`. Requires `K1 ⪯ K2`.
pub fn matrix_line_integral<F, E>(
    field: F,
    k1: &SymMatrix,
    k2: &SymMatrix,
    nodes: usize,
) -> Result<f64, E>
where
    F: Fn(&SymMatrix) -> Result<SymMatrix, E>,
    E: From<MatError>,
{
    k1.check_same_dim(k2)?;
    let delta = k2 - k1;
    let tol = PSD_REL_TOL * (1.0 + k1.spectral_norm().max(k2.spectral_norm()));
    let min_eig = delta.min_eigenvalue();
    if min_eig < -tol {
        return Err(MatError::OrderViolation { min_eig }.into());
    }
    let mut total = 0.0;
    for (t, w) in legendre_unit_rule(nodes)? {
        let k = k1 + &delta.scale(t);
        let value = field(&k)?;
        value.check_same_dim(&k)?;
        total += w * value.trace_product(&delta);
    }
    Ok(total)
}
