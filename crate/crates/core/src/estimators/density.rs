//! Density and score of `Y = X + N` for a Gaussian-mixture `X`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matcore::{logdet, SymMatrix};
use crate::model::MixtureSource;

/// Precomputed per-component factors of `Σ_u p_u N(y; μ_u, C_u + Σ_N)`.
#[derive(Debug, Clone)]
pub struct NoisyMixture {
    dim: usize,
    cumulative: Vec<f64>,
    log_weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    precisions: Vec<DMatrix<f64>>,
    factors: Vec<DMatrix<f64>>,
    log_norms: Vec<f64>,
}

impl NoisyMixture {
    pub fn new(src: &MixtureSource, noise: &SymMatrix) -> Result<Self> {
        let n = src.dim();
        if noise.dim() != n {
            return Err(Error::Matrix(crate::matcore::MatError::DimensionMismatch(noise.dim(), n)));
        }
        let mut precisions = Vec::new();
        let mut factors = Vec::new();
        let mut log_norms = Vec::new();
        for (u, c) in src.comp_covs().iter().enumerate() {
            let v = c + noise;
            let chol = v.as_matrix().clone().cholesky().ok_or_else(|| {
                Error::InvalidInput(format!(
                    "component {u}: C_u + noise covariance is singular (min eigenvalue {:e})",
                    v.min_eigenvalue()
                ))
            })?;
            log_norms.push(-0.5 * (n as f64 * (2.0 * PI).ln() + logdet(&v)?));
            precisions.push(chol.inverse());
            factors.push(chol.l());
        }
        let mut acc = 0.0;
        let cumulative = src
            .weights()
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            dim: n,
            cumulative,
            log_weights: src.weights().iter().map(|p| p.ln()).collect(),
            means: src.means().to_vec(),
            precisions,
            factors,
            log_norms,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_components(&self) -> usize {
        self.means.len()
    }

    /// Mean and Cholesky factor of component `u`'s covariance.
    pub(crate) fn component(&self, u: usize) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.means[u], &self.factors[u])
    }

    pub(crate) fn log_weight(&self, u: usize) -> f64 {
        self.log_weights[u]
    }

    /// `ln f(y)` and, if asked, the score `−Σ_u w_u(y) V_u⁻¹ (y − μ_u)`.
    fn evaluate(&self, y: &DVector<f64>, want_score: bool) -> (f64, Option<DVector<f64>>) {
        let n = self.dim;
        let m = self.means.len();
        let ys = y.as_slice();
        let mut logs = vec![f64::NEG_INFINITY; m];
        let mut grads = if want_score { vec![0.0; m * n] } else { Vec::new() };
        let mut d = vec![0.0; n];
        let mut pd = vec![0.0; n];
        for u in 0..m {
            if self.log_weights[u] == f64::NEG_INFINITY {
                continue;
            }
            let mu = self.means[u].as_slice();
            for i in 0..n {
                d[i] = ys[i] - mu[i];
            }
            // precisions are symmetric, so column-major storage reads as rows
            let prec = self.precisions[u].as_slice();
            let mut quad = 0.0;
            for i in 0..n {
                let row = &prec[i * n..(i + 1) * n];
                let mut acc = 0.0;
                for j in 0..n {
                    acc += row[j] * d[j];
                }
                pd[i] = acc;
                quad += d[i] * acc;
            }
            logs[u] = self.log_weights[u] + self.log_norms[u] - 0.5 * quad;
            if want_score {
                grads[u * n..(u + 1) * n].copy_from_slice(&pd);
            }
        }
        let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for l in logs.iter_mut() {
            *l = (*l - top).exp();
            total += *l;
        }
        let logpdf = top + total.ln();
        if !want_score {
            return (logpdf, None);
        }
        let mut s = DVector::zeros(n);
        for (u, w) in logs.iter().enumerate() {
            if *w > 0.0 {
                let c = *w / total;
                for i in 0..n {
                    s[i] -= c * grads[u * n + i];
                }
            }
        }
        (logpdf, Some(s))
    }

    pub fn logpdf(&self, y: &DVector<f64>) -> f64 {
        self.evaluate(y, false).0
    }

    /// `∇_y ln f(y) = −Σ_u w_u(y) V_u⁻¹ (y − μ_u)`.
    pub fn score(&self, y: &DVector<f64>) -> DVector<f64> {
        self.evaluate(y, true).1.unwrap()
    }

    pub fn logpdf_and_score(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        let (l, s) = self.evaluate(y, true);
        (l, s.unwrap())
    }

    /// Draws one `y`: pick `u` by weight, then `μ_u + L_u z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let r: f64 = rng.random();
        let last = self.cumulative.len() - 1;
        let u = self
            .cumulative
            .iter()
            .position(|&c| r < c)
            .unwrap_or(last);
        let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.means[u] + &self.factors[u] * z
    }
}
