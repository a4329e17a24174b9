//! Channel and source data model.
//!
//! A [`BroadcastChannel`] is `Y_k = X + N_k` with ordered noise covariances
//! `0 ≺ Σ_1 ⪯ … ⪯ Σ_K` and an input covariance cap `E[XXᵀ] ⪯ S`.
//! Inputs are described by a [`MixtureSource`]: a finite auxiliary `U` with
//! `X | U = u ~ N(μ_u, C_u)`. A [`MarkovHierarchy`] adds coarser auxiliaries
//! `U_3, …, U_K` through stochastic tables so that `U_K → … → U_2 → X`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcore::{self, loewner_residual, MatError, SymMatrix};
use crate::report::VerificationReport;

/// Tolerance on probability vectors summing to one.
pub const PROB_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ChannelDoc", into = "ChannelDoc")]
pub struct BroadcastChannel {
    noise_covs: Vec<SymMatrix>,
    input_cap: SymMatrix,
}

impl BroadcastChannel {
    /// Structural construction: at least two users, all matrices of one size.
    ///
    /// The ordering and positivity invariants are reported by
    /// [`validate_channel`] rather than enforced here.
    pub fn new(noise_covs: Vec<SymMatrix>, input_cap: SymMatrix) -> Result<Self> {
        if noise_covs.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a broadcast channel needs at least 2 users, got {}",
                noise_covs.len()
            )));
        }
        let n = input_cap.dim();
        for cov in &noise_covs {
            if cov.dim() != n {
                return Err(MatError::DimensionMismatch(cov.dim(), n).into());
            }
        }
        Ok(Self {
            noise_covs,
            input_cap,
        })
    }

    pub fn dim(&self) -> usize {
        self.input_cap.dim()
    }

    pub fn num_users(&self) -> usize {
        self.noise_covs.len()
    }

    /// Noise covariance of user `k` (0-based).
    pub fn noise(&self, k: usize) -> &SymMatrix {
        &self.noise_covs[k]
    }

    pub fn noise_covs(&self) -> &[SymMatrix] {
        &self.noise_covs
    }

    pub fn input_cap(&self) -> &SymMatrix {
        &self.input_cap
    }

    /// Err with the names of the violated invariants if validation fails.
    pub fn ensure_valid(&self, tol: f64) -> Result<()> {
        let report = validate_channel(self, tol);
        if report.passed {
            return Ok(());
        }
        let failed: Vec<String> = report
            .residuals
            .iter()
            .filter(|r| !r.passes(report.tolerance_used))
            .map(|r| format!("{} (residual {:e})", r.label, r.value))
            .collect();
        Err(Error::InvalidChannel(failed.join(", ")))
    }
}

/// Checks `Σ_1 ≻ 0`, `Σ_k ⪯ Σ_{k+1}` and `S ≻ 0`.
pub fn validate_channel(ch: &BroadcastChannel, tol: f64) -> VerificationReport {
    let normalized_min = |m: &SymMatrix| m.min_eigenvalue() / (1.0 + m.spectral_norm());
    let mut b = VerificationReport::builder("channel", tol)
        .positive("Sigma_1 > 0", normalized_min(ch.noise(0)));
    for k in 0..ch.num_users() - 1 {
        let r = loewner_residual(ch.noise(k), ch.noise(k + 1)).unwrap_or(f64::NAN);
        b = b.at_least(format!("Sigma_{} <= Sigma_{}", k + 1, k + 2), r);
    }
    b.positive("S > 0", normalized_min(ch.input_cap()))
        .finish()
}

/// `½ ln((2πe)^n |cov|)` in nats.
pub fn gaussian_entropy(cov: &SymMatrix) -> Result<f64> {
    let n = cov.dim() as f64;
    Ok(0.5 * (n * (2.0 * PI * std::f64::consts::E).ln() + matcore::logdet(cov)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SourceDoc", into = "SourceDoc")]
pub struct MixtureSource {
    weights: Vec<f64>,
    means: Vec<DVector<f64>>,
    comp_covs: Vec<SymMatrix>,
}

impl MixtureSource {
    pub fn new(weights: Vec<f64>, means: Vec<DVector<f64>>, comp_covs: Vec<SymMatrix>) -> Result<Self> {
        let m = weights.len();
        if m == 0 {
            return Err(Error::InvalidInput("source needs at least one component".into()));
        }
        if means.len() != m || comp_covs.len() != m {
            return Err(Error::InvalidInput(format!(
                "source has {} weights, {} means and {} covariances",
                m,
                means.len(),
                comp_covs.len()
            )));
        }
        check_probability_vector(&weights, "source weights")?;
        let n = comp_covs[0].dim();
        for (u, (mu, cov)) in means.iter().zip(&comp_covs).enumerate() {
            if mu.len() != n {
                return Err(MatError::DimensionMismatch(mu.len(), n).into());
            }
            if cov.dim() != n {
                return Err(MatError::DimensionMismatch(cov.dim(), n).into());
            }
            if mu.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("mean {u} has a non-finite entry")));
            }
            let min_eig = cov.min_eigenvalue();
            if min_eig <= matcore::default_psd_tol(cov) || cov.inverse_pd().is_err() {
                return Err(Error::InvalidInput(format!(
                    "component covariance {u} is not positive definite (min eigenvalue {min_eig:e})"
                )));
            }
        }
        Ok(Self {
            weights,
            means,
            comp_covs,
        })
    }

    /// Single Gaussian component (`U` degenerate).
    pub fn gaussian(mean: DVector<f64>, cov: SymMatrix) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![cov])
    }

    pub fn dim(&self) -> usize {
        self.comp_covs[0].dim()
    }

    pub fn num_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[DVector<f64>] {
        &self.means
    }

    pub fn comp_covs(&self) -> &[SymMatrix] {
        &self.comp_covs
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dim());
        for (p, mu) in self.weights.iter().zip(&self.means) {
            acc += mu * *p;
        }
        acc
    }

    /// `E[Cov(X | U)] = Σ p_u C_u`.
    pub fn conditional_covariance(&self) -> SymMatrix {
        let mut acc = DMatrix::zeros(self.dim(), self.dim());
        for (p, c) in self.weights.iter().zip(&self.comp_covs) {
            acc += c.as_matrix() * *p;
        }
        SymMatrix::symmetrized(acc)
    }

    /// `Cov(X) = Σ p_u (C_u + μ_u μ_uᵀ) − μ̄ μ̄ᵀ`, with the spread term formed
    /// around `μ̄` for accuracy.
    pub fn aggregate_covariance(&self) -> SymMatrix {
        let mean = self.mean();
        let mut acc = self.conditional_covariance().into_matrix();
        for (p, mu) in self.weights.iter().zip(&self.means) {
            let d = mu - &mean;
            acc += (&d * d.transpose()) * *p;
        }
        SymMatrix::symmetrized(acc)
    }

    /// Loewner residual of `Cov(X) ⪯ S`.
    pub fn admissibility_residual(&self, cap: &SymMatrix) -> Result<f64> {
        Ok(loewner_residual(&self.aggregate_covariance(), cap)?)
    }

    pub fn is_admissible(&self, cap: &SymMatrix, tol: f64) -> Result<bool> {
        Ok(self.admissibility_residual(cap)? >= -tol)
    }

    /// Sub-mixture over the given components, renormalized.
    fn sub_mixture(&self, components: &[(usize, f64)]) -> Result<MixtureSource> {
        let total: f64 = components.iter().map(|(_, w)| w).sum();
        MixtureSource::new(
            components.iter().map(|(_, w)| w / total).collect(),
            components.iter().map(|(u, _)| self.means[*u].clone()).collect(),
            components.iter().map(|(u, _)| self.comp_covs[*u].clone()).collect(),
        )
    }
}

fn check_probability_vector(p: &[f64], what: &str) -> Result<()> {
    if let Some(bad) = p.iter().find(|x| !x.is_finite() || **x < 0.0) {
        return Err(Error::InvalidInput(format!("{what} contain an invalid probability {bad}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::InvalidInput(format!("{what} sum to {total}, not 1")));
    }
    Ok(())
}

/// Law of `X` given an auxiliary: one weighted sub-mixture per auxiliary symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalLaw {
    pub parts: Vec<(f64, MixtureSource)>,
}

impl ConditionalLaw {
    /// Conditioning on the source's own component label: every part is Gaussian.
    pub fn given_components(src: &MixtureSource) -> Self {
        let parts = src
            .weights
            .iter()
            .enumerate()
            .filter(|(_, p)| **p > 0.0)
            .map(|(u, p)| {
                let part = MixtureSource {
                    weights: vec![1.0],
                    means: vec![src.means[u].clone()],
                    comp_covs: vec![src.comp_covs[u].clone()],
                };
                (*p, part)
            })
            .collect();
        Self { parts }
    }

    /// Trivial auxiliary: the whole source is the single part.
    pub fn unconditioned(src: &MixtureSource) -> Self {
        Self {
            parts: vec![(1.0, src.clone())],
        }
    }

    pub fn dim(&self) -> usize {
        self.parts[0].1.dim()
    }

    /// True when every part is a single Gaussian component.
    pub fn is_gaussian(&self) -> bool {
        self.parts.iter().all(|(_, s)| s.num_components() == 1)
    }
}

/// Finite Markov chain of auxiliaries `U_K → … → U_2 → X`.
///
/// `transitions[i]` holds `P(U_{i+3} = row | U_{i+2} = col)`; every column is a
/// probability vector. Since Markov chains reverse, this describes the same
/// joint law as tables pointing from `U_{k+1}` to `U_k`, and the marginal of
/// `U_2` is `base.weights` by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HierarchyDoc", into = "HierarchyDoc")]
pub struct MarkovHierarchy {
    base: MixtureSource,
    transitions: Vec<DMatrix<f64>>,
}

impl MarkovHierarchy {
    pub fn new(base: MixtureSource, transitions: Vec<DMatrix<f64>>) -> Result<Self> {
        let mut width = base.num_components();
        for (i, t) in transitions.iter().enumerate() {
            if t.ncols() != width || t.nrows() == 0 {
                return Err(Error::InvalidInput(format!(
                    "transition table {} must have {} columns and at least one row, got {}x{}",
                    i + 1,
                    width,
                    t.nrows(),
                    t.ncols()
                )));
            }
            for c in 0..t.ncols() {
                let col: Vec<f64> = t.column(c).iter().copied().collect();
                check_probability_vector(&col, &format!("transition table {} column {}", i + 1, c))?;
            }
            width = t.nrows();
        }
        Ok(Self { base, transitions })
    }

    /// Hierarchy with only `U_2` (two users).
    pub fn single(base: MixtureSource) -> Self {
        Self {
            base,
            transitions: Vec::new(),
        }
    }

    pub fn base(&self) -> &MixtureSource {
        &self.base
    }

    pub fn transitions(&self) -> &[DMatrix<f64>] {
        &self.transitions
    }

    /// Number of users `K` this hierarchy serves (auxiliaries `U_2 … U_K`).
    pub fn num_users(&self) -> usize {
        self.transitions.len() + 2
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level < 2 || level > self.num_users() {
            return Err(Error::InvalidInput(format!(
                "auxiliary level must be in 2..={}, got {level}",
                self.num_users()
            )));
        }
        Ok(())
    }

    /// `P(U_level = v | U_2 = u)` as a `|U_level| x |U_2|` matrix.
    fn kernel_from_base(&self, level: usize) -> DMatrix<f64> {
        let m = self.base.num_components();
        let mut kernel = DMatrix::identity(m, m);
        for t in &self.transitions[..level - 2] {
            kernel = t * kernel;
        }
        kernel
    }

    /// Marginal law of `U_level`.
    pub fn marginal(&self, level: usize) -> Result<Vec<f64>> {
        self.check_level(level)?;
        let p = DVector::from_column_slice(self.base.weights());
        Ok((self.kernel_from_base(level) * p).iter().copied().collect())
    }

    /// Joint description of `(U_level, X)`.
    pub fn coarsen(&self, level: usize) -> Result<Coarsening> {
        self.check_level(level)?;
        if level == 2 {
            return Ok(Coarsening {
                level,
                labels: (0..self.base.num_components()).collect(),
                coarse_weights: self.base.weights().to_vec(),
                source: self.base.clone(),
            });
        }
        let kernel = self.kernel_from_base(level);
        let mut weights = Vec::new();
        let mut means = Vec::new();
        let mut covs = Vec::new();
        let mut labels = Vec::new();
        for v in 0..kernel.nrows() {
            for u in 0..kernel.ncols() {
                let joint = kernel[(v, u)] * self.base.weights[u];
                if joint > 0.0 {
                    weights.push(joint);
                    means.push(self.base.means[u].clone());
                    covs.push(self.base.comp_covs[u].clone());
                    labels.push(v);
                }
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let coarse_weights = self.marginal(level)?;
        Ok(Coarsening {
            level,
            source: MixtureSource::new(weights, means, covs)?,
            labels,
            coarse_weights,
        })
    }
}

/// `(U_k, X)` as a mixture over refined symbols `(u_k, u_2)`.
///
/// `labels[i]` is the `U_k` symbol of refined component `i`; `source` carries
/// the joint weights `p(u_k, u_2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coarsening {
    pub level: usize,
    pub source: MixtureSource,
    pub labels: Vec<usize>,
    pub coarse_weights: Vec<f64>,
}

impl Coarsening {
    /// Law of `X` given `U_k`: one sub-mixture per symbol with positive mass.
    pub fn law(&self) -> Result<ConditionalLaw> {
        let mut parts = Vec::new();
        for (v, &pv) in self.coarse_weights.iter().enumerate() {
            if pv <= 0.0 {
                continue;
            }
            let members: Vec<(usize, f64)> = self
                .labels
                .iter()
                .enumerate()
                .filter(|(_, l)| **l == v)
                .map(|(i, _)| (i, self.source.weights[i]))
                .collect();
            if members.is_empty() {
                continue;
            }
            parts.push((pv, self.source.sub_mixture(&members)?));
        }
        Ok(ConditionalLaw { parts })
    }
}

// JSON documents

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDoc {
    pub dim: usize,
    pub noise_covs: Vec<Rows>,
    pub input_cap: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SourceDoc {
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub comp_covs: Vec<Rows>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HierarchyDoc {
    #[serde(flatten)]
    pub source: SourceDoc,
    #[serde(default)]
    pub transitions: Vec<Rows>,
}

fn matrix_from_rows(rows: &Rows, dim: usize, what: &str) -> Result<SymMatrix> {
    if rows.len() != dim {
        return Err(Error::InvalidInput(format!(
            "{what} has {} rows, expected {dim}",
            rows.len()
        )));
    }
    SymMatrix::from_rows(rows).map_err(|e| Error::InvalidInput(format!("{what}: {e}")))
}

impl TryFrom<ChannelDoc> for BroadcastChannel {
    type Error = Error;
    fn try_from(doc: ChannelDoc) -> Result<Self> {
        let noise = doc
            .noise_covs
            .iter()
            .enumerate()
            .map(|(k, rows)| matrix_from_rows(rows, doc.dim, &format!("noise_covs[{k}]")))
            .collect::<Result<Vec<_>>>()?;
        let cap = matrix_from_rows(&doc.input_cap, doc.dim, "input_cap")?;
        BroadcastChannel::new(noise, cap)
    }
}

impl From<BroadcastChannel> for ChannelDoc {
    fn from(ch: BroadcastChannel) -> Self {
        ChannelDoc {
            dim: ch.dim(),
            noise_covs: ch.noise_covs.iter().map(SymMatrix::to_rows).collect(),
            input_cap: ch.input_cap.to_rows(),
        }
    }
}

impl TryFrom<SourceDoc> for MixtureSource {
    type Error = Error;
    fn try_from(doc: SourceDoc) -> Result<Self> {
        let means = doc
            .means
            .iter()
            .enumerate()
            .map(|(u, m)| {
                if m.len() != doc.dim {
                    Err(Error::InvalidInput(format!(
                        "means[{u}] has length {}, expected {}",
                        m.len(),
                        doc.dim
                    )))
                } else {
                    Ok(DVector::from_column_slice(m))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let covs = doc
            .comp_covs
            .iter()
            .enumerate()
            .map(|(u, rows)| matrix_from_rows(rows, doc.dim, &format!("comp_covs[{u}]")))
            .collect::<Result<Vec<_>>>()?;
        MixtureSource::new(doc.weights, means, covs)
    }
}

impl From<MixtureSource> for SourceDoc {
    fn from(src: MixtureSource) -> Self {
        SourceDoc {
            dim: src.dim(),
            weights: src.weights.clone(),
            means: src.means.iter().map(|m| m.iter().copied().collect()).collect(),
            comp_covs: src.comp_covs.iter().map(SymMatrix::to_rows).collect(),
        }
    }
}

impl TryFrom<HierarchyDoc> for MarkovHierarchy {
    type Error = Error;
    fn try_from(doc: HierarchyDoc) -> Result<Self> {
        let base = MixtureSource::try_from(doc.source)?;
        let tables = doc
            .transitions
            .iter()
            .enumerate()
            .map(|(i, rows)| {
                let cols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidInput(format!("transition table {} is ragged", i + 1)));
                }
                Ok(DMatrix::from_fn(rows.len(), cols, |r, c| rows[r][c]))
            })
            .collect::<Result<Vec<_>>>()?;
        MarkovHierarchy::new(base, tables)
    }
}

impl From<MarkovHierarchy> for HierarchyDoc {
    fn from(h: MarkovHierarchy) -> Self {
        HierarchyDoc {
            source: h.base.into(),
            transitions: h
                .transitions
                .iter()
                .map(|t| (0..t.nrows()).map(|r| t.row(r).iter().copied().collect()).collect())
                .collect(),
        }
    }
}
