//! Information quantities of `Y = X + N` for Gaussian-mixture inputs.
//!
//! Quantities conditional on the component label are closed-form because
//! `X | U = u` is Gaussian:
//!
//! ```text
//! J(X + N | U) = Σ_u p_u (C_u + Σ_N)⁻¹
//! h(X + N | U) = Σ_u p_u ½ ln((2πe)^n |C_u + Σ_N|)
//! ```
//!
//! Unconditional quantities (the law of `X + N` is a mixture) are estimated
//! by seeded Monte Carlo ([`monte_carlo`]) or by deterministic Gauss–Hermite
//! cubature ([`cubature`]) when they are conditional on a coarser auxiliary.

pub mod cubature;
pub mod density;
pub mod monte_carlo;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;
use crate::model::{gaussian_entropy, BroadcastChannel, ConditionalLaw, MixtureSource};

pub use density::NoisyMixture;
pub use monte_carlo::{
    entropy_unconditional, fisher_unconditional, mean_score, sample_batch, Estimate, MatrixEstimate,
    SampleBatch, DEFAULT_SAMPLES,
};

/// `ln f_Y(y)` with log-sum-exp stabilization.
pub fn mixture_logpdf(src: &MixtureSource, noise: &SymMatrix, y: &DVector<f64>) -> Result<f64> {
    Ok(NoisyMixture::new(src, noise)?.logpdf(y))
}

/// `∇_y ln f_Y(y)`.
pub fn score(src: &MixtureSource, noise: &SymMatrix, y: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(NoisyMixture::new(src, noise)?.score(y))
}

/// `J(X + N | U) = Σ_u p_u (C_u + Σ_N)⁻¹`.
pub fn fisher_conditional(src: &MixtureSource, noise: &SymMatrix) -> Result<SymMatrix> {
    let n = src.dim();
    let mut acc = DMatrix::zeros(n, n);
    for (p, c) in src.weights().iter().zip(src.comp_covs()) {
        let inv = (c + noise)
            .inverse_pd()
            .map_err(|e| Error::InvalidInput(format!("C_u + noise covariance: {e}")))?;
        acc += inv.as_matrix() * *p;
    }
    Ok(SymMatrix::symmetrized(acc))
}

/// `h(X + N | U) = Σ_u p_u ½ ln((2πe)^n |C_u + Σ_N|)`.
pub fn entropy_conditional(src: &MixtureSource, noise: &SymMatrix) -> Result<f64> {
    src.weights()
        .iter()
        .zip(src.comp_covs())
        .try_fold(0.0, |acc, (p, c)| Ok(acc + p * gaussian_entropy(&(c + noise))?))
}

/// `J(X + N | V)` for an arbitrary finite auxiliary `V` described by `law`.
///
/// Gaussian parts are closed-form; mixture parts use cubature.
pub fn fisher_given(law: &ConditionalLaw, noise: &SymMatrix) -> Result<SymMatrix> {
    let n = law.dim();
    let nodes = cubature::default_nodes(n);
    let mut acc = DMatrix::zeros(n, n);
    for (p, part) in &law.parts {
        acc += cubature::fisher_cubature(part, noise, nodes)?.as_matrix() * *p;
    }
    Ok(SymMatrix::symmetrized(acc))
}

/// `h(X + N | V)` for an arbitrary finite auxiliary `V` described by `law`.
pub fn entropy_given(law: &ConditionalLaw, noise: &SymMatrix) -> Result<f64> {
    let nodes = cubature::default_nodes(law.dim());
    law.parts.iter().try_fold(0.0, |acc, (p, part)| {
        Ok(acc + p * cubature::entropy_cubature(part, noise, nodes)?)
    })
}

/// The two single-letter terms of the two-user region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutualInfoTerms {
    /// `I(X; Y_1 | U)`, exact.
    pub i1: f64,
    /// `I(U; Y_2)`, Monte Carlo.
    pub i2: f64,
    pub i2_stderr: f64,
    /// Whether `Cov(X) ⪯ S` holds within the default PSD tolerance.
    pub admissible: bool,
}

/// `I(X; Y_1 | U) = h(Y_1 | U) − h(N_1)` and `I(U; Y_2) = h(Y_2) − h(Y_2 | U)`.
pub fn mutual_info_terms(
    src: &MixtureSource,
    ch: &BroadcastChannel,
    samples: usize,
    seed: u64,
) -> Result<MutualInfoTerms> {
    if ch.num_users() != 2 {
        return Err(Error::Unsupported(format!(
            "mutual_info_terms needs a two-user channel, got {} users",
            ch.num_users()
        )));
    }
    let cap = ch.input_cap();
    let admissible = src.is_admissible(cap, crate::matcore::default_psd_tol(cap))?;
    let i1 = entropy_conditional(src, ch.noise(0))? - gaussian_entropy(ch.noise(0))?;
    let hy2 = entropy_unconditional(src, ch.noise(1), samples, seed)?;
    let i2 = hy2.value - entropy_conditional(src, ch.noise(1))?;
    Ok(MutualInfoTerms {
        i1,
        i2,
        i2_stderr: hy2.stderr,
        admissible,
    })
}
