//! Monotone interpolation between Dembo's bound and equality.
//!
//! `f(ε) = h(X + √ε N | U) − ½ ln |2πe (J⁻¹(X | U) + εΣ)|` is nonincreasing in
//! `ε` and tends to zero; it lies between `½ Σ ln(ε / (λ_i + ε))` and
//! `½ Σ ln((λ̃_i + ε) / (λ_i + ε))`, where `λ` and `λ̃` are the eigenvalues of
//! `Σ^{-1/2} J⁻¹(X | U) Σ^{-1/2}` and `Σ^{-1/2} Cov(X) Σ^{-1/2}`.

use crate::error::{Error, Result};
use crate::matcore::{logdet, sqrt_psd, SymMatrix};
use crate::model::MixtureSource;
use crate::report::VerificationReport;

/// Bound on `|f|` at the largest grid point.
pub const TAIL_TOL: f64 = 5e-3;

/// The default grid `10⁻², …, 10³`.
pub fn default_grid() -> Vec<f64> {
    vec![1e-2, 1e-1, 1.0, 10.0, 100.0, 1000.0]
}

/// `f(ε)` with every term closed-form (the `2πe` factors cancel).
pub fn f_epsilon(src: &MixtureSource, sigma: &SymMatrix, eps: f64) -> Result<f64> {
    let j_inv = j_inverse(src)?;
    f_with(src, &j_inv, sigma, eps)
}

fn j_inverse(src: &MixtureSource) -> Result<SymMatrix> {
    let mut j = SymMatrix::zeros(src.dim());
    for (p, c) in src.weights().iter().zip(src.comp_covs()) {
        j = &j + &c.inverse_pd()?.scale(*p);
    }
    Ok(j.inverse_pd()?)
}

fn f_with(src: &MixtureSource, j_inv: &SymMatrix, sigma: &SymMatrix, eps: f64) -> Result<f64> {
    let noise = sigma.scale(eps);
    let mut h = 0.0;
    for (p, c) in src.weights().iter().zip(src.comp_covs()) {
        h += p * 0.5 * logdet(&(c + &noise))?;
    }
    Ok(h - 0.5 * logdet(&(j_inv + &noise))?)
}

pub fn check_f_epsilon(
    src: &MixtureSource,
    sigma: &SymMatrix,
    eps_grid: &[f64],
    tol: f64,
) -> Result<VerificationReport> {
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(*e > 0.0)) || eps_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("eps grid must be positive and increasing".into()));
    }
    if !(sigma.min_eigenvalue() > 0.0) {
        return Err(Error::InvalidInput("Sigma must be positive definite".into()));
    }
    let j_inv = j_inverse(src)?;
    let whiten = sqrt_psd(sigma)?.inverse_pd()?;
    let lam = j_inv.congruence(whiten.as_matrix()).eigenvalues();
    let lam_cov = src.aggregate_covariance().congruence(whiten.as_matrix()).eigenvalues();
    let values: Vec<f64> = eps_grid
        .iter()
        .map(|e| f_with(src, &j_inv, sigma, *e))
        .collect::<Result<_>>()?;

    let mut b = VerificationReport::builder("f_epsilon", tol);
    for (i, e) in eps_grid.iter().enumerate() {
        b = b.info(format!("f({e:e})"), values[i]);
    }
    let mut worst_step = f64::INFINITY;
    for w in values.windows(2) {
        worst_step = worst_step.min(w[0] - w[1]);
    }
    if values.len() > 1 {
        b = b.at_least("min f(eps_i) - f(eps_i+1)", worst_step);
    }
    let mut lower_gap = f64::INFINITY;
    let mut upper_gap = f64::INFINITY;
    for (e, f) in eps_grid.iter().zip(&values) {
        let lo: f64 = lam.iter().map(|l| 0.5 * (e / (l + e)).ln()).sum();
        let hi: f64 = lam_cov.iter().zip(&lam).map(|(lt, l)| 0.5 * ((lt + e) / (l + e)).ln()).sum();
        lower_gap = lower_gap.min(f - lo);
        upper_gap = upper_gap.min(hi - f);
    }
    let last = *values.last().expect("nonempty grid");
    b = b
        .at_least("f(eps_min)", values[0])
        .at_least("min f - lower envelope", lower_gap)
        .at_least("min upper envelope - f", upper_gap)
        .at_least("tail bound - |f(eps_max)|", TAIL_TOL - last.abs());
    if src.num_components() == 1 {
        let worst = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        b = b.zero("max |f| (single component)", worst).note("single component: f vanishes");
    }
    Ok(b.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::monte_carlo::stream_rng;
    use crate::estimators::entropy_conditional;
    use crate::instances::{random_mixture, random_spd, scalar_pair};
    use crate::model::gaussian_entropy;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn s(x: f64) -> SymMatrix {
        SymMatrix::from_diagonal(&[x])
    }

    #[test]
    fn matches_definition() {
        // h(X + √ε N | U) − Gaussian entropy of J⁻¹ + εΣ
        let src = scalar_pair();
        for eps in [0.01, 1.0, 50.0] {
            let h = entropy_conditional(&src, &s(eps * 1.5)).unwrap();
            let j_inv = 1.0 / (0.5 * (1.0 + 1.0 / 3.0));
            let want = h - gaussian_entropy(&s(j_inv + eps * 1.5)).unwrap();
            assert_abs_diff_eq!(f_epsilon(&src, &s(1.5), eps).unwrap(), want, epsilon = 1e-13);
        }
    }

    #[test]
    fn scalar_pair_profile() {
        let src = scalar_pair();
        let f = |e| f_epsilon(&src, &s(1.0), e).unwrap();
        assert!(f(0.01) > f(1.0) && f(1.0) > f(100.0));
        assert!(f(1000.0).abs() < 1e-3);
        let r = check_f_epsilon(&src, &s(1.0), &default_grid(), 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn single_component_vanishes() {
        let c = random_spd(&mut stream_rng(12, 0), 3, 0.3, 2.0);
        let src = MixtureSource::gaussian(DVector::zeros(3), c).unwrap();
        let r = check_f_epsilon(&src, &SymMatrix::identity(3), &default_grid(), 1e-10).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn random_mixtures_pass() {
        let mut rng = stream_rng(13, 0);
        for n in 1..=3 {
            for _ in 0..5 {
                let src = random_mixture(&mut rng, n, 3).unwrap();
                let sigma = random_spd(&mut rng, n, 0.3, 1.5);
                let r = check_f_epsilon(&src, &sigma, &default_grid(), 1e-9).unwrap();
                assert!(r.passed, "{r:?}");
            }
        }
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(check_f_epsilon(&scalar_pair(), &s(1.0), &[1.0, 0.5], 1e-9).is_err());
        assert!(check_f_epsilon(&scalar_pair(), &s(1.0), &[], 1e-9).is_err());
    }
}
