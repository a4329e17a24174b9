//! One check per inequality, all sides evaluated without sampling.

use crate::error::{Error, Result};
use crate::estimators::{entropy_conditional, entropy_given, fisher_conditional, fisher_given};
use crate::matcore::{
    default_psd_tol, logdet, loewner_residual, matrix_line_integral, MatError, SymMatrix, DEFAULT_LINE_NODES,
};
use crate::model::{gaussian_entropy, ConditionalLaw, MarkovHierarchy, MixtureSource};
use crate::report::VerificationReport;

/// Relative spread below which component covariances count as equal.
const SAME_COV_TOL: f64 = 1e-12;

fn covariances_equal(src: &MixtureSource) -> bool {
    let first = &src.comp_covs()[0];
    let scale = 1.0 + first.frobenius_norm();
    src.comp_covs()
        .iter()
        .all(|c| (c - first).frobenius_norm() <= SAME_COV_TOL * scale)
}

/// Relative Frobenius distance, used for equality cases.
fn rel_gap(a: &SymMatrix, b: &SymMatrix) -> f64 {
    (a - b).frobenius_norm() / (1.0 + a.frobenius_norm().max(b.frobenius_norm()))
}

fn ordered(lower: &SymMatrix, upper: &SymMatrix, what: &str) -> Result<()> {
    let min_eig = (upper - lower).min_eigenvalue();
    if min_eig < -default_psd_tol(upper) {
        return Err(Error::InvalidInput(format!("{what}: {}", MatError::OrderViolation { min_eig })));
    }
    Ok(())
}

/// `J⁻¹(X + N | U) − Σ_N`.
pub(crate) fn fisher_gap(law: &ConditionalLaw, noise: &SymMatrix) -> Result<SymMatrix> {
    Ok(&fisher_given(law, noise)?.inverse_pd()? - noise)
}

/// `J(Y | U) ⪰ Cov(Y | U)⁻¹` with `Cov(Y | U) = Σ_u p_u (C_u + Σ_N)`.
pub fn check_cramer_rao(src: &MixtureSource, noise: &SymMatrix, tol: f64) -> Result<VerificationReport> {
    let j = fisher_conditional(src, noise)?;
    let cov = &src.conditional_covariance() + noise;
    let bound = cov.inverse_pd()?;
    let mut b = VerificationReport::builder("cramer_rao", tol)
        .at_least("J - Cov^-1 (min eig, normalized)", loewner_residual(&bound, &j)?)
        .info("J - Cov^-1 (min eig)", (&j - &bound).min_eigenvalue());
    if covariances_equal(src) {
        b = b
            .zero("J - Cov^-1 (equality gap)", rel_gap(&j, &bound))
            .note("all component covariances equal: equality case");
    }
    Ok(b.finish())
}

/// `J⁻¹(X + V_b | U) − Σ_b ⪰ J⁻¹(X + V_a | U) − Σ_a` for `Σ_a ⪯ Σ_b`.
pub fn check_fisher_shift(
    src: &MixtureSource,
    sigma_a: &SymMatrix,
    sigma_b: &SymMatrix,
    tol: f64,
) -> Result<VerificationReport> {
    ordered(sigma_a, sigma_b, "fisher shift needs Sigma_a <= Sigma_b")?;
    let law = ConditionalLaw::given_components(src);
    let lo = fisher_gap(&law, sigma_a)?;
    let hi = fisher_gap(&law, sigma_b)?;
    let mut b = VerificationReport::builder("fisher_shift", tol)
        .at_least("shifted gap order (min eig, normalized)", loewner_residual(&lo, &hi)?)
        .info("shifted gap order (min eig)", (&hi - &lo).min_eigenvalue());
    if src.num_components() == 1 {
        b = b
            .zero("shifted gap equality", rel_gap(&lo, &hi))
            .note("single component: both sides equal C");
    }
    Ok(b.finish())
}

/// Central-difference gradient of `h(X + N | U)` in `Σ_N` against `½ J(X + N | U)`.
///
/// Off-diagonal steps move entries `(i, j)` and `(j, i)` together, so the
/// difference quotient is halved to get the entry of the symmetric gradient.
pub fn check_debruijn(src: &MixtureSource, noise: &SymMatrix, fd_step: f64, tol: f64) -> Result<VerificationReport> {
    if !(fd_step > 0.0) {
        return Err(Error::InvalidInput("fd_step must be positive".into()));
    }
    let margin = noise.min_eigenvalue();
    if !(margin > fd_step) {
        return Err(Error::InvalidInput(format!(
            "fd_step {fd_step:e} exceeds the noise covariance margin {margin:e}"
        )));
    }
    let n = noise.dim();
    let half_j = fisher_conditional(src, noise)?.scale(0.5);
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let mut e = nalgebra::DMatrix::zeros(n, n);
            e[(i, j)] = fd_step;
            e[(j, i)] = fd_step;
            let e = SymMatrix::from_matrix(e)?;
            let up = entropy_conditional(src, &(noise + &e))?;
            let down = entropy_conditional(src, &(noise - &e))?;
            let mut g = (up - down) / (2.0 * fd_step);
            if i != j {
                g *= 0.5;
            }
            worst = worst.max((g - half_j.get(i, j)).abs());
        }
    }
    Ok(VerificationReport::builder("debruijn", tol)
        .zero("max |grad h - J/2|", worst)
        .info("fd_step", fd_step)
        .finish())
}

/// `h(Y | U) ≥ ½ ln((2πe)^n |J⁻¹(Y | U)|)`.
pub fn check_dembo(src: &MixtureSource, noise: &SymMatrix, tol: f64) -> Result<VerificationReport> {
    let h = entropy_conditional(src, noise)?;
    let j = fisher_conditional(src, noise)?;
    let bound = gaussian_entropy(&j.inverse_pd()?)?;
    let mut b = VerificationReport::builder("dembo", tol)
        .at_least("h - Gaussian bound", h - bound)
        .info("h", h)
        .info("bound", bound);
    if src.num_components() == 1 {
        b = b.zero("Dembo equality gap", h - bound).note("single component: equality case");
    }
    Ok(b.finish())
}

/// `J(X + N | U_fine) ⪰ J(X + N | U_coarse)` along the hierarchy.
///
/// Levels follow the hierarchy: `2` is the base component label and larger
/// levels are coarser.
pub fn check_fisher_dpi(
    h: &MarkovHierarchy,
    level_fine: usize,
    level_coarse: usize,
    noise: &SymMatrix,
    tol: f64,
) -> Result<VerificationReport> {
    if level_fine > level_coarse {
        return Err(Error::InvalidInput(format!(
            "fine level {level_fine} must not exceed coarse level {level_coarse}"
        )));
    }
    let fine_law = h.coarsen(level_fine)?.law()?;
    let j_fine = fisher_given(&fine_law, noise)?;
    let j_coarse = if level_coarse == level_fine {
        j_fine.clone()
    } else {
        fisher_given(&h.coarsen(level_coarse)?.law()?, noise)?
    };
    Ok(VerificationReport::builder("fisher_dpi", tol)
        .at_least("J_fine - J_coarse (min eig, normalized)", loewner_residual(&j_coarse, &j_fine)?)
        .info("J_fine - J_coarse (min eig)", (&j_fine - &j_coarse).min_eigenvalue())
        .info("level_fine", level_fine as f64)
        .info("level_coarse", level_coarse as f64)
        .finish())
}

/// `J(X' + Y' | U) ⪯ [J(X' | U)⁻¹ + J(Y')⁻¹]⁻¹` with `X' = X + N_a`, `Y' = N_b`.
pub fn check_fisher_convolution(
    src: &MixtureSource,
    sigma_a: &SymMatrix,
    sigma_b: &SymMatrix,
    tol: f64,
) -> Result<VerificationReport> {
    for (name, s) in [("Sigma_a", sigma_a), ("Sigma_b", sigma_b)] {
        if !(s.min_eigenvalue() > 0.0) {
            return Err(Error::InvalidInput(format!("{name} must be positive definite")));
        }
    }
    let jx = fisher_conditional(src, sigma_a)?;
    let lhs = fisher_conditional(src, &(sigma_a + sigma_b))?;
    let rhs = (&jx.inverse_pd()? + sigma_b).inverse_pd()?;
    let mut b = VerificationReport::builder("fisher_convolution", tol)
        .at_least("bound - J(X'+Y'|U) (min eig, normalized)", loewner_residual(&lhs, &rhs)?)
        .info("bound - J(X'+Y'|U) (min eig)", (&rhs - &lhs).min_eigenvalue());
    if src.num_components() == 1 {
        b = b
            .zero("convolution equality gap", rel_gap(&lhs, &rhs))
            .note("single component: equality case");
    }
    Ok(b.finish())
}

/// Entropy change along the noise path `Σ_1 → Σ_2` against the Fisher field.
///
/// Checks `h(X + N_1 | V) − h(X + N_2 | V) = −½ ∫ J(X + N | V) dΣ_N` and that
/// the field dominates the Gaussian comparison field `(A + Σ_N)⁻¹` with
/// `A = J⁻¹(X + N_2 | V) − Σ_2`, so that its integral is nonnegative.
pub fn check_entropy_path(
    law: &ConditionalLaw,
    sigma_1: &SymMatrix,
    sigma_2: &SymMatrix,
    tol: f64,
) -> Result<VerificationReport> {
    ordered(sigma_1, sigma_2, "entropy path needs Sigma_1 <= Sigma_2")?;
    let h1 = entropy_given(law, sigma_1)?;
    let h2 = entropy_given(law, sigma_2)?;
    let exact = matrix_line_integral(|s: &SymMatrix| fisher_given(law, s), sigma_1, sigma_2, DEFAULT_LINE_NODES)?;
    let a = fisher_gap(law, sigma_2)?;
    let gauss = matrix_line_integral(
        |s: &SymMatrix| -> Result<SymMatrix> { Ok((&a + s).inverse_pd()?) },
        sigma_1,
        sigma_2,
        DEFAULT_LINE_NODES,
    )?;
    let closed = logdet(&(&a + sigma_2))? - logdet(&(&a + sigma_1))?;
    Ok(VerificationReport::builder("entropy_path", tol)
        .zero("h1 - h2 + integral/2", h1 - h2 + 0.5 * exact)
        .at_least("integral of J - (A + Sigma_N)^-1, halved", 0.5 * (exact - gauss))
        .info("Gaussian field quadrature error", gauss - closed)
        .info("h1 - h2", h1 - h2)
        .finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::monte_carlo::{fisher_unconditional, stream_rng};
    use crate::instances::{random_mixture, random_spd, scalar_pair};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn s(x: f64) -> SymMatrix {
        SymMatrix::from_diagonal(&[x])
    }

    #[test]
    fn cramer_rao_examples() {
        let r = check_cramer_rao(&scalar_pair(), &s(1.0), 1e-8).unwrap();
        assert!(r.passed);
        assert_abs_diff_eq!(r.residual("J - Cov^-1 (min eig)").unwrap(), 0.375 - 1.0 / 3.0, epsilon = 1e-15);
        assert!(r.residual("J - Cov^-1 (equality gap)").is_none());
        let g = MixtureSource::gaussian(DVector::from_element(2, 0.3), random_spd(&mut stream_rng(5, 0), 2, 0.5, 1.0))
            .unwrap();
        let r = check_cramer_rao(&g, &SymMatrix::identity(2), 1e-8).unwrap();
        assert!(r.passed && r.residual("J - Cov^-1 (equality gap)").unwrap() < 1e-14);
    }

    #[test]
    fn cramer_rao_random_sources() {
        let mut rng = stream_rng(6, 0);
        for _ in 0..50 {
            let src = random_mixture(&mut rng, 2, 3).unwrap();
            let noise = random_spd(&mut rng, 2, 0.2, 1.0);
            assert!(check_cramer_rao(&src, &noise, 1e-8).unwrap().passed);
        }
    }

    #[test]
    fn fisher_shift_examples() {
        let r = check_fisher_shift(&scalar_pair(), &s(1.0), &s(2.0), 1e-8).unwrap();
        // J_a⁻¹ − 1 = 5/3, J_b⁻¹ − 2 = 1.75
        assert_abs_diff_eq!(r.residual("shifted gap order (min eig)").unwrap(), 1.75 - 5.0 / 3.0, epsilon = 1e-12);
        assert!(r.passed);
        let same = check_fisher_shift(&scalar_pair(), &s(1.5), &s(1.5), 1e-8).unwrap();
        assert_eq!(same.residual("shifted gap order (min eig)").unwrap(), 0.0);
        let g = MixtureSource::gaussian(DVector::zeros(1), s(2.0)).unwrap();
        let r = check_fisher_shift(&g, &s(1.0), &s(3.0), 1e-8).unwrap();
        assert!(r.residual("shifted gap equality").unwrap() < 1e-14);
        assert!(check_fisher_shift(&scalar_pair(), &s(2.0), &s(1.0), 1e-8).is_err());
    }

    #[test]
    fn debruijn_examples() {
        let r = check_debruijn(&scalar_pair(), &s(1.0), 1e-4, 1e-8).unwrap();
        assert!(r.passed, "{r:?}");
        // d h / d σ² = J / 2 = 0.1875; check the gradient directly as well
        let fd = (entropy_conditional(&scalar_pair(), &s(1.0001)).unwrap()
            - entropy_conditional(&scalar_pair(), &s(0.9999)).unwrap())
            / 2e-4;
        assert_abs_diff_eq!(fd, 0.1875, epsilon = 1e-9);
        let mut rng = stream_rng(7, 0);
        for _ in 0..10 {
            let src = random_mixture(&mut rng, 2, 3).unwrap();
            let noise = random_spd(&mut rng, 2, 0.3, 1.0);
            let r = check_debruijn(&src, &noise, 1e-4, 1e-6).unwrap();
            assert!(r.passed, "{r:?}");
        }
        assert!(check_debruijn(&scalar_pair(), &s(1e-5), 1e-4, 1e-6).is_err());
    }

    #[test]
    fn dembo_examples() {
        let r = check_dembo(&scalar_pair(), &s(1.0), 1e-9).unwrap();
        let want = 0.5 * 8f64.sqrt().ln() - 0.5 * (8.0f64 / 3.0).ln();
        assert_abs_diff_eq!(r.residual("h - Gaussian bound").unwrap(), want, epsilon = 1e-14);
        assert!(want > 0.0 && r.passed);
        let g = MixtureSource::gaussian(DVector::zeros(1), s(2.0)).unwrap();
        assert!(check_dembo(&g, &s(1.0), 1e-12).unwrap().residual("Dembo equality gap").unwrap().abs() < 1e-14);
    }

    #[test]
    fn dpi_examples() {
        let merged = MarkovHierarchy::new(scalar_pair(), vec![DMatrix::from_element(1, 2, 1.0)]).unwrap();
        let r = check_fisher_dpi(&merged, 2, 3, &s(1.0), 1e-8).unwrap();
        assert!(r.passed);
        let same = check_fisher_dpi(&merged, 3, 3, &s(1.0), 1e-8).unwrap();
        assert_eq!(same.residual("J_fine - J_coarse (min eig)").unwrap(), 0.0);
        assert!(check_fisher_dpi(&merged, 3, 2, &s(1.0), 1e-8).is_err());

        // the merged symbol's Fisher information agrees with a Monte Carlo estimate
        let j_coarse = fisher_given(&merged.coarsen(3).unwrap().law().unwrap(), &s(1.0)).unwrap();
        let mc = fisher_unconditional(&scalar_pair(), &s(1.0), 100_000, 11).unwrap();
        assert!((j_coarse.get(0, 0) - mc.value.get(0, 0)).abs() <= mc.envelope());
        assert!(j_coarse.get(0, 0) < 0.375);

        // identical components merged lose nothing
        let twin = MixtureSource::new(
            vec![0.3, 0.7],
            vec![DVector::from_element(1, 0.5); 2],
            vec![s(1.2), s(1.2)],
        )
        .unwrap();
        let h = MarkovHierarchy::new(twin, vec![DMatrix::from_element(1, 2, 1.0)]).unwrap();
        let r = check_fisher_dpi(&h, 2, 3, &s(0.7), 1e-8).unwrap();
        assert!(r.residual("J_fine - J_coarse (min eig)").unwrap().abs() < 1e-12);
    }

    #[test]
    fn convolution_examples() {
        let r = check_fisher_convolution(&scalar_pair(), &s(1.0), &s(1.0), 1e-8).unwrap();
        // harmonic bound 1/(1/0.375 + 1) vs ½(1/3 + 1/5)
        let want = 1.0 / (1.0 / 0.375 + 1.0) - 0.5 * (1.0 / 3.0 + 1.0 / 5.0);
        assert_abs_diff_eq!(r.residual("bound - J(X'+Y'|U) (min eig)").unwrap(), want, epsilon = 1e-14);
        assert!(want > 0.0 && r.passed);
        let g = MixtureSource::gaussian(DVector::zeros(1), s(2.0)).unwrap();
        let r = check_fisher_convolution(&g, &s(1.0), &s(0.5), 1e-8).unwrap();
        assert!(r.residual("convolution equality gap").unwrap() < 1e-14);
        let mut rng = stream_rng(8, 0);
        for _ in 0..50 {
            let src = random_mixture(&mut rng, 2, 3).unwrap();
            let a = random_spd(&mut rng, 2, 0.1, 1.0);
            let b = random_spd(&mut rng, 2, 0.1, 1.0);
            assert!(check_fisher_convolution(&src, &a, &b, 1e-8).unwrap().passed);
        }
    }

    #[test]
    fn entropy_path_identity() {
        let mut rng = stream_rng(9, 0);
        for _ in 0..5 {
            let src = random_mixture(&mut rng, 2, 3).unwrap();
            let s1 = random_spd(&mut rng, 2, 0.2, 1.0);
            let s2 = &s1 + &random_spd(&mut rng, 2, 0.1, 1.0);
            let law = ConditionalLaw::given_components(&src);
            let r = check_entropy_path(&law, &s1, &s2, 1e-6).unwrap();
            assert!(r.passed, "{r:?}");
            assert!(r.residual("h1 - h2 + integral/2").unwrap().abs() < 1e-10);
        }
        let law = ConditionalLaw::given_components(&scalar_pair());
        assert!(check_entropy_path(&law, &s(2.0), &s(1.0), 1e-6).is_err());
    }
}
