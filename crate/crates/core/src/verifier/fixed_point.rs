//! The interpolant `A(t)` whose Gaussian entropy matches `h(Y_k | U_k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{entropy_given, fisher_given};
use crate::matcore::{default_psd_tol, loewner_residual, SymMatrix};
use crate::model::{gaussian_entropy, BroadcastChannel, ConditionalLaw, MixtureSource};

pub const MAX_BISECTIONS: usize = 200;

/// Bisection stops once `|r(t) − h|` is below this.
const MATCH_STOP: f64 = 1e-13;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixedPointResult {
    pub t_star: f64,
    pub a: SymMatrix,
    /// `|r(t*) − h(Y_k | U_k)|`.
    pub entropy_match_residual: f64,
    /// `h(Y_k | U_k)`.
    pub target: f64,
    /// `J⁻¹(Y_k | U_k) − Σ_k`, the `t = 0` end.
    pub lower: SymMatrix,
    pub r0: f64,
    pub r1: f64,
    pub iterations: usize,
    /// Loewner residuals of `lower ⪯ A` and `A ⪯ upper`.
    pub sandwich_lower: f64,
    pub sandwich_upper: f64,
}

/// Solves `½ ln((2πe)^n |A(t) + Σ_k|) = h(Y_k | U)` for the auxiliary law `law`,
/// with `A(t) = (1 − t)(J⁻¹(Y_k | U) − Σ_k) + t · upper`.
///
/// `r(t)` is nondecreasing, so bisection applies. If `r(0) ≥ h` (within
/// `tol`) the lower end already matches and `t* = 0`; symmetrically `t* = 1`
/// when `r(1) ≤ h`. A bracket that fails by more than `tol` is an
/// [`Error::Bracketing`].
pub fn solve_fixed_point_law(
    law: &ConditionalLaw,
    noise: &SymMatrix,
    upper: &SymMatrix,
    tol: f64,
) -> Result<FixedPointResult> {
    let j = fisher_given(law, noise)?;
    let target = entropy_given(law, noise)?;
    let lower = &j.inverse_pd()? - noise;
    solve_between(&lower, upper, noise, target, tol)
}

pub(crate) fn solve_between(
    lower: &SymMatrix,
    upper: &SymMatrix,
    noise: &SymMatrix,
    target: f64,
    tol: f64,
) -> Result<FixedPointResult> {
    let at = |t: f64| &lower.scale(1.0 - t) + &upper.scale(t);
    let r = |t: f64| gaussian_entropy(&(&at(t) + noise));
    let (r0, r1) = (r(0.0)?, r(1.0)?);
    if r0 > target + tol || r1 < target - tol {
        return Err(Error::Bracketing { r0, r1, target });
    }
    let mut iterations = 0;
    let t_star = if r0 >= target {
        0.0
    } else if r1 <= target {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let (mut best_t, mut best_gap) = if target - r0 < r1 - target { (0.0, target - r0) } else { (1.0, r1 - target) };
        while iterations < MAX_BISECTIONS {
            iterations += 1;
            let mid = 0.5 * (lo + hi);
            let rm = r(mid)?;
            let gap = (rm - target).abs();
            if gap < best_gap {
                best_gap = gap;
                best_t = mid;
            }
            if gap <= MATCH_STOP || mid <= lo || mid >= hi {
                break;
            }
            if rm < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best_t
    };
    let a = at(t_star);
    let entropy_match_residual = (r(t_star)? - target).abs();
    let sandwich_lower = loewner_residual(lower, &a)?;
    let sandwich_upper = loewner_residual(&a, upper)?;
    let slack = default_psd_tol(upper);
    if sandwich_lower < -slack || sandwich_upper < -slack {
        return Err(Error::Numerical(format!(
            "A(t*) left the sandwich: residuals {sandwich_lower:e}, {sandwich_upper:e}"
        )));
    }
    Ok(FixedPointResult {
        t_star,
        a,
        entropy_match_residual,
        target,
        lower: lower.clone(),
        r0,
        r1,
        iterations,
        sandwich_lower,
        sandwich_upper,
    })
}

/// Fixed point for user `user` (0-based, noise `Σ_{user+1}`) with `U` the
/// source's component label.
pub fn solve_fixed_point(
    src: &MixtureSource,
    ch: &BroadcastChannel,
    user: usize,
    upper_cap: &SymMatrix,
    tol: f64,
) -> Result<FixedPointResult> {
    if user >= ch.num_users() {
        return Err(Error::InvalidInput(format!(
            "user {user} out of range for {} users",
            ch.num_users()
        )));
    }
    solve_fixed_point_law(&ConditionalLaw::given_components(src), ch.noise(user), upper_cap, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{scalar_pair, scalar_pair_channel};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn s(x: f64) -> SymMatrix {
        SymMatrix::from_diagonal(&[x])
    }

    #[test]
    fn gaussian_source_is_fixed_at_zero() {
        let b = SymMatrix::from_rows(&[vec![0.7, 0.1], vec![0.1, 0.5]]).unwrap();
        let src = MixtureSource::gaussian(DVector::zeros(2), b.clone()).unwrap();
        let cap = SymMatrix::identity(2).scale(2.0);
        let ch = BroadcastChannel::new(vec![SymMatrix::identity(2), SymMatrix::identity(2).scale(1.5)], cap.clone())
            .unwrap();
        let fp = solve_fixed_point(&src, &ch, 1, &cap, 1e-10).unwrap();
        assert_eq!(fp.t_star, 0.0);
        assert!((&fp.a - &b).frobenius_norm() < 1e-12);
    }

    #[test]
    fn constant_aux_with_full_covariance() {
        // A(t) is constant at S, so every t matches; t* = 0 is reported
        let cap = s(2.0);
        let src = MixtureSource::gaussian(DVector::zeros(1), cap.clone()).unwrap();
        let ch = BroadcastChannel::new(vec![s(1.0), s(2.0)], cap.clone()).unwrap();
        let fp = solve_fixed_point(&src, &ch, 1, &cap, 1e-10).unwrap();
        assert!((&fp.a - &cap).frobenius_norm() < 1e-12);
        assert!(fp.entropy_match_residual < 1e-12);
    }

    #[test]
    fn scalar_pair_bisection() {
        let ch = scalar_pair_channel();
        let fp = solve_fixed_point(&scalar_pair(), &ch, 1, ch.input_cap(), 1e-10).unwrap();
        assert!(fp.t_star > 0.0 && fp.t_star < 1.0);
        assert!(fp.entropy_match_residual <= 1e-10);
        assert!(fp.iterations <= 60, "{}", fp.iterations);
        assert!(fp.sandwich_lower >= 0.0 && fp.sandwich_upper >= 0.0);
        // J = ½(1/3 + 1/5) at σ² = 2
        assert_abs_diff_eq!(fp.lower.get(0, 0), 1.75, epsilon = 1e-12);
        assert_abs_diff_eq!(gaussian_entropy(&(&fp.a + &s(2.0))).unwrap(), fp.target, epsilon = 1e-10);
    }

    #[test]
    fn broken_bracket_is_reported() {
        // an upper end below the Dembo end cannot bracket
        let ch = scalar_pair_channel();
        let err = solve_fixed_point(&scalar_pair(), &ch, 1, &s(0.1), 1e-10).unwrap_err();
        assert!(matches!(err, Error::Bracketing { .. }));
        assert!(solve_fixed_point(&scalar_pair(), &ch, 2, &s(4.0), 1e-10).is_err());
    }
}
