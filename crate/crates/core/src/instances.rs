//! Random and bundled test instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimators::cubature::normal_grid;
use crate::matcore::{default_psd_tol, loewner_leq, sqrt_psd, SymMatrix};
use crate::model::{BroadcastChannel, MarkovHierarchy, MixtureSource};

/// `Q diag(λ) Qᵀ` with Haar-ish `Q` and `λ` uniform on `[lo, hi]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> SymMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let q = g.qr().q();
    let lambda: Vec<f64> = (0..n).map(|_| lo + (hi - lo) * rng.random::<f64>()).collect();
    SymMatrix::from_diagonal(&lambda).congruence(&q)
}

fn random_weights<R: Rng + ?Sized>(rng: &mut R, count: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..count).map(|_| 0.2 + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Mixture with centred means, comparable component scales and no tiny weights.
pub fn random_mixture<R: Rng + ?Sized>(rng: &mut R, n: usize, comps: usize) -> Result<MixtureSource> {
    let weights = random_weights(rng, comps);
    let raw: Vec<DVector<f64>> = (0..comps)
        .map(|_| DVector::from_fn(n, |_, _| 1.2 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut centre = DVector::zeros(n);
    for (w, m) in weights.iter().zip(&raw) {
        centre += m * *w;
    }
    let means = raw.into_iter().map(|m| m - &centre).collect();
    let covs = (0..comps).map(|_| random_spd(rng, n, 0.2, 1.5)).collect();
    MixtureSource::new(weights, means, covs)
}

/// `Σ_1 ⪯ … ⪯ Σ_K` with strictly positive increments, and a cap `S`.
pub fn random_channel<R: Rng + ?Sized>(rng: &mut R, n: usize, users: usize) -> Result<BroadcastChannel> {
    let mut noise = vec![random_spd(rng, n, 0.3, 1.5)];
    for _ in 1..users {
        let step = random_spd(rng, n, 0.05, 1.0);
        let next = noise.last().expect("nonempty") + &step;
        noise.push(next);
    }
    BroadcastChannel::new(noise, random_spd(rng, n, 1.0, 3.0))
}

/// Rescales `X` about its mean so that `Cov(X) ⪯ fill · S` with equality in one direction.
pub fn fit_to_cap(src: &MixtureSource, cap: &SymMatrix, fill: f64) -> Result<MixtureSource> {
    let root_inv = sqrt_psd(cap)?.inverse_pd()?;
    let spread = src.aggregate_covariance().congruence(root_inv.as_matrix()).spectral_norm();
    let a = (fill / spread).sqrt();
    let centre = src.mean();
    MixtureSource::new(
        src.weights().to_vec(),
        src.means().iter().map(|m| (m - &centre) * a).collect(),
        src.comp_covs().iter().map(|c| c.scale(a * a)).collect(),
    )
}

/// A random mixture scaled so that `Cov(X) ⪯ S` with some slack.
pub fn random_admissible<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    comps: usize,
    cap: &SymMatrix,
) -> Result<MixtureSource> {
    let src = random_mixture(rng, n, comps)?;
    let fill = 0.5 + 0.45 * rng.random::<f64>();
    fit_to_cap(&src, cap, fill)
}

/// Column-stochastic `rows x cols` table with no tiny entries.
pub fn random_transition<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut t = DMatrix::zeros(rows, cols);
    for c in 0..cols {
        let w = random_weights(rng, rows);
        for (r, v) in w.into_iter().enumerate() {
            t[(r, c)] = v;
        }
    }
    t
}

/// Admissible hierarchy for `users` users: `comps` base components, then
/// alphabets shrinking by one per level (never below two).
pub fn random_hierarchy<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    users: usize,
    comps: usize,
    cap: &SymMatrix,
) -> Result<MarkovHierarchy> {
    if users < 2 {
        return Err(Error::InvalidInput("a hierarchy serves at least two users".into()));
    }
    let base = random_admissible(rng, n, comps, cap)?;
    let mut width = comps;
    let mut tables = Vec::new();
    for _ in 2..users {
        let next = width.saturating_sub(1).max(2);
        tables.push(random_transition(rng, next, width));
        width = next;
    }
    MarkovHierarchy::new(base, tables)
}

/// Gauss–Hermite discretization of a jointly Gaussian hierarchy.
///
/// `covs = [B_2, …, B_K]` with `B_2 ⪯ … ⪯ B_K ⪯ S` are the target values of
/// `Cov(X | U_k)`. The coarsest mean is drawn from a discretized `N(0, S − B_K)`
/// and each finer level adds a discretized `N(0, B_{k+1} − B_k)` offset, with
/// `nodes` points per axis. Every `U_{k+1}` is a function of `U_k`, and all
/// second moments match the Gaussian targets exactly.
pub fn gaussian_hierarchy(cap: &SymMatrix, covs: &[SymMatrix], nodes: usize) -> Result<MarkovHierarchy> {
    if covs.is_empty() {
        return Err(Error::InvalidInput("need at least one conditional covariance".into()));
    }
    let n = cap.dim();
    let mut uppers: Vec<&SymMatrix> = covs.iter().skip(1).collect();
    uppers.push(cap);
    for (lo, hi) in covs.iter().zip(&uppers) {
        if !loewner_leq(lo, hi, default_psd_tol(hi))? {
            return Err(Error::InvalidInput(
                "conditional covariances must increase toward the cap".into(),
            ));
        }
    }
    let grid = normal_grid(n, nodes)?;
    // coarsest level first
    let top = sqrt_psd(&(cap - covs.last().expect("nonempty")))?;
    let mut level: Vec<(DVector<f64>, f64)> = grid.iter().map(|(z, w)| (top.mul_vec(z), *w)).collect();
    let mut tables = Vec::new();
    for k in (0..covs.len() - 1).rev() {
        let step = sqrt_psd(&(&covs[k + 1] - &covs[k]))?;
        let g = grid.len();
        let mut finer = Vec::with_capacity(level.len() * g);
        let mut t = DMatrix::zeros(level.len(), level.len() * g);
        for (parent, (mu, w)) in level.iter().enumerate() {
            for (j, (z, wz)) in grid.iter().enumerate() {
                finer.push((mu + step.mul_vec(z), w * wz));
                t[(parent, parent * g + j)] = 1.0;
            }
        }
        tables.push(t);
        level = finer;
    }
    tables.reverse();
    let total: f64 = level.iter().map(|(_, w)| w).sum();
    let base = MixtureSource::new(
        level.iter().map(|(_, w)| w / total).collect(),
        level.iter().map(|(m, _)| m.clone()).collect(),
        vec![covs[0].clone(); level.len()],
    )?;
    MarkovHierarchy::new(base, tables)
}

fn scalar(x: f64) -> SymMatrix {
    SymMatrix::from_diagonal(&[x])
}

/// `n = 1`, `p = (½, ½)`, `C = (1, 3)`, means `∓1`; `Cov(X) = 3`.
pub fn scalar_pair() -> MixtureSource {
    MixtureSource::new(
        vec![0.5, 0.5],
        vec![DVector::from_element(1, -1.0), DVector::from_element(1, 1.0)],
        vec![scalar(1.0), scalar(3.0)],
    )
    .expect("valid fixture")
}

/// Scalar two-user channel `σ² = (1, 2)`, `S = 4`, which admits [`scalar_pair`].
pub fn scalar_pair_channel() -> BroadcastChannel {
    BroadcastChannel::new(vec![scalar(1.0), scalar(2.0)], scalar(4.0)).expect("valid fixture")
}
