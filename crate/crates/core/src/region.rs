//! Superposition-coding rate region of the degraded channel.
//!
//! A split `K_1, …, K_K` of the input cap `S` gives user `k` the rate
//! `½ ln |Σ_{i≤k} K_i + Σ_k| − ½ ln |Σ_{i<k} K_i + Σ_k|` (nats). The region is
//! the union over all splits; [`trace_boundary`] finds supporting points by
//! weighted-sum maximization and [`grid_oracle`] / [`scalar_region`] are
//! brute-force references for small cases.

use std::fmt::Write as _;
use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::monte_carlo::stream_rng;
use crate::matcore::{default_psd_tol, logdet, sqrt_psd, MatError, SymMatrix};
use crate::model::BroadcastChannel;

/// Relative Frobenius tolerance on `Σ K_i = S`.
pub const SPLIT_SUM_TOL: f64 = 1e-9;

/// Rates in `[−RATE_CLAMP, 0)` are reported as zero.
pub const RATE_CLAMP: f64 = 1e-12;

/// PSD matrices `K_1, …, K_K` summing to the input cap.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovarianceSplit {
    parts: Vec<SymMatrix>,
}

impl CovarianceSplit {
    pub fn new(parts: Vec<SymMatrix>, cap: &SymMatrix) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidInput("split has no parts".into()));
        }
        let tol = default_psd_tol(cap);
        let mut sum = SymMatrix::zeros(cap.dim());
        for (i, k) in parts.iter().enumerate() {
            if k.dim() != cap.dim() {
                return Err(MatError::DimensionMismatch(cap.dim(), k.dim()).into());
            }
            let min_eig = k.min_eigenvalue();
            if min_eig < -tol {
                return Err(Error::InvalidInput(format!(
                    "split part K_{} is not PSD (min eigenvalue {min_eig:e})",
                    i + 1
                )));
            }
            sum = &sum + k;
        }
        let rel = (&sum - cap).frobenius_norm() / cap.frobenius_norm().max(f64::MIN_POSITIVE);
        if !(rel <= SPLIT_SUM_TOL) {
            return Err(Error::InvalidInput(format!(
                "split parts sum to S only within relative error {rel:e}"
            )));
        }
        Ok(Self { parts })
    }

    pub fn parts(&self) -> &[SymMatrix] {
        &self.parts
    }

    pub fn num_parts(&self) -> usize {
        self.parts.len()
    }

    /// `(0, …, 0, S, 0, …, 0)` with `S` in position `k` (0-based).
    pub fn single_user(cap: &SymMatrix, users: usize, k: usize) -> Result<Self> {
        if k >= users {
            return Err(Error::InvalidInput(format!("user {k} out of range for {users} users")));
        }
        let parts = (0..users)
            .map(|i| if i == k { cap.clone() } else { SymMatrix::zeros(cap.dim()) })
            .collect();
        Self::new(parts, cap)
    }
}

/// One rate per user, in nats.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RateTuple {
    pub rates: Vec<f64>,
}

impl RateTuple {
    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.rates.iter().sum()
    }

    pub fn weighted(&self, weights: &[f64]) -> f64 {
        self.rates.iter().zip(weights).map(|(r, w)| r * w).sum()
    }
}

fn clamp_rate(r: f64) -> Result<f64> {
    if !r.is_finite() {
        return Err(Error::Numerical(format!("non-finite rate {r}")));
    }
    if (-RATE_CLAMP..0.0).contains(&r) {
        Ok(0.0)
    } else {
        Ok(r)
    }
}

pub fn rate_tuple(ch: &BroadcastChannel, split: &CovarianceSplit) -> Result<RateTuple> {
    if split.num_parts() != ch.num_users() {
        return Err(Error::InvalidInput(format!(
            "split has {} parts for {} users",
            split.num_parts(),
            ch.num_users()
        )));
    }
    let n = ch.dim();
    let mut below = SymMatrix::zeros(n);
    let mut rates = Vec::with_capacity(ch.num_users());
    for (k, part) in split.parts().iter().enumerate() {
        if part.dim() != n {
            return Err(MatError::DimensionMismatch(n, part.dim()).into());
        }
        let noise = ch.noise(k);
        let upto = &below + part;
        let r = 0.5 * (logdet(&(&upto + noise))? - logdet(&(&below + noise))?);
        rates.push(clamp_rate(r)?);
        below = upto;
    }
    Ok(RateTuple { rates })
}

fn check_weights(weights: &[f64], users: usize) -> Result<()> {
    if weights.len() != users {
        return Err(Error::InvalidInput(format!(
            "{} weights for {users} users",
            weights.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidInput(format!("weights must be finite and nonnegative, got {w}")));
    }
    Ok(())
}

pub fn weighted_sum_rate(ch: &BroadcastChannel, split: &CovarianceSplit, weights: &[f64]) -> Result<f64> {
    check_weights(weights, ch.num_users())?;
    Ok(rate_tuple(ch, split)?.weighted(weights))
}

/// Settings for [`trace_boundary`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub fd_step: f64,
    pub restarts: usize,
    pub seed: u64,
    pub armijo: f64,
    pub initial_step: f64,
    pub backtrack: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            grad_tol: 1e-8,
            max_iters: 5000,
            fd_step: 1e-6,
            restarts: 8,
            seed: 42,
            armijo: 1e-4,
            initial_step: 1.0,
            backtrack: 0.5,
        }
    }
}

/// A traced boundary point and the ascent that produced it.
#[derive(Clone, Debug)]
pub struct BoundaryPoint {
    pub weights: Vec<f64>,
    pub split: CovarianceSplit,
    pub rates: RateTuple,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step of the winning restart.
    pub history: Vec<f64>,
}

/// Maps unconstrained angles and box-constrained eigenvalues to a split.
///
/// Stage `k` takes the residual cap `R_k` (with `R_1 = S`) and sets
/// `K_k = R_k^{1/2} V diag(q) Vᵀ R_k^{1/2}` and `R_{k+1} = R_k − K_k`, with
/// `V` a product of Givens rotations and `q ∈ [0, 1]^n`. The last part takes
/// what is left.
#[derive(Clone, Debug)]
struct SplitMap {
    dim: usize,
    users: usize,
    cap: SymMatrix,
}

impl SplitMap {
    fn angles(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    fn stage_len(&self) -> usize {
        self.angles() + self.dim
    }

    fn len(&self) -> usize {
        self.stage_len() * (self.users - 1)
    }

    fn is_box(&self, idx: usize) -> bool {
        idx % self.stage_len() >= self.angles()
    }

    fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            if self.is_box(i) {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    fn rotation(&self, angles: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut v = DMatrix::identity(n, n);
        let mut a = 0;
        for i in 0..n {
            for j in i + 1..n {
                let (s, c) = angles[a].sin_cos();
                a += 1;
                for r in 0..n {
                    let (vi, vj) = (v[(r, i)], v[(r, j)]);
                    v[(r, i)] = c * vi - s * vj;
                    v[(r, j)] = s * vi + c * vj;
                }
            }
        }
        v
    }

    fn parts(&self, x: &[f64]) -> Result<Vec<SymMatrix>> {
        let mut rest = self.cap.clone();
        let mut parts = Vec::with_capacity(self.users);
        for stage in x.chunks(self.stage_len()) {
            let (angles, q) = stage.split_at(self.angles());
            let v = self.rotation(angles);
            let mut vq = v.clone();
            for (j, qj) in q.iter().enumerate() {
                vq.column_mut(j).scale_mut(*qj);
            }
            let inner = SymMatrix::symmetrized(vq * v.transpose());
            let root = sqrt_psd(&rest)?;
            let part = inner.congruence(root.as_matrix());
            rest = &rest - &part;
            parts.push(part);
        }
        parts.push(rest);
        Ok(parts)
    }

    fn split(&self, x: &[f64]) -> Result<CovarianceSplit> {
        CovarianceSplit::new(self.parts(x)?, &self.cap)
    }
}

struct Ascent {
    x: Vec<f64>,
    value: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

fn objective(ch: &BroadcastChannel, map: &SplitMap, weights: &[f64], x: &[f64]) -> Result<f64> {
    let value = weighted_sum_rate(ch, &map.split(x)?, weights)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numerical(format!("objective diverged at parameters {x:?}")))
    }
}

fn ascend(
    ch: &BroadcastChannel,
    map: &SplitMap,
    weights: &[f64],
    start: Vec<f64>,
    opt: &OptimizerConfig,
) -> Result<Ascent> {
    let f = |x: &[f64]| objective(ch, map, weights, x);
    let mut x = start;
    map.project(&mut x);
    let mut value = f(&x)?;
    let mut history = vec![value];
    let mut grad = vec![0.0; x.len()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opt.max_iters {
        for i in 0..x.len() {
            let mut hi = x.clone();
            let mut lo = x.clone();
            hi[i] += opt.fd_step;
            lo[i] -= opt.fd_step;
            // one-sided at the box faces so the stencil stays feasible
            let (mut h_hi, mut h_lo) = (opt.fd_step, opt.fd_step);
            if map.is_box(i) {
                if hi[i] > 1.0 {
                    hi[i] = x[i];
                    h_hi = 0.0;
                }
                if lo[i] < 0.0 {
                    lo[i] = x[i];
                    h_lo = 0.0;
                }
            }
            grad[i] = (f(&hi)? - f(&lo)?) / (h_hi + h_lo);
        }
        // components pushing out of the box do not count toward stationarity
        let pg: f64 = grad
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let blocked = map.is_box(i) && ((x[i] <= 0.0 && *g < 0.0) || (x[i] >= 1.0 && *g > 0.0));
                if blocked {
                    0.0
                } else {
                    g * g
                }
            })
            .sum::<f64>()
            .sqrt();
        if pg < opt.grad_tol {
            converged = true;
            break;
        }
        let mut step = opt.initial_step;
        let mut accepted = None;
        while step > 1e-14 {
            let mut trial: Vec<f64> = x.iter().zip(&grad).map(|(xi, gi)| xi + step * gi).collect();
            map.project(&mut trial);
            let gain: f64 = trial.iter().zip(&x).zip(&grad).map(|((t, xi), g)| g * (t - xi)).sum();
            let tv = f(&trial)?;
            if tv >= value + opt.armijo * gain && tv >= value {
                accepted = Some((trial, tv));
                break;
            }
            step *= opt.backtrack;
        }
        iterations += 1;
        match accepted {
            Some((trial, tv)) => {
                let moved = trial.iter().zip(&x).any(|(a, b)| a != b);
                x = trial;
                value = tv;
                history.push(value);
                if !moved {
                    converged = true;
                    break;
                }
            }
            None => {
                // no ascent direction resolvable at this precision
                converged = true;
                break;
            }
        }
    }
    Ok(Ascent {
        x,
        value,
        iterations,
        converged,
        history,
    })
}

fn start_point(map: &SplitMap, opt: &OptimizerConfig, w_idx: usize, restart: usize) -> Vec<f64> {
    if restart == 0 {
        return (0..map.len()).map(|i| if map.is_box(i) { 0.5 } else { 0.0 }).collect();
    }
    let mut rng = stream_rng(opt.seed, ((w_idx as u64) << 16) | restart as u64);
    (0..map.len())
        .map(|i| {
            if map.is_box(i) {
                rng.random::<f64>()
            } else {
                rng.random::<f64>() * PI
            }
        })
        .collect()
}

/// Maximizes the weighted sum rate for every weight vector.
///
/// Each weight vector runs `opt.restarts` projected-gradient ascents (the
/// first from the centre of the box, the rest from seeded random points) and
/// keeps the best. Results do not depend on the rayon pool size.
pub fn trace_boundary(
    ch: &BroadcastChannel,
    weight_list: &[Vec<f64>],
    opt: &OptimizerConfig,
) -> Result<Vec<BoundaryPoint>> {
    if opt.restarts == 0 || !(opt.fd_step > 0.0) || !(opt.backtrack > 0.0 && opt.backtrack < 1.0) {
        return Err(Error::InvalidInput("invalid optimizer configuration".into()));
    }
    let map = SplitMap {
        dim: ch.dim(),
        users: ch.num_users(),
        cap: ch.input_cap().clone(),
    };
    for w in weight_list {
        check_weights(w, ch.num_users())?;
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput("weight vector is all zero".into()));
        }
    }
    weight_list
        .par_iter()
        .enumerate()
        .map(|(w_idx, weights)| {
            let runs: Vec<Ascent> = (0..opt.restarts)
                .into_par_iter()
                .map(|r| ascend(ch, &map, weights, start_point(&map, opt, w_idx, r), opt))
                .collect::<Result<_>>()?;
            let mut best = 0;
            for (i, run) in runs.iter().enumerate() {
                if run.value > runs[best].value {
                    best = i;
                }
            }
            let run = runs.into_iter().nth(best).expect("at least one restart");
            let split = map.split(&run.x)?;
            let rates = rate_tuple(ch, &split)?;
            Ok(BoundaryPoint {
                weights: weights.clone(),
                split,
                rates,
                objective: run.value,
                iterations: run.iterations,
                converged: run.converged,
                history: run.history,
            })
        })
        .collect()
}

fn linspace(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect(),
    }
}

/// Every split `K_1 = S^{1/2} Q S^{1/2}`, `K_2 = S − K_1`, over a grid of `0 ⪯ Q ⪯ I`.
///
/// For `n = 1` the grid is `resolution` points on `[0, 1]`; for `n = 2` it is
/// the product of two eigenvalue grids on `[0, 1]` and a rotation grid on
/// `[0, π/2]`. Only two users and `n ≤ 2` are supported.
pub fn grid_oracle(ch: &BroadcastChannel, resolution: usize) -> Result<Vec<(CovarianceSplit, RateTuple)>> {
    if ch.num_users() != 2 || ch.dim() > 2 {
        return Err(Error::Unsupported(format!(
            "grid oracle needs K = 2 and n <= 2, got K = {} and n = {}",
            ch.num_users(),
            ch.dim()
        )));
    }
    if resolution == 0 {
        return Err(Error::InvalidInput("resolution must be positive".into()));
    }
    let map = SplitMap {
        dim: ch.dim(),
        users: 2,
        cap: ch.input_cap().clone(),
    };
    let q = linspace(0.0, 1.0, resolution);
    let params: Vec<Vec<f64>> = if ch.dim() == 1 {
        q.iter().map(|v| vec![*v]).collect()
    } else {
        let theta = linspace(0.0, FRAC_PI_2, resolution);
        let mut out = Vec::with_capacity(resolution.pow(3));
        for a in &q {
            for b in &q {
                for t in &theta {
                    out.push(vec![*t, *a, *b]);
                }
            }
        }
        out
    };
    params
        .par_iter()
        .map(|x| {
            let split = map.split(x)?;
            let rates = rate_tuple(ch, &split)?;
            Ok((split, rates))
        })
        .collect()
}

/// Power splits `(a_1, …, a_K)` on a lattice of the simplex `Σ a_i = S`.
///
/// For two users this is `num_points` values of `a_1` evenly spaced on
/// `[0, S]`; for more users the lattice has spacing `S / (num_points − 1)`.
pub fn scalar_splits(cap: f64, users: usize, num_points: usize) -> Result<Vec<Vec<f64>>> {
    if !(cap > 0.0) || users == 0 || num_points < 2 {
        return Err(Error::InvalidInput(
            "scalar splits need S > 0, at least one user and two points".into(),
        ));
    }
    let m = num_points - 1;
    let mut out = Vec::new();
    let mut counts = vec![0usize; users];
    compositions(m, 0, &mut counts, &mut out);
    Ok(out
        .into_iter()
        .map(|c| c.into_iter().map(|ci| cap * ci as f64 / m as f64).collect())
        .collect())
}

fn compositions(left: usize, pos: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == counts.len() {
        counts[pos] = left;
        out.push(counts.clone());
        return;
    }
    for c in (0..=left).rev() {
        counts[pos] = c;
        compositions(left - c, pos + 1, counts, out);
    }
}

/// Scalar rates for [`scalar_splits`]; `noise_vars` are the variances `σ_k²`.
pub fn scalar_region(cap: f64, noise_vars: &[f64], num_points: usize) -> Result<Vec<RateTuple>> {
    if noise_vars.is_empty() || noise_vars.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidChannel("noise variances must be positive".into()));
    }
    if noise_vars.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidChannel("noise variances must be nondecreasing".into()));
    }
    scalar_splits(cap, noise_vars.len(), num_points)?
        .into_iter()
        .map(|a| {
            let mut below = 0.0;
            let rates = a
                .iter()
                .zip(noise_vars)
                .map(|(ai, s)| {
                    let r = 0.5 * ((below + ai + s) / (below + s)).ln();
                    below += ai;
                    clamp_rate(r)
                })
                .collect::<Result<_>>()?;
            Ok(RateTuple { rates })
        })
        .collect()
}

/// True iff some region point beats `candidate` in every coordinate up to `slack`.
pub fn dominates(region: &[RateTuple], candidate: &RateTuple, slack: f64) -> Result<bool> {
    if region.is_empty() {
        return Err(Error::InvalidInput("empty region".into()));
    }
    for r in region {
        if r.len() != candidate.len() {
            return Err(Error::InvalidInput(format!(
                "rate tuple of length {} compared with {}",
                r.len(),
                candidate.len()
            )));
        }
    }
    Ok(region
        .iter()
        .any(|r| r.rates.iter().zip(&candidate.rates).all(|(a, b)| a + slack >= *b)))
}

/// C-style `%.{digits}g`.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Boundary CSV: header `w_1,…,w_K,R_1,…,R_K`, 12 significant digits.
///
/// Rates are in nats, or bits when `bits` is set.
pub fn boundary_csv(points: &[(Vec<f64>, RateTuple)], bits: bool) -> Result<String> {
    let users = points.first().map(|(w, _)| w.len()).unwrap_or(0);
    let mut out = String::new();
    let header: Vec<String> = (1..=users)
        .map(|k| format!("w_{k}"))
        .chain((1..=users).map(|k| format!("R_{k}")))
        .collect();
    out.push_str(&header.join(","));
    out.push('\n');
    let unit = if bits { LN_2 } else { 1.0 };
    for (w, r) in points {
        if w.len() != users || r.len() != users {
            return Err(Error::InvalidInput("ragged boundary rows".into()));
        }
        let fields: Vec<String> = w
            .iter()
            .map(|v| format_sig(*v, 12))
            .chain(r.rates.iter().map(|v| format_sig(v / unit, 12)))
            .collect();
        let _ = writeln!(out, "{}", fields.join(","));
    }
    Ok(out)
}

/// Parses [`boundary_csv`] output back into weights and rates.
pub fn read_boundary_csv(text: &str) -> Result<Vec<(Vec<f64>, RateTuple)>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::InvalidInput("empty CSV".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let users = cols.len() / 2;
    let expected: Vec<String> = (1..=users)
        .map(|k| format!("w_{k}"))
        .chain((1..=users).map(|k| format!("R_{k}")))
        .collect();
    if users == 0 || !cols.len().is_multiple_of(2) || cols != expected {
        return Err(Error::InvalidInput(format!("unexpected CSV header {header:?}")));
    }
    lines
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| {
            let vals: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("CSV row {}: {e}", i + 1)))?;
            if vals.len() != 2 * users || vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("CSV row {} is malformed", i + 1)));
            }
            let (w, r) = vals.split_at(users);
            Ok((w.to_vec(), RateTuple { rates: r.to_vec() }))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn s(x: f64) -> SymMatrix {
        SymMatrix::scaled_identity(1, x)
    }

    fn scalar_channel(cap: f64, vars: &[f64]) -> BroadcastChannel {
        BroadcastChannel::new(vars.iter().map(|v| s(*v)).collect(), s(cap)).unwrap()
    }

    fn channel_2d() -> BroadcastChannel {
        let s1 = SymMatrix::from_rows(&[vec![1.0, 0.2], vec![0.2, 0.5]]).unwrap();
        let s2 = &s1 + &SymMatrix::from_rows(&[vec![0.3, -0.1], vec![-0.1, 1.2]]).unwrap();
        let cap = SymMatrix::from_rows(&[vec![2.0, 0.4], vec![0.4, 1.0]]).unwrap();
        BroadcastChannel::new(vec![s1, s2], cap).unwrap()
    }

    fn scalar_split(a: &[f64], cap: f64) -> CovarianceSplit {
        CovarianceSplit::new(a.iter().map(|v| s(*v)).collect(), &s(cap)).unwrap()
    }

    #[test]
    fn scalar_rate_examples() {
        let ch = scalar_channel(1.0, &[1.0, 2.0]);
        let r = rate_tuple(&ch, &scalar_split(&[0.5, 0.5], 1.0)).unwrap();
        assert_abs_diff_eq!(r.rates[0], 0.5 * 1.5f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.rates[1], 0.5 * 1.2f64.ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(r.rates[0], 0.2027325541, epsilon = 1e-9);
        assert_abs_diff_eq!(r.rates[1], 0.0911607784, epsilon = 1e-9);

        let r = rate_tuple(&ch, &scalar_split(&[0.0, 1.0], 1.0)).unwrap();
        assert_eq!(r.rates[0], 0.0);
        assert_abs_diff_eq!(r.rates[1], 0.5 * 1.5f64.ln(), epsilon = 1e-15);

        let ch3 = scalar_channel(3.0, &[1.0, 2.0, 3.0]);
        let r = rate_tuple(&ch3, &scalar_split(&[1.0, 1.0, 1.0], 3.0)).unwrap();
        let want = [0.5 * 2f64.ln(), 0.5 * (4.0f64 / 3.0).ln(), 0.5 * 1.2f64.ln()];
        for (a, b) in r.rates.iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_sum_examples() {
        let ch = scalar_channel(1.0, &[1.0, 2.0]);
        let sp = scalar_split(&[0.5, 0.5], 1.0);
        assert_eq!(weighted_sum_rate(&ch, &sp, &[0.0, 0.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(weighted_sum_rate(&ch, &sp, &[1.0, 1.0]).unwrap(), 0.293893, epsilon = 1e-6);
        assert!(weighted_sum_rate(&ch, &sp, &[-1.0, 1.0]).is_err());
        assert!(weighted_sum_rate(&ch, &sp, &[1.0]).is_err());
    }

    #[test]
    fn split_validation() {
        let cap = s(1.0);
        assert!(CovarianceSplit::new(vec![s(0.5), s(0.6)], &cap).is_err());
        assert!(CovarianceSplit::new(vec![s(-0.5), s(1.5)], &cap).is_err());
        assert!(CovarianceSplit::new(vec![s(0.5), SymMatrix::zeros(2)], &cap).is_err());
        assert!(CovarianceSplit::new(vec![s(0.5), s(0.5 + 1e-12)], &cap).is_ok());
        let ch = scalar_channel(1.0, &[1.0, 2.0]);
        let three = scalar_split(&[0.2, 0.3, 0.5], 1.0);
        assert!(rate_tuple(&ch, &three).is_err());
    }

    #[test]
    fn endpoints_are_single_user_capacities() {
        let ch = channel_2d();
        let cap = ch.input_cap();
        let opt = OptimizerConfig::default();
        let pts = trace_boundary(&ch, &[vec![1.0, 0.0], vec![0.0, 1.0]], &opt).unwrap();
        let c1 = 0.5 * (logdet(&(cap + ch.noise(0))).unwrap() - logdet(ch.noise(0)).unwrap());
        let c2 = 0.5 * (logdet(&(cap + ch.noise(1))).unwrap() - logdet(ch.noise(1)).unwrap());
        assert_abs_diff_eq!(pts[0].rates.rates[0], c1, epsilon = 1e-9);
        assert!((&pts[0].split.parts()[0] - cap).frobenius_norm() < 1e-6);
        assert_abs_diff_eq!(pts[1].rates.rates[1], c2, epsilon = 1e-9);
        assert!((&pts[1].split.parts()[1] - cap).frobenius_norm() < 1e-6);
        let single = CovarianceSplit::single_user(cap, 2, 0).unwrap();
        assert_abs_diff_eq!(weighted_sum_rate(&ch, &single, &[1.0, 0.0]).unwrap(), c1, epsilon = 1e-15);
    }

    #[test]
    fn objective_history_is_monotone() {
        let ch = channel_2d();
        let pts = trace_boundary(&ch, &[vec![0.6, 0.8], vec![0.3, 1.0]], &OptimizerConfig::default()).unwrap();
        for p in pts {
            assert!(p.history.windows(2).all(|w| w[1] >= w[0]));
            assert_abs_diff_eq!(*p.history.last().unwrap(), p.objective, epsilon = 0.0);
        }
    }

    #[test]
    fn scalar_sweep_matches_closed_form() {
        // supporting line of the scalar region for weights (w1, w2), by dense search
        let ch = scalar_channel(1.0, &[1.0, 2.0]);
        let region = scalar_region(1.0, &[1.0, 2.0], 200_001).unwrap();
        let weights: Vec<Vec<f64>> = (0..11)
            .map(|i| {
                let t = FRAC_PI_2 * i as f64 / 10.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
        let pts = trace_boundary(&ch, &weights, &OptimizerConfig::default()).unwrap();
        for (w, p) in weights.iter().zip(&pts) {
            let best = region.iter().map(|r| r.weighted(w)).fold(f64::MIN, f64::max);
            assert!((p.objective - best).abs() < 1e-6, "{w:?}: {} vs {best}", p.objective);
        }
    }

    #[test]
    fn sweep_is_independent_of_thread_count() {
        let ch = channel_2d();
        let weights = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| trace_boundary(&ch, &weights, &OptimizerConfig::default()).unwrap())
        };
        let (a, b) = (run(1), run(4));
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.objective.to_bits(), y.objective.to_bits());
            assert_eq!(x.split, y.split);
        }
    }

    #[test]
    fn grid_oracle_shapes() {
        let ch = scalar_channel(1.0, &[1.0, 2.0]);
        let g = grid_oracle(&ch, 101).unwrap();
        assert_eq!(g.len(), 101);
        let sr = scalar_region(1.0, &[1.0, 2.0], 101).unwrap();
        for ((_, r), want) in g.iter().rev().zip(&sr) {
            assert_abs_diff_eq!(r.rates[0], want.rates[0], epsilon = 1e-12);
            assert_abs_diff_eq!(r.rates[1], want.rates[1], epsilon = 1e-12);
        }
        let ch2 = channel_2d();
        let g = grid_oracle(&ch2, 21).unwrap();
        assert_eq!(g.len(), 21 * 21 * 21);
        for (sp, _) in &g {
            assert!(CovarianceSplit::new(sp.parts().to_vec(), ch2.input_cap()).is_ok());
        }
        let ch3 = scalar_channel(3.0, &[1.0, 2.0, 3.0]);
        assert!(matches!(grid_oracle(&ch3, 5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn optimizer_beats_grid() {
        let ch = channel_2d();
        let grid = grid_oracle(&ch, 21).unwrap();
        let weights = vec![vec![1.0, 1.0], vec![0.4, 1.0], vec![1.0, 0.3]];
        let pts = trace_boundary(&ch, &weights, &OptimizerConfig::default()).unwrap();
        for (w, p) in weights.iter().zip(&pts) {
            let best = grid.iter().map(|(_, r)| r.weighted(w)).fold(f64::MIN, f64::max);
            assert!(p.objective >= best - 1e-9, "{} < {best}", p.objective);
        }
    }

    #[test]
    fn scalar_region_examples() {
        let r = scalar_region(1.0, &[1.0, 2.0], 3).unwrap();
        // a_1 = S, S/2, 0
        assert_abs_diff_eq!(r[0].rates[0], 0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_eq!(r[0].rates[1], 0.0);
        assert_abs_diff_eq!(r[1].rates[0], 0.202733, epsilon = 1e-6);
        assert_abs_diff_eq!(r[1].rates[1], 0.091161, epsilon = 1e-6);
        assert_eq!(r[2].rates[0], 0.0);
        assert_abs_diff_eq!(r[2].rates[1], 0.5 * 1.5f64.ln(), epsilon = 1e-15);
        assert!(scalar_region(1.0, &[2.0, 1.0], 3).is_err());
        assert_eq!(scalar_region(3.0, &[1.0, 2.0, 3.0], 5).unwrap().len(), 15);
    }

    #[test]
    fn scalar_region_matches_rate_tuple() {
        for (cap, vars) in [(1.0, vec![1.0, 2.0]), (2.5, vec![0.5, 0.5, 4.0])] {
            let ch = scalar_channel(cap, &vars);
            let splits = scalar_splits(cap, vars.len(), 21).unwrap();
            let region = scalar_region(cap, &vars, 21).unwrap();
            for (a, r) in splits.iter().zip(&region) {
                let sp = CovarianceSplit::new(a.iter().map(|v| s(*v)).collect(), &s(cap)).unwrap();
                let want = rate_tuple(&ch, &sp).unwrap();
                for (x, y) in r.rates.iter().zip(&want.rates) {
                    assert!((x - y).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn dominance_examples() {
        let region = vec![RateTuple { rates: vec![0.3, 0.1] }, RateTuple { rates: vec![0.1, 0.2] }];
        assert!(dominates(&region, &RateTuple { rates: vec![0.0, 0.0] }, 0.0).unwrap());
        assert!(dominates(&region, &region[1], 0.0).unwrap());
        let single = vec![region[0].clone()];
        let bumped = RateTuple { rates: vec![0.3 + 1e-3, 0.1 + 1e-3] };
        assert!(!dominates(&single, &bumped, 1e-4).unwrap());
        assert!(dominates(&single, &bumped, 2e-3).unwrap());
        assert!(dominates(&[], &bumped, 0.0).is_err());
        assert!(dominates(&single, &RateTuple { rates: vec![0.0] }, 0.0).is_err());
    }

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(1.0, 12), "1");
        assert_eq!(format_sig(0.5 * 1.5f64.ln(), 12), "0.202732554054");
        assert_eq!(format_sig(123456.0, 12), "123456");
        assert_eq!(format_sig(1.5e-7, 12), "1.5e-07");
        assert_eq!(format_sig(-2.0e15, 12), "-2e+15");
        assert_eq!(format_sig(0.0001, 12), "0.0001");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            (vec![1.0, 0.0], RateTuple { rates: vec![0.5 * 2f64.ln(), 0.0] }),
            (vec![0.0, 1.0], RateTuple { rates: vec![0.0, 0.5 * 1.5f64.ln()] }),
        ];
        let text = boundary_csv(&rows, false).unwrap();
        assert!(text.starts_with("w_1,w_2,R_1,R_2\n1,0,0.34657359028,0\n"));
        let back = read_boundary_csv(&text).unwrap();
        for ((w, r), (w2, r2)) in rows.iter().zip(&back) {
            assert_eq!(w, w2);
            for (a, b) in r.rates.iter().zip(&r2.rates) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
        let bits = read_boundary_csv(&boundary_csv(&rows, true).unwrap()).unwrap();
        assert_abs_diff_eq!(bits[0].1.rates[0], 0.5, epsilon = 1e-12);
        assert!(read_boundary_csv("a,b\n1,2\n").is_err());
        assert!(read_boundary_csv("w_1,w_2,R_1,R_2\n1,x,0,0\n").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rates_nonnegative_and_telescoping(
            q in proptest::collection::vec(0.0f64..1.0, 4),
            angle in 0.0f64..PI,
            extra in 0.0f64..2.0,
        ) {
            let base = SymMatrix::from_rows(&[vec![0.8, 0.1], vec![0.1, 0.6]]).unwrap();
            let cap = SymMatrix::from_rows(&[vec![1.5, -0.3], vec![-0.3, 1.1]]).unwrap();
            let map = SplitMap { dim: 2, users: 3, cap: cap.clone() };
            let x = vec![angle, q[0], q[1], angle * 0.5, q[2], q[3]];
            let split = map.split(&x).unwrap();
            let equal = BroadcastChannel::new(vec![base.clone(); 3], cap.clone()).unwrap();
            let r = rate_tuple(&equal, &split).unwrap();
            prop_assert!(r.rates.iter().all(|v| *v >= 0.0));
            let total = 0.5 * (logdet(&(&cap + &base)).unwrap() - logdet(&base).unwrap());
            prop_assert!((r.sum() - total).abs() < 1e-12);

            // a noisier last user never gains rate
            let bump = SymMatrix::scaled_identity(2, extra);
            let mut noisier = vec![base.clone(); 3];
            noisier[2] = &base + &bump;
            let ch2 = BroadcastChannel::new(noisier, cap).unwrap();
            let r2 = rate_tuple(&ch2, &split).unwrap();
            prop_assert!(r2.rates[2] <= r.rates[2] + 1e-15);
        }
    }
}
