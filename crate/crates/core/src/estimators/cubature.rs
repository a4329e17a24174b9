//! Deterministic Gauss–Hermite cubature for Gaussian-mixture expectations.
//!
//! Under component `u`, `y = μ_u + L_u z` with `z ~ N(0, I)`; the expectation
//! over `z` uses a tensor Gauss–Hermite rule. At [`default_nodes`] the error on
//! moderately separated mixtures is around 1e-9 for entropies and 1e-7 for
//! Fisher matrices.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex, OnceLock};

use gauss_quad::GaussHermite;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;
use crate::model::{gaussian_entropy, MixtureSource};

use super::density::NoisyMixture;

/// Product-rule weights below this are dropped.
const PRUNE_WEIGHT: f64 = 1e-22;

/// Nodes per axis by dimension.
pub fn default_nodes(dim: usize) -> usize {
    match dim {
        1 => 96,
        2 => 64,
        3 => 48,
        4 => 20,
        _ => 10,
    }
}

pub(crate) type Grid = Arc<Vec<(DVector<f64>, f64)>>;

/// Standard-normal tensor rule: points `z` and weights summing to one.
pub(crate) fn normal_grid(dim: usize, nodes: usize) -> Result<Grid> {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), Grid>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(g) = cache.lock().unwrap().get(&(dim, nodes)) {
        return Ok(g.clone());
    }
    let deg = NonZeroUsize::new(nodes)
        .ok_or_else(|| Error::InvalidInput("cubature needs at least one node".into()))?;
    let norm = std::f64::consts::PI.sqrt();
    let axis: Vec<(f64, f64)> = GaussHermite::new(deg)
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w / norm))
        .collect();
    let mut points: Vec<(Vec<f64>, f64)> = vec![(Vec::new(), 1.0)];
    for _ in 0..dim {
        points = points
            .into_iter()
            .flat_map(|(z, w)| {
                axis.iter().filter_map(move |&(x, wx)| {
                    let wt = w * wx;
                    (wt >= PRUNE_WEIGHT).then(|| {
                        let mut z = z.clone();
                        z.push(x);
                        (z, wt)
                    })
                })
            })
            .collect();
    }
    let grid: Grid = Arc::new(
        points
            .into_iter()
            .map(|(z, w)| (DVector::from_vec(z), w))
            .collect(),
    );
    cache.lock().unwrap().insert((dim, nodes), grid.clone());
    Ok(grid)
}

/// `Σ_u p_u E_u[g(y)]` for the mixture law of `X + N`.
///
/// Components are integrated in parallel and summed in index order.
fn mixture_expectation<T, G>(mix: &NoisyMixture, nodes: usize, zero: T, g: G) -> Result<T>
where
    T: std::ops::AddAssign + std::ops::Mul<f64, Output = T> + Clone + Send + Sync,
    G: Fn(&DVector<f64>) -> T + Sync,
{
    let grid = normal_grid(mix.dim(), nodes)?;
    let parts: Vec<Option<T>> = (0..mix.num_components())
        .into_par_iter()
        .map(|u| {
            let p = mix.log_weight(u).exp();
            if p == 0.0 {
                return None;
            }
            let (mu, l) = mix.component(u);
            let mut acc = zero.clone();
            for (z, w) in grid.iter() {
                let y = mu + l * z;
                acc += g(&y) * *w;
            }
            Some(acc * p)
        })
        .collect();
    let mut acc = zero;
    for part in parts.into_iter().flatten() {
        acc += part;
    }
    Ok(acc)
}

/// `h(X + N)` for a Gaussian-mixture `X`; closed form for one component.
pub fn entropy_cubature(src: &MixtureSource, noise: &SymMatrix, nodes: usize) -> Result<f64> {
    if src.num_components() == 1 {
        return gaussian_entropy(&(&src.comp_covs()[0] + noise));
    }
    let mix = NoisyMixture::new(src, noise)?;
    mixture_expectation(&mix, nodes, 0.0, |y| -mix.logpdf(y))
}

/// `J(X + N)` for a Gaussian-mixture `X`; closed form for one component.
pub fn fisher_cubature(src: &MixtureSource, noise: &SymMatrix, nodes: usize) -> Result<SymMatrix> {
    if src.num_components() == 1 {
        return Ok((&src.comp_covs()[0] + noise).inverse_pd()?);
    }
    let mix = NoisyMixture::new(src, noise)?;
    let n = src.dim();
    let acc = mixture_expectation(&mix, nodes, DMatrix::zeros(n, n), |y| {
        let s = mix.score(y);
        &s * s.transpose()
    })?;
    Ok(SymMatrix::symmetrized(acc))
}

