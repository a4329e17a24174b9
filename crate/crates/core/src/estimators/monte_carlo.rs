//! Seeded Monte Carlo estimates over the law of `X + N`.
//!
//! Draws come from ChaCha8 with the 64-bit `seed` as key and the shard number
//! as stream id. A fixed number of shards is always used and partial sums are
//! merged in shard order, so results do not depend on the thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcore::SymMatrix;
use crate::model::MixtureSource;

use super::density::NoisyMixture;

pub const DEFAULT_SAMPLES: usize = 100_000;

/// Number of independent streams a batch is split into.
pub const SHARDS: usize = 16;

/// Generator for stream `stream` under master seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn shard_sizes(count: usize) -> Vec<usize> {
    (0..SHARDS)
        .map(|s| count / SHARDS + usize::from(s < count % SHARDS))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub seed: u64,
    pub count: usize,
    pub draws: Vec<DVector<f64>>,
}

/// `count` draws of `X + N`.
pub fn sample_batch(src: &MixtureSource, noise: &SymMatrix, count: usize, seed: u64) -> Result<SampleBatch> {
    let mix = NoisyMixture::new(src, noise)?;
    let shards: Vec<Vec<DVector<f64>>> = shard_sizes(count)
        .into_par_iter()
        .enumerate()
        .map(|(s, size)| {
            let mut rng = stream_rng(seed, s as u64);
            (0..size).map(|_| mix.sample(&mut rng)).collect()
        })
        .collect();
    Ok(SampleBatch {
        seed,
        count,
        draws: shards.into_iter().flatten().collect(),
    })
}

/// Scalar estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Matrix estimate with entrywise standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixEstimate {
    pub value: SymMatrix,
    pub stderr: SymMatrix,
}

impl MatrixEstimate {
    /// Conservative eigenvalue-perturbation radius `3 ‖stderr‖_F`.
    pub fn envelope(&self) -> f64 {
        3.0 * self.stderr.frobenius_norm()
    }
}

/// Running sums of a fixed-length feature vector.
#[derive(Clone)]
struct Moments {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl Moments {
    fn new(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
        }
    }

    fn push(&mut self, features: &[f64]) {
        for (i, f) in features.iter().enumerate() {
            self.sum[i] += f;
            self.sum_sq[i] += f * f;
        }
    }

    fn merge(mut self, other: &Moments) -> Self {
        for i in 0..self.sum.len() {
            self.sum[i] += other.sum[i];
            self.sum_sq[i] += other.sum_sq[i];
        }
        self
    }

    /// Means and standard errors of the means.
    fn finish(&self, count: usize) -> (Vec<f64>, Vec<f64>) {
        let n = count as f64;
        let means: Vec<f64> = self.sum.iter().map(|s| s / n).collect();
        let errs = self
            .sum_sq
            .iter()
            .zip(&self.sum)
            .map(|(sq, s)| {
                let var = ((sq - s * s / n) / (n - 1.0)).max(0.0);
                (var / n).sqrt()
            })
            .collect();
        (means, errs)
    }
}

/// Accumulates `features(y)` over `samples` draws of `X + N`.
fn accumulate<F>(mix: &NoisyMixture, samples: usize, seed: u64, len: usize, features: F) -> Moments
where
    F: Fn(&DVector<f64>, &mut Vec<f64>) + Sync,
{
    let shards: Vec<Moments> = shard_sizes(samples)
        .into_par_iter()
        .enumerate()
        .map(|(s, size)| {
            let mut rng = stream_rng(seed, s as u64);
            let mut m = Moments::new(len);
            let mut buf = Vec::with_capacity(len);
            for _ in 0..size {
                let y = mix.sample(&mut rng);
                buf.clear();
                features(&y, &mut buf);
                m.push(&buf);
            }
            m
        })
        .collect();
    shards
        .iter()
        .fold(Moments::new(len), |acc, m| acc.merge(m))
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < 2 {
        return Err(Error::TooFewSamples(samples));
    }
    Ok(())
}

/// `h(X + N) ≈ −(1/N) Σ ln f(y_i)`.
pub fn entropy_unconditional(src: &MixtureSource, noise: &SymMatrix, samples: usize, seed: u64) -> Result<Estimate> {
    check_samples(samples)?;
    let mix = NoisyMixture::new(src, noise)?;
    let m = accumulate(&mix, samples, seed, 1, |y, out| out.push(-mix.logpdf(y)));
    let (mean, err) = m.finish(samples);
    Ok(Estimate {
        value: mean[0],
        stderr: err[0],
    })
}

/// `J(X + N) ≈ (1/N) Σ ρ(y_i) ρ(y_i)ᵀ`.
pub fn fisher_unconditional(
    src: &MixtureSource,
    noise: &SymMatrix,
    samples: usize,
    seed: u64,
) -> Result<MatrixEstimate> {
    check_samples(samples)?;
    let mix = NoisyMixture::new(src, noise)?;
    let n = src.dim();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let m = accumulate(&mix, samples, seed, pairs.len(), |y, out| {
        let s = mix.score(y);
        out.extend(pairs.iter().map(|&(i, j)| s[i] * s[j]));
    });
    let (mean, err) = m.finish(samples);
    let mut value = DMatrix::zeros(n, n);
    let mut stderr = DMatrix::zeros(n, n);
    for (k, &(i, j)) in pairs.iter().enumerate() {
        value[(i, j)] = mean[k];
        value[(j, i)] = mean[k];
        stderr[(i, j)] = err[k];
        stderr[(j, i)] = err[k];
    }
    Ok(MatrixEstimate {
        value: SymMatrix::symmetrized(value),
        stderr: SymMatrix::symmetrized(stderr),
    })
}

/// `E[ρ(Y)]` with standard errors; zero in expectation.
pub fn mean_score(
    src: &MixtureSource,
    noise: &SymMatrix,
    samples: usize,
    seed: u64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_samples(samples)?;
    let mix = NoisyMixture::new(src, noise)?;
    let m = accumulate(&mix, samples, seed, src.dim(), |y, out| {
        out.extend(mix.score(y).iter().copied());
    });
    let (mean, err) = m.finish(samples);
    Ok((DVector::from_vec(mean), DVector::from_vec(err)))
}
