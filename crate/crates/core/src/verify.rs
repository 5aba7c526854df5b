//! Monte Carlo and convolution checks of the bounds.
//!
//! Samples are drawn in [`REPLICATES`] batches. Batch `r` draws the variates
//! of cell `k` from a ChaCha8 stream keyed by `(seed, r, k)`, so results do
//! not depend on the number of worker threads.

use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use thiserror::Error;

use crate::bounds::{BoundError, BoundReport, Metric};
use crate::chaos::{evaluate_integral, l2_norm_sq, multiply, symmetrize, ChaosError, ChaosSample, ChaosTensor};
use crate::distributions::{Distribution, Kind};
use crate::special::{factorial, normal_cdf, normal_pdf, normal_quantile, normal_sf};

/// Number of independent replicate batches.
pub const REPLICATES: usize = 20;

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "STEINBENCH_THREADS";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerifyError {
    #[error(transparent)]
    Chaos(#[from] ChaosError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("data error: {0}")]
    Data(String),
    #[error("unsupported check: {0}")]
    Unsupported(String),
}

/// What to sample.
#[derive(Debug, Clone)]
pub enum SampleSpec {
    /// `I_n(f)` on uniform cells.
    Chaos(ChaosTensor<f64>),
    /// `Σ X_k` with independent `X_k`.
    Sum(Vec<Distribution<f64>>),
    /// `Σ_{k≠l} a_kl X_k X_l` with `X_k` i.i.d. copies of the law rescaled to
    /// unit variance.
    Quadratic { matrix: Vec<Vec<f64>>, dist: Distribution<f64> },
}

impl SampleSpec {
    fn cells(&self) -> usize {
        match self {
            SampleSpec::Chaos(f) => f.cell_count(),
            SampleSpec::Sum(d) => d.len(),
            SampleSpec::Quadratic { matrix, .. } => matrix.len(),
        }
    }
}

/// Runs `f` on a pool sized by [`THREADS_ENV`] (default: all cores).
fn with_pool<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    let threads = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()).filter(|&n| n > 0);
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        None => f(),
    }
}

fn batch_sizes(m: usize) -> Vec<usize> {
    (0..REPLICATES).map(|r| m / REPLICATES + usize::from(r < m % REPLICATES)).collect()
}

/// Uniform variates in `(0, 1)` for one batch, one column per cell.
fn uniform_columns(seed: u64, replicate: usize, cells: usize, len: usize) -> Vec<Vec<f64>> {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(replicate as u64).to_le_bytes());
    (0..cells)
        .map(|k| {
            let mut rng = ChaCha8Rng::from_seed(key);
            rng.set_stream(k as u64);
            (0..len).map(|_| ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)).collect()
        })
        .collect()
}

fn sample_batch(spec: &SampleSpec, seed: u64, replicate: usize, len: usize) -> Result<Vec<f64>, VerifyError> {
    let cells = spec.cells();
    let cols = uniform_columns(seed, replicate, cells, len);
    match spec {
        SampleSpec::Chaos(f) => (0..len)
            .map(|i| {
                let u = ChaosSample::new(cols.iter().map(|c| 2.0 * c[i] - 1.0).collect())?;
                Ok(evaluate_integral(f, &u)?)
            })
            .collect(),
        SampleSpec::Sum(dists) => {
            let mut out = vec![0.0; len];
            for (d, col) in dists.iter().zip(&cols) {
                for (acc, &u) in out.iter_mut().zip(col) {
                    *acc += d.quantile_unchecked(u);
                }
            }
            Ok(out)
        }
        SampleSpec::Quadratic { matrix, dist } => {
            let x = dist.normalized();
            let entries: Vec<(usize, usize, f64)> = matrix
                .iter()
                .enumerate()
                .flat_map(|(k, row)| row.iter().enumerate().map(move |(l, &a)| (k, l, a)))
                .filter(|&(k, l, a)| k != l && a != 0.0)
                .collect();
            let xs: Vec<Vec<f64>> = cols.iter().map(|c| c.iter().map(|&u| x.quantile_unchecked(u)).collect()).collect();
            Ok((0..len).map(|i| entries.iter().map(|&(k, l, a)| a * xs[k][i] * xs[l][i]).sum()).collect())
        }
    }
}

fn sample_batches(spec: &SampleSpec, m: usize, seed: u64) -> Result<Vec<Vec<f64>>, VerifyError> {
    let sizes = batch_sizes(m);
    with_pool(|| {
        sizes
            .par_iter()
            .enumerate()
            .map(|(r, &len)| sample_batch(spec, seed, r, len))
            .collect::<Result<Vec<_>, _>>()
    })
}

/// `m` realizations of the functional, deterministic in `(spec, m, seed)`.
/// Batch `r` occupies a contiguous block, in replicate order.
pub fn sample_functional(spec: &SampleSpec, m: usize, seed: u64) -> Result<Vec<f64>, VerifyError> {
    if m == 0 {
        return Err(VerifyError::Data("sample size must be positive".into()));
    }
    Ok(sample_batches(spec, m, seed)?.concat())
}

/// An empirical distance to the standard normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WassersteinEstimate {
    pub value: f64,
    pub sample_size: usize,
    pub seed: u64,
    pub std_error: f64,
}

/// `∫ |F_m - Φ|` for the empirical CDF of `sorted` (ascending).
fn w1_sorted(sorted: &[f64]) -> f64 {
    // ∫ Φ = xΦ(x) + φ(x)
    let anti = |x: f64| x * normal_cdf(x) + normal_pdf(x);
    let m = sorted.len() as f64;
    let first = sorted[0];
    let last = sorted[sorted.len() - 1];
    let mut total = anti(first);
    for (i, w) in sorted.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        let level = (i + 1) as f64 / m;
        let cross = normal_quantile(level);
        // ∫_a^b |level - Φ|
        let piece = |lo: f64, hi: f64| level * (hi - lo) - (anti(hi) - anti(lo));
        total += if cross <= a {
            -piece(a, b)
        } else if cross >= b {
            piece(a, b)
        } else {
            piece(a, cross) - piece(cross, b)
        };
    }
    // ∫_last^∞ (1 - Φ) = φ(x) - x(1 - Φ(x))
    total + normal_pdf(last) - last * normal_sf(last)
}

fn w1_of(samples: &[f64]) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    w1_sorted(&s)
}

/// Exact `W_1` between the empirical law of `samples` and `N(0, 1)`.
///
/// The standard error combines the spread of the [`REPLICATES`] contiguous
/// batch estimates with the positive small-sample bias of the empirical
/// distance, estimated from the gap between the batch mean and the full
/// estimate (batch values scale as `1/sqrt(m/REPLICATES)`).
pub fn wasserstein_to_normal(samples: &[f64]) -> Result<WassersteinEstimate, VerifyError> {
    if samples.is_empty() {
        return Err(VerifyError::Data("no samples".into()));
    }
    if let Some(bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(VerifyError::Data(format!("non-finite sample {bad}")));
    }
    let m = samples.len();
    let value = w1_of(samples);
    let mut std_error = 0.0;
    if m >= 2 * REPLICATES {
        let mut start = 0;
        let batch: Vec<f64> = batch_sizes(m)
            .into_iter()
            .map(|len| {
                let v = w1_of(&samples[start..start + len]);
                start += len;
                v
            })
            .collect();
        let r = REPLICATES as f64;
        let mean = batch.iter().sum::<f64>() / r;
        let var = batch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0);
        let se_rep = (var / r).sqrt();
        let bias = (mean - value).max(0.0) / (r.sqrt() - 1.0);
        std_error = (se_rep * se_rep + bias * bias).sqrt();
    }
    Ok(WassersteinEstimate { value, sample_size: m, seed: 0, std_error })
}

/// Samples the functional and estimates its `W_1` distance to `N(0, 1)`.
pub fn estimate_wasserstein(spec: &SampleSpec, m: usize, seed: u64) -> Result<WassersteinEstimate, VerifyError> {
    let samples = sample_functional(spec, m, seed)?;
    let mut est = wasserstein_to_normal(&samples)?;
    est.seed = seed;
    Ok(est)
}

fn singular_density(d: &Distribution<f64>) -> bool {
    match d.kind() {
        Kind::CenteredGamma { shape } => *shape < 1.0,
        Kind::CenteredBeta { alpha } => *alpha < 1.0,
        _ => false,
    }
}

/// Total variation between `scale · Σ_{k<n} X_k` and `N(0, 1)`, from the
/// `n`-fold convolution of the cell masses of `X` on a grid of step
/// `h ≤ 1e-3 sd(X)`.
fn tv_scaled_sum(dist: &Distribution<f64>, n: usize, scale: f64) -> Result<f64, VerifyError> {
    if !dist.is_continuous() {
        return Err(VerifyError::Unsupported("TV by convolution needs a continuous law".into()));
    }
    if n == 0 {
        return Err(VerifyError::Data("n must be positive".into()));
    }
    let sd = dist.variance().sqrt();
    let mut h = 1e-3 * sd;
    if singular_density(dist) {
        log::warn!("{} density is unbounded at an endpoint; halving the grid step", dist.name());
        h *= 0.5;
    }
    let tail = 1e-10;
    let lo = dist.quantile(tail).map_err(BoundError::from)?;
    let hi = dist.quantile(1.0 - tail).map_err(BoundError::from)?;
    // grid points lo + j h carry the mass of [lo + (j-½)h, lo + (j+½)h)
    let len = ((hi - lo) / h).ceil() as usize + 1;
    let mut masses = Vec::with_capacity(len);
    let mut prev = 0.0;
    for j in 0..len {
        let edge = lo + (j as f64 + 0.5) * h;
        let cur = if j + 1 == len { 1.0 } else { dist.cdf(edge) };
        masses.push(cur - prev);
        prev = cur;
    }
    let total_len = n * (len - 1) + 1;
    let size = total_len.next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let mut buf: Vec<Complex<f64>> = masses.iter().map(|&m| Complex::new(m, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    fwd.process(&mut buf);
    for z in buf.iter_mut() {
        *z = z.powu(n as u32);
    }
    inv.process(&mut buf);
    let norm = 1.0 / size as f64;
    // sum point j sits at n·lo + j h, scaled to scale·(n·lo + j h)
    let step = scale * h;
    let origin = scale * n as f64 * lo;
    let mut tv = 0.0;
    let mut covered = 0.0;
    for (j, z) in buf[..total_len].iter().enumerate() {
        let x = origin + j as f64 * step;
        let normal = normal_cdf(x + 0.5 * step) - normal_cdf(x - 0.5 * step);
        covered += normal;
        tv += (z.re * norm - normal).abs();
    }
    // normal mass outside the grid
    tv += (1.0 - covered).max(0.0);
    Ok(0.5 * tv)
}

/// Total variation between the normalized sum `Σ X_k / sqrt(n Var X)` of `n`
/// i.i.d. copies and `N(0, 1)`. Accuracy is limited by the grid step.
pub fn tv_to_normal_convolution(dist: &Distribution<f64>, n: usize) -> Result<f64, VerifyError> {
    let scale = 1.0 / (n as f64 * dist.variance()).sqrt();
    tv_scaled_sum(dist, n, scale)
}

/// A bound confronted with an estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub bound: BoundReport<f64>,
    pub estimate: WassersteinEstimate,
    /// `estimate ≤ bound + 3 std_error`.
    pub holds: bool,
    /// `bound - estimate - 3 std_error`.
    pub margin: f64,
}

impl CheckResult {
    /// Confronts a bound with an estimate computed elsewhere, e.g. one
    /// estimate shared by several bounds on the same functional.
    pub fn from_estimate(bound: BoundReport<f64>, estimate: WassersteinEstimate) -> Self {
        let slack = 3.0 * estimate.std_error;
        CheckResult {
            holds: estimate.value <= bound.value + slack,
            margin: bound.value - estimate.value - slack,
            bound,
            estimate,
        }
    }
}

/// Runs the estimator matching the bound's metric. TV bounds are checked by
/// convolution and need a sum of identical continuous laws.
pub fn check_bound(
    bound: &BoundReport<f64>,
    spec: &SampleSpec,
    m: usize,
    seed: u64,
) -> Result<CheckResult, VerifyError> {
    let estimate = match bound.metric {
        Metric::W1 => estimate_wasserstein(spec, m, seed)?,
        Metric::TV => {
            let SampleSpec::Sum(dists) = spec else {
                return Err(VerifyError::Unsupported("TV checks need an i.i.d. sum".into()));
            };
            let first = dists.first().ok_or_else(|| VerifyError::Data("empty sum".into()))?;
            if dists.iter().any(|d| d != first) {
                return Err(VerifyError::Unsupported("TV checks need identically distributed summands".into()));
            }
            let value = tv_scaled_sum(first, dists.len(), 1.0)?;
            WassersteinEstimate { value, sample_size: 0, seed, std_error: 0.0 }
        }
        Metric::GammaH => {
            return Err(VerifyError::Unsupported("the gamma-target distance has no sample estimator".into()))
        }
    };
    Ok(CheckResult::from_estimate(bound.clone(), estimate))
}

fn chaos_samples(cells: usize, m: usize, seed: u64) -> Vec<ChaosSample<f64>> {
    batch_sizes(m)
        .into_iter()
        .enumerate()
        .flat_map(|(r, len)| {
            let cols = uniform_columns(seed, r, cells, len);
            (0..len)
                .map(move |i| ChaosSample::new(cols.iter().map(|c| 2.0 * c[i] - 1.0).collect()).expect("in range"))
                .collect::<Vec<_>>()
        })
        .collect()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / m;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

fn zscore(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

/// Outcome of [`verify_multiplication`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiplicationCheck {
    /// `max |I_n(f) I_m(g) - Σ_k I_k(h_k)|` over the samples.
    pub max_abs_path_error: f64,
    /// z-score of `mean(I_n(f) I_m(g)) - h_0` (both sides have mean `h_0`).
    pub mc_zscore: f64,
}

pub fn verify_multiplication(
    f: &ChaosTensor<f64>,
    g: &ChaosTensor<f64>,
    m: usize,
    seed: u64,
) -> Result<MultiplicationCheck, VerifyError> {
    let hs = Arc::new(multiply(f, g)?);
    let cells = f.cell_count().max(g.cell_count());
    let samples = chaos_samples(cells, m, seed);
    let rows: Vec<(f64, f64)> = with_pool(|| {
        samples
            .par_iter()
            .map(|s| -> Result<(f64, f64), ChaosError> {
                let lhs = evaluate_integral(f, s)? * evaluate_integral(g, s)?;
                let mut rhs = 0.0;
                for h in hs.iter() {
                    rhs += evaluate_integral(h, s)?;
                }
                Ok((lhs, (lhs - rhs).abs()))
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let lhs: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let (mean, se) = mean_and_se(&lhs);
    Ok(MultiplicationCheck {
        max_abs_path_error: rows.iter().map(|r| r.1).fold(0.0, f64::max),
        mc_zscore: zscore(mean - hs[0].scalar_value(), se),
    })
}

/// Outcome of [`verify_isometry`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IsometryCheck {
    /// Sample mean of `I_n(f)^2`.
    pub empirical: f64,
    /// `n! ‖f̃‖²` for the symmetrization `f̃`.
    pub exact: f64,
    pub std_error: f64,
    pub zscore: f64,
    pub canonical: bool,
    /// Two-sided `|z| ≤ 3` when canonical, `empirical ≤ exact + 3 SE` otherwise.
    pub holds: bool,
}

pub fn verify_isometry(f: &ChaosTensor<f64>, m: usize, seed: u64) -> Result<IsometryCheck, VerifyError> {
    let sym = symmetrize(f)?;
    let exact = factorial::<f64>(f.order()) * l2_norm_sq(&sym);
    let samples = chaos_samples(f.cell_count(), m, seed);
    let sq: Vec<f64> = samples
        .iter()
        .map(|s| evaluate_integral(f, s).map(|v| v * v))
        .collect::<Result<Vec<_>, _>>()?;
    let (empirical, se) = mean_and_se(&sq);
    let z = zscore(empirical - exact, se);
    let canonical = f.is_canonical();
    let holds = if canonical { z.abs() <= 3.0 } else { empirical <= exact + 3.0 * se + 1e-12 };
    Ok(IsometryCheck { empirical, exact, std_error: se, zscore: z, canonical, holds })
}

/// Sample covariance of two integrals on the same samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceCheck {
    pub covariance: f64,
    pub std_error: f64,
    pub zscore: f64,
}

pub fn verify_orthogonality(
    f: &ChaosTensor<f64>,
    g: &ChaosTensor<f64>,
    m: usize,
    seed: u64,
) -> Result<CovarianceCheck, VerifyError> {
    let cells = f.cell_count().max(g.cell_count());
    let samples = chaos_samples(cells, m, seed);
    let mut a = Vec::with_capacity(m);
    let mut b = Vec::with_capacity(m);
    for s in &samples {
        a.push(evaluate_integral(f, s)?);
        b.push(evaluate_integral(g, s)?);
    }
    let (ma, _) = mean_and_se(&a);
    let (mb, _) = mean_and_se(&b);
    let prods: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let (covariance, se) = mean_and_se(&prods);
    Ok(CovarianceCheck { covariance, std_error: se, zscore: zscore(covariance, se) })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_the_sample() {
        assert_eq!(batch_sizes(105).iter().sum::<usize>(), 105);
        assert_eq!(batch_sizes(7).iter().filter(|&&n| n > 0).count(), 7);
    }

    #[test]
    fn uniforms_are_open_interval() {
        let cols = uniform_columns(1, 0, 2, 1000);
        assert!(cols.iter().flatten().all(|&u| u > 0.0 && u < 1.0));
        assert_ne!(cols[0], cols[1]);
    }
}
