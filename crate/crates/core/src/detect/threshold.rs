use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{functional_depth, DepthMethod, DetectError};
use crate::curve::{median, quantile, Curve, HOURS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub resamples: usize,
    /// Scale of the smoothing covariance relative to the pool covariance.
    pub gamma: f64,
    /// Depth quantile taken from each resample.
    pub percentile: f64,
    pub min_pool: usize,
    pub method: DepthMethod,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig { resamples: 200, gamma: 0.05, percentile: 0.01, min_pool: 10, method: DepthMethod::HModal }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<(), DetectError> {
        if self.resamples == 0 {
            return Err(DetectError::InvalidConfig("resamples must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(DetectError::InvalidConfig(format!("gamma must be nonnegative, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.percentile) {
            return Err(DetectError::InvalidConfig(format!("percentile must lie in [0, 1], got {}", self.percentile)));
        }
        if self.min_pool < 2 {
            return Err(DetectError::InvalidConfig("min_pool must be at least 2".into()));
        }
        Ok(())
    }
}

/// Symmetric square root of `gamma` times the covariance of `pool` under
/// the resampling weights.
fn smoothing_factor(pool: &[Curve], weights: &[f64], gamma: f64) -> DMatrix<f64> {
    let total: f64 = weights.iter().sum();
    let w: Vec<f64> = weights.iter().map(|x| x / total).collect();
    let mean: Curve = std::array::from_fn(|t| pool.iter().zip(&w).map(|(c, w)| w * c[t]).sum::<f64>());
    // Reliability-weighted unbiased estimator; reduces to n - 1 for equal weights.
    let denom = 1.0 - w.iter().map(|x| x * x).sum::<f64>();
    let cov = DMatrix::from_fn(HOURS, HOURS, |i, j| {
        pool.iter().zip(&w).map(|(c, w)| w * (c[i] - mean[i]) * (c[j] - mean[j])).sum::<f64>() / denom
    });
    let eig = SymmetricEigen::new(cov * gamma);
    let root = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&root) * eig.eigenvectors.transpose()
}

/// Bootstrap depth threshold `C` for one pool.
///
/// Each resample draws `|pool|` curves with probability proportional to
/// depth, adds Gaussian noise with covariance `gamma` times the
/// depth-weighted pool covariance, and records the `percentile` quantile of its own depths. `C`
/// is the median of those quantiles. Resample `b` uses stream `b` of a
/// ChaCha generator seeded with `seed`, so the result does not depend on
/// thread scheduling.
pub fn bootstrap_threshold(pool: &[Curve], cfg: &BootstrapConfig, seed: u64) -> Result<f64, DetectError> {
    cfg.validate()?;
    if pool.len() < cfg.min_pool {
        return Err(DetectError::PoolTooSmall { size: pool.len(), min: cfg.min_pool });
    }
    if pool.iter().all(|c| c.iter().all(|v| *v == 0.0)) {
        return Err(DetectError::AllZeroPool);
    }
    let depths = functional_depth(pool, cfg.method);
    let weights =
        WeightedIndex::new(&depths).map_err(|e| DetectError::Numerical(format!("resampling weights: {e}")))?;
    let factor = smoothing_factor(pool, &depths, cfg.gamma);
    let n = pool.len();

    let lows: Vec<f64> = (0..cfg.resamples)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let resample: Vec<Curve> = (0..n)
                .map(|_| {
                    let base = &pool[weights.sample(&mut rng)];
                    let z: Vec<f64> = (0..HOURS).map(|_| rng.sample(StandardNormal)).collect();
                    std::array::from_fn(|i| base[i] + (0..HOURS).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
                })
                .collect();
            let d = functional_depth(&resample, cfg.method);
            quantile(&d, cfg.percentile).unwrap_or(0.0)
        })
        .collect();
    let c = median(&lows).unwrap_or(0.0);
    if !(c > 0.0 && c.is_finite()) {
        return Err(DetectError::Numerical(format!("bootstrap threshold {c} is not positive")));
    }
    Ok(c)
}

/// `z = (C - d) / C`.
pub fn normalize_depth(depth: f64, threshold: f64) -> Result<f64, DetectError> {
    if !(threshold > 0.0 && threshold.is_finite()) {
        return Err(DetectError::InvalidThreshold(threshold));
    }
    Ok((threshold - depth) / threshold)
}
