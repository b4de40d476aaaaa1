use serde::{Deserialize, Serialize};

use crate::curve::{l2_distance, quantile_in_place, Curve, HOURS};

/// Quantile of pairwise distances used as the h-modal bandwidth.
pub const DEFAULT_BANDWIDTH_QUANTILE: f64 = 0.15;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthMethod {
    #[default]
    HModal,
    FraimanMuniz,
}

impl std::str::FromStr for DepthMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h_modal" | "h-modal" => Ok(DepthMethod::HModal),
            "fraiman_muniz" | "fraiman-muniz" => Ok(DepthMethod::FraimanMuniz),
            other => Err(format!("unknown depth method {other:?}")),
        }
    }
}

pub fn functional_depth(pool: &[Curve], method: DepthMethod) -> Vec<f64> {
    match method {
        DepthMethod::HModal => h_modal_depth(pool),
        DepthMethod::FraimanMuniz => fraiman_muniz_depth(pool),
    }
}

fn gaussian_kernel(u: f64) -> f64 {
    (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// h-modal depth `d(x) = sum_y K(|x - y| / h)` over the pool, self included,
/// with a Gaussian kernel and `h` the 15th percentile of pairwise distances.
///
/// If that percentile is zero the smallest positive distance is used; a pool
/// of identical curves gets equal depths.
pub fn h_modal_depth(pool: &[Curve]) -> Vec<f64> {
    let n = pool.len();
    if n == 0 {
        return Vec::new();
    }
    let mut dist = vec![0.0; n * n];
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let d = l2_distance(&pool[i], &pool[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            pairs.push(d);
        }
    }
    let mut h = quantile_in_place(&mut pairs, DEFAULT_BANDWIDTH_QUANTILE).unwrap_or(0.0);
    if h <= 0.0 {
        h = pairs.iter().copied().filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    }
    if !h.is_finite() {
        return vec![n as f64 * gaussian_kernel(0.0); n];
    }
    (0..n)
        .map(|i| dist[i * n..(i + 1) * n].iter().map(|d| gaussian_kernel(d / h)).sum())
        .collect()
}

/// Fraiman–Muniz depth: grid mean of `1 - |1/2 - F_t(x(t))|` with `F_t` the
/// empirical distribution function of the pool at hour `t`.
pub fn fraiman_muniz_depth(pool: &[Curve]) -> Vec<f64> {
    let n = pool.len();
    let mut depth = vec![0.0; n];
    let mut column: Vec<f64> = Vec::with_capacity(n);
    for t in 0..HOURS {
        column.clear();
        column.extend(pool.iter().map(|c| c[t]));
        column.sort_by(f64::total_cmp);
        for (i, c) in pool.iter().enumerate() {
            let le = column.partition_point(|v| *v <= c[t]);
            let f = le as f64 / n as f64;
            depth[i] += 1.0 - (0.5 - f).abs();
        }
    }
    depth.iter_mut().for_each(|d| *d /= HOURS as f64);
    depth
}
