//! Residual and variance diagnostics used to justify the partitioning and
//! the choice of transform.

use chrono::NaiveDate;

use super::{BaselineError, Observation, ResidualCurve};
use crate::curve::grid_sum;

/// Default window for [`rolling_variance`], in days.
pub const DEFAULT_ROLLING_WINDOW: usize = 28;

/// Shortest segment [`binseg_changepoints`] will create.
pub const MIN_SEGMENT_LEN: usize = 5;

/// Total daily usage per date, sorted by date.
pub fn daily_totals(observations: &[Observation]) -> Vec<(NaiveDate, f64)> {
    let mut out: Vec<(NaiveDate, f64)> = observations.iter().map(|o| (o.date, grid_sum(&o.values))).collect();
    out.sort_by_key(|(d, _)| *d);
    out
}

fn sample_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Sample variance over a centered window of `window_days` values.
///
/// Index `i` covers `i - window/2 .. i - window/2 + window`, truncated at the
/// ends of the series.
pub fn rolling_variance(series: &[f64], window_days: usize) -> Result<Vec<f64>, BaselineError> {
    if window_days < 2 {
        return Err(BaselineError::InvalidArgument("rolling window must be at least 2 days".into()));
    }
    let half = window_days / 2;
    Ok((0..series.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window_days - half).min(series.len());
            sample_variance(&series[lo..hi])
        })
        .collect())
}

/// Negative log-likelihood of a zero-mean normal segment with its own
/// maximum-likelihood variance, from prefix sums of squares.
fn segment_cost(prefix_sq: &[f64], start: usize, end: usize) -> f64 {
    let n = (end - start) as f64;
    let var = ((prefix_sq[end] - prefix_sq[start]) / n).max(1e-12);
    0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0)
}

fn best_split(prefix_sq: &[f64], start: usize, end: usize) -> Option<(usize, f64)> {
    if end - start < 2 * MIN_SEGMENT_LEN {
        return None;
    }
    let whole = segment_cost(prefix_sq, start, end);
    (start + MIN_SEGMENT_LEN..=end - MIN_SEGMENT_LEN)
        .map(|tau| (tau, whole - segment_cost(prefix_sq, start, tau) - segment_cost(prefix_sq, tau, end)))
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
}

/// Binary segmentation for changes in variance of a zero-mean series.
///
/// Repeatedly splits the segment whose best split most reduces the negative
/// log-likelihood, until the reduction falls below `penalty` (default
/// `ln N`) or `max_cpts` changepoints exist. Each returned index is the first
/// position of a new segment.
pub fn binseg_changepoints(series: &[f64], max_cpts: usize, penalty: Option<f64>) -> Result<Vec<usize>, BaselineError> {
    if series.len() < 4 {
        return Err(BaselineError::InvalidArgument("binary segmentation needs at least 4 points".into()));
    }
    let penalty = penalty.unwrap_or((series.len() as f64).ln());
    let mut prefix_sq = Vec::with_capacity(series.len() + 1);
    prefix_sq.push(0.0);
    for x in series {
        prefix_sq.push(prefix_sq.last().unwrap() + x * x);
    }

    let mut segments = vec![(0, series.len())];
    let mut cpts = Vec::new();
    while cpts.len() < max_cpts {
        let candidate = segments
            .iter()
            .enumerate()
            .filter_map(|(k, &(s, e))| best_split(&prefix_sq, s, e).map(|(tau, gain)| (k, tau, gain)))
            .max_by(|a, b| a.2.total_cmp(&b.2));
        match candidate {
            Some((k, tau, gain)) if gain >= penalty => {
                let (s, e) = segments.remove(k);
                segments.push((s, tau));
                segments.push((tau, e));
                cpts.push(tau);
            }
            _ => break,
        }
    }
    cpts.sort_unstable();
    Ok(cpts)
}

/// Adjusted Fisher–Pearson sample skewness `G1`.
pub fn skewness(values: &[f64]) -> Result<f64, BaselineError> {
    let n = values.len();
    if n < 3 {
        return Err(BaselineError::InvalidArgument("skewness needs at least 3 values".into()));
    }
    let nf = n as f64;
    let mean = values.iter().sum::<f64>() / nf;
    let m2 = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = values.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    if m2 <= f64::EPSILON * mean.abs().max(1.0) * 1e-6 || m2 == 0.0 {
        return Err(BaselineError::ZeroVariance);
    }
    let g1 = m3 / m2.powf(1.5);
    Ok((nf * (nf - 1.0)).sqrt() / (nf - 2.0) * g1)
}

/// `ln(x + offset)` applied to every grid value.
pub fn log_transform(observations: &[Observation], offset: f64) -> Result<Vec<Observation>, BaselineError> {
    if !(offset > 0.0) {
        return Err(BaselineError::InvalidArgument("log offset must be positive".into()));
    }
    observations
        .iter()
        .map(|o| {
            if o.values.iter().any(|v| *v + offset <= 0.0) {
                return Err(BaselineError::InvalidArgument(format!("value below -offset on {}", o.date)));
            }
            Ok(Observation { date: o.date, values: o.values.map(|v| (v + offset).ln()) })
        })
        .collect()
}

pub fn inverse_log_transform(observations: &[Observation], offset: f64) -> Vec<Observation> {
    observations
        .iter()
        .map(|o| Observation { date: o.date, values: o.values.map(|v| v.exp() - offset) })
        .collect()
}

/// Sample autocorrelation, lags `0..=max_lag`, of one hour's residuals
/// across consecutive days (input order sorted by date).
pub fn interdaily_acf(residuals: &[ResidualCurve], hour: usize, max_lag: usize) -> Result<Vec<f64>, BaselineError> {
    if hour >= crate::HOURS {
        return Err(BaselineError::InvalidArgument(format!("hour {hour} out of range")));
    }
    if residuals.len() < max_lag + 2 {
        return Err(BaselineError::InvalidArgument(format!(
            "{} days is too few for lag {max_lag}",
            residuals.len()
        )));
    }
    let mut sorted: Vec<&ResidualCurve> = residuals.iter().collect();
    sorted.sort_by_key(|r| r.date);
    let xs: Vec<f64> = sorted.iter().map(|r| r.values[hour]).collect();
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let denom: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(BaselineError::ZeroVariance);
    }
    Ok((0..=max_lag)
        .map(|k| (0..n - k).map(|t| (xs[t] - mean) * (xs[t + k] - mean)).sum::<f64>() / denom)
        .collect())
}
