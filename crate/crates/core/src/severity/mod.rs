//! Severity model and analyst reports.
//!
//! Positive cluster exceedances `z_n` are modelled by a Beta distribution on
//! `(0, S)`; the fitted CDF maps each outlier day to a severity in `[0, 1]`.
//! Reports built from severities: ranked alert lists, heatmaps, daily
//! positive/negative counts, per-terminal counts and weather crosstabs.

mod alerts;
mod beta;
mod reports;
mod weather;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detect::{ClusterDayExceedance, Direction};
use crate::spatial::ClusterId;
use crate::TerminalId;

pub use alerts::{alert_list, write_alerts_csv, AlertEntry};
pub use beta::{fit_beta4, severity, trigamma, FitMethod, SeverityModel, MIN_SEVERITY_SAMPLES, MIN_SHAPE};
pub use reports::{
    cluster_centroids, cosine_similarity, pos_neg_series, severity_heatmap, severity_series,
    terminal_outlier_counts, Heatmap, HeatmapOrder, PosNegDay,
};
pub use weather::{
    parse_weather, weather_crosstab, Bins, CrosstabConfig, PrecipitationUnit, ProportionMatrix, TemperatureUnit,
    WeatherCrosstab, WeatherDay, WeatherSchema,
};

#[derive(Debug, Error, PartialEq)]
pub enum SeverityError {
    #[error("{samples} positive exceedances, at least {min} needed")]
    InsufficientSamples { samples: usize, min: usize },
    #[error("exceedance samples must lie in (0, {upper}]")]
    SampleOutOfRange { upper: f64 },
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("cosine similarity undefined for a zero vector")]
    ZeroVector,
    #[error("invalid bins: {0}")]
    InvalidBins(String),
    #[error("missing column {0:?} in weather file")]
    MissingColumn(String),
    #[error("weather line {line}: {message}")]
    BadWeatherRow { line: u64, message: String },
    #[error("duplicate weather date {0}")]
    DuplicateDate(NaiveDate),
    #[error("weather file: {0}")]
    Io(String),
}

/// One outlier cluster-day with its severity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSeverity {
    pub cluster: ClusterId,
    pub date: NaiveDate,
    pub z_n: f64,
    pub size: usize,
    /// Absent when the cluster has too few exceedances for a fit.
    pub severity: Option<f64>,
    pub direction: Option<Direction>,
    pub contributors: Vec<TerminalId>,
}

/// Fits one model per cluster on its positive exceedances. Clusters that
/// cannot be fitted are returned with the reason.
pub fn fit_cluster_models(
    exceedances: &[ClusterDayExceedance],
) -> (BTreeMap<ClusterId, SeverityModel>, BTreeMap<ClusterId, String>) {
    let mut samples: BTreeMap<&ClusterId, (usize, Vec<f64>)> = BTreeMap::new();
    for e in exceedances {
        let entry = samples.entry(&e.cluster).or_insert((e.size, Vec::new()));
        if e.is_outlier() {
            entry.1.push(e.z_n);
        }
    }
    let mut models = BTreeMap::new();
    let mut unavailable = BTreeMap::new();
    for (cid, (size, z)) in samples {
        match fit_beta4(cid, &z, size as f64) {
            Ok(m) => {
                models.insert(cid.clone(), m);
            }
            Err(e) => {
                unavailable.insert(cid.clone(), e.to_string());
            }
        }
    }
    (models, unavailable)
}

/// Severities of every outlier cluster-day, in input order.
pub fn score_severities(
    exceedances: &[ClusterDayExceedance],
    models: &BTreeMap<ClusterId, SeverityModel>,
) -> Vec<ClusterSeverity> {
    exceedances
        .iter()
        .filter(|e| e.is_outlier())
        .map(|e| ClusterSeverity {
            cluster: e.cluster.clone(),
            date: e.date,
            z_n: e.z_n,
            size: e.size,
            severity: models.get(&e.cluster).map(|m| m.severity(e.z_n)),
            direction: e.direction,
            contributors: e.contributors.clone(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exceedance(cluster: u32, day: u32, z_n: f64, size: usize) -> ClusterDayExceedance {
        ClusterDayExceedance {
            cluster: ClusterId(cluster.into()),
            date: NaiveDate::from_ymd_opt(2019, 1, 1).unwrap() + chrono::Days::new(day as u64),
            z_n,
            size,
            contributors: Vec::new(),
            missing: Vec::new(),
            direction: (z_n > 0.0).then_some(Direction::Positive),
        }
    }

    #[test]
    fn fits_only_clusters_with_enough_exceedances() {
        let mut ex = Vec::new();
        for d in 0..60 {
            ex.push(exceedance(1, d, if d % 2 == 0 { 0.1 + d as f64 * 0.05 } else { 0.0 }, 4));
            ex.push(exceedance(2, d, if d < 5 { 0.5 } else { 0.0 }, 3));
        }
        let (models, unavailable) = fit_cluster_models(&ex);
        assert_eq!(models.len(), 1);
        assert_eq!(models[&ClusterId(1u32.into())].samples, 30);
        assert!(unavailable[&ClusterId(2u32.into())].contains("5 positive exceedances"));
        let scored = score_severities(&ex, &models);
        assert_eq!(scored.len(), 35);
        assert!(scored.iter().filter(|s| s.cluster == ClusterId(2u32.into())).all(|s| s.severity.is_none()));
        assert!(scored.iter().filter(|s| s.cluster == ClusterId(1u32.into())).all(|s| s.severity.is_some()));
    }
}
