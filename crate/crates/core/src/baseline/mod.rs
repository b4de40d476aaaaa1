//! Baseline removal: functional regression on day/month/year indicators,
//! temporal partitioning, and residual diagnostics.

mod diagnostics;
mod partition;
mod regression;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::DailyCurve;
use crate::{Curve, TerminalId};

pub use diagnostics::{
    binseg_changepoints, daily_totals, interdaily_acf, inverse_log_transform, log_transform, rolling_variance,
    skewness, DEFAULT_ROLLING_WINDOW, MIN_SEGMENT_LEN,
};
pub use partition::{DayType, PartitionLabel, PartitionScheme, Season};
pub use regression::{
    cv_mse, fit_regression, predict_mean, residuals, select_model, Coefficient, CvMse, FactorSet, FitOptions, Level,
    ModelSelection, Prediction, RegressionModel, MODEL_FORMAT_VERSION,
};

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("no observations")]
    Empty,
    #[error("{days} days cannot identify {coefficients} coefficients")]
    InsufficientDays { days: usize, coefficients: usize },
    #[error("zero variance: statistic undefined")]
    ZeroVariance,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// A real-valued curve observed on a date (counts, or transformed counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub date: NaiveDate,
    pub values: Curve,
}

impl From<&DailyCurve> for Observation {
    fn from(c: &DailyCurve) -> Self {
        Observation { date: c.date, values: c.to_real() }
    }
}

/// Observed minus baseline-predicted usage for one terminal-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualCurve {
    pub terminal: TerminalId,
    pub date: NaiveDate,
    pub values: Curve,
    pub partition: PartitionLabel,
}
