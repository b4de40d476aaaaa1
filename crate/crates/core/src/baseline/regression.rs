//! Pointwise functional regression on the hourly grid.
//!
//! Each of the 24 hours is an independent ordinary least-squares problem, but
//! all hours share the same indicator design, so the fit is one QR
//! factorisation with a 24-column right-hand side. Reference levels are
//! Sunday, December and the reference year (by default the latest year in
//! the training data); their effects are absorbed by the intercept.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{BaselineError, Observation, PartitionScheme, ResidualCurve};
use crate::curve::{sub, HOURS};
use crate::{Curve, TerminalId};

/// Version tag written into persisted model files.
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Relative tolerance below which a design column counts as linearly
/// dependent on the columns before it.
const COLLINEARITY_TOL: f64 = 1e-8;
/// Leverage above `1 - LEVERAGE_TOL` means the leave-one-out shortcut is
/// unusable and the day is refitted explicitly.
const LEVERAGE_TOL: f64 = 1e-8;

/// Which calendar factors enter the regression.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorSet {
    pub day: bool,
    pub month: bool,
    pub year: bool,
}

impl FactorSet {
    pub const NONE: FactorSet = FactorSet { day: false, month: false, year: false };
    pub const ALL: FactorSet = FactorSet { day: true, month: true, year: true };

    /// The eight candidate models, numbered 1 to 8 in this order.
    pub const CANDIDATES: [FactorSet; 8] = [
        FactorSet::NONE,
        FactorSet { day: true, month: false, year: false },
        FactorSet { day: false, month: true, year: false },
        FactorSet { day: false, month: false, year: true },
        FactorSet { day: true, month: true, year: false },
        FactorSet { day: false, month: true, year: true },
        FactorSet { day: true, month: false, year: true },
        FactorSet::ALL,
    ];

    pub fn count(&self) -> usize {
        usize::from(self.day) + usize::from(self.month) + usize::from(self.year)
    }

    pub fn model_number(&self) -> usize {
        FactorSet::CANDIDATES.iter().position(|f| f == self).unwrap() + 1
    }

    /// Parsimony order used to break CV ties: fewer factors first, then
    /// lexicographic with day < month < year.
    fn preference_key(&self) -> (usize, bool, bool, bool) {
        (self.count(), !self.day, !self.month, !self.year)
    }
}

impl fmt::Display for FactorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [(self.day, "day"), (self.month, "month"), (self.year, "year")]
            .into_iter()
            .filter_map(|(on, n)| on.then_some(n))
            .collect();
        if names.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&names.join("+"))
        }
    }
}

impl FromStr for FactorSet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "none" | "" => return Ok(FactorSet::NONE),
            "all" | "full" => return Ok(FactorSet::ALL),
            _ => {}
        }
        let mut set = FactorSet::NONE;
        for part in s.split(['+', ',']) {
            match part.trim() {
                "day" => set.day = true,
                "month" => set.month = true,
                "year" => set.year = true,
                other => return Err(format!("unknown factor `{other}`")),
            }
        }
        Ok(set)
    }
}

/// A non-reference level of one factor, i.e. one indicator column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "factor", content = "level", rename_all = "lowercase")]
pub enum Level {
    /// Day of week, 0 = Monday .. 6 = Sunday.
    Day(u8),
    /// Month, 1 = January .. 12 = December.
    Month(u8),
    Year(i32),
}

const DAY_NAMES: [&str; 7] = ["Mon", "Tue", "Wed", "Thu", "Fri", "Sat", "Sun"];
const MONTH_NAMES: [&str; 12] = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
const REFERENCE_DAY: u8 = 6;
const REFERENCE_MONTH: u8 = 12;

impl Level {
    fn matches(&self, date: NaiveDate) -> bool {
        match *self {
            Level::Day(d) => date.weekday().num_days_from_monday() as u8 == d,
            Level::Month(m) => date.month() as u8 == m,
            Level::Year(y) => date.year() == y,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Level::Day(d) => f.write_str(DAY_NAMES[d as usize]),
            Level::Month(m) => f.write_str(MONTH_NAMES[m as usize - 1]),
            Level::Year(y) => write!(f, "{y}"),
        }
    }
}

/// The levels of `date` that carry an indicator under `factors`.
fn active_levels(factors: FactorSet, reference_year: i32, date: NaiveDate) -> Vec<Level> {
    let mut out = Vec::with_capacity(3);
    if factors.day {
        let d = date.weekday().num_days_from_monday() as u8;
        if d != REFERENCE_DAY {
            out.push(Level::Day(d));
        }
    }
    if factors.month {
        let m = date.month() as u8;
        if m != REFERENCE_MONTH {
            out.push(Level::Month(m));
        }
    }
    if factors.year && date.year() != reference_year {
        out.push(Level::Year(date.year()));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Year absorbed by the intercept; defaults to the latest training year.
    pub reference_year: Option<i32>,
}

/// One fitted coefficient curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub values: Curve,
    /// Diagonal entry of `(XᵀX)⁻¹`; multiply by the residual variance of an
    /// hour to get the squared standard error there.
    pub unscaled_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionModel {
    pub format_version: u32,
    pub terminal: TerminalId,
    pub factors: FactorSet,
    pub reference_year: i32,
    pub intercept: Coefficient,
    #[serde(with = "coefficient_list")]
    pub coefficients: BTreeMap<Level, Coefficient>,
    /// Requested levels that the training data could not identify.
    pub dropped: Vec<Level>,
    /// Per-hour residual variance `RSS / (N - p)`; zero for exact fits.
    pub residual_variance: Curve,
    pub training_days: usize,
    pub warnings: Vec<String>,
}

mod coefficient_list {
    use super::{Coefficient, Level};
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    #[derive(Serialize, Deserialize)]
    struct Entry {
        #[serde(flatten)]
        level: Level,
        #[serde(flatten)]
        coefficient: Coefficient,
    }

    pub fn serialize<S: Serializer>(map: &BTreeMap<Level, Coefficient>, s: S) -> Result<S::Ok, S::Error> {
        let entries: Vec<Entry> =
            map.iter().map(|(l, c)| Entry { level: *l, coefficient: c.clone() }).collect();
        entries.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<Level, Coefficient>, D::Error> {
        let entries = Vec::<Entry>::deserialize(d)?;
        Ok(entries.into_iter().map(|e| (e.level, e.coefficient)).collect())
    }
}

impl RegressionModel {
    /// Number of identified coefficient curves, intercept included.
    pub fn coefficient_count(&self) -> usize {
        self.coefficients.len() + 1
    }
}

/// Baseline mean for one date.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mean: Curve,
    /// Active levels of the date that have no fitted coefficient; the
    /// prediction falls back to intercept plus the remaining levels.
    pub missing_levels: Vec<Level>,
}

impl Prediction {
    pub fn has_warning(&self) -> bool {
        !self.missing_levels.is_empty()
    }
}

pub fn predict_mean(model: &RegressionModel, date: NaiveDate) -> Prediction {
    let mut mean = model.intercept.values;
    let mut missing_levels = Vec::new();
    for level in active_levels(model.factors, model.reference_year, date) {
        match model.coefficients.get(&level) {
            Some(c) => {
                for (m, v) in mean.iter_mut().zip(&c.values) {
                    *m += v;
                }
            }
            None => missing_levels.push(level),
        }
    }
    Prediction { mean, missing_levels }
}

/// Observed minus predicted, labelled with the day's partition.
pub fn residuals(model: &RegressionModel, observations: &[Observation], scheme: &PartitionScheme) -> Vec<ResidualCurve> {
    observations
        .iter()
        .map(|obs| ResidualCurve {
            terminal: model.terminal.clone(),
            date: obs.date,
            values: sub(&obs.values, &predict_mean(model, obs.date).mean),
            partition: scheme.assign(obs.date),
        })
        .collect()
}

struct Fit {
    model: RegressionModel,
    /// Diagonal of the hat matrix, one entry per observation.
    leverage: Vec<f64>,
    /// In-sample residuals, N x 24.
    resid: DMatrix<f64>,
}

/// Select identifiable columns by Gram–Schmidt in design order; a column in
/// the span of earlier ones (including an all-zero column) is dropped.
fn independent_columns(columns: &[Vec<f64>]) -> Vec<bool> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::with_capacity(columns.len());
    for col in columns {
        let norm0 = col.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            keep.push(false);
            continue;
        }
        let mut v = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&v).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= dot * qi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm <= COLLINEARITY_TOL * norm0 {
            keep.push(false);
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            keep.push(true);
        }
    }
    keep
}

fn fit_internal(
    terminal: &TerminalId,
    observations: &[Observation],
    factors: FactorSet,
    options: &FitOptions,
) -> Result<Fit, BaselineError> {
    let n = observations.len();
    if n == 0 {
        return Err(BaselineError::Empty);
    }
    let reference_year = options
        .reference_year
        .unwrap_or_else(|| observations.iter().map(|o| o.date.year()).max().unwrap());

    let mut requested: Vec<Level> = Vec::new();
    if factors.day {
        requested.extend((0..6).map(Level::Day));
    }
    if factors.month {
        requested.extend((1..=11).map(Level::Month));
    }
    if factors.year {
        let years: BTreeSet<i32> = observations.iter().map(|o| o.date.year()).collect();
        requested.extend(years.into_iter().filter(|y| *y != reference_year).map(Level::Year));
    }

    let mut columns: Vec<Vec<f64>> = vec![vec![1.0; n]];
    columns.extend(
        requested
            .iter()
            .map(|l| observations.iter().map(|o| if l.matches(o.date) { 1.0 } else { 0.0 }).collect()),
    );
    let keep = independent_columns(&columns);
    let kept_levels: Vec<Level> =
        requested.iter().zip(&keep[1..]).filter_map(|(l, k)| k.then_some(*l)).collect();
    let dropped: Vec<Level> = requested.iter().zip(&keep[1..]).filter_map(|(l, k)| (!k).then_some(*l)).collect();

    let p = 1 + kept_levels.len();
    if n < p {
        return Err(BaselineError::InsufficientDays { days: n, coefficients: p });
    }

    let kept_cols: Vec<&Vec<f64>> = columns.iter().zip(&keep).filter_map(|(c, k)| k.then_some(c)).collect();
    let x = DMatrix::from_fn(n, p, |i, j| kept_cols[j][i]);
    let y = DMatrix::from_fn(n, HOURS, |i, t| observations[i].values[t]);

    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let rhs = q.transpose() * &y;
    let beta = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| BaselineError::Numerical("singular triangular factor".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| BaselineError::Numerical("singular triangular factor".into()))?;

    let resid = &y - &x * &beta;
    let dof = n - p;
    let residual_variance: Curve = std::array::from_fn(|t| {
        if dof == 0 {
            0.0
        } else {
            resid.column(t).iter().map(|e| e * e).sum::<f64>() / dof as f64
        }
    });
    let leverage: Vec<f64> = (0..n).map(|i| q.row(i).iter().map(|v| v * v).sum()).collect();

    let coefficient = |j: usize| Coefficient {
        values: std::array::from_fn(|t| beta[(j, t)]),
        unscaled_variance: r_inv.row(j).iter().map(|v| v * v).sum(),
    };
    let coefficients: BTreeMap<Level, Coefficient> =
        kept_levels.iter().enumerate().map(|(k, l)| (*l, coefficient(k + 1))).collect();
    let warnings =
        dropped.iter().map(|l| format!("level {l} dropped: not identifiable from the training days")).collect();

    let model = RegressionModel {
        format_version: MODEL_FORMAT_VERSION,
        terminal: terminal.clone(),
        factors,
        reference_year,
        intercept: coefficient(0),
        coefficients,
        dropped,
        residual_variance,
        training_days: n,
        warnings,
    };
    Ok(Fit { model, leverage, resid })
}

/// Fit the indicator regression for one terminal.
///
/// Levels that the data cannot identify (never observed, or collinear with
/// earlier columns) are dropped and listed in [`RegressionModel::dropped`]
/// with a warning. At least one more day than identifiable coefficients is
/// required.
pub fn fit_regression(
    terminal: &TerminalId,
    observations: &[Observation],
    factors: FactorSet,
    options: &FitOptions,
) -> Result<RegressionModel, BaselineError> {
    let model = fit_internal(terminal, observations, factors, options)?.model;
    let p = model.coefficient_count();
    if model.training_days <= p {
        return Err(BaselineError::InsufficientDays { days: model.training_days, coefficients: p });
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvMse {
    pub value: f64,
    /// Days whose leave-one-out fit had to drop their own level.
    pub refitted_days: Vec<NaiveDate>,
}

/// Leave-one-out cross-validated mean integrated squared error.
///
/// The integral over the day is the mean over the 24 grid points of the
/// squared error. Leave-one-out residuals use the exact OLS identity
/// `e / (1 - h)`; a day with leverage one (the only day of some level) is
/// refitted without it and predicted without that level.
pub fn cv_mse(observations: &[Observation], factors: FactorSet, options: &FitOptions) -> Result<CvMse, BaselineError> {
    let terminal = TerminalId::new("cv");
    let fit = fit_internal(&terminal, observations, factors, options)?;
    let options = FitOptions { reference_year: Some(fit.model.reference_year) };
    let mut total = 0.0;
    let mut refitted_days = Vec::new();
    for (i, obs) in observations.iter().enumerate() {
        let slack = 1.0 - fit.leverage[i];
        let sq: f64 = if slack > LEVERAGE_TOL {
            fit.resid.row(i).iter().map(|e| (e / slack).powi(2)).sum()
        } else {
            let rest: Vec<Observation> =
                observations.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, o)| o.clone()).collect();
            let model = fit_internal(&terminal, &rest, factors, &options)?.model;
            refitted_days.push(obs.date);
            let pred = predict_mean(&model, obs.date).mean;
            obs.values.iter().zip(&pred).map(|(x, p)| (x - p).powi(2)).sum()
        };
        total += sq / HOURS as f64;
    }
    if !refitted_days.is_empty() {
        log::warn!(
            "{} leave-one-out fits dropped a single-occurrence level (factors {factors})",
            refitted_days.len()
        );
    }
    Ok(CvMse { value: total / observations.len() as f64, refitted_days })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSelection {
    pub chosen: FactorSet,
    /// CV-MSE of every candidate, in model-number order.
    pub table: Vec<(FactorSet, f64)>,
}

/// Evaluate all eight factor subsets and pick the lowest CV-MSE.
///
/// Scores within a relative `1e-9` of each other are treated as tied and
/// resolved toward fewer factors, then day < month < year.
pub fn select_model(observations: &[Observation], options: &FitOptions) -> Result<ModelSelection, BaselineError> {
    let table = FactorSet::CANDIDATES
        .iter()
        .map(|f| cv_mse(observations, *f, options).map(|cv| (*f, cv.value)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut by_preference = table.clone();
    by_preference.sort_by_key(|(f, _)| f.preference_key());
    let mut best = by_preference[0];
    for &(f, score) in &by_preference[1..] {
        let tol = 1e-9 * score.abs().max(best.1.abs()).max(1e-3);
        if score < best.1 - tol {
            best = (f, score);
        }
    }
    Ok(ModelSelection { chosen: best.0, table })
}
