use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::DepthRecord;
use crate::baseline::ResidualCurve;
use crate::curve::{grid_sum, Curve};
use crate::spatial::{ClusterId, ClusterModel};
use crate::TerminalId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Positive,
    Negative,
}

impl Direction {
    pub fn arrow(self) -> &'static str {
        match self {
            Direction::Positive => "↑",
            Direction::Negative => "↓",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterDayExceedance {
    pub cluster: ClusterId,
    pub date: NaiveDate,
    pub z_n: f64,
    /// Cluster size `S`.
    pub size: usize,
    /// Members with `z > 0`.
    pub contributors: Vec<TerminalId>,
    /// Members without a score on this date.
    pub missing: Vec<TerminalId>,
    pub direction: Option<Direction>,
}

impl ClusterDayExceedance {
    pub fn is_outlier(&self) -> bool {
        self.z_n > 0.0
    }
}

/// Sum of the positive `z` values of a cluster's members on one date.
pub fn cluster_exceedance(
    cluster: &ClusterId,
    members: &[TerminalId],
    date: NaiveDate,
    z: &BTreeMap<TerminalId, f64>,
) -> ClusterDayExceedance {
    let mut z_n = 0.0;
    let mut contributors = Vec::new();
    let mut missing = Vec::new();
    for m in members {
        match z.get(m) {
            Some(&v) if v > 0.0 => {
                z_n += v;
                contributors.push(m.clone());
            }
            Some(_) => {}
            None => missing.push(m.clone()),
        }
    }
    ClusterDayExceedance {
        cluster: cluster.clone(),
        date,
        z_n,
        size: members.len(),
        contributors,
        missing,
        direction: None,
    }
}

/// Positive when the summed grid totals of the curves are at least zero.
pub fn classify_direction<'a>(curves: impl IntoIterator<Item = &'a Curve>) -> Direction {
    let total: f64 = curves.into_iter().map(grid_sum).sum();
    if total >= 0.0 {
        Direction::Positive
    } else {
        Direction::Negative
    }
}

/// Exceedances for every cluster on every scored date, sorted by date and
/// cluster, with directions attached to outlier days.
pub fn cluster_exceedances(
    model: &ClusterModel,
    records: &[DepthRecord],
    residuals: &[ResidualCurve],
) -> Vec<ClusterDayExceedance> {
    let mut z_by_date: BTreeMap<NaiveDate, BTreeMap<TerminalId, f64>> = BTreeMap::new();
    let mut dates = BTreeSet::new();
    for r in records {
        dates.insert(r.date);
        if let Some(z) = r.z {
            z_by_date.entry(r.date).or_default().insert(r.terminal.clone(), z);
        }
    }
    let residual_index: HashMap<(&TerminalId, NaiveDate), &Curve> =
        residuals.iter().map(|r| ((&r.terminal, r.date), &r.values)).collect();
    let members = model.members();
    let empty = BTreeMap::new();
    let mut out = Vec::new();
    for date in dates {
        let z = z_by_date.get(&date).unwrap_or(&empty);
        for (cid, ms) in &members {
            let mut e = cluster_exceedance(cid, ms, date, z);
            if e.is_outlier() {
                e.direction = Some(classify_direction(
                    e.contributors.iter().filter_map(|t| residual_index.get(&(t, date)).copied()),
                ));
            }
            out.push(e);
        }
    }
    out
}
