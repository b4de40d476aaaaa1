use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{ClusterSeverity, SeverityError};
use crate::detect::{DepthRecord, Direction};
use crate::spatial::{haversine_m, ClusterId};
use crate::terminal::Terminal;
use crate::TerminalId;

/// Mean member coordinates of each cluster, as (lat, lon).
pub fn cluster_centroids(
    members: &BTreeMap<ClusterId, Vec<TerminalId>>,
    terminals: &[Terminal],
) -> BTreeMap<ClusterId, (f64, f64)> {
    let coords: HashMap<&TerminalId, (f64, f64)> =
        terminals.iter().map(|t| (&t.id, (t.latitude, t.longitude))).collect();
    members
        .iter()
        .filter_map(|(cid, ms)| {
            let pts: Vec<(f64, f64)> = ms.iter().filter_map(|t| coords.get(t).copied()).collect();
            if pts.is_empty() {
                return None;
            }
            let n = pts.len() as f64;
            let lat = pts.iter().map(|p| p.0).sum::<f64>() / n;
            let lon = pts.iter().map(|p| p.1).sum::<f64>() / n;
            Some((cid.clone(), (lat, lon)))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapOrder {
    /// Nearest to furthest from the network centre.
    #[default]
    DistanceFromCenter,
    NorthToSouth,
}

impl std::str::FromStr for HeatmapOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "distance" | "distance_from_center" | "center" => Ok(HeatmapOrder::DistanceFromCenter),
            "north_to_south" | "north-south" | "north" => Ok(HeatmapOrder::NorthToSouth),
            other => Err(format!("unknown heatmap order {other:?}")),
        }
    }
}

/// Dates by clusters; a cell holds the severity of an outlier cluster-day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Heatmap {
    pub dates: Vec<NaiveDate>,
    pub clusters: Vec<ClusterId>,
    pub cells: Vec<Vec<Option<f64>>>,
}

impl Heatmap {
    /// Matrix file: a `date` column then one column per cluster; empty
    /// cells are blank.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["date".to_string()];
        header.extend(self.clusters.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        for (date, row) in self.dates.iter().zip(&self.cells) {
            let mut rec = vec![date.to_string()];
            rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn severity_heatmap(
    severities: &[ClusterSeverity],
    centroids: &BTreeMap<ClusterId, (f64, f64)>,
    center: (f64, f64),
    order: HeatmapOrder,
    dates: &[NaiveDate],
) -> Heatmap {
    let mut clusters: Vec<(ClusterId, f64)> = centroids
        .iter()
        .map(|(cid, (lat, lon))| {
            let key = match order {
                HeatmapOrder::DistanceFromCenter => haversine_m(center.0, center.1, *lat, *lon),
                HeatmapOrder::NorthToSouth => -lat,
            };
            (cid.clone(), key)
        })
        .collect();
    clusters.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let col: HashMap<&ClusterId, usize> = clusters.iter().enumerate().map(|(i, c)| (&c.0, i)).collect();
    let row: HashMap<NaiveDate, usize> = dates.iter().enumerate().map(|(i, d)| (*d, i)).collect();
    let mut cells = vec![vec![None; clusters.len()]; dates.len()];
    for s in severities.iter().filter(|s| s.z_n > 0.0) {
        if let (Some(&r), Some(&c)) = (row.get(&s.date), col.get(&s.cluster)) {
            cells[r][c] = s.severity;
        }
    }
    Heatmap { dates: dates.to_vec(), clusters: clusters.into_iter().map(|c| c.0).collect(), cells }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosNegDay {
    pub date: NaiveDate,
    pub positive: usize,
    pub negative: usize,
}

/// Daily counts of positive and negative outlier clusters.
pub fn pos_neg_series(severities: &[ClusterSeverity], dates: &[NaiveDate]) -> Vec<PosNegDay> {
    let mut out: BTreeMap<NaiveDate, PosNegDay> =
        dates.iter().map(|d| (*d, PosNegDay { date: *d, positive: 0, negative: 0 })).collect();
    for s in severities.iter().filter(|s| s.z_n > 0.0) {
        if let Some(day) = out.get_mut(&s.date) {
            match s.direction {
                Some(Direction::Positive) => day.positive += 1,
                Some(Direction::Negative) => day.negative += 1,
                None => {}
            }
        }
    }
    out.into_values().collect()
}

/// Days with `z > 0` per terminal within `[from, to]`; terminals with no
/// such day are omitted.
pub fn terminal_outlier_counts(records: &[DepthRecord], from: NaiveDate, to: NaiveDate) -> BTreeMap<TerminalId, usize> {
    let mut out = BTreeMap::new();
    for r in records.iter().filter(|r| r.flagged() && r.date >= from && r.date <= to) {
        *out.entry(r.terminal.clone()).or_insert(0) += 1;
    }
    out
}

/// Severity of `cluster` on each date, zero on non-outlier days.
pub fn severity_series(severities: &[ClusterSeverity], cluster: &ClusterId, dates: &[NaiveDate]) -> Vec<f64> {
    let by_date: HashMap<NaiveDate, f64> = severities
        .iter()
        .filter(|s| &s.cluster == cluster && s.z_n > 0.0)
        .map(|s| (s.date, s.severity.unwrap_or(0.0)))
        .collect();
    dates.iter().map(|d| by_date.get(d).copied().unwrap_or(0.0)).collect()
}

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, SeverityError> {
    if u.len() != v.len() {
        return Err(SeverityError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(SeverityError::ZeroVector);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(dot / (nu * nv))
}
