//! Delimited-text tables persisted by the stages.
//!
//! Floats are written in Rust's shortest round-trip form, so reading a
//! table back yields bit-identical values.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use bikedepth_core::baseline::{PartitionLabel, ResidualCurve};
use bikedepth_core::detect::{ClusterDayExceedance, DepthRecord, Direction, PoolStatus, PoolSummary};
use bikedepth_core::ingest::TerminalSummary;
use bikedepth_core::severity::{ClusterSeverity, FitMethod, SeverityModel};
use bikedepth_core::spatial::{ClusterId, SweepRow};
use bikedepth_core::{Curve, TerminalId, HOURS};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

pub fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::io(parent, e))?;
    }
    let f = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(f)))
}

pub fn reader(path: &Path) -> Result<csv::Reader<BufReader<File>>> {
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(csv::Reader::from_reader(BufReader::new(f)))
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| PipelineError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut body = serde_json::to_vec_pretty(value).expect("artifact serialises");
    body.push(b'\n');
    std::fs::write(path, body).map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let body = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_slice(&body).map_err(|e| PipelineError::Cache(format!("{}: {e}", path.display())))
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Cache(format!("{}: {msg}", path.display()))
}

fn parse<T: std::str::FromStr>(path: &Path, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    field.parse().map_err(|e| bad(path, format!("{field:?}: {e}")))
}

fn parse_opt<T: std::str::FromStr>(path: &Path, field: &str) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if field.is_empty() {
        Ok(None)
    } else {
        parse(path, field).map(Some)
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn join_ids(ids: &[TerminalId]) -> String {
    ids.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(" ")
}

fn split_ids(s: &str) -> Vec<TerminalId> {
    s.split_whitespace().map(TerminalId::new).collect()
}

pub fn parse_direction(s: &str) -> Option<Direction> {
    match s {
        "positive" => Some(Direction::Positive),
        "negative" => Some(Direction::Negative),
        _ => None,
    }
}

/// Terminal metadata; coordinates are blank when unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminalRow {
    pub terminal: TerminalId,
    pub latitude: Option<f64>,
    pub longitude: Option<f64>,
    pub first_active_date: Option<NaiveDate>,
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    finish(w, path)
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = reader(path)?;
    r.deserialize().map(|row| row.map_err(|e| bad(path, e))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub terminal: TerminalId,
    pub total_usage: u64,
    pub active_days: usize,
    pub mean_annual_usage: f64,
}

pub fn summary_rows(summary: &BTreeMap<TerminalId, TerminalSummary>) -> Vec<SummaryRow> {
    summary
        .iter()
        .map(|(t, s)| SummaryRow {
            terminal: t.clone(),
            total_usage: s.total_usage,
            active_days: s.active_days,
            mean_annual_usage: s.mean_annual_usage,
        })
        .collect()
}

pub fn summary_from_rows(rows: Vec<SummaryRow>) -> BTreeMap<TerminalId, TerminalSummary> {
    rows.into_iter()
        .map(|r| {
            (
                r.terminal,
                TerminalSummary {
                    total_usage: r.total_usage,
                    active_days: r.active_days,
                    mean_annual_usage: r.mean_annual_usage,
                },
            )
        })
        .collect()
}

fn curve_header(lead: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = lead.iter().map(|s| s.to_string()).collect();
    h.extend((0..HOURS).map(|k| format!("h{k:02}")));
    h
}

fn read_curve(path: &Path, rec: &csv::StringRecord, from: usize) -> Result<Curve> {
    let mut c = [0.0; HOURS];
    for (k, v) in c.iter_mut().enumerate() {
        *v = parse(path, rec.get(from + k).ok_or_else(|| bad(path, "short row"))?)?;
    }
    Ok(c)
}

pub fn write_residuals(path: &Path, rows: &[ResidualCurve]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(curve_header(&["terminal", "date", "partition"]))?;
    for r in rows {
        let mut rec = vec![r.terminal.to_string(), r.date.to_string(), r.partition.to_string()];
        rec.extend(r.values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    finish(w, path)
}

pub fn read_residuals(path: &Path) -> Result<Vec<ResidualCurve>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        out.push(ResidualCurve {
            terminal: TerminalId::new(&rec[0]),
            date: parse(path, &rec[1])?,
            partition: parse::<PartitionLabel>(path, &rec[2])?,
            values: read_curve(path, &rec, 3)?,
        });
    }
    Ok(out)
}

pub fn write_depths(path: &Path, rows: &[DepthRecord]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["terminal", "date", "partition", "depth", "threshold", "z", "flagged"])?;
    for r in rows {
        w.write_record([
            r.terminal.to_string(),
            r.date.to_string(),
            r.partition.to_string(),
            r.depth.to_string(),
            opt(r.threshold),
            opt(r.z),
            r.flagged().to_string(),
        ])?;
    }
    finish(w, path)
}

pub fn read_depths(path: &Path) -> Result<Vec<DepthRecord>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        out.push(DepthRecord {
            terminal: TerminalId::new(&rec[0]),
            date: parse(path, &rec[1])?,
            partition: parse(path, &rec[2])?,
            depth: parse(path, &rec[3])?,
            threshold: parse_opt(path, &rec[4])?,
            z: parse_opt(path, &rec[5])?,
        });
    }
    Ok(out)
}

fn status_str(s: PoolStatus) -> &'static str {
    match s {
        PoolStatus::Scored => "scored",
        PoolStatus::InsufficientData => "insufficient_data",
    }
}

pub fn write_pools(path: &Path, rows: &[PoolSummary]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["terminal", "partition", "size", "threshold", "status", "message"])?;
    for p in rows {
        w.write_record([
            p.terminal.to_string(),
            p.partition.to_string(),
            p.size.to_string(),
            opt(p.threshold),
            status_str(p.status).to_string(),
            p.message.clone().unwrap_or_default(),
        ])?;
    }
    finish(w, path)
}

pub fn read_pools(path: &Path) -> Result<Vec<PoolSummary>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        let status = match &rec[4] {
            "scored" => PoolStatus::Scored,
            "insufficient_data" => PoolStatus::InsufficientData,
            other => return Err(bad(path, format!("unknown pool status {other:?}"))),
        };
        out.push(PoolSummary {
            terminal: TerminalId::new(&rec[0]),
            partition: parse(path, &rec[1])?,
            size: parse(path, &rec[2])?,
            threshold: parse_opt(path, &rec[3])?,
            status,
            message: (!rec[5].is_empty()).then(|| rec[5].to_string()),
        });
    }
    Ok(out)
}

/// Correlation of one permission-graph edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRow {
    pub a: TerminalId,
    pub b: TerminalId,
    pub distance_m: f64,
    pub rho: f64,
    pub weight: f64,
}

pub fn write_exceedances(path: &Path, rows: &[ClusterDayExceedance]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "cluster", "z_n", "size", "direction", "contributors", "missing"])?;
    for e in rows {
        w.write_record([
            e.date.to_string(),
            e.cluster.to_string(),
            e.z_n.to_string(),
            e.size.to_string(),
            opt(e.direction),
            join_ids(&e.contributors),
            join_ids(&e.missing),
        ])?;
    }
    finish(w, path)
}

pub fn read_exceedances(path: &Path) -> Result<Vec<ClusterDayExceedance>> {
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        out.push(ClusterDayExceedance {
            date: parse(path, &rec[0])?,
            cluster: ClusterId(TerminalId::new(&rec[1])),
            z_n: parse(path, &rec[2])?,
            size: parse(path, &rec[3])?,
            direction: parse_direction(&rec[4]),
            contributors: split_ids(&rec[5]),
            missing: split_ids(&rec[6]),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeverityModelRow {
    pub cluster: ClusterId,
    pub alpha: f64,
    pub beta: f64,
    pub upper: f64,
    pub samples: usize,
    pub method: FitMethod,
}

impl From<&SeverityModel> for SeverityModelRow {
    fn from(m: &SeverityModel) -> Self {
        SeverityModelRow {
            cluster: m.cluster.clone(),
            alpha: m.alpha,
            beta: m.beta,
            upper: m.upper,
            samples: m.samples,
            method: m.method,
        }
    }
}

impl From<SeverityModelRow> for SeverityModel {
    fn from(r: SeverityModelRow) -> Self {
        SeverityModel {
            cluster: r.cluster,
            alpha: r.alpha,
            beta: r.beta,
            upper: r.upper,
            samples: r.samples,
            method: r.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnavailableRow {
    pub cluster: ClusterId,
    pub reason: String,
}

pub fn write_severities(path: &Path, rows: &[ClusterSeverity]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["date", "cluster", "z_n", "size", "severity", "direction", "contributors"])?;
    for s in rows {
        w.write_record([
            s.date.to_string(),
            s.cluster.to_string(),
            s.z_n.to_string(),
            s.size.to_string(),
            opt(s.severity),
            opt(s.direction),
            join_ids(&s.contributors),
        ])?;
    }
    finish(w, path)
}

pub fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["rho_threshold", "radius_m", "d_inner_m", "d_outer_m", "clusters", "sdcs"])?;
    for r in rows {
        w.write_record([
            r.params.rho_threshold.to_string(),
            r.params.graph.radius_m.to_string(),
            r.params.graph.d_inner_m.to_string(),
            r.params.graph.d_outer_m.to_string(),
            r.clusters.to_string(),
            opt(r.sdcs),
        ])?;
    }
    finish(w, path)
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    use bikedepth_core::spatial::{ClusterParams, GraphParams};
    let mut r = reader(path)?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| bad(path, e))?;
        out.push(SweepRow {
            params: ClusterParams {
                rho_threshold: parse(path, &rec[0])?,
                graph: GraphParams {
                    radius_m: parse(path, &rec[1])?,
                    d_inner_m: parse(path, &rec[2])?,
                    d_outer_m: parse(path, &rec[3])?,
                },
            },
            clusters: parse(path, &rec[4])?,
            sdcs: parse_opt(path, &rec[5])?,
        });
    }
    Ok(out)
}
