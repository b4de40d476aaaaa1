//! Pipeline configuration, loaded from TOML.
//!
//! Relative data paths resolve against `data.root`, which itself resolves
//! against the directory of the config file. The data root can be replaced
//! at load time (the CLI maps [`DATA_ROOT_ENV`] onto this).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bikedepth_core::baseline::{FactorSet, PartitionScheme};
use bikedepth_core::detect::{BootstrapConfig, DepthMethod};
use bikedepth_core::ingest::{CurveKind, SchemaMap, StationSchema};
use bikedepth_core::severity::{Bins, CrosstabConfig, HeatmapOrder, WeatherSchema};
use bikedepth_core::spatial::{ClusterParams, GraphParams, SweepGrid};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{PipelineError, Result};

pub const DATA_ROOT_ENV: &str = "BIKEDEPTH_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub trip_columns: SchemaMap,
    #[serde(default)]
    pub station_columns: StationSchema,
    #[serde(default)]
    pub weather_columns: WeatherSchema,
    #[serde(default)]
    pub ingest: IngestConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub cluster: ClusterConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub severity: SeverityConfig,
    #[serde(default)]
    pub cache: CacheConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_root")]
    pub root: PathBuf,
    pub trips: Vec<PathBuf>,
    /// Older trip files consulted only for terminal opening dates.
    #[serde(default)]
    pub prior_history: Vec<PathBuf>,
    /// Station file with `id, latitude, longitude`; when absent, coordinates
    /// come from coordinate columns of the trip files.
    #[serde(default)]
    pub stations: Option<PathBuf>,
    #[serde(default)]
    pub weather: Option<PathBuf>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Analysis window; defaults to the span of the retained trips.
    #[serde(default)]
    pub start: Option<NaiveDate>,
    #[serde(default)]
    pub end: Option<NaiveDate>,
}

fn default_root() -> PathBuf {
    PathBuf::from(".")
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub min_duration_s: i64,
    /// Curve kind analysed by the main pipeline.
    pub kind: CurveKind,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig { min_duration_s: 60, kind: CurveKind::Usage }
    }
}

/// Regression factor policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FactorPolicy {
    /// Pick the factor subset with the lowest cross-validated error.
    #[default]
    CvSelect,
    Fixed(FactorSet),
}

impl fmt::Display for FactorPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorPolicy::CvSelect => f.write_str("cv-select"),
            FactorPolicy::Fixed(set) => set.fmt(f),
        }
    }
}

impl FromStr for FactorPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "cv-select" | "cv_select" | "cv" => Ok(FactorPolicy::CvSelect),
            other => other.parse().map(FactorPolicy::Fixed),
        }
    }
}

impl Serialize for FactorPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FactorPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub factors: FactorPolicy,
    /// First summer day as `MM-DD`.
    pub summer_start: String,
    /// Last summer day as `MM-DD`.
    pub summer_end: String,
    pub log_transform: bool,
    pub log_offset: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            factors: FactorPolicy::CvSelect,
            summer_start: "04-01".into(),
            summer_end: "10-31".into(),
            log_transform: false,
            log_offset: 1.0,
        }
    }
}

fn parse_month_day(s: &str) -> Result<(u32, u32)> {
    let bad = || PipelineError::Config(format!("season boundary {s:?} is not MM-DD"));
    let (m, d) = s.split_once('-').ok_or_else(bad)?;
    let (m, d): (u32, u32) = (m.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
    NaiveDate::from_ymd_opt(2020, m, d).ok_or_else(bad)?;
    Ok((m, d))
}

impl BaselineConfig {
    pub fn partition_scheme(&self) -> Result<PartitionScheme> {
        Ok(PartitionScheme {
            summer_start: parse_month_day(&self.summer_start)?,
            summer_end: parse_month_day(&self.summer_end)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub rho_threshold: f64,
    pub radius_m: f64,
    pub d_inner_m: f64,
    pub d_outer_m: f64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig::from(ClusterParams::default())
    }
}

impl From<ClusterParams> for ClusterConfig {
    fn from(p: ClusterParams) -> Self {
        ClusterConfig {
            rho_threshold: p.rho_threshold,
            radius_m: p.graph.radius_m,
            d_inner_m: p.graph.d_inner_m,
            d_outer_m: p.graph.d_outer_m,
        }
    }
}

impl ClusterConfig {
    pub fn params(&self) -> ClusterParams {
        ClusterParams {
            rho_threshold: self.rho_threshold,
            graph: GraphParams { radius_m: self.radius_m, d_inner_m: self.d_inner_m, d_outer_m: self.d_outer_m },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub rho_threshold: Vec<f64>,
    pub radius_m: Vec<f64>,
    pub d_inner_m: Vec<f64>,
    pub d_outer_m: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            rho_threshold: vec![-1.0, -0.25, 0.0, 0.1, 0.15, 0.2, 0.25, 0.3, 0.5],
            radius_m: vec![2500.0, 5000.0],
            d_inner_m: vec![250.0, 500.0],
            d_outer_m: vec![1000.0, 2000.0],
        }
    }
}

impl SweepConfig {
    pub fn grid(&self) -> SweepGrid {
        SweepGrid {
            rho_threshold: self.rho_threshold.clone(),
            radius_m: self.radius_m.clone(),
            d_inner_m: self.d_inner_m.clone(),
            d_outer_m: self.d_outer_m.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub method: DepthMethod,
    pub resamples: usize,
    pub gamma: f64,
    pub percentile: f64,
    pub min_pool: usize,
    pub seed: u64,
}

impl Default for DetectConfig {
    fn default() -> Self {
        let b = BootstrapConfig::default();
        DetectConfig {
            method: b.method,
            resamples: b.resamples,
            gamma: b.gamma,
            percentile: b.percentile,
            min_pool: b.min_pool,
            seed: 2019,
        }
    }
}

impl DetectConfig {
    pub fn bootstrap(&self) -> BootstrapConfig {
        BootstrapConfig {
            resamples: self.resamples,
            gamma: self.gamma,
            percentile: self.percentile,
            min_pool: self.min_pool,
            method: self.method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeverityConfig {
    pub temperature_bins: Vec<f64>,
    pub precipitation_bins: Vec<f64>,
    pub severity_bins: Vec<f64>,
    pub heatmap_order: HeatmapOrder,
}

impl Default for SeverityConfig {
    fn default() -> Self {
        let c = CrosstabConfig::default();
        SeverityConfig {
            temperature_bins: c.temperature.edges,
            precipitation_bins: c.precipitation.edges,
            severity_bins: c.severity.edges,
            heatmap_order: HeatmapOrder::default(),
        }
    }
}

impl SeverityConfig {
    pub fn crosstab(&self) -> Result<CrosstabConfig> {
        Ok(CrosstabConfig {
            temperature: Bins::new(self.temperature_bins.clone())?,
            precipitation: Bins::new(self.precipitation_bins.clone())?,
            severity: Bins::new(self.severity_bins.clone())?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CacheConfig {
    /// Fraction of cache hits recomputed and compared in audit mode.
    pub audit_fraction: f64,
    pub audit_seed: u64,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig { audit_fraction: 0.05, audit_seed: 0 }
    }
}

impl PipelineConfig {
    /// Minimal configuration over the given trip files.
    pub fn new(root: impl Into<PathBuf>, trips: Vec<PathBuf>) -> Self {
        PipelineConfig {
            data: DataConfig {
                root: root.into(),
                trips,
                prior_history: Vec::new(),
                stations: None,
                weather: None,
                output: default_output(),
                start: None,
                end: None,
            },
            trip_columns: SchemaMap::default(),
            station_columns: StationSchema::default(),
            weather_columns: WeatherSchema::default(),
            ingest: IngestConfig::default(),
            baseline: BaselineConfig::default(),
            cluster: ClusterConfig::default(),
            sweep: SweepConfig::default(),
            detect: DetectConfig::default(),
            severity: SeverityConfig::default(),
            cache: CacheConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads, resolves and validates a config file.
    pub fn load(path: &Path, data_root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data.root = match data_root {
            Some(root) => root.to_path_buf(),
            None if cfg.data.root.is_relative() => base.join(&cfg.data.root),
            None => cfg.data.root.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data.root.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.data.output)
    }

    pub fn trip_paths(&self) -> Vec<PathBuf> {
        self.data.trips.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn prior_paths(&self) -> Vec<PathBuf> {
        self.data.prior_history.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn stations_path(&self) -> Option<PathBuf> {
        self.data.stations.as_deref().map(|p| self.resolve(p))
    }

    pub fn weather_path(&self) -> Option<PathBuf> {
        self.data.weather.as_deref().map(|p| self.resolve(p))
    }

    /// Checks referenced paths and numeric ranges.
    pub fn validate(&self) -> Result<()> {
        if self.data.trips.is_empty() {
            return Err(PipelineError::Config("data.trips lists no files".into()));
        }
        let mut inputs = self.trip_paths();
        inputs.extend(self.prior_paths());
        inputs.extend(self.stations_path());
        inputs.extend(self.weather_path());
        for p in inputs {
            if !p.is_file() {
                return Err(PipelineError::Config(format!("input file {} does not exist", p.display())));
            }
        }
        if let (Some(s), Some(e)) = (self.data.start, self.data.end) {
            if e < s {
                return Err(PipelineError::Config(format!("data.end {e} is before data.start {s}")));
            }
        }
        if self.ingest.min_duration_s < 0 {
            return Err(PipelineError::Config("ingest.min_duration_s must be nonnegative".into()));
        }
        self.baseline.partition_scheme()?;
        if !(self.baseline.log_offset > 0.0 && self.baseline.log_offset.is_finite()) {
            return Err(PipelineError::Config("baseline.log_offset must be positive".into()));
        }
        self.cluster.params().validate()?;
        let grid = self.sweep.grid();
        if grid.is_empty() {
            return Err(PipelineError::Config("sweep grid has an empty axis".into()));
        }
        for &rho in &grid.rho_threshold {
            for &radius_m in &grid.radius_m {
                for &d_inner_m in &grid.d_inner_m {
                    for &d_outer_m in &grid.d_outer_m {
                        ClusterParams { rho_threshold: rho, graph: GraphParams { radius_m, d_inner_m, d_outer_m } }
                            .validate()?;
                    }
                }
            }
        }
        self.detect.bootstrap().validate()?;
        self.severity.crosstab()?;
        if !(self.cache.audit_fraction > 0.0 && self.cache.audit_fraction <= 1.0) {
            return Err(PipelineError::Config("cache.audit_fraction must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as hex.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(bytes))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
