//! Pipeline stages over the content-addressed cache.
//!
//! A stage is keyed by the keys of its upstream stages plus the config
//! subset it reads. On a hit its outputs are loaded from the cache
//! directory; on a miss they are computed into a staging directory and
//! published.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bikedepth_core::baseline::{
    fit_regression, log_transform, residuals, select_model, BaselineError, FitOptions, Observation,
    PartitionScheme, ResidualCurve,
};
use bikedepth_core::detect::{cluster_exceedances, score_terminal, BootstrapConfig, ClusterDayExceedance, DepthRecord, PoolSummary};
use bikedepth_core::ingest::{
    aggregate_daily_curves, cleanse_trips, parse_stations, parse_trips, read_curve_store, stations_from_coordinates,
    terminal_summary, write_curve_store, CurveKind, DailyCurve, DateRange, TripRecord,
};
use bikedepth_core::severity::{
    alert_list, cluster_centroids, fit_cluster_models, parse_weather, pos_neg_series, score_severities,
    severity_heatmap, terminal_outlier_counts, weather_crosstab, write_alerts_csv, AlertEntry, ClusterSeverity,
    Heatmap, HeatmapOrder, SeverityModel, WeatherCrosstab,
};
use bikedepth_core::spatial::{
    build_geo_graph, cluster_terminals, cut_clusters, prim_forest, sdcs, sweep_parameters, write_cluster_table,
    ClusterId, ClusterModel, ClusterParams, CorrelationCache, PreparedCurves, SweepGrid, SweepRow, WeightedGraph,
};
use bikedepth_core::terminal::Terminal;
use bikedepth_core::TerminalId;
use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{ArtifactFile, AuditResult, Cache, KeyBuilder};
use crate::config::{FactorPolicy, PipelineConfig};
use crate::error::{PipelineError, Result};
use crate::tables::{self, EdgeRow, SeverityModelRow, SummaryRow, TerminalRow, UnavailableRow};

const WARNINGS: &str = "warnings.json";

/// Stage names in execution order.
pub const STAGES: [&str; 6] = ["ingest", "baseline", "cluster", "detect", "report", "sweep"];

/// Definition of one cached stage.
pub trait StageDef {
    type Output;

    fn name(&self) -> &'static str;
    fn key(&self) -> Result<String>;
    /// Writes every artifact into `dir`, returning the output and warnings.
    fn compute(&self, dir: &Path) -> Result<(Self::Output, Vec<String>)>;
    fn load(&self, dir: &Path) -> Result<Self::Output>;
}

/// A stage output together with where it lives.
#[derive(Debug, Clone)]
pub struct StageRun<T> {
    pub name: &'static str,
    pub key: String,
    pub dir: PathBuf,
    pub hit: bool,
    pub files: Vec<ArtifactFile>,
    pub warnings: Vec<String>,
    pub value: T,
}

fn compute_into<S: StageDef>(def: &S, dir: &Path) -> Result<S::Output> {
    let (value, warnings) = def.compute(dir)?;
    tables::write_json(&dir.join(WARNINGS), &warnings)?;
    Ok(value)
}

pub fn run_stage<S: StageDef>(cache: &Cache, def: &S) -> Result<StageRun<S::Output>> {
    let name = def.name();
    let key = def.key()?;
    let dir = cache.stage_dir(name, &key);
    let hit = cache.is_complete(name, &key);
    let value = if hit {
        log::info!("{name}: cache hit {key}");
        def.load(&dir)?
    } else {
        log::info!("{name}: computing {key}");
        let staging = cache.begin(name, &key)?;
        compute_into(def, &staging.dir)?;
        cache.commit(staging, name, &key)?;
        // Downstream stages see the same value on hits and misses.
        def.load(&dir)?
    };
    let warnings: Vec<String> = tables::read_json(&dir.join(WARNINGS))?;
    let files = cache.files(name, &key)?;
    Ok(StageRun { name, key, dir, hit, files, warnings, value })
}

/// Recomputes a stage into scratch space and compares it with the cache.
pub fn audit_stage<S: StageDef>(cache: &Cache, def: &S) -> Result<AuditResult> {
    let key = def.key()?;
    let staging = cache.begin(def.name(), &key)?;
    compute_into(def, &staging.dir)?;
    cache.audit(&staging, def.name(), &key)
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| PipelineError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| PipelineError::io(path, e))
}

pub fn dates_in(range: DateRange) -> Vec<NaiveDate> {
    range.start.iter_days().take_while(|d| *d <= range.end).collect()
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub trip_files: usize,
    pub trips_parsed: usize,
    pub row_errors: usize,
    pub removed_short: usize,
    pub trips_retained: usize,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub terminals: usize,
    pub terminals_without_coordinates: usize,
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub dir: PathBuf,
    pub summary: IngestSummary,
    pub terminals: Vec<TerminalRow>,
}

impl IngestOutput {
    pub fn range(&self) -> DateRange {
        DateRange { start: self.summary.start, end: self.summary.end }
    }

    pub fn curves(&self, kind: CurveKind) -> Result<Vec<DailyCurve>> {
        Ok(read_curve_store(&self.dir.join("curves"), kind)?)
    }

    /// Terminals with known coordinates.
    pub fn located(&self) -> Vec<Terminal> {
        self.terminals
            .iter()
            .filter_map(|t| {
                Some(Terminal {
                    id: t.terminal.clone(),
                    latitude: t.latitude?,
                    longitude: t.longitude?,
                    first_active_date: t.first_active_date,
                })
            })
            .collect()
    }
}

#[derive(Debug, Serialize)]
struct RowErrorRow {
    file: String,
    line: u64,
    error: String,
}

pub struct IngestStage<'a> {
    pub cfg: &'a PipelineConfig,
}

impl IngestStage<'_> {
    fn read_trips(&self, paths: &[PathBuf], errors: &mut Vec<RowErrorRow>) -> Result<(Vec<TripRecord>, Vec<bikedepth_core::ingest::CoordinateObservation>)> {
        let mut trips = Vec::new();
        let mut coords = Vec::new();
        for path in paths {
            let outcome = parse_trips(open(path)?, &self.cfg.trip_columns)
                .map_err(|e| PipelineError::from(e).context(path))?;
            let file = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            errors.extend(outcome.errors.iter().map(|e| RowErrorRow {
                file: file.clone(),
                line: e.line,
                error: serde_json::to_string(&e.kind).expect("row error serialises"),
            }));
            trips.extend(outcome.trips);
            coords.extend(outcome.coordinates);
        }
        Ok((trips, coords))
    }
}

impl StageDef for IngestStage<'_> {
    type Output = IngestOutput;

    fn name(&self) -> &'static str {
        "ingest"
    }

    fn key(&self) -> Result<String> {
        let c = self.cfg;
        let mut k = KeyBuilder::new("ingest")
            .value("trip_columns", &c.trip_columns)
            .value("station_columns", &c.station_columns)
            .value("min_duration_s", &c.ingest.min_duration_s)
            .value("window", &(c.data.start, c.data.end));
        for (i, p) in c.trip_paths().iter().enumerate() {
            k = k.file(&format!("trips{i}"), p)?;
        }
        for (i, p) in c.prior_paths().iter().enumerate() {
            k = k.file(&format!("prior{i}"), p)?;
        }
        if let Some(p) = c.stations_path() {
            k = k.file("stations", &p)?;
        }
        Ok(k.finish())
    }

    fn compute(&self, dir: &Path) -> Result<(IngestOutput, Vec<String>)> {
        let c = self.cfg;
        let mut warnings = Vec::new();
        let mut errors = Vec::new();
        let (trips, coords) = self.read_trips(&c.trip_paths(), &mut errors)?;
        let trips_parsed = trips.len();
        let prior = if c.data.prior_history.is_empty() {
            None
        } else {
            Some(self.read_trips(&c.prior_paths(), &mut Vec::new())?.0)
        };
        let clean = cleanse_trips(trips, c.ingest.min_duration_s, prior.as_deref());
        if clean.trips.is_empty() {
            return Err(PipelineError::Data("no trips left after cleansing".into()));
        }
        let start = c.data.start.unwrap_or_else(|| clean.trips.iter().map(|t| t.pickup_time.date()).min().expect("nonempty"));
        let end = c.data.end.unwrap_or_else(|| clean.trips.iter().map(|t| t.pickup_time.date()).max().expect("nonempty"));
        let range = DateRange::new(start, end)?;
        if !errors.is_empty() {
            warnings.push(format!("{} trip rows could not be parsed", errors.len()));
        }

        let curves_dir = dir.join("curves");
        let mut usage = Vec::new();
        for kind in CurveKind::ALL {
            let curves = aggregate_daily_curves(&clean.trips, &clean.first_active, kind, range)?;
            write_curve_store(&curves_dir, &curves)?;
            if kind == CurveKind::Usage {
                usage = curves;
            }
        }

        let stations = match c.stations_path() {
            Some(p) => parse_stations(open(&p)?, &c.station_columns).map_err(|e| PipelineError::from(e).context(&p))?,
            None => stations_from_coordinates(&coords),
        };
        let located: HashMap<&TerminalId, &Terminal> = stations.iter().map(|t| (&t.id, t)).collect();
        let with_curves: BTreeSet<&TerminalId> = usage.iter().map(|c| &c.terminal).collect();
        let terminals: Vec<TerminalRow> = clean
            .first_active
            .iter()
            .filter(|(t, _)| with_curves.contains(t))
            .map(|(t, opened)| {
                let s = located.get(t);
                TerminalRow {
                    terminal: t.clone(),
                    latitude: s.map(|s| s.latitude),
                    longitude: s.map(|s| s.longitude),
                    first_active_date: Some(*opened),
                }
            })
            .collect();
        let missing = terminals.iter().filter(|t| t.latitude.is_none()).count();
        if missing > 0 {
            warnings.push(format!("{missing} terminals have no coordinates and are left out of clustering"));
        }
        if clean.removed_short > 0 {
            log::info!("removed {} trips shorter than {} s", clean.removed_short, c.ingest.min_duration_s);
        }

        tables::write_rows(&dir.join("terminals.csv"), &terminals)?;
        tables::write_rows(&dir.join("terminal_summary.csv"), &tables::summary_rows(&terminal_summary(&usage)))?;
        let mut w = tables::writer(&dir.join("row_errors.csv"))?;
        w.write_record(["file", "line", "error"])?;
        for e in &errors {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| PipelineError::io(dir, e))?;
        let summary = IngestSummary {
            trip_files: c.data.trips.len(),
            trips_parsed,
            row_errors: errors.len(),
            removed_short: clean.removed_short,
            trips_retained: clean.trips.len(),
            start,
            end,
            terminals: terminals.len(),
            terminals_without_coordinates: missing,
        };
        tables::write_json(&dir.join("ingest.json"), &summary)?;
        Ok((IngestOutput { dir: dir.to_path_buf(), summary, terminals }, warnings))
    }

    fn load(&self, dir: &Path) -> Result<IngestOutput> {
        Ok(IngestOutput {
            dir: dir.to_path_buf(),
            summary: tables::read_json(&dir.join("ingest.json"))?,
            terminals: tables::read_rows(&dir.join("terminals.csv"))?,
        })
    }
}

pub fn read_summary(ingest: &IngestOutput) -> Result<Vec<SummaryRow>> {
    tables::read_rows(&ingest.dir.join("terminal_summary.csv"))
}

// -------------------------------------------------------------- baseline

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub terminal: TerminalId,
    pub factors: String,
    pub model_number: usize,
    pub cv_mse: Option<f64>,
    pub chosen: bool,
}

#[derive(Debug, Clone)]
pub struct BaselineOutput {
    pub residuals: Vec<ResidualCurve>,
}

impl BaselineOutput {
    pub fn terminals(&self) -> Vec<TerminalId> {
        let set: BTreeSet<&TerminalId> = self.residuals.iter().map(|r| &r.terminal).collect();
        set.into_iter().cloned().collect()
    }

    pub fn correlation_cache(&self) -> CorrelationCache {
        let mut by: BTreeMap<TerminalId, Vec<(NaiveDate, &bikedepth_core::Curve)>> = BTreeMap::new();
        for r in &self.residuals {
            by.entry(r.terminal.clone()).or_default().push((r.date, &r.values));
        }
        CorrelationCache::new(by.into_iter().map(|(t, v)| (t, PreparedCurves::from_pairs(v))).collect())
    }
}

pub struct BaselineStage<'a> {
    pub cfg: &'a PipelineConfig,
    pub ingest: &'a StageRun<IngestOutput>,
    pub kind: CurveKind,
}

struct TerminalFit {
    model: bikedepth_core::baseline::RegressionModel,
    table: Vec<SelectionRow>,
    residuals: Vec<ResidualCurve>,
}

fn fit_terminal(
    terminal: &TerminalId,
    curves: &[&DailyCurve],
    policy: FactorPolicy,
    scheme: &PartitionScheme,
    log: Option<f64>,
) -> Result<TerminalFit, BaselineError> {
    let mut obs: Vec<Observation> = curves.iter().map(|c| Observation::from(*c)).collect();
    if let Some(offset) = log {
        obs = log_transform(&obs, offset)?;
    }
    let opts = FitOptions::default();
    let (factors, table) = match policy {
        FactorPolicy::CvSelect => {
            let sel = select_model(&obs, &opts)?;
            let table = sel
                .table
                .iter()
                .map(|(f, cv)| SelectionRow {
                    terminal: terminal.clone(),
                    factors: f.to_string(),
                    model_number: f.model_number(),
                    cv_mse: Some(*cv),
                    chosen: *f == sel.chosen,
                })
                .collect();
            (sel.chosen, table)
        }
        FactorPolicy::Fixed(f) => (
            f,
            vec![SelectionRow { terminal: terminal.clone(), factors: f.to_string(), model_number: f.model_number(), cv_mse: None, chosen: true }],
        ),
    };
    let model = fit_regression(terminal, &obs, factors, &opts)?;
    let residuals = residuals(&model, &obs, scheme);
    Ok(TerminalFit { model, table, residuals })
}

fn sanitize(id: &TerminalId) -> String {
    id.as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

impl StageDef for BaselineStage<'_> {
    type Output = BaselineOutput;

    fn name(&self) -> &'static str {
        "baseline"
    }

    fn key(&self) -> Result<String> {
        Ok(KeyBuilder::new("baseline")
            .value("ingest", &self.ingest.key)
            .value("kind", &self.kind)
            .value("baseline", &self.cfg.baseline)
            .finish())
    }

    fn compute(&self, dir: &Path) -> Result<(BaselineOutput, Vec<String>)> {
        let b = &self.cfg.baseline;
        let scheme = b.partition_scheme()?;
        let log = b.log_transform.then_some(b.log_offset);
        let curves = self.ingest.value.curves(self.kind)?;
        let mut by: BTreeMap<&TerminalId, Vec<&DailyCurve>> = BTreeMap::new();
        for c in &curves {
            by.entry(&c.terminal).or_default().push(c);
        }
        let groups: Vec<_> = by.into_iter().collect();
        let fits: Vec<(&TerminalId, Result<TerminalFit, BaselineError>)> = groups
            .par_iter()
            .map(|(t, cs)| (*t, fit_terminal(t, cs, b.factors, &scheme, log)))
            .collect();

        let mut warnings = Vec::new();
        let mut all_residuals = Vec::new();
        let mut selection = Vec::new();
        let models_dir = dir.join("models");
        std::fs::create_dir_all(&models_dir).map_err(|e| PipelineError::io(&models_dir, e))?;
        for (t, fit) in fits {
            match fit {
                Ok(fit) => {
                    warnings.extend(fit.model.warnings.iter().map(|w| format!("terminal {t}: {w}")));
                    tables::write_json(&models_dir.join(format!("{}.json", sanitize(t))), &fit.model)?;
                    selection.extend(fit.table);
                    all_residuals.extend(fit.residuals);
                }
                Err(e @ BaselineError::Numerical(_)) => return Err(PipelineError::from(e)),
                Err(e) => warnings.push(format!("terminal {t} has no baseline: {e}")),
            }
        }
        if all_residuals.is_empty() {
            return Err(PipelineError::Data("no terminal could be fitted".into()));
        }
        tables::write_residuals(&dir.join("residuals.csv"), &all_residuals)?;
        tables::write_rows(&dir.join("model_selection.csv"), &selection)?;
        Ok((BaselineOutput { residuals: all_residuals }, warnings))
    }

    fn load(&self, dir: &Path) -> Result<BaselineOutput> {
        Ok(BaselineOutput { residuals: tables::read_residuals(&dir.join("residuals.csv"))? })
    }
}

// --------------------------------------------------------------- cluster

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    #[serde(flatten)]
    pub params: ClusterParams,
    pub clusters: usize,
    pub terminals: usize,
    pub sizes: BTreeMap<ClusterId, usize>,
    pub sdcs: Option<f64>,
    pub graph_edges: usize,
    pub omitted_edges: usize,
    pub forest_edges: usize,
    pub weight_cut: f64,
}

#[derive(Debug, Clone)]
pub struct ClusterOutput {
    pub graph: WeightedGraph,
    pub model: ClusterModel,
    pub summary: ClusterSummary,
}

pub struct ClusterStage<'a> {
    pub ingest: &'a StageRun<IngestOutput>,
    pub baseline: &'a StageRun<BaselineOutput>,
    pub params: ClusterParams,
    pub correlations: &'a Mutex<CorrelationCache>,
}

impl ClusterStage<'_> {
    /// Terminals with coordinates and a baseline.
    fn terminals(&self) -> Vec<Terminal> {
        let fitted: BTreeSet<TerminalId> = self.baseline.value.terminals().into_iter().collect();
        self.ingest.value.located().into_iter().filter(|t| fitted.contains(&t.id)).collect()
    }
}

fn summarize(graph: &WeightedGraph, model: &ClusterModel, params: ClusterParams) -> ClusterSummary {
    ClusterSummary {
        params,
        clusters: model.cluster_count(),
        terminals: graph.node_count(),
        sizes: model.sizes.clone(),
        sdcs: sdcs(&model.sizes_vec()).ok(),
        graph_edges: graph.edges.len(),
        omitted_edges: graph.omitted_edges,
        forest_edges: model.forest.len(),
        weight_cut: model.weight_cut(),
    }
}

impl StageDef for ClusterStage<'_> {
    type Output = ClusterOutput;

    fn name(&self) -> &'static str {
        "cluster"
    }

    fn key(&self) -> Result<String> {
        self.params.validate()?;
        Ok(KeyBuilder::new("cluster")
            .value("baseline", &self.baseline.key)
            .value("params", &self.params)
            .finish())
    }

    fn compute(&self, dir: &Path) -> Result<(ClusterOutput, Vec<String>)> {
        let terminals = self.terminals();
        let (graph, model) = {
            let mut cache = self.correlations.lock().expect("correlation cache lock");
            cluster_terminals(&terminals, &mut cache, self.params)?
        };
        let mut warnings = Vec::new();
        if graph.omitted_edges > 0 {
            warnings.push(format!("{} graph edges had no defined correlation", graph.omitted_edges));
        }
        let ids: Vec<&TerminalId> = graph.geo.nodes.iter().map(|t| &t.id).collect();
        let edges: Vec<EdgeRow> = graph
            .edges
            .iter()
            .map(|e| EdgeRow {
                a: ids[e.a].clone(),
                b: ids[e.b].clone(),
                distance_m: e.distance_m,
                rho: e.rho,
                weight: e.weight,
            })
            .collect();
        tables::write_rows(&dir.join("edges.csv"), &edges)?;
        write_cluster_table(create(&dir.join("clusters.csv"))?, &graph, &model)?;
        tables::write_json(&dir.join("clusters.geojson"), &bikedepth_core::spatial::cluster_geojson(&graph, &model))?;
        let summary = summarize(&graph, &model, self.params);
        tables::write_json(&dir.join("cluster_summary.json"), &summary)?;
        Ok((ClusterOutput { graph, model, summary }, warnings))
    }

    fn load(&self, dir: &Path) -> Result<ClusterOutput> {
        let terminals = self.terminals();
        let edges: Vec<EdgeRow> = tables::read_rows(&dir.join("edges.csv"))?;
        let rho: HashMap<(TerminalId, TerminalId), f64> = edges.into_iter().map(|e| ((e.a, e.b), e.rho)).collect();
        let geo = build_geo_graph(&terminals, self.params.graph)?;
        let ids: Vec<TerminalId> = geo.nodes.iter().map(|t| t.id.clone()).collect();
        let graph = WeightedGraph::from_correlations(geo, |a, b| rho.get(&(ids[a].clone(), ids[b].clone())).copied());
        let forest = prim_forest(&graph);
        let model = cut_clusters(&ids, &forest, self.params.rho_threshold);
        let summary = summarize(&graph, &model, self.params);
        Ok(ClusterOutput { graph, model, summary })
    }
}

// ---------------------------------------------------------------- detect

#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub records: Vec<DepthRecord>,
    pub pools: Vec<PoolSummary>,
}

pub struct DetectStage<'a> {
    pub cfg: &'a PipelineConfig,
    pub baseline: &'a StageRun<BaselineOutput>,
}

impl StageDef for DetectStage<'_> {
    type Output = DetectOutput;

    fn name(&self) -> &'static str {
        "detect"
    }

    fn key(&self) -> Result<String> {
        Ok(KeyBuilder::new("detect").value("baseline", &self.baseline.key).value("detect", &self.cfg.detect).finish())
    }

    fn compute(&self, dir: &Path) -> Result<(DetectOutput, Vec<String>)> {
        let bootstrap: BootstrapConfig = self.cfg.detect.bootstrap();
        let seed = self.cfg.detect.seed;
        let residuals = &self.baseline.value.residuals;
        let mut by: BTreeMap<&TerminalId, Vec<ResidualCurve>> = BTreeMap::new();
        for r in residuals {
            by.entry(&r.terminal).or_default().push(r.clone());
        }
        let groups: Vec<_> = by.into_iter().collect();
        let scored = groups
            .par_iter()
            .map(|(t, rs)| score_terminal(t, rs, &bootstrap, seed))
            .collect::<Result<Vec<_>, _>>()?;
        let mut records = Vec::new();
        let mut pools = Vec::new();
        let mut warnings = Vec::new();
        for (r, p) in scored {
            records.extend(r);
            for pool in &p {
                if let Some(m) = &pool.message {
                    warnings.push(format!("terminal {} partition {}: {m}", pool.terminal, pool.partition));
                }
            }
            pools.extend(p);
        }
        tables::write_depths(&dir.join("depths.csv"), &records)?;
        tables::write_pools(&dir.join("pools.csv"), &pools)?;
        Ok((DetectOutput { records, pools }, warnings))
    }

    fn load(&self, dir: &Path) -> Result<DetectOutput> {
        Ok(DetectOutput {
            records: tables::read_depths(&dir.join("depths.csv"))?,
            pools: tables::read_pools(&dir.join("pools.csv"))?,
        })
    }
}

// ---------------------------------------------------------------- report

#[derive(Debug, Clone)]
pub struct ReportOutput {
    pub exceedances: Vec<ClusterDayExceedance>,
    pub models: BTreeMap<ClusterId, SeverityModel>,
    pub unavailable: BTreeMap<ClusterId, String>,
    pub severities: Vec<ClusterSeverity>,
    pub alerts: Vec<AlertEntry>,
    pub crosstab: Option<WeatherCrosstab>,
}

impl ReportOutput {
    fn derive(
        exceedances: Vec<ClusterDayExceedance>,
        models: BTreeMap<ClusterId, SeverityModel>,
        unavailable: BTreeMap<ClusterId, String>,
        members: &BTreeMap<ClusterId, Vec<TerminalId>>,
        crosstab: Option<WeatherCrosstab>,
    ) -> Self {
        let severities = score_severities(&exceedances, &models);
        let outlier_dates: BTreeSet<NaiveDate> = severities.iter().map(|s| s.date).collect();
        let alerts = outlier_dates.into_iter().flat_map(|d| alert_list(d, &severities, members)).collect();
        ReportOutput { exceedances, models, unavailable, severities, alerts, crosstab }
    }

    pub fn alerts_on(&self, date: NaiveDate) -> Vec<AlertEntry> {
        self.alerts.iter().filter(|a| a.date == date).cloned().collect()
    }
}

pub fn heatmap(
    report: &ReportOutput,
    cluster: &ClusterOutput,
    order: HeatmapOrder,
    dates: &[NaiveDate],
) -> Heatmap {
    let centroids = cluster_centroids(&cluster.model.members(), &cluster.graph.geo.nodes);
    severity_heatmap(&report.severities, &centroids, cluster.graph.geo.center, order, dates)
}

pub struct ReportStage<'a> {
    pub cfg: &'a PipelineConfig,
    pub ingest: &'a StageRun<IngestOutput>,
    pub baseline: &'a StageRun<BaselineOutput>,
    pub cluster: &'a StageRun<ClusterOutput>,
    pub detect: &'a StageRun<DetectOutput>,
}

impl ReportStage<'_> {
    fn crosstab(&self, severities: &[ClusterSeverity]) -> Result<Option<WeatherCrosstab>> {
        let Some(path) = self.cfg.weather_path() else { return Ok(None) };
        let weather = parse_weather(open(&path)?, &self.cfg.weather_columns)?;
        let dates = dates_in(self.ingest.value.range());
        Ok(Some(weather_crosstab(severities, &weather, &dates, &self.cfg.severity.crosstab()?)))
    }
}

impl StageDef for ReportStage<'_> {
    type Output = ReportOutput;

    fn name(&self) -> &'static str {
        "report"
    }

    fn key(&self) -> Result<String> {
        let mut k = KeyBuilder::new("report")
            .value("cluster", &self.cluster.key)
            .value("detect", &self.detect.key)
            .value("severity", &self.cfg.severity)
            .value("weather_columns", &self.cfg.weather_columns);
        if let Some(p) = self.cfg.weather_path() {
            k = k.file("weather", &p)?;
        }
        Ok(k.finish())
    }

    fn compute(&self, dir: &Path) -> Result<(ReportOutput, Vec<String>)> {
        let cluster = &self.cluster.value;
        let records = &self.detect.value.records;
        let exceedances = cluster_exceedances(&cluster.model, records, &self.baseline.value.residuals);
        let (models, unavailable) = fit_cluster_models(&exceedances);
        let mut warnings: Vec<String> =
            unavailable.iter().map(|(c, why)| format!("cluster {c}: severity unavailable ({why})")).collect();
        let members = cluster.model.members();
        let severities = score_severities(&exceedances, &models);
        let crosstab = self.crosstab(&severities)?;
        if let Some(x) = &crosstab {
            if x.days_without_weather > 0 {
                warnings.push(format!("{} days have no weather record", x.days_without_weather));
            }
        }
        let out = ReportOutput::derive(exceedances, models, unavailable, &members, crosstab);

        tables::write_exceedances(&dir.join("exceedances.csv"), &out.exceedances)?;
        let model_rows: Vec<SeverityModelRow> = out.models.values().map(SeverityModelRow::from).collect();
        tables::write_rows(&dir.join("severity_models.csv"), &model_rows)?;
        let unavailable_rows: Vec<UnavailableRow> = out
            .unavailable
            .iter()
            .map(|(c, r)| UnavailableRow { cluster: c.clone(), reason: r.clone() })
            .collect();
        let mut w = tables::writer(&dir.join("severity_unavailable.csv"))?;
        w.write_record(["cluster", "reason"])?;
        for r in &unavailable_rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| PipelineError::io(dir, e))?;
        tables::write_severities(&dir.join("severities.csv"), &out.severities)?;
        write_alerts_csv(create(&dir.join("alerts.csv"))?, &out.alerts)?;
        tables::write_json(&dir.join("alerts.json"), &out.alerts)?;

        let dates = dates_in(self.ingest.value.range());
        let map = heatmap(&out, cluster, self.cfg.severity.heatmap_order, &dates);
        map.write_csv(create(&dir.join("heatmap.csv"))?)?;
        let pos_neg = pos_neg_series(&out.severities, &dates);
        tables::write_rows(&dir.join("pos_neg.csv"), &pos_neg)?;
        let range = self.ingest.value.range();
        let counts = terminal_outlier_counts(records, range.start, range.end);
        let mut w = tables::writer(&dir.join("terminal_counts.csv"))?;
        w.write_record(["terminal", "outlier_days"])?;
        for (t, n) in &counts {
            w.write_record([t.to_string(), n.to_string()])?;
        }
        w.flush().map_err(|e| PipelineError::io(dir, e))?;
        if let Some(x) = &out.crosstab {
            tables::write_json(&dir.join("weather_crosstab.json"), x)?;
        }
        Ok((out, warnings))
    }

    fn load(&self, dir: &Path) -> Result<ReportOutput> {
        let exceedances = tables::read_exceedances(&dir.join("exceedances.csv"))?;
        let models = tables::read_rows::<SeverityModelRow>(&dir.join("severity_models.csv"))?
            .into_iter()
            .map(|r| (r.cluster.clone(), SeverityModel::from(r)))
            .collect();
        let unavailable = tables::read_rows::<UnavailableRow>(&dir.join("severity_unavailable.csv"))?
            .into_iter()
            .map(|r| (r.cluster, r.reason))
            .collect();
        let crosstab_path = dir.join("weather_crosstab.json");
        let crosstab = if crosstab_path.is_file() { Some(tables::read_json(&crosstab_path)?) } else { None };
        Ok(ReportOutput::derive(exceedances, models, unavailable, &self.cluster.value.model.members(), crosstab))
    }
}

// ----------------------------------------------------------------- sweep

pub struct SweepStage<'a> {
    pub ingest: &'a StageRun<IngestOutput>,
    pub baseline: &'a StageRun<BaselineOutput>,
    pub grid: SweepGrid,
    pub correlations: &'a Mutex<CorrelationCache>,
}

impl StageDef for SweepStage<'_> {
    type Output = Vec<SweepRow>;

    fn name(&self) -> &'static str {
        "sweep"
    }

    fn key(&self) -> Result<String> {
        Ok(KeyBuilder::new("sweep").value("baseline", &self.baseline.key).value("grid", &self.grid).finish())
    }

    fn compute(&self, dir: &Path) -> Result<(Vec<SweepRow>, Vec<String>)> {
        let fitted: BTreeSet<TerminalId> = self.baseline.value.terminals().into_iter().collect();
        let terminals: Vec<Terminal> =
            self.ingest.value.located().into_iter().filter(|t| fitted.contains(&t.id)).collect();
        let rows = {
            let mut cache = self.correlations.lock().expect("correlation cache lock");
            sweep_parameters(&terminals, &mut cache, &self.grid)?
        };
        tables::write_sweep(&dir.join("sweep.csv"), &rows)?;
        Ok((rows, Vec::new()))
    }

    fn load(&self, dir: &Path) -> Result<Vec<SweepRow>> {
        tables::read_sweep(&dir.join("sweep.csv"))
    }
}
