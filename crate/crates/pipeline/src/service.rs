//! Read-only HTTP service under `/v1`.
//!
//! Cluster-dependent views are produced by jobs keyed by the cluster stage
//! key. Identical requests share one job. A request waits up to the
//! configured budget for its job; when the job is still running the reply is
//! `202` with a token to poll at `/v1/jobs/{token}`.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bikedepth_core::severity::HeatmapOrder;
use bikedepth_core::spatial::{cluster_geojson, ClusterId, ClusterParams, CorrelationCache, GraphParams, SweepRow};
use bikedepth_core::TerminalId;
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::Notify;

use crate::cache::Cache;
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::run::{run_pipeline, RunOptions, Target};
use crate::stages::{
    self, run_stage, BaselineOutput, ClusterOutput, ClusterStage, DetectOutput, IngestOutput, ReportOutput,
    ReportStage, StageDef, StageRun,
};
use crate::tables::SummaryRow;

/// Clustering and reports for one parameter set.
pub struct View {
    pub params: ClusterParams,
    pub cluster: StageRun<ClusterOutput>,
    pub report: StageRun<ReportOutput>,
    pub geojson: Value,
}

enum JobState {
    Running,
    Ready(Arc<View>),
    Failed { status: StatusCode, message: String },
}

struct Job {
    state: Mutex<JobState>,
    done: Notify,
}

pub struct ServiceState {
    pub cfg: PipelineConfig,
    cache: Cache,
    config_hash: String,
    ingest: StageRun<IngestOutput>,
    baseline: StageRun<BaselineOutput>,
    detect: StageRun<DetectOutput>,
    sweep: Vec<SweepRow>,
    summary: BTreeMap<TerminalId, SummaryRow>,
    correlations: Mutex<CorrelationCache>,
    default_params: ClusterParams,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
    computations: AtomicUsize,
    /// How long a request waits for its job before answering 202.
    pub wait: Duration,
}

impl ServiceState {
    /// Runs (or loads from cache) the full pipeline and prepares the
    /// default view.
    pub fn start(cfg: PipelineConfig, wait: Duration) -> Result<Arc<Self>> {
        let (_, out) = run_pipeline(&cfg, &RunOptions { target: Target::All, audit: false })?;
        let summary = stages::read_summary(&out.ingest.value)?.into_iter().map(|r| (r.terminal.clone(), r)).collect();
        let state = Arc::new(ServiceState {
            cache: Cache::new(&cfg.output_dir()),
            config_hash: cfg.hash(),
            default_params: cfg.cluster.params(),
            ingest: out.ingest,
            baseline: out.baseline.expect("full run has a baseline"),
            detect: out.detect.expect("full run has depths"),
            sweep: out.sweep.map(|s| s.value).unwrap_or_default(),
            summary,
            correlations: out.correlations,
            jobs: Mutex::new(HashMap::new()),
            computations: AtomicUsize::new(0),
            wait,
            cfg,
        });
        let token = state.token(state.default_params)?;
        let view = state.compute(state.default_params)?;
        state.jobs.lock().expect("jobs lock").insert(
            token,
            Arc::new(Job { state: Mutex::new(JobState::Ready(Arc::new(view))), done: Notify::new() }),
        );
        Ok(state)
    }

    /// Views computed since start-up, the default one excluded.
    pub fn computations(&self) -> usize {
        self.computations.load(Ordering::SeqCst)
    }

    fn cluster_def(&self, params: ClusterParams) -> ClusterStage<'_> {
        ClusterStage { ingest: &self.ingest, baseline: &self.baseline, params, correlations: &self.correlations }
    }

    fn token(&self, params: ClusterParams) -> Result<String> {
        self.cluster_def(params).key()
    }

    fn compute(&self, params: ClusterParams) -> Result<View> {
        let cluster = run_stage(&self.cache, &self.cluster_def(params))?;
        let report = run_stage(
            &self.cache,
            &ReportStage {
                cfg: &self.cfg,
                ingest: &self.ingest,
                baseline: &self.baseline,
                cluster: &cluster,
                detect: &self.detect,
            },
        )?;
        let geojson = cluster_geojson(&cluster.value.graph, &cluster.value.model);
        Ok(View { params, cluster, report, geojson })
    }

    /// Existing job for `params`, or a newly started one.
    fn job(self: &Arc<Self>, params: ClusterParams) -> Result<(String, Arc<Job>), ApiError> {
        let token = self.token(params).map_err(ApiError::from)?;
        let mut jobs = self.jobs.lock().expect("jobs lock");
        if let Some(job) = jobs.get(&token) {
            return Ok((token, job.clone()));
        }
        let job = Arc::new(Job { state: Mutex::new(JobState::Running), done: Notify::new() });
        jobs.insert(token.clone(), job.clone());
        drop(jobs);
        self.computations.fetch_add(1, Ordering::SeqCst);
        let state = self.clone();
        let worker = job.clone();
        tokio::task::spawn_blocking(move || {
            let result = state.compute(params);
            *worker.state.lock().expect("job lock") = match result {
                Ok(view) => JobState::Ready(Arc::new(view)),
                Err(e) => {
                    log::error!("recluster {params:?} failed: {e}");
                    JobState::Failed { status: status_of(&e), message: e.to_string() }
                }
            };
            worker.done.notify_waiters();
        });
        Ok((token, job))
    }

    /// Waits up to `budget` for a job to settle.
    async fn settle(job: &Job, budget: Duration) -> Result<Option<Arc<View>>, ApiError> {
        let deadline = Instant::now() + budget;
        loop {
            let notified = job.done.notified();
            tokio::pin!(notified);
            notified.as_mut().enable();
            match &*job.state.lock().expect("job lock") {
                JobState::Ready(v) => return Ok(Some(v.clone())),
                JobState::Failed { status, message } => {
                    return Err(ApiError::new(*status, "computation_failed", message.clone()))
                }
                JobState::Running => {}
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() || tokio::time::timeout(left, notified).await.is_err() {
                return Ok(None);
            }
        }
    }

    async fn view(self: &Arc<Self>, params: ClusterParams) -> Result<ViewOrPending, ApiError> {
        let (token, job) = self.job(params)?;
        Ok(match Self::settle(&job, self.wait).await? {
            Some(view) => ViewOrPending::Ready(token, view),
            None => ViewOrPending::Pending(token),
        })
    }
}

enum ViewOrPending {
    Ready(String, Arc<View>),
    Pending(String),
}

fn pending(token: &str) -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({ "status": "running", "token": token, "poll": format!("/v1/jobs/{token}") })),
    )
        .into_response()
}

/// Machine-readable error body.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError { status, code, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }
}

fn status_of(e: &PipelineError) -> StatusCode {
    match e {
        PipelineError::Config(_) => StatusCode::BAD_REQUEST,
        PipelineError::Data(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = status_of(&e);
        let code = match status {
            StatusCode::BAD_REQUEST => "invalid_parameter",
            StatusCode::UNPROCESSABLE_ENTITY => "data_error",
            _ => "internal",
        };
        ApiError::new(status, code, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": { "code": self.code, "message": self.message } }))).into_response()
    }
}

type Params = Query<HashMap<String, String>>;
type ApiResult = Result<Response, ApiError>;

fn parse<T: std::str::FromStr>(q: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError> {
    q.get(name)
        .map(|v| v.trim().parse().map_err(|_| ApiError::bad_request(format!("query parameter `{name}` is malformed: {v:?}"))))
        .transpose()
}

fn parse_date(q: &HashMap<String, String>, name: &str) -> Result<Option<NaiveDate>, ApiError> {
    q.get(name)
        .map(|v| {
            NaiveDate::parse_from_str(v.trim(), "%Y-%m-%d")
                .map_err(|_| ApiError::bad_request(format!("query parameter `{name}` must be YYYY-MM-DD, got {v:?}")))
        })
        .transpose()
}

fn require_date(q: &HashMap<String, String>, name: &str) -> Result<NaiveDate, ApiError> {
    parse_date(q, name)?.ok_or_else(|| ApiError::bad_request(format!("query parameter `{name}` is required")))
}

/// Body of `POST /v1/recluster`; query strings use the same names.
#[derive(Debug, Clone, Copy, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReclusterRequest {
    pub rho: Option<f64>,
    #[serde(rename = "R")]
    pub radius: Option<f64>,
    pub din: Option<f64>,
    pub dout: Option<f64>,
}

impl ReclusterRequest {
    fn from_query(q: &HashMap<String, String>) -> Result<Self, ApiError> {
        Ok(ReclusterRequest {
            rho: parse(q, "rho")?,
            radius: parse(q, "R")?,
            din: parse(q, "din")?,
            dout: parse(q, "dout")?,
        })
    }

    fn params(&self, default: ClusterParams) -> Result<ClusterParams, ApiError> {
        let p = ClusterParams {
            rho_threshold: self.rho.unwrap_or(default.rho_threshold),
            graph: GraphParams {
                radius_m: self.radius.unwrap_or(default.graph.radius_m),
                d_inner_m: self.din.unwrap_or(default.graph.d_inner_m),
                d_outer_m: self.dout.unwrap_or(default.graph.d_outer_m),
            },
        };
        p.validate().map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_parameter", e.to_string()))?;
        Ok(p)
    }
}

async fn view_for(st: &Arc<ServiceState>, q: &HashMap<String, String>) -> Result<ViewOrPending, ApiError> {
    let params = ReclusterRequest::from_query(q)?.params(st.default_params)?;
    st.view(params).await
}

fn clusters_body(token: &str, v: &View) -> Value {
    let members = v.cluster.value.model.members();
    let clusters: Vec<Value> = members
        .iter()
        .map(|(id, ms)| {
            json!({
                "id": id,
                "size": ms.len(),
                "members": ms,
                "severity_model": v.report.value.models.get(id),
                "severity_unavailable": v.report.value.unavailable.get(id),
            })
        })
        .collect();
    json!({
        "token": token,
        "params": v.params,
        "summary": v.cluster.value.summary,
        "clusters": clusters,
        "geojson": v.geojson,
    })
}

async fn meta(State(st): State<Arc<ServiceState>>) -> ApiResult {
    let range = st.ingest.value.range();
    Ok(Json(json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_hash": st.config_hash,
        "kind": st.cfg.ingest.kind,
        "start": range.start,
        "end": range.end,
        "terminals": st.ingest.value.terminals.len(),
        "default_params": st.default_params,
        "parameter_ranges": {
            "rho": { "min": -1.0, "max": 1.0 },
            "R": { "min_exclusive": 0.0 },
            "din": { "min_exclusive": 0.0 },
            "dout": { "min_exclusive": 0.0 },
        },
        "sweep_grid": st.cfg.sweep.grid(),
        "heatmap_orders": ["distance", "north_to_south"],
        "weather": st.cfg.data.weather.is_some(),
    }))
    .into_response())
}

async fn terminals(State(st): State<Arc<ServiceState>>) -> ApiResult {
    let fitted: std::collections::BTreeSet<TerminalId> = st.baseline.value.terminals().into_iter().collect();
    let body: Vec<Value> = st
        .ingest
        .value
        .terminals
        .iter()
        .map(|t| {
            let s = st.summary.get(&t.terminal);
            json!({
                "terminal": t.terminal,
                "latitude": t.latitude,
                "longitude": t.longitude,
                "first_active_date": t.first_active_date,
                "total_usage": s.map(|s| s.total_usage),
                "active_days": s.map(|s| s.active_days),
                "mean_annual_usage": s.map(|s| s.mean_annual_usage),
                "has_baseline": fitted.contains(&t.terminal),
            })
        })
        .collect();
    Ok(Json(body).into_response())
}

async fn clusters(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    Ok(match view_for(&st, &q).await? {
        ViewOrPending::Ready(token, v) => Json(clusters_body(&token, &v)).into_response(),
        ViewOrPending::Pending(token) => pending(&token),
    })
}

async fn cluster_detail(State(st): State<Arc<ServiceState>>, Path(id): Path<String>, Query(q): Params) -> ApiResult {
    let v = match view_for(&st, &q).await? {
        ViewOrPending::Ready(_, v) => v,
        ViewOrPending::Pending(token) => return Ok(pending(&token)),
    };
    let cid = ClusterId(TerminalId::new(id.as_str()));
    let members = v.cluster.value.model.members();
    let Some(ms) = members.get(&cid) else {
        return Err(ApiError::not_found(format!("no cluster {id} at these parameters")));
    };
    let nodes: Vec<Value> = v
        .cluster
        .value
        .graph
        .geo
        .nodes
        .iter()
        .filter(|t| ms.contains(&t.id))
        .map(|t| json!({ "terminal": t.id, "latitude": t.latitude, "longitude": t.longitude }))
        .collect();
    let edges: Vec<_> = v.cluster.value.model.retained_edges().filter(|e| ms.contains(&e.a)).collect();
    let outlier_days: Vec<_> = v.report.value.severities.iter().filter(|s| s.cluster == cid).collect();
    Ok(Json(json!({
        "id": cid,
        "size": ms.len(),
        "members": nodes,
        "edges": edges,
        "severity_model": v.report.value.models.get(&cid),
        "severity_unavailable": v.report.value.unavailable.get(&cid),
        "outlier_days": outlier_days,
    }))
    .into_response())
}

async fn sweep(State(st): State<Arc<ServiceState>>) -> ApiResult {
    Ok(Json(&st.sweep).into_response())
}

async fn depths(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    let terminal = q.get("terminal").ok_or_else(|| ApiError::bad_request("query parameter `terminal` is required"))?;
    let id = TerminalId::new(terminal.as_str());
    let from = parse_date(&q, "from")?;
    let to = parse_date(&q, "to")?;
    let records: Vec<Value> = st
        .detect
        .value
        .records
        .iter()
        .filter(|r| r.terminal == id)
        .filter(|r| from.is_none_or(|f| r.date >= f) && to.is_none_or(|t| r.date <= t))
        .map(|r| {
            json!({
                "date": r.date,
                "partition": r.partition.to_string(),
                "depth": r.depth,
                "threshold": r.threshold,
                "z": r.z,
                "flagged": r.flagged(),
                "status": r.status(),
            })
        })
        .collect();
    let pools: Vec<_> = st.detect.value.pools.iter().filter(|p| p.terminal == id).collect();
    if pools.is_empty() {
        return Err(ApiError::not_found(format!("no depths for terminal {id}")));
    }
    let insufficient = pools.iter().any(|p| p.threshold.is_none());
    Ok(Json(json!({
        "terminal": id,
        "insufficient_data": insufficient,
        "pools": pools,
        "records": records,
    }))
    .into_response())
}

async fn outliers(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    let date = require_date(&q, "date")?;
    let (token, v) = match view_for(&st, &q).await? {
        ViewOrPending::Ready(token, v) => (token, v),
        ViewOrPending::Pending(token) => return Ok(pending(&token)),
    };
    let clusters: Vec<_> = v.report.value.severities.iter().filter(|s| s.date == date).collect();
    let terminals: Vec<Value> = st
        .detect
        .value
        .records
        .iter()
        .filter(|r| r.date == date && r.flagged())
        .map(|r| json!({ "terminal": r.terminal, "z": r.z, "cluster": v.cluster.value.model.cluster_of(&r.terminal) }))
        .collect();
    Ok(Json(json!({ "token": token, "date": date, "clusters": clusters, "terminals": terminals })).into_response())
}

async fn alerts(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    let date = require_date(&q, "date")?;
    let (token, v) = match view_for(&st, &q).await? {
        ViewOrPending::Ready(token, v) => (token, v),
        ViewOrPending::Pending(token) => return Ok(pending(&token)),
    };
    let entries: Vec<Value> = v
        .report
        .value
        .alerts_on(date)
        .into_iter()
        .map(|a| {
            let mut e = serde_json::to_value(&a).expect("alert serialises");
            e["arrow"] = json!(a.direction.map(|d| d.arrow()));
            e
        })
        .collect();
    Ok(Json(json!({ "token": token, "date": date, "alerts": entries })).into_response())
}

async fn heatmap(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    let range = st.ingest.value.range();
    let from = parse_date(&q, "from")?.unwrap_or(range.start);
    let to = parse_date(&q, "to")?.unwrap_or(range.end);
    if to < from {
        return Err(ApiError::bad_request(format!("`to` ({to}) is before `from` ({from})")));
    }
    let order: HeatmapOrder = match q.get("order") {
        Some(o) => o.parse().map_err(ApiError::bad_request)?,
        None => st.cfg.severity.heatmap_order,
    };
    let (token, v) = match view_for(&st, &q).await? {
        ViewOrPending::Ready(token, v) => (token, v),
        ViewOrPending::Pending(token) => return Ok(pending(&token)),
    };
    let dates: Vec<NaiveDate> = from.iter_days().take_while(|d| *d <= to).collect();
    let map = stages::heatmap(&v.report.value, &v.cluster.value, order, &dates);
    Ok(Json(json!({ "token": token, "order": order, "heatmap": map })).into_response())
}

async fn weather_crosstab(State(st): State<Arc<ServiceState>>, Query(q): Params) -> ApiResult {
    let (token, v) = match view_for(&st, &q).await? {
        ViewOrPending::Ready(token, v) => (token, v),
        ViewOrPending::Pending(token) => return Ok(pending(&token)),
    };
    match &v.report.value.crosstab {
        Some(x) => Ok(Json(json!({ "token": token, "crosstab": x })).into_response()),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "not_configured", "no weather file is configured")),
    }
}

async fn recluster(State(st): State<Arc<ServiceState>>, body: Option<Json<Value>>) -> ApiResult {
    let req: ReclusterRequest = match body {
        Some(Json(v)) => serde_json::from_value(v).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))?,
        None => ReclusterRequest::default(),
    };
    let params = req.params(st.default_params)?;
    Ok(match st.view(params).await? {
        ViewOrPending::Ready(token, v) => Json(clusters_body(&token, &v)).into_response(),
        ViewOrPending::Pending(token) => pending(&token),
    })
}

async fn job_status(State(st): State<Arc<ServiceState>>, Path(token): Path<String>) -> ApiResult {
    let job = st
        .jobs
        .lock()
        .expect("jobs lock")
        .get(&token)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown job {token}")))?;
    Ok(match ServiceState::settle(&job, Duration::ZERO).await? {
        Some(v) => Json(clusters_body(&token, &v)).into_response(),
        None => pending(&token),
    })
}

async fn fallback() -> ApiError {
    ApiError::not_found("no such endpoint")
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/v1/meta", get(meta))
        .route("/v1/terminals", get(terminals))
        .route("/v1/clusters", get(clusters))
        .route("/v1/clusters/{id}", get(cluster_detail))
        .route("/v1/sweep", get(sweep))
        .route("/v1/depths", get(depths))
        .route("/v1/outliers", get(outliers))
        .route("/v1/alerts", get(alerts))
        .route("/v1/heatmap", get(heatmap))
        .route("/v1/weather-crosstab", get(weather_crosstab))
        .route("/v1/recluster", post(recluster))
        .route("/v1/jobs/{token}", get(job_status))
        .fallback(fallback)
        .with_state(state)
}

/// Serves until interrupted.
pub async fn serve(state: Arc<ServiceState>, addr: SocketAddr) -> Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| PipelineError::io(addr.to_string(), e))?;
    log::info!("listening on http://{}", listener.local_addr().map_err(|e| PipelineError::io(addr.to_string(), e))?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| PipelineError::io(addr.to_string(), e))
}
