use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use bikedepth::fixture::write_fixture;
use bikedepth::service::{router, ServiceState};
use bikedepth::PipelineConfig;
use bikedepth_core::synth::SynthConfig;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Shared {
    _dir: tempfile::TempDir,
    cfg: PipelineConfig,
    state: Arc<ServiceState>,
}

/// The bundled 20-terminal, two-year fixture, run once per test binary.
fn shared() -> &'static Shared {
    static CELL: OnceLock<Shared> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let f = write_fixture(dir.path(), &SynthConfig::default()).unwrap();
        let cfg = PipelineConfig::load(&f.config_path, None).unwrap();
        let state = ServiceState::start(cfg.clone(), Duration::from_secs(30)).unwrap();
        Shared { _dir: dir, cfg, state }
    })
}

/// Another service over the warm cache of the shared fixture.
fn fresh(wait: Duration) -> Arc<ServiceState> {
    ServiceState::start(shared().cfg.clone(), wait).unwrap()
}

async fn call(state: &Arc<ServiceState>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(state.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn get(state: &Arc<ServiceState>, uri: &str) -> (StatusCode, Value) {
    call(state, Request::get(uri).body(Body::empty()).unwrap()).await
}

fn post_json(uri: &str, body: Value) -> Request<Body> {
    Request::post(uri).header("content-type", "application/json").body(Body::from(body.to_string())).unwrap()
}

fn error_code(body: &Value) -> &str {
    body["error"]["code"].as_str().unwrap_or_else(|| panic!("no error code in {body}"))
}

/// A date with at least one outlying cluster.
fn outlier_date() -> String {
    let rows = std::fs::read_to_string(
        shared().cfg.output_dir().join("cache/report").read_dir().unwrap().next().unwrap().unwrap().path().join("alerts.csv"),
    )
    .unwrap();
    rows.lines().nth(1).unwrap().split(',').nth(1).unwrap().to_string()
}

#[tokio::test]
async fn meta_terminals_and_sweep() {
    let st = &shared().state;
    let (s, meta) = get(st, "/v1/meta").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(meta["terminals"], 20);
    assert_eq!(meta["start"], "2018-01-01");
    assert_eq!(meta["default_params"]["rho_threshold"], 0.15);

    let (s, terminals) = get(st, "/v1/terminals").await;
    assert_eq!(s, StatusCode::OK);
    let terminals = terminals.as_array().unwrap();
    assert_eq!(terminals.len(), 20);
    assert!(terminals.iter().all(|t| t["has_baseline"] == true && t["latitude"].is_number()));

    let (s, sweep) = get(st, "/v1/sweep").await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(sweep.as_array().unwrap().len(), 9 * 2 * 2 * 2);
}

#[tokio::test]
async fn clusters_respond_quickly_from_a_warm_cache() {
    let st = &shared().state;
    let t = Instant::now();
    let (s, body) = get(st, "/v1/clusters?rho=0.15").await;
    let elapsed = t.elapsed();
    assert_eq!(s, StatusCode::OK);
    assert!(elapsed < Duration::from_secs(2), "{elapsed:?}");
    let clusters = body["clusters"].as_array().unwrap();
    let members: usize = clusters.iter().map(|c| c["size"].as_u64().unwrap() as usize).sum();
    assert_eq!(members, 20);
    assert_eq!(body["geojson"]["type"], "FeatureCollection");
    assert_eq!(body["geojson"]["features"].as_array().unwrap().iter().filter(|f| f["geometry"]["type"] == "Point").count(), 20);

    let id = clusters[0]["id"].as_str().unwrap();
    let (s, detail) = get(st, &format!("/v1/clusters/{id}")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(detail["size"], clusters[0]["size"]);
    assert_eq!(detail["members"].as_array().unwrap().len(), detail["size"].as_u64().unwrap() as usize);
}

#[tokio::test]
async fn unknown_cluster_is_404() {
    let (s, body) = get(&shared().state, "/v1/clusters/no-such-cluster").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_found");
}

#[tokio::test]
async fn malformed_queries_are_4xx_with_codes() {
    let st = &shared().state;
    for (uri, status, code) in [
        ("/v1/clusters?rho=abc", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/clusters?rho=1.5", StatusCode::BAD_REQUEST, "invalid_parameter"),
        ("/v1/clusters?R=-3", StatusCode::BAD_REQUEST, "invalid_parameter"),
        ("/v1/depths", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/depths?terminal=nope", StatusCode::NOT_FOUND, "not_found"),
        ("/v1/outliers", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/alerts?date=yesterday", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/heatmap?from=2019-02-01&to=2019-01-01", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/heatmap?order=sideways", StatusCode::BAD_REQUEST, "bad_request"),
        ("/v1/jobs/unknown", StatusCode::NOT_FOUND, "not_found"),
        ("/v1/nothing", StatusCode::NOT_FOUND, "not_found"),
        ("/terminals", StatusCode::NOT_FOUND, "not_found"),
    ] {
        let (s, body) = get(st, uri).await;
        assert_eq!(s, status, "{uri}");
        assert_eq!(error_code(&body), code, "{uri}");
        assert!(body["error"]["message"].as_str().is_some_and(|m| !m.is_empty()), "{uri}");
    }
    let (s, body) = call(st, post_json("/v1/recluster", json!({ "rho": 0.2, "bogus": 1 }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert_eq!(error_code(&body), "bad_request");
}

#[tokio::test]
async fn depths_outliers_alerts_heatmap_and_weather() {
    let st = &shared().state;
    let (s, d) = get(st, "/v1/depths?terminal=31000&from=2019-03-01&to=2019-03-31").await;
    assert_eq!(s, StatusCode::OK);
    let records = d["records"].as_array().unwrap();
    assert_eq!(records.len(), 31);
    for r in records {
        let (depth, c, z) = (r["depth"].as_f64().unwrap(), r["threshold"].as_f64().unwrap(), r["z"].as_f64().unwrap());
        assert!((z - (c - depth) / c).abs() < 1e-12);
        assert_eq!(r["flagged"].as_bool().unwrap(), z > 0.0);
    }
    assert_eq!(d["pools"].as_array().unwrap().len(), 4);

    let date = outlier_date();
    let (s, o) = get(st, &format!("/v1/outliers?date={date}")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(!o["clusters"].as_array().unwrap().is_empty());
    assert!(!o["terminals"].as_array().unwrap().is_empty());

    let (s, a) = get(st, &format!("/v1/alerts?date={date}")).await;
    assert_eq!(s, StatusCode::OK);
    let alerts = a["alerts"].as_array().unwrap();
    assert_eq!(alerts[0]["rank"], 1);
    let ranks: Vec<u64> = alerts.iter().map(|e| e["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, (1..=alerts.len() as u64).collect::<Vec<_>>());
    assert!(alerts.iter().all(|e| e["arrow"] == "↑" || e["arrow"] == "↓" || e["arrow"].is_null()));

    let (s, h) = get(st, "/v1/heatmap?from=2019-01-01&to=2019-01-31&order=north_to_south").await;
    assert_eq!(s, StatusCode::OK);
    let map = &h["heatmap"];
    assert_eq!(map["dates"].as_array().unwrap().len(), 31);
    let width = map["clusters"].as_array().unwrap().len();
    assert!(map["cells"].as_array().unwrap().iter().all(|row| row.as_array().unwrap().len() == width));
    assert!(map["cells"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|r| r.as_array().unwrap())
        .all(|c| c.is_null() || (0.0..=1.0).contains(&c.as_f64().unwrap())));

    let (s, w) = get(st, "/v1/weather-crosstab").await;
    assert_eq!(s, StatusCode::OK);
    assert!(w["crosstab"].is_object());
}

#[tokio::test]
async fn weather_crosstab_without_weather_is_404() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        start: chrono::NaiveDate::from_ymd_opt(2018, 7, 1).unwrap(),
        end: chrono::NaiveDate::from_ymd_opt(2019, 6, 30).unwrap(),
        clusters: 3,
        terminals_per_cluster: 3,
        shock_days: 4,
        ..SynthConfig::default()
    };
    let f = write_fixture(dir.path(), &synth).unwrap();
    let mut cfg = PipelineConfig::load(&f.config_path, None).unwrap();
    cfg.data.weather = None;
    let st = tokio::task::spawn_blocking(move || ServiceState::start(cfg, Duration::from_secs(30)).unwrap())
        .await
        .unwrap();
    let (s, body) = get(&st, "/v1/weather-crosstab").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(error_code(&body), "not_configured");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_reclusters_share_one_computation() {
    let st = tokio::task::spawn_blocking(|| fresh(Duration::from_secs(60))).await.unwrap();
    let cache = shared().cfg.output_dir().join("cache");
    let before = snapshot(&cache);
    let calls = (0..8).map(|_| {
        let st = st.clone();
        tokio::spawn(async move { call(&st, post_json("/v1/recluster", json!({ "rho": 0.27, "R": 4000.0 }))).await })
    });
    let results: Vec<(StatusCode, Value)> = futures_join(calls).await;
    assert_eq!(st.computations(), 1);
    let first = &results[0].1;
    for (s, body) in &results {
        assert_eq!(*s, StatusCode::OK);
        assert_eq!(body, first);
    }
    assert_eq!(first["params"]["rho_threshold"], 0.27);
    assert_eq!(first["params"]["radius_m"], 4000.0);
    let (_, again) = get(&st, "/v1/clusters?rho=0.27&R=4000").await;
    assert_eq!(again["token"], first["token"]);
    assert_eq!(st.computations(), 1);
    let after = snapshot(&cache);
    assert!(after.len() > before.len());
    for (path, bytes) in &before {
        assert_eq!(after.get(path), Some(bytes), "{} was modified", path.display());
    }
}

/// Contents of every committed file below `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.file_name().unwrap().to_string_lossy().starts_with(".staging") {
                continue;
            }
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.clone(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

async fn futures_join<T: Send + 'static>(handles: impl Iterator<Item = tokio::task::JoinHandle<T>>) -> Vec<T> {
    let mut out = Vec::new();
    for h in handles {
        out.push(h.await.unwrap());
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn slow_recluster_answers_202_and_the_job_can_be_polled() {
    let st = tokio::task::spawn_blocking(|| fresh(Duration::ZERO)).await.unwrap();
    let (s, body) = call(&st, post_json("/v1/recluster", json!({ "rho": -0.2, "din": 400.0, "dout": 900.0 }))).await;
    assert_eq!(s, StatusCode::ACCEPTED);
    assert_eq!(body["status"], "running");
    let token = body["token"].as_str().unwrap().to_string();
    assert_eq!(body["poll"], format!("/v1/jobs/{token}"));

    let deadline = Instant::now() + Duration::from_secs(120);
    let ready = loop {
        let (s, body) = get(&st, &format!("/v1/jobs/{token}")).await;
        if s == StatusCode::OK {
            break body;
        }
        assert_eq!(s, StatusCode::ACCEPTED);
        assert!(Instant::now() < deadline, "job never finished");
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    assert_eq!(ready["token"], token);
    assert_eq!(ready["params"]["rho_threshold"], -0.2);
    assert_eq!(st.computations(), 1);
}
