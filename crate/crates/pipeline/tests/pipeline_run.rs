use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use bikedepth::fixture::write_fixture;
use bikedepth::run::RunStatus;
use bikedepth::{run_pipeline, PipelineConfig, PipelineError, RunManifest, RunOptions, Target};
use bikedepth_core::synth::SynthConfig;
use chrono::NaiveDate;

fn small() -> SynthConfig {
    SynthConfig {
        start: NaiveDate::from_ymd_opt(2018, 7, 1).unwrap(),
        end: NaiveDate::from_ymd_opt(2019, 6, 30).unwrap(),
        clusters: 3,
        terminals_per_cluster: 3,
        shock_days: 4,
        ..SynthConfig::default()
    }
}

fn fixture_config(dir: &Path, synth: &SynthConfig) -> PipelineConfig {
    let f = write_fixture(dir, synth).unwrap();
    PipelineConfig::load(&f.config_path, None).unwrap()
}

fn all() -> RunOptions {
    RunOptions { target: Target::All, audit: false }
}

/// Relative path to contents of every file under `root`.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn hits(m: &RunManifest) -> BTreeMap<String, bool> {
    m.stages.iter().map(|s| (s.name.clone(), s.cache_hit)).collect()
}

#[test]
fn bundled_fixture_runs_end_to_end_and_reruns_from_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path(), &SynthConfig::default());
    let (first, out) = run_pipeline(&cfg, &all()).unwrap();
    assert_eq!(first.status, RunStatus::Complete);
    assert_eq!(out.ingest.value.terminals.len(), 20);

    let names: Vec<&str> = first.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["ingest", "baseline", "cluster", "detect", "report", "sweep"]);
    assert!(first.stages.iter().all(|s| !s.cache_hit));
    let paths: Vec<&str> = first.artifacts().map(|a| a.path.as_str()).collect();
    for file in [
        "terminals.csv",
        "residuals.csv",
        "model_selection.csv",
        "clusters.csv",
        "clusters.geojson",
        "edges.csv",
        "depths.csv",
        "pools.csv",
        "exceedances.csv",
        "severities.csv",
        "alerts.csv",
        "heatmap.csv",
        "weather_crosstab.json",
        "sweep.csv",
    ] {
        assert!(paths.iter().any(|p| p.ends_with(file)), "{file} missing from manifest");
    }
    for a in first.artifacts() {
        let p = cfg.output_dir().join(&a.path);
        assert_eq!(std::fs::metadata(&p).unwrap().len(), a.bytes, "{}", a.path);
    }
    let residual_rows = first.artifacts().find(|a| a.path.ends_with("residuals.csv")).unwrap().rows;
    assert_eq!(residual_rows, Some(out.baseline.as_ref().unwrap().value.residuals.len()));
    let written: RunManifest = serde_json::from_slice(
        &std::fs::read(RunManifest::path(&cfg.output_dir(), &cfg.hash())).unwrap(),
    )
    .unwrap();
    assert_eq!(written.config_hash, first.config_hash);
    assert_eq!(written.stages.len(), first.stages.len());

    let before = snapshot(&cfg.output_dir().join("cache"));
    let (second, _) = run_pipeline(&cfg, &all()).unwrap();
    assert!(second.stages.iter().all(|s| s.cache_hit));
    assert_eq!(snapshot(&cfg.output_dir().join("cache")), before);
    let sha = |m: &RunManifest| m.artifacts().map(|a| (a.path.clone(), a.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(sha(&first), sha(&second));

    // Only the clustering threshold changes.
    let mut moved = cfg.clone();
    moved.cluster.rho_threshold = 0.3;
    let (third, _) = run_pipeline(&moved, &all()).unwrap();
    let h = hits(&third);
    assert!(h["ingest"] && h["baseline"] && h["detect"] && h["sweep"]);
    assert!(!h["cluster"] && !h["report"]);
    assert_eq!(third.stage("baseline").unwrap().key, first.stage("baseline").unwrap().key);
    assert_ne!(third.stage("cluster").unwrap().key, first.stage("cluster").unwrap().key);
    let after = snapshot(&cfg.output_dir().join("cache"));
    for (path, bytes) in &before {
        assert_eq!(after.get(path), Some(bytes), "{} was modified", path.display());
    }
}

#[test]
fn identical_configs_give_byte_identical_artifacts() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = fixture_config(a.path(), &small());
    let cb = fixture_config(b.path(), &small());
    let (ma, _) = run_pipeline(&ca, &all()).unwrap();
    let (mb, _) = run_pipeline(&cb, &all()).unwrap();
    let sa = snapshot(&ca.output_dir().join("cache"));
    let sb = snapshot(&cb.output_dir().join("cache"));
    assert!(!sa.is_empty());
    assert_eq!(sa.keys().collect::<Vec<_>>(), sb.keys().collect::<Vec<_>>());
    for (path, bytes) in &sa {
        assert!(sb[path] == *bytes, "{} differs", path.display());
    }
    let keys = |m: &RunManifest| m.stages.iter().map(|s| s.key.clone()).collect::<Vec<_>>();
    assert_eq!(keys(&ma), keys(&mb));
}

#[test]
fn full_audit_passes_on_cache_hits() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path(), &small());
    run_pipeline(&cfg, &all()).unwrap();
    cfg.cache.audit_fraction = 1.0;
    let (m, _) = run_pipeline(&cfg, &RunOptions { target: Target::All, audit: true }).unwrap();
    assert_eq!(m.audit.len(), 6);
    assert!(m.audit.iter().all(|a| a.passed() && a.files_compared > 0), "{:?}", m.audit);
    assert_eq!(m.status, RunStatus::Complete);
}

#[test]
fn tampered_cache_fails_the_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config(tmp.path(), &small());
    let (m, _) = run_pipeline(&cfg, &RunOptions { target: Target::Detect, audit: false }).unwrap();
    let depths = m.artifacts().find(|a| a.path.ends_with("depths.csv")).unwrap();
    let path = cfg.output_dir().join(&depths.path);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    // Flip the last digit of the first record.
    let digit = lines[1].rfind(|c: char| c.is_ascii_digit()).unwrap();
    let flipped = if &lines[1][digit..digit + 1] == "1" { "2" } else { "1" };
    lines[1].replace_range(digit..digit + 1, flipped);
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();

    cfg.cache.audit_fraction = 1.0;
    let Err(err) = run_pipeline(&cfg, &RunOptions { target: Target::Detect, audit: true }) else { panic!("audit passed") };
    assert!(matches!(err, PipelineError::Cache(_)), "{err}");
    let written: RunManifest =
        serde_json::from_slice(&std::fs::read(RunManifest::path(&cfg.output_dir(), &cfg.hash())).unwrap()).unwrap();
    assert_eq!(written.status, RunStatus::AuditFailed);
    let detect = written.audit.iter().find(|a| a.stage == "detect").unwrap();
    assert!(detect.mismatches.iter().any(|f| f.contains("depths.csv")));
}

#[test]
fn partial_target_runs_only_upstream_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path(), &small());
    let (m, out) = run_pipeline(&cfg, &RunOptions { target: Target::Cluster, audit: false }).unwrap();
    let names: Vec<&str> = m.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(names, ["ingest", "baseline", "cluster"]);
    assert!(out.detect.is_none() && out.report.is_none());
    assert!(out.cluster.unwrap().value.model.cluster_count() >= 1);
}

#[test]
fn failing_stage_records_partial_completion() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_config(tmp.path(), &small());
    std::fs::write(tmp.path().join("weather.csv"), "when,how_warm\n2019-01-01,3\n").unwrap();
    let Err(err) = run_pipeline(&cfg, &all()) else { panic!("run succeeded") };
    assert_ne!(err.exit_code(), 0);
    let written: RunManifest =
        serde_json::from_slice(&std::fs::read(RunManifest::path(&cfg.output_dir(), &cfg.hash())).unwrap()).unwrap();
    assert_eq!(written.status, RunStatus::Partial);
    let failure = written.error.unwrap();
    assert_eq!(failure.stage, "report");
    assert_eq!(failure.kind, "config");
    assert_eq!(err.exit_code(), 2);
    assert_eq!(failure.exit_code, err.exit_code());
    assert!(written.stages.iter().all(|s| s.name != failure.stage));
}
