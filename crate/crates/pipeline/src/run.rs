//! End-to-end orchestration and the run manifest.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use bikedepth_core::spatial::CorrelationCache;
use chrono::{SecondsFormat, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cache::{AuditResult, Cache};
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::stages::{
    audit_stage, run_stage, BaselineOutput, BaselineStage, ClusterOutput, ClusterStage, DetectOutput, DetectStage,
    IngestOutput, IngestStage, ReportOutput, ReportStage, StageRun, SweepStage,
};
use crate::tables;

pub const MANIFEST_FORMAT: u32 = 1;

/// Last stage a command needs; upstream stages run (or hit) first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Ingest,
    Baseline,
    Cluster,
    Detect,
    Report,
    Sweep,
    All,
}

impl Target {
    fn needs(self, stage: &str) -> bool {
        match (self, stage) {
            (_, "ingest") | (Target::All, _) => true,
            (Target::Ingest, _) => false,
            (_, "baseline") => true,
            (Target::Cluster, "cluster") => true,
            (Target::Detect, "detect") => true,
            (Target::Report, "cluster" | "detect" | "report") => true,
            (Target::Sweep, "sweep") => true,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    pub target: Target,
    /// Recompute a sample of cache hits and compare.
    pub audit: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { target: Target::All, audit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRecord {
    /// Relative to the output directory.
    pub path: String,
    pub rows: Option<usize>,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub cache_hit: bool,
    pub started_at: String,
    pub finished_at: String,
    pub artifacts: Vec<ArtifactRecord>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Some stages finished before one failed.
    Partial,
    Failed,
    AuditFailed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub stage: String,
    pub kind: String,
    pub exit_code: u8,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: u32,
    pub config_hash: String,
    pub output_dir: PathBuf,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    pub error: Option<FailureRecord>,
    pub audit: Vec<AuditResult>,
}

impl RunManifest {
    pub fn path(output: &Path, config_hash: &str) -> PathBuf {
        output.join("runs").join(config_hash).join("manifest.json")
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn artifacts(&self) -> impl Iterator<Item = &ArtifactRecord> {
        self.stages.iter().flat_map(|s| &s.artifacts)
    }
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Everything a run produced, for callers that keep working in memory.
pub struct Outputs {
    pub ingest: StageRun<IngestOutput>,
    pub baseline: Option<StageRun<BaselineOutput>>,
    pub cluster: Option<StageRun<ClusterOutput>>,
    pub detect: Option<StageRun<DetectOutput>>,
    pub report: Option<StageRun<ReportOutput>>,
    pub sweep: Option<StageRun<Vec<bikedepth_core::spatial::SweepRow>>>,
    /// Residual correlations computed so far.
    pub correlations: Mutex<CorrelationCache>,
}

struct Recorder<'a> {
    cache: &'a Cache,
    output: PathBuf,
    stages: Vec<StageRecord>,
}

impl Recorder<'_> {
    fn stage<T>(
        &mut self,
        name: &str,
        f: impl FnOnce() -> Result<StageRun<T>>,
    ) -> std::result::Result<StageRun<T>, (String, PipelineError)> {
        let started_at = now();
        let run = f().map_err(|e| (name.to_string(), e))?;
        let base = run.dir.strip_prefix(&self.output).unwrap_or(&run.dir).to_path_buf();
        let artifacts = run
            .files
            .iter()
            .map(|f| ArtifactRecord {
                path: format!("{}/{}", base.to_string_lossy().replace('\\', "/"), f.name),
                rows: f.rows,
                bytes: f.bytes,
                sha256: f.sha256.clone(),
            })
            .collect();
        self.stages.push(StageRecord {
            name: name.into(),
            key: run.key.clone(),
            cache_hit: run.hit,
            started_at,
            finished_at: now(),
            artifacts,
            warnings: run.warnings.clone(),
        });
        Ok(run)
    }
}

type Failure = (String, PipelineError);

fn execute(cfg: &PipelineConfig, opts: &RunOptions, rec: &mut Recorder) -> std::result::Result<Outputs, Failure> {
    let cache = rec.cache.clone();
    let t = opts.target;
    let ingest = rec.stage("ingest", || run_stage(&cache, &IngestStage { cfg }))?;
    let mut out = Outputs {
        ingest,
        baseline: None,
        cluster: None,
        detect: None,
        report: None,
        sweep: None,
        correlations: Mutex::new(CorrelationCache::default()),
    };
    if !t.needs("baseline") {
        return Ok(out);
    }
    let kind = cfg.ingest.kind;
    let baseline = rec.stage("baseline", || run_stage(&cache, &BaselineStage { cfg, ingest: &out.ingest, kind }))?;
    out.correlations = Mutex::new(baseline.value.correlation_cache());

    if t.needs("cluster") {
        let def = ClusterStage {
            ingest: &out.ingest,
            baseline: &baseline,
            params: cfg.cluster.params(),
            correlations: &out.correlations,
        };
        out.cluster = Some(rec.stage("cluster", || run_stage(&cache, &def))?);
    }
    if t.needs("detect") {
        out.detect = Some(rec.stage("detect", || run_stage(&cache, &DetectStage { cfg, baseline: &baseline }))?);
    }
    if t.needs("report") {
        let (Some(cluster), Some(detect)) = (&out.cluster, &out.detect) else { unreachable!("report needs both") };
        let def = ReportStage { cfg, ingest: &out.ingest, baseline: &baseline, cluster, detect };
        out.report = Some(rec.stage("report", || run_stage(&cache, &def))?);
    }
    if t.needs("sweep") {
        let def = SweepStage {
            ingest: &out.ingest,
            baseline: &baseline,
            grid: cfg.sweep.grid(),
            correlations: &out.correlations,
        };
        out.sweep = Some(rec.stage("sweep", || run_stage(&cache, &def))?);
    }
    out.baseline = Some(baseline);
    Ok(out)
}

/// Number of hits recomputed by an audit: the configured fraction rounded
/// up, at least one when there is any hit.
pub fn audit_sample_size(hits: usize, fraction: f64) -> usize {
    if hits == 0 {
        return 0;
    }
    ((hits as f64 * fraction).ceil() as usize).clamp(1, hits)
}

fn audit(cfg: &PipelineConfig, cache: &Cache, out: &Outputs, stages: &[StageRecord]) -> Result<Vec<AuditResult>> {
    let hits: Vec<&str> = stages.iter().filter(|s| s.cache_hit).map(|s| s.name.as_str()).collect();
    let n = audit_sample_size(hits.len(), cfg.cache.audit_fraction);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.cache.audit_seed);
    let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, hits.len(), n).into_vec();
    picked.sort_unstable();
    let mut results = Vec::new();
    for i in picked {
        let name = hits[i];
        let baseline = out.baseline.as_ref();
        let need = |what: &str| PipelineError::Cache(format!("audit of {name} needs the {what} stage"));
        let result = match name {
            "ingest" => audit_stage(cache, &IngestStage { cfg })?,
            "baseline" => audit_stage(cache, &BaselineStage { cfg, ingest: &out.ingest, kind: cfg.ingest.kind })?,
            "cluster" => {
                let correlations = Mutex::new(baseline.ok_or_else(|| need("baseline"))?.value.correlation_cache());
                audit_stage(
                    cache,
                    &ClusterStage {
                        ingest: &out.ingest,
                        baseline: baseline.ok_or_else(|| need("baseline"))?,
                        params: cfg.cluster.params(),
                        correlations: &correlations,
                    },
                )?
            }
            "detect" => {
                audit_stage(cache, &DetectStage { cfg, baseline: baseline.ok_or_else(|| need("baseline"))? })?
            }
            "report" => audit_stage(
                cache,
                &ReportStage {
                    cfg,
                    ingest: &out.ingest,
                    baseline: baseline.ok_or_else(|| need("baseline"))?,
                    cluster: out.cluster.as_ref().ok_or_else(|| need("cluster"))?,
                    detect: out.detect.as_ref().ok_or_else(|| need("detect"))?,
                },
            )?,
            "sweep" => {
                let correlations = Mutex::new(baseline.ok_or_else(|| need("baseline"))?.value.correlation_cache());
                audit_stage(
                    cache,
                    &SweepStage {
                        ingest: &out.ingest,
                        baseline: baseline.ok_or_else(|| need("baseline"))?,
                        grid: cfg.sweep.grid(),
                        correlations: &correlations,
                    },
                )?
            }
            other => return Err(PipelineError::Cache(format!("unknown stage {other}"))),
        };
        log::info!(
            "audit {name}: {} files, {}",
            result.files_compared,
            if result.passed() { "match" } else { "MISMATCH" }
        );
        results.push(result);
    }
    Ok(results)
}

/// Runs the stages `opts.target` needs and writes the manifest to
/// `<output>/runs/<config hash>/manifest.json`, also when a stage fails.
pub fn run_pipeline(cfg: &PipelineConfig, opts: &RunOptions) -> Result<(RunManifest, Outputs)> {
    let output = cfg.output_dir();
    let cache = Cache::new(&output);
    let config_hash = cfg.hash();
    let started_at = now();
    let mut rec = Recorder { cache: &cache, output: output.clone(), stages: Vec::new() };
    let result = execute(cfg, opts, &mut rec);
    let mut manifest = RunManifest {
        format: MANIFEST_FORMAT,
        config_hash: config_hash.clone(),
        output_dir: output.clone(),
        started_at,
        finished_at: String::new(),
        status: RunStatus::Complete,
        warnings: rec.stages.iter().flat_map(|s| s.warnings.iter().map(move |w| format!("{}: {w}", s.name))).collect(),
        stages: rec.stages,
        error: None,
        audit: Vec::new(),
    };
    let path = RunManifest::path(&output, &config_hash);
    let write = |m: &RunManifest| -> Result<()> {
        let dir = path.parent().expect("manifest has a parent");
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        tables::write_json(&path, m)
    };
    match result {
        Ok(out) => {
            if opts.audit {
                manifest.audit = audit(cfg, &cache, &out, &manifest.stages)?;
                if manifest.audit.iter().any(|a| !a.passed()) {
                    manifest.status = RunStatus::AuditFailed;
                }
            }
            manifest.finished_at = now();
            write(&manifest)?;
            if manifest.status == RunStatus::AuditFailed {
                return Err(PipelineError::Cache("cache audit found mismatches".into()));
            }
            Ok((manifest, out))
        }
        Err((stage, e)) => {
            log::error!("stage {stage} failed: {e}");
            manifest.status = if manifest.stages.is_empty() { RunStatus::Failed } else { RunStatus::Partial };
            manifest.error =
                Some(FailureRecord { stage, kind: e.kind().into(), exit_code: e.exit_code(), message: e.to_string() });
            manifest.finished_at = now();
            write(&manifest)?;
            Err(e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn audit_sample_rounds_up() {
        assert_eq!(audit_sample_size(0, 0.05), 0);
        assert_eq!(audit_sample_size(1, 0.05), 1);
        assert_eq!(audit_sample_size(6, 0.05), 1);
        assert_eq!(audit_sample_size(40, 0.05), 2);
        assert_eq!(audit_sample_size(3, 1.0), 3);
    }

    #[test]
    fn targets_pull_in_upstream_stages() {
        assert!(Target::Cluster.needs("baseline"));
        assert!(!Target::Cluster.needs("detect"));
        assert!(Target::Report.needs("cluster") && Target::Report.needs("detect"));
        assert!(!Target::Report.needs("sweep"));
        assert!(!Target::Ingest.needs("baseline"));
        assert!(Target::All.needs("sweep"));
    }
}
