//! Pick-up versus drop-off comparison.
//!
//! Clusterings built from pick-up and drop-off residuals are compared by
//! NMI at each swept threshold. Severity series of the two event kinds are
//! compared by cosine similarity on the clusters of the main run.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use bikedepth_core::detect::cluster_exceedances;
use bikedepth_core::ingest::CurveKind;
use bikedepth_core::severity::{cosine_similarity, fit_cluster_models, score_severities, severity_series};
use bikedepth_core::spatial::{cluster_terminals, nmi, ClusterId, ClusterParams};
use bikedepth_core::terminal::Terminal;
use bikedepth_core::TerminalId;
use serde::{Deserialize, Serialize};

use crate::cache::KeyBuilder;
use crate::config::PipelineConfig;
use crate::error::{PipelineError, Result};
use crate::run::{run_pipeline, RunOptions, Target};
use crate::stages::{
    dates_in, run_stage, BaselineOutput, BaselineStage, ClusterOutput, DetectOutput, DetectStage, IngestOutput,
    StageDef, StageRun,
};
use crate::tables;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmiRow {
    pub rho_threshold: f64,
    pub clusters_pickup: usize,
    pub clusters_dropoff: usize,
    pub nmi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineRow {
    pub cluster: ClusterId,
    pub size: usize,
    pub cosine: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutput {
    pub nmi: Vec<NmiRow>,
    pub cosine: Vec<CosineRow>,
}

pub struct KindRuns<'a> {
    pub baseline: &'a StageRun<BaselineOutput>,
    pub detect: &'a StageRun<DetectOutput>,
}

pub struct CompareStage<'a> {
    pub cfg: &'a PipelineConfig,
    pub ingest: &'a StageRun<IngestOutput>,
    pub cluster: &'a StageRun<ClusterOutput>,
    pub pickup: KindRuns<'a>,
    pub dropoff: KindRuns<'a>,
}

impl CompareStage<'_> {
    fn nmi_rows(&self) -> Result<Vec<NmiRow>> {
        let fitted = |b: &BaselineOutput| b.terminals().into_iter().collect::<BTreeSet<TerminalId>>();
        let (fp, fd) = (fitted(&self.pickup.baseline.value), fitted(&self.dropoff.baseline.value));
        let terminals: Vec<Terminal> = self
            .ingest
            .value
            .located()
            .into_iter()
            .filter(|t| fp.contains(&t.id) && fd.contains(&t.id))
            .collect();
        let mut pick = self.pickup.baseline.value.correlation_cache();
        let mut drop = self.dropoff.baseline.value.correlation_cache();
        let base = self.cfg.cluster.params();
        let mut rows = Vec::new();
        for &rho in &self.cfg.sweep.rho_threshold {
            let params = ClusterParams { rho_threshold: rho, graph: base.graph };
            let (_, mp) = cluster_terminals(&terminals, &mut pick, params)?;
            let (_, md) = cluster_terminals(&terminals, &mut drop, params)?;
            rows.push(NmiRow {
                rho_threshold: rho,
                clusters_pickup: mp.cluster_count(),
                clusters_dropoff: md.cluster_count(),
                nmi: nmi(&mp.assignment, &md.assignment)?,
            });
        }
        Ok(rows)
    }

    fn cosine_rows(&self) -> Vec<CosineRow> {
        let model = &self.cluster.value.model;
        let dates = dates_in(self.ingest.value.range());
        let series = |k: &KindRuns| {
            let ex = cluster_exceedances(model, &k.detect.value.records, &k.baseline.value.residuals);
            let (models, _) = fit_cluster_models(&ex);
            let sev = score_severities(&ex, &models);
            let fitted: BTreeSet<ClusterId> = models.into_keys().collect();
            (sev, fitted)
        };
        let (sp, fp) = series(&self.pickup);
        let (sd, fd) = series(&self.dropoff);
        let members: BTreeMap<ClusterId, Vec<TerminalId>> = model.members();
        members
            .iter()
            .map(|(cid, ms)| {
                let (cosine, note) = if !fp.contains(cid) || !fd.contains(cid) {
                    (None, "severity unavailable".to_string())
                } else {
                    let u = severity_series(&sp, cid, &dates);
                    let v = severity_series(&sd, cid, &dates);
                    match cosine_similarity(&u, &v) {
                        Ok(c) => (Some(c), String::new()),
                        Err(e) => (None, e.to_string()),
                    }
                };
                CosineRow { cluster: cid.clone(), size: ms.len(), cosine, note }
            })
            .collect()
    }
}

impl StageDef for CompareStage<'_> {
    type Output = CompareOutput;

    fn name(&self) -> &'static str {
        "compare"
    }

    fn key(&self) -> Result<String> {
        Ok(KeyBuilder::new("compare")
            .value("cluster", &self.cluster.key)
            .value("pickup", &(&self.pickup.baseline.key, &self.pickup.detect.key))
            .value("dropoff", &(&self.dropoff.baseline.key, &self.dropoff.detect.key))
            .value("rho", &self.cfg.sweep.rho_threshold)
            .value("graph", &self.cfg.cluster.params().graph)
            .finish())
    }

    fn compute(&self, dir: &Path) -> Result<(CompareOutput, Vec<String>)> {
        let out = CompareOutput { nmi: self.nmi_rows()?, cosine: self.cosine_rows() };
        tables::write_rows(&dir.join("compare_nmi.csv"), &out.nmi)?;
        tables::write_rows(&dir.join("compare_cosine.csv"), &out.cosine)?;
        let warnings = out
            .cosine
            .iter()
            .filter(|r| r.cosine.is_none())
            .map(|r| format!("cluster {}: no cosine ({})", r.cluster, r.note))
            .collect();
        Ok((out, warnings))
    }

    fn load(&self, dir: &Path) -> Result<CompareOutput> {
        Ok(CompareOutput {
            nmi: tables::read_rows(&dir.join("compare_nmi.csv"))?,
            cosine: tables::read_rows(&dir.join("compare_cosine.csv"))?,
        })
    }
}

/// Runs the main pipeline up to clustering, the pick-up and drop-off
/// baselines and detections, and the comparison.
pub fn run_compare(cfg: &PipelineConfig) -> Result<StageRun<CompareOutput>> {
    let (_, out) = run_pipeline(cfg, &RunOptions { target: Target::Cluster, audit: false })?;
    let cluster = out.cluster.as_ref().ok_or_else(|| PipelineError::Data("clustering did not run".into()))?;
    let cache = crate::cache::Cache::new(&cfg.output_dir());
    let kind_runs = |kind: CurveKind| -> Result<(StageRun<BaselineOutput>, StageRun<DetectOutput>)> {
        let baseline = run_stage(&cache, &BaselineStage { cfg, ingest: &out.ingest, kind })?;
        let detect = run_stage(&cache, &DetectStage { cfg, baseline: &baseline })?;
        Ok((baseline, detect))
    };
    let (pb, pd) = kind_runs(CurveKind::Pickup)?;
    let (db, dd) = kind_runs(CurveKind::Dropoff)?;
    run_stage(
        &cache,
        &CompareStage {
            cfg,
            ingest: &out.ingest,
            cluster,
            pickup: KindRuns { baseline: &pb, detect: &pd },
            dropoff: KindRuns { baseline: &db, detect: &dd },
        },
    )
}
