//! Batch pipeline, artifact cache and HTTP service around `bikedepth-core`.
//!
//! Stages run in the order ingest, baseline, cluster, detect, report, with
//! an optional parameter sweep. Each stage's artifacts live under a cache
//! directory named by a hash of its inputs, so rerunning with a changed
//! clustering threshold reuses the regressions and depth thresholds.

pub mod cache;
pub mod cli;
pub mod compare;
pub mod config;
pub mod error;
pub mod fixture;
pub mod plot;
pub mod run;
pub mod service;
pub mod stages;
pub mod tables;

pub use config::PipelineConfig;
pub use error::{PipelineError, Result};
pub use run::{run_pipeline, RunManifest, RunOptions, Target};
