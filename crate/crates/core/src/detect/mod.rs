//! Functional depth outlier detection.
//!
//! Each (terminal, partition) pool of residual curves gets a depth per day and
//! a bootstrap threshold `C`. Depths are normalised to `z = (C - d) / C` and
//! summed over the positive values of a cluster's members to give the
//! cluster exceedance `z_n`.

mod depth;
mod exceedance;
mod score;
mod threshold;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use depth::{fraiman_muniz_depth, functional_depth, h_modal_depth, DepthMethod, DEFAULT_BANDWIDTH_QUANTILE};
pub use exceedance::{
    classify_direction, cluster_exceedance, cluster_exceedances, ClusterDayExceedance, Direction,
};
pub use score::{pool_seed, score_terminal, DepthRecord, PoolSummary};
pub use threshold::{bootstrap_threshold, normalize_depth, BootstrapConfig};

#[derive(Debug, Error, PartialEq)]
pub enum DetectError {
    #[error("pool of {size} curves is below the minimum of {min}")]
    PoolTooSmall { size: usize, min: usize },
    #[error("pool curves are all zero")]
    AllZeroPool,
    #[error("threshold must be positive, got {0}")]
    InvalidThreshold(f64),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Reason a day could not be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolStatus {
    Scored,
    InsufficientData,
}
