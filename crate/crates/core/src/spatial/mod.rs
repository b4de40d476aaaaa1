//! Spatial clustering of terminals.
//!
//! A geographic permission graph limits which terminals may share a cluster.
//! Its edges are weighted by `1 - rho`, with `rho` the average dynamical
//! correlation of the two terminals' daily curves; the minimum spanning
//! forest of that graph is then cut at a correlation threshold.

mod correlation;
mod export;
mod forest;
mod geo;
mod metrics;
mod sweep;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::TerminalId;

pub use correlation::{dynamical_correlation, CorrelationCache, CorrelationSummary, PreparedCurves};
pub use export::{cluster_geojson, write_cluster_table};
pub use forest::{cut_clusters, prim_edge_indices, prim_forest, ClusterModel, ForestEdge};
pub use geo::{build_geo_graph, haversine_m, median_center, GeoEdge, GeoGraph, WeightedEdge, WeightedGraph, EARTH_RADIUS_M};
pub use metrics::{nmi, sdcs};
pub use sweep::{cluster_terminals, sweep_parameters, weighted_graph, SweepGrid, SweepRow};

#[derive(Debug, Error, PartialEq)]
pub enum SpatialError {
    #[error("no terminals with valid coordinates")]
    NoTerminals,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no shared days with non-constant curves")]
    NoSharedDays,
    #[error("clusterings cover different node sets")]
    NodeSetMismatch,
    #[error("statistic undefined for a single cluster")]
    SingleCluster,
}

/// Distance rules of the permission graph, in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    /// Radius of the dense inner area around the median centre.
    pub radius_m: f64,
    /// Maximum edge length when both terminals are inside the radius.
    pub d_inner_m: f64,
    /// Maximum edge length when at least one terminal is outside.
    pub d_outer_m: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        GraphParams { radius_m: 5000.0, d_inner_m: 500.0, d_outer_m: 1000.0 }
    }
}

impl GraphParams {
    pub fn validate(&self) -> Result<(), SpatialError> {
        for (name, v) in [("R", self.radius_m), ("D_inner", self.d_inner_m), ("D_outer", self.d_outer_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SpatialError::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn max_distance_m(&self) -> f64 {
        self.d_inner_m.max(self.d_outer_m)
    }
}

/// Graph rules plus the correlation cut.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterParams {
    pub rho_threshold: f64,
    #[serde(flatten)]
    pub graph: GraphParams,
}

impl Default for ClusterParams {
    fn default() -> Self {
        ClusterParams { rho_threshold: 0.15, graph: GraphParams::default() }
    }
}

impl ClusterParams {
    pub fn validate(&self) -> Result<(), SpatialError> {
        if !(-1.0..=1.0).contains(&self.rho_threshold) {
            return Err(SpatialError::InvalidParameter(format!(
                "rho threshold must lie in [-1, 1], got {}",
                self.rho_threshold
            )));
        }
        self.graph.validate()
    }
}

/// Cluster identifier: the smallest member terminal ID.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub TerminalId);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Terminal to cluster assignment.
pub type Assignment = BTreeMap<TerminalId, ClusterId>;
