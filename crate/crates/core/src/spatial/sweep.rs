use serde::{Deserialize, Serialize};

use super::{
    build_geo_graph, cut_clusters, prim_forest, sdcs, ClusterModel, ClusterParams, CorrelationCache, GraphParams,
    SpatialError, WeightedGraph,
};
use crate::terminal::Terminal;
use crate::TerminalId;

/// Builds the weighted graph for `graph` parameters using cached
/// correlations.
pub fn weighted_graph(
    terminals: &[Terminal],
    cache: &mut CorrelationCache,
    graph: GraphParams,
) -> Result<WeightedGraph, SpatialError> {
    let geo = build_geo_graph(terminals, graph)?;
    let pairs: Vec<(TerminalId, TerminalId)> =
        geo.edges.iter().map(|e| (geo.nodes[e.a].id.clone(), geo.nodes[e.b].id.clone())).collect();
    cache.ensure(&pairs);
    let ids: Vec<TerminalId> = geo.nodes.iter().map(|t| t.id.clone()).collect();
    Ok(WeightedGraph::from_correlations(geo, |a, b| cache.get(&ids[a], &ids[b]).map(|s| s.rho)))
}

/// Full clustering for one parameter set.
pub fn cluster_terminals(
    terminals: &[Terminal],
    cache: &mut CorrelationCache,
    params: ClusterParams,
) -> Result<(WeightedGraph, ClusterModel), SpatialError> {
    params.validate()?;
    let graph = weighted_graph(terminals, cache, params.graph)?;
    let forest = prim_forest(&graph);
    let ids: Vec<TerminalId> = graph.geo.nodes.iter().map(|t| t.id.clone()).collect();
    let model = cut_clusters(&ids, &forest, params.rho_threshold);
    Ok((graph, model))
}

/// Values for each swept parameter; rows cover the full product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub rho_threshold: Vec<f64>,
    pub radius_m: Vec<f64>,
    pub d_inner_m: Vec<f64>,
    pub d_outer_m: Vec<f64>,
}

impl SweepGrid {
    /// Grid holding only `params`.
    pub fn single(params: ClusterParams) -> Self {
        SweepGrid {
            rho_threshold: vec![params.rho_threshold],
            radius_m: vec![params.graph.radius_m],
            d_inner_m: vec![params.graph.d_inner_m],
            d_outer_m: vec![params.graph.d_outer_m],
        }
    }

    pub fn len(&self) -> usize {
        self.rho_threshold.len() * self.radius_m.len() * self.d_inner_m.len() * self.d_outer_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    #[serde(flatten)]
    pub params: ClusterParams,
    pub clusters: usize,
    /// Absent when there is a single cluster.
    pub sdcs: Option<f64>,
}

/// Number of clusters and SDCS for every grid point. The forest is built
/// once per graph setting and cut for each threshold.
pub fn sweep_parameters(
    terminals: &[Terminal],
    cache: &mut CorrelationCache,
    grid: &SweepGrid,
) -> Result<Vec<SweepRow>, SpatialError> {
    if grid.is_empty() {
        return Err(SpatialError::InvalidParameter("empty sweep grid".into()));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &radius_m in &grid.radius_m {
        for &d_inner_m in &grid.d_inner_m {
            for &d_outer_m in &grid.d_outer_m {
                let graph_params = GraphParams { radius_m, d_inner_m, d_outer_m };
                let graph = weighted_graph(terminals, cache, graph_params)?;
                let forest = prim_forest(&graph);
                let ids: Vec<TerminalId> = graph.geo.nodes.iter().map(|t| t.id.clone()).collect();
                for &rho_threshold in &grid.rho_threshold {
                    let params = ClusterParams { rho_threshold, graph: graph_params };
                    params.validate()?;
                    let model = cut_clusters(&ids, &forest, rho_threshold);
                    rows.push(SweepRow {
                        params,
                        clusters: model.cluster_count(),
                        sdcs: sdcs(&model.sizes_vec()).ok(),
                    });
                }
            }
        }
    }
    Ok(rows)
}
