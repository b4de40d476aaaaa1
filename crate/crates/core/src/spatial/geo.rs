use serde::{Deserialize, Serialize};

use super::{GraphParams, SpatialError};
use crate::curve::median;
use crate::terminal::Terminal;

pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Great-circle distance between two (lat, lon) points in degrees.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Componentwise median of terminal coordinates.
pub fn median_center(terminals: &[Terminal]) -> Option<(f64, f64)> {
    let lats: Vec<f64> = terminals.iter().map(|t| t.latitude).collect();
    let lons: Vec<f64> = terminals.iter().map(|t| t.longitude).collect();
    Some((median(&lats)?, median(&lons)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoEdge {
    /// Node indices, `a < b`.
    pub a: usize,
    pub b: usize,
    pub distance_m: f64,
}

/// Geographic permission graph. Nodes are sorted by terminal ID, so node
/// index order is terminal ID order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoGraph {
    pub nodes: Vec<Terminal>,
    pub edges: Vec<GeoEdge>,
    pub params: GraphParams,
    pub center: (f64, f64),
    /// Whether each node lies within `radius_m` of the centre.
    pub inner: Vec<bool>,
}

impl GeoGraph {
    pub fn index_of(&self, id: &crate::TerminalId) -> Option<usize> {
        self.nodes.binary_search_by(|t| t.id.cmp(id)).ok()
    }

    pub fn distance_to_center(&self, lat: f64, lon: f64) -> f64 {
        haversine_m(self.center.0, self.center.1, lat, lon)
    }
}

/// Connect `i` and `j` when both lie inside the radius and are closer than
/// `d_inner_m`, or when at least one lies outside and they are closer than
/// `d_outer_m`. Distances are strict.
pub fn build_geo_graph(terminals: &[Terminal], params: GraphParams) -> Result<GeoGraph, SpatialError> {
    params.validate()?;
    let mut nodes: Vec<Terminal> = terminals.iter().filter(|t| t.has_valid_coordinates()).cloned().collect();
    if nodes.is_empty() {
        return Err(SpatialError::NoTerminals);
    }
    nodes.sort_by(|a, b| a.id.cmp(&b.id));
    nodes.dedup_by(|a, b| a.id == b.id);
    let center = median_center(&nodes).ok_or(SpatialError::NoTerminals)?;
    let inner: Vec<bool> = nodes
        .iter()
        .map(|t| haversine_m(center.0, center.1, t.latitude, t.longitude) <= params.radius_m)
        .collect();

    let mut edges = Vec::new();
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let d = haversine_m(nodes[a].latitude, nodes[a].longitude, nodes[b].latitude, nodes[b].longitude);
            let limit = if inner[a] && inner[b] { params.d_inner_m } else { params.d_outer_m };
            if d < limit {
                edges.push(GeoEdge { a, b, distance_m: d });
            }
        }
    }
    Ok(GeoGraph { nodes, edges, params, center, inner })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedEdge {
    pub a: usize,
    pub b: usize,
    pub distance_m: f64,
    pub rho: f64,
    /// `1 - rho`, in `[0, 2]`.
    pub weight: f64,
}

/// The permission graph with correlation weights. Edges whose correlation
/// is undefined are left out and counted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub geo: GeoGraph,
    pub edges: Vec<WeightedEdge>,
    pub omitted_edges: usize,
}

impl WeightedGraph {
    pub fn from_correlations(geo: GeoGraph, mut rho: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut edges = Vec::with_capacity(geo.edges.len());
        let mut omitted_edges = 0;
        for e in &geo.edges {
            match rho(e.a, e.b) {
                Some(r) => {
                    let r = r.clamp(-1.0, 1.0);
                    edges.push(WeightedEdge { a: e.a, b: e.b, distance_m: e.distance_m, rho: r, weight: 1.0 - r });
                }
                None => omitted_edges += 1,
            }
        }
        if omitted_edges > 0 {
            log::warn!("{omitted_edges} graph edges omitted: correlation undefined");
        }
        WeightedGraph { geo, edges, omitted_edges }
    }

    pub fn node_count(&self) -> usize {
        self.geo.nodes.len()
    }
}
