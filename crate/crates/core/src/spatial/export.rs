use std::io::Write;

use serde_json::{json, Value};

use super::{ClusterModel, WeightedGraph};

/// GeoJSON feature collection: one point per terminal, one line string per
/// retained forest edge.
pub fn cluster_geojson(graph: &WeightedGraph, model: &ClusterModel) -> Value {
    let mut features = Vec::new();
    for (t, inner) in graph.geo.nodes.iter().zip(&graph.geo.inner) {
        let cluster = model.cluster_of(&t.id);
        let size = cluster.and_then(|c| model.sizes.get(c)).copied().unwrap_or(0);
        features.push(json!({
            "type": "Feature",
            "geometry": { "type": "Point", "coordinates": [t.longitude, t.latitude] },
            "properties": {
                "kind": "terminal",
                "terminal": t.id,
                "cluster": cluster,
                "cluster_size": size,
                "inner": inner,
            }
        }));
    }
    for e in model.retained_edges() {
        let (Some(ia), Some(ib)) = (graph.geo.index_of(&e.a), graph.geo.index_of(&e.b)) else { continue };
        let (a, b) = (&graph.geo.nodes[ia], &graph.geo.nodes[ib]);
        features.push(json!({
            "type": "Feature",
            "geometry": {
                "type": "LineString",
                "coordinates": [[a.longitude, a.latitude], [b.longitude, b.latitude]],
            },
            "properties": {
                "kind": "edge",
                "a": e.a,
                "b": e.b,
                "rho": e.rho,
                "weight": e.weight,
                "distance_m": e.distance_m,
                "cluster": model.cluster_of(&e.a),
            }
        }));
    }
    json!({
        "type": "FeatureCollection",
        "features": features,
        "properties": {
            "rho_threshold": model.rho_threshold,
            "radius_m": graph.geo.params.radius_m,
            "d_inner_m": graph.geo.params.d_inner_m,
            "d_outer_m": graph.geo.params.d_outer_m,
            "center": [graph.geo.center.1, graph.geo.center.0],
            "clusters": model.cluster_count(),
        }
    })
}

/// Flat `terminal,latitude,longitude,cluster,cluster_size` table.
pub fn write_cluster_table<W: Write>(out: W, graph: &WeightedGraph, model: &ClusterModel) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["terminal", "latitude", "longitude", "cluster", "cluster_size"])?;
    for t in &graph.geo.nodes {
        let Some(c) = model.cluster_of(&t.id) else { continue };
        w.write_record([
            t.id.to_string(),
            t.latitude.to_string(),
            t.longitude.to_string(),
            c.to_string(),
            model.sizes[c].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{build_geo_graph, cut_clusters, prim_forest, GraphParams};
    use crate::terminal::Terminal;
    use crate::TerminalId;

    fn fixture() -> (WeightedGraph, ClusterModel) {
        let terminals: Vec<Terminal> = [(1u32, 38.900), (2, 38.901), (3, 38.902), (4, 38.950)]
            .into_iter()
            .map(|(id, lat)| Terminal { id: id.into(), latitude: lat, longitude: -77.0, first_active_date: None })
            .collect();
        let geo = build_geo_graph(&terminals, GraphParams::default()).unwrap();
        let graph = WeightedGraph::from_correlations(geo, |a, b| Some(if a + b == 1 { 0.9 } else { -0.2 }));
        let ids: Vec<TerminalId> = graph.geo.nodes.iter().map(|t| t.id.clone()).collect();
        let model = cut_clusters(&ids, &prim_forest(&graph), 0.15);
        (graph, model)
    }

    #[test]
    fn geojson_has_nodes_and_retained_edges() {
        let (graph, model) = fixture();
        let v = cluster_geojson(&graph, &model);
        let features = v["features"].as_array().unwrap();
        let points = features.iter().filter(|f| f["geometry"]["type"] == "Point").count();
        let lines: Vec<&Value> = features.iter().filter(|f| f["geometry"]["type"] == "LineString").collect();
        assert_eq!(points, 4);
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0]["properties"]["a"], "1");
        assert_eq!(lines[0]["properties"]["b"], "2");
        assert_eq!(features[2]["properties"]["cluster"], "3");
        assert_eq!(v["properties"]["clusters"], 3);
    }

    #[test]
    fn table_lists_every_terminal() {
        let (graph, model) = fixture();
        let mut buf = Vec::new();
        write_cluster_table(&mut buf, &graph, &model).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "terminal,latitude,longitude,cluster,cluster_size");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("2,38.901,-77,1,2"));
    }
}
