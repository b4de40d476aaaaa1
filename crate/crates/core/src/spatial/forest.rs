use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::{Assignment, ClusterId, WeightedEdge, WeightedGraph};
use crate::TerminalId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestEdge {
    pub a: TerminalId,
    pub b: TerminalId,
    pub distance_m: f64,
    pub rho: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    weight: f64,
    a: usize,
    b: usize,
    edge: usize,
    to: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.weight
            .total_cmp(&other.weight)
            .then(self.a.cmp(&other.a))
            .then(self.b.cmp(&other.b))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Prim's algorithm on every component of an `n`-node graph.
///
/// Returns indices into `edges`. Equal weights go to the smaller
/// `(min, max)` node pair; components are grown from their lowest node.
pub fn prim_edge_indices(n: usize, edges: &[WeightedEdge]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, e) in edges.iter().enumerate() {
        if e.a != e.b {
            adj[e.a].push(i);
            adj[e.b].push(i);
        }
    }
    let mut visited = vec![false; n];
    let mut chosen = Vec::with_capacity(n.saturating_sub(1));
    let mut heap = BinaryHeap::new();
    let push_from = |v: usize, visited: &[bool], heap: &mut BinaryHeap<Reverse<Candidate>>| {
        for &i in &adj[v] {
            let e = &edges[i];
            let to = if e.a == v { e.b } else { e.a };
            if !visited[to] {
                heap.push(Reverse(Candidate { weight: e.weight, a: e.a.min(e.b), b: e.a.max(e.b), edge: i, to }));
            }
        }
    };
    for start in 0..n {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        push_from(start, &visited, &mut heap);
        while let Some(Reverse(c)) = heap.pop() {
            if visited[c.to] {
                continue;
            }
            visited[c.to] = true;
            chosen.push(c.edge);
            push_from(c.to, &visited, &mut heap);
        }
    }
    chosen
}

/// Minimum spanning forest of the weighted permission graph.
pub fn prim_forest(graph: &WeightedGraph) -> Vec<ForestEdge> {
    let nodes = &graph.geo.nodes;
    prim_edge_indices(nodes.len(), &graph.edges)
        .into_iter()
        .map(|i| {
            let e = &graph.edges[i];
            ForestEdge {
                a: nodes[e.a.min(e.b)].id.clone(),
                b: nodes[e.a.max(e.b)].id.clone(),
                distance_m: e.distance_m,
                rho: e.rho,
                weight: e.weight,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub forest: Vec<ForestEdge>,
    pub rho_threshold: f64,
    pub assignment: Assignment,
    pub sizes: BTreeMap<ClusterId, usize>,
}

impl ClusterModel {
    pub fn cluster_count(&self) -> usize {
        self.sizes.len()
    }

    /// Weight above which forest edges are cut.
    pub fn weight_cut(&self) -> f64 {
        1.0 - self.rho_threshold
    }

    pub fn retained_edges(&self) -> impl Iterator<Item = &ForestEdge> {
        let cut = self.weight_cut();
        self.forest.iter().filter(move |e| e.weight <= cut)
    }

    /// Members of every cluster, in terminal ID order.
    pub fn members(&self) -> BTreeMap<ClusterId, Vec<TerminalId>> {
        let mut out: BTreeMap<ClusterId, Vec<TerminalId>> = BTreeMap::new();
        for (t, c) in &self.assignment {
            out.entry(c.clone()).or_default().push(t.clone());
        }
        out
    }

    pub fn cluster_of(&self, terminal: &TerminalId) -> Option<&ClusterId> {
        self.assignment.get(terminal)
    }

    pub fn sizes_vec(&self) -> Vec<usize> {
        self.sizes.values().copied().collect()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Removes forest edges with weight above `1 - rho_threshold` and labels
/// each remaining component by its smallest terminal ID.
pub fn cut_clusters(nodes: &[TerminalId], forest: &[ForestEdge], rho_threshold: f64) -> ClusterModel {
    let mut sorted: Vec<TerminalId> = nodes.to_vec();
    sorted.sort();
    sorted.dedup();
    let index: BTreeMap<&TerminalId, usize> = sorted.iter().enumerate().map(|(i, t)| (t, i)).collect();
    let mut parent: Vec<usize> = (0..sorted.len()).collect();
    let cut = 1.0 - rho_threshold;
    for e in forest.iter().filter(|e| e.weight <= cut) {
        let (Some(&ia), Some(&ib)) = (index.get(&e.a), index.get(&e.b)) else { continue };
        let (ra, rb) = (find(&mut parent, ia), find(&mut parent, ib));
        if ra != rb {
            // Keep the smaller index as root so it names the cluster.
            let (lo, hi) = (ra.min(rb), ra.max(rb));
            parent[hi] = lo;
        }
    }
    let mut assignment = Assignment::new();
    let mut sizes = BTreeMap::new();
    for (i, t) in sorted.iter().enumerate() {
        let root = find(&mut parent, i);
        let cid = ClusterId(sorted[root].clone());
        *sizes.entry(cid.clone()).or_insert(0) += 1;
        assignment.insert(t.clone(), cid);
    }
    ClusterModel { forest: forest.to_vec(), rho_threshold, assignment, sizes }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn edge(a: usize, b: usize, w: f64) -> WeightedEdge {
        WeightedEdge { a, b, distance_m: 0.0, rho: 1.0 - w, weight: w }
    }

    fn fe(a: u32, b: u32, w: f64) -> ForestEdge {
        ForestEdge { a: a.into(), b: b.into(), distance_m: 0.0, rho: 1.0 - w, weight: w }
    }

    fn ids(n: u32) -> Vec<TerminalId> {
        (1..=n).map(TerminalId::from).collect()
    }

    fn components(n: usize, edges: &[WeightedEdge]) -> usize {
        let mut parent: Vec<usize> = (0..n).collect();
        let mut k = n;
        for e in edges {
            let (a, b) = (find(&mut parent, e.a), find(&mut parent, e.b));
            if a != b {
                parent[a] = b;
                k -= 1;
            }
        }
        k
    }

    /// Minimum total weight over every acyclic edge subset of maximal size.
    fn enumerate_min_forest(n: usize, edges: &[WeightedEdge]) -> f64 {
        let target = n - components(n, edges);
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << edges.len()) {
            if mask.count_ones() as usize != target {
                continue;
            }
            let subset: Vec<WeightedEdge> =
                (0..edges.len()).filter(|i| mask >> i & 1 == 1).map(|i| edges[i].clone()).collect();
            if components(n, &subset) == n - target {
                best = best.min(subset.iter().map(|e| e.weight).sum());
            }
        }
        if target == 0 {
            0.0
        } else {
            best
        }
    }

    fn kruskal_weight(n: usize, edges: &[WeightedEdge]) -> f64 {
        let mut sorted = edges.to_vec();
        sorted.sort_by(|x, y| x.weight.total_cmp(&y.weight));
        let mut parent: Vec<usize> = (0..n).collect();
        let mut total = 0.0;
        for e in sorted {
            let (a, b) = (find(&mut parent, e.a), find(&mut parent, e.b));
            if a != b {
                parent[a] = b;
                total += e.weight;
            }
        }
        total
    }

    #[test]
    fn triangle_picks_two_lightest() {
        let edges = [edge(0, 1, 1.0), edge(1, 2, 2.0), edge(0, 2, 3.0)];
        let mut chosen = prim_edge_indices(3, &edges);
        chosen.sort();
        assert_eq!(chosen, vec![0, 1]);
    }

    #[test]
    fn single_node_and_two_pairs() {
        assert!(prim_edge_indices(1, &[]).is_empty());
        let edges = [edge(0, 1, 0.5), edge(2, 3, 0.7)];
        assert_eq!(prim_edge_indices(4, &edges).len(), 2);
    }

    #[test]
    fn equal_weights_prefer_smaller_pair() {
        // Square with all weights equal: the first three pairs in ID order
        // reachable from node 0 are chosen.
        let edges = [edge(2, 3, 1.0), edge(0, 3, 1.0), edge(1, 2, 1.0), edge(0, 1, 1.0)];
        let mut chosen: Vec<(usize, usize)> =
            prim_edge_indices(4, &edges).into_iter().map(|i| (edges[i].a, edges[i].b)).collect();
        chosen.sort();
        assert_eq!(chosen, vec![(0, 1), (0, 3), (1, 2)]);
    }

    #[test]
    fn chain_cut_at_threshold() {
        let forest = [fe(1, 2, 0.5), fe(2, 3, 0.95)];
        let m = cut_clusters(&ids(3), &forest, 0.1);
        assert_eq!(m.cluster_count(), 2);
        let members = m.members();
        assert_eq!(members[&ClusterId(1u32.into())], ids(2));
        assert_eq!(members[&ClusterId(3u32.into())], vec![TerminalId::from(3u32)]);
    }

    #[test]
    fn extreme_thresholds() {
        let forest = [fe(1, 2, 1.57), fe(2, 3, 0.2), fe(3, 4, 0.0)];
        assert_eq!(cut_clusters(&ids(4), &forest, -1.0).cluster_count(), 1);
        let all = cut_clusters(&ids(4), &[fe(1, 2, 0.2), fe(2, 3, 0.1)], 1.0);
        // rho = 1 exactly would survive; none of these reach it.
        assert_eq!(all.cluster_count(), 4);
        assert!(all.sizes.values().all(|s| *s == 1));
    }

    #[test]
    fn cluster_named_by_smallest_member() {
        let forest = [fe(7, 12, 0.1), fe(3, 12, 0.1)];
        let nodes: Vec<TerminalId> = [12u32, 7, 3].into_iter().map(TerminalId::from).collect();
        let m = cut_clusters(&nodes, &forest, 0.0);
        assert!(m.assignment.values().all(|c| *c == ClusterId(3u32.into())));
        assert_eq!(m.sizes[&ClusterId(3u32.into())], 3);
    }

    fn graph_strategy(max_nodes: usize) -> impl Strategy<Value = (usize, Vec<WeightedEdge>)> {
        (1..=max_nodes).prop_flat_map(|n| {
            let pairs: Vec<(usize, usize)> = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
            let m = pairs.len();
            (Just(n), Just(pairs), proptest::collection::vec(proptest::option::of(0u8..9), m))
        })
        .prop_map(|(n, pairs, ws)| {
            let edges = pairs
                .into_iter()
                .zip(ws)
                .filter_map(|((a, b), w)| w.map(|w| edge(a, b, w as f64 * 0.25)))
                .collect();
            (n, edges)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn prim_matches_enumeration((n, edges) in graph_strategy(7)) {
            prop_assume!(edges.len() <= 16);
            let chosen = prim_edge_indices(n, &edges);
            let total: f64 = chosen.iter().map(|&i| edges[i].weight).sum();
            prop_assert_eq!(chosen.len(), n - components(n, &edges));
            prop_assert_eq!(total, enumerate_min_forest(n, &edges));
        }

        #[test]
        fn prim_matches_kruskal((n, edges) in graph_strategy(10)) {
            let chosen = prim_edge_indices(n, &edges);
            let total: f64 = chosen.iter().map(|&i| edges[i].weight).sum();
            prop_assert_eq!(total, kruskal_weight(n, &edges));
            let picked: Vec<WeightedEdge> = chosen.iter().map(|&i| edges[i].clone()).collect();
            prop_assert_eq!(components(n, &picked), components(n, &edges));
        }

        #[test]
        fn clusters_refine_as_threshold_rises(
            ws in proptest::collection::vec(0.0f64..2.0, 1..12),
            t1 in -1.0f64..1.0,
            t2 in -1.0f64..1.0,
        ) {
            let n = ws.len() as u32 + 1;
            let forest: Vec<ForestEdge> = ws.iter().enumerate().map(|(i, w)| fe(i as u32 + 1, i as u32 + 2, *w)).collect();
            let (lo, hi) = (t1.min(t2), t1.max(t2));
            let coarse = cut_clusters(&ids(n), &forest, lo);
            let fine = cut_clusters(&ids(n), &forest, hi);
            prop_assert!(fine.cluster_count() >= coarse.cluster_count());
            for (t, c) in &fine.assignment {
                for (u, d) in &fine.assignment {
                    if c == d {
                        prop_assert_eq!(&coarse.assignment[t], &coarse.assignment[u]);
                    }
                }
            }
        }

        #[test]
        fn relabeling_preserves_partition(
            ws in proptest::collection::vec(0.0f64..2.0, 1..10),
            rho in -1.0f64..1.0,
            offset in 1u32..1000,
        ) {
            let n = ws.len() as u32 + 1;
            let forest: Vec<ForestEdge> = ws.iter().enumerate().map(|(i, w)| fe(i as u32 + 1, i as u32 + 2, *w)).collect();
            // Reverse the ID order and shift.
            let relabel = |x: u32| offset + (n - x);
            let renamed: Vec<ForestEdge> = forest.iter().map(|e| {
                let a: u32 = e.a.as_str().parse().unwrap();
                let b: u32 = e.b.as_str().parse().unwrap();
                fe(relabel(a), relabel(b), e.weight)
            }).collect();
            let nodes2: Vec<TerminalId> = (1..=n).map(|x| TerminalId::from(relabel(x))).collect();
            let m1 = cut_clusters(&ids(n), &forest, rho);
            let m2 = cut_clusters(&nodes2, &renamed, rho);
            for x in 1..=n {
                for y in 1..=n {
                    let same1 = m1.assignment[&TerminalId::from(x)] == m1.assignment[&TerminalId::from(y)];
                    let same2 = m2.assignment[&TerminalId::from(relabel(x))] == m2.assignment[&TerminalId::from(relabel(y))];
                    prop_assert_eq!(same1, same2);
                }
            }
        }
    }
}
