#![allow(dead_code)]

use pnp_consensus::graph::{Graph, NodeId};
use proptest::prelude::*;

/// Connected graph on nodes `1..=n`: a random spanning tree plus extra edges,
/// at most `max_edges` in total.
pub fn connected_graph(max_nodes: usize, max_edges: usize) -> impl Strategy<Value = Graph> {
    (2..=max_nodes).prop_flat_map(move |n| {
        let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
        let extra = proptest::collection::vec((0..n, 0..n), 0..=max_edges.saturating_sub(n - 1));
        (parents, extra).prop_map(move |(parents, extra)| {
            let mut pairs: Vec<(NodeId, NodeId)> = parents
                .iter()
                .enumerate()
                .map(|(i, &p)| (p as NodeId + 1, i as NodeId + 2))
                .collect();
            for (a, b) in extra {
                let (a, b) = (a as NodeId + 1, b as NodeId + 1);
                if pairs.len() < max_edges
                    && a != b
                    && !pairs.iter().any(|&(x, y)| (x, y) == (a, b) || (x, y) == (b, a))
                {
                    pairs.push((a, b));
                }
            }
            let nodes: Vec<NodeId> = (1..=n as NodeId).collect();
            Graph::new(&nodes, &pairs).expect("valid by construction")
        })
    })
}
