mod common;

use nalgebra::DMatrix;
use pnp_consensus::graph::{Graph, PlugPlan};
use proptest::prelude::*;

fn laplacian(g: &Graph) -> DMatrix<f64> {
    let n = g.node_count();
    let mut l = DMatrix::zeros(n, n);
    for e in g.edges() {
        let (i, j) = (g.position(e.plus).unwrap(), g.position(e.minus).unwrap());
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
    }
    l
}

proptest! {
    #[test]
    fn incidence_gram_is_laplacian(g in common::connected_graph(8, 14)) {
        let d = g.incidence_f64();
        prop_assert_eq!(&d * d.transpose(), laplacian(&g));
        let ones = DMatrix::from_element(1, g.node_count(), 1.0);
        prop_assert!((ones * &d).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn degree_matches_incidence(g in common::connected_graph(8, 14)) {
        let d = g.incidence();
        for (row, &n) in g.nodes().iter().enumerate() {
            let nz = d.row(row).iter().filter(|&&v| v != 0).count();
            prop_assert_eq!(nz, g.degree(n));
        }
    }

    #[test]
    fn compose_then_decompose(a in common::connected_graph(5, 7), b in common::connected_graph(5, 7)) {
        let shift = 100;
        let nodes: Vec<u32> = b.nodes().iter().map(|n| n + shift).collect();
        let pairs: Vec<(u32, u32)> = b.edges().iter().map(|e| (e.plus + shift, e.minus + shift)).collect();
        let b = Graph::new(&nodes, &pairs).unwrap();
        let plan = PlugPlan::network(a.clone(), b.clone(), vec![(a.nodes()[0], b.nodes()[0])]).unwrap();
        let composed = plan.compose();
        prop_assert!(composed.is_connected());
        prop_assert_eq!(composed.edge_count(), a.edge_count() + b.edge_count() + 1);
        let (base, added) = plan.decompose(&composed);
        prop_assert_eq!(base, a);
        prop_assert_eq!(added, b);
    }
}
