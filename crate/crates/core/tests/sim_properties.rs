use std::collections::BTreeMap;

use pnp_consensus::graph::{EdgeKey, Graph, NodeId};
use pnp_consensus::metrics::{disagreement, truncated_norm};
use pnp_consensus::passivity::{LtiSystem, SectorCoupling};
use pnp_consensus::scenario::ScenarioFile;
use pnp_consensus::sim::{
    run, InitialCondition, NodeSetup, NoiseConfig, NoiseKind, Scenario, SolverConfig, TrajectoryRecord,
};

fn node(num: &[f64], den: &[f64], y0: f64) -> NodeSetup {
    NodeSetup {
        system: LtiSystem::realize(num, den).unwrap(),
        initial: InitialCondition::Output(y0),
    }
}

fn couplings(g: &Graph, make: impl Fn() -> SectorCoupling) -> BTreeMap<EdgeKey, SectorCoupling> {
    g.edges().iter().map(|e| (e.key(), make())).collect()
}

fn solver(dt: f64, t_end: f64, sample_stride: usize) -> SolverConfig {
    SolverConfig {
        dt,
        t_end,
        sample_stride,
    }
}

fn mixed_network(y0: [f64; 3]) -> (BTreeMap<NodeId, NodeSetup>, Graph) {
    let g = Graph::new(&[1, 2, 3], &[(1, 2), (2, 3), (1, 3)]).unwrap();
    let nodes = BTreeMap::from([
        (1, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], y0[0])),
        (2, node(&[1.0, 0.9], &[1.0, 0.65, 0.0], y0[1])),
        (3, node(&[1.0], &[1.0, 0.0], y0[2])),
    ]);
    (nodes, g)
}

#[test]
fn path_of_integrators_reaches_consensus() {
    let g = Graph::new(&[1, 2, 3], &[(1, 2), (2, 3)]).unwrap();
    let nodes = BTreeMap::from([
        (1, node(&[1.0], &[1.0, 0.0], 1.0)),
        (2, node(&[1.0], &[1.0, 0.0], -2.0)),
        (3, node(&[1.0], &[1.0, 0.0], 0.5)),
    ]);
    let sc = Scenario::new(
        nodes,
        couplings(&g, || SectorCoupling::linear(1.0).unwrap()),
        g.clone(),
        vec![],
        NoiseConfig::none(),
        solver(1e-3, 50.0, 100),
    )
    .unwrap();
    let rec = run(&sc).unwrap();
    let d = disagreement(&rec, &g).unwrap();
    assert!(*d.last().unwrap() < 1e-6, "{}", d.last().unwrap());
    // the average is conserved for identical integrators
    let mean: f64 = rec.y.last().unwrap().iter().sum::<f64>() / 3.0;
    assert!((mean - (-0.5 / 3.0)).abs() < 1e-9);
}

#[test]
fn rk4_error_ratio_under_step_halving() {
    let final_output = |dt: f64| {
        let (nodes, g) = mixed_network([0.4, -0.3, 1.0]);
        let sc = Scenario::new(
            nodes,
            couplings(&g, || SectorCoupling::linear(0.8).unwrap()),
            g,
            vec![],
            NoiseConfig::none(),
            solver(dt, 4.0, 1),
        )
        .unwrap();
        run(&sc).unwrap().y.last().unwrap().clone()
    };
    let (a, b, c) = (final_output(0.2), final_output(0.1), final_output(0.05));
    let diff = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let ratio = diff(&a, &b) / diff(&b, &c);
    assert!((8.0..=32.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn automorphism_permutes_trajectories() {
    let g = Graph::new(&[1, 2, 3], &[(1, 2), (2, 3)]).unwrap();
    let h = |a: f64, c: f64| {
        BTreeMap::from([
            (1, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], a)),
            (2, node(&[1.0, 0.5], &[1.0, 0.4, 0.0], 0.2)),
            (3, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], c)),
        ])
    };
    let mk = |nodes| {
        let sc = Scenario::new(
            nodes,
            couplings(&g, || SectorCoupling::sat_sine(0.5).unwrap()),
            g.clone(),
            vec![],
            NoiseConfig::none(),
            solver(1e-2, 10.0, 5),
        )
        .unwrap();
        run(&sc).unwrap()
    };
    let (x, y) = (mk(h(-1.0, 2.5)), mk(h(2.5, -1.0)));
    for s in 0..x.len() {
        assert_eq!(x.y[s], vec![y.y[s][2], y.y[s][1], y.y[s][0]]);
        assert_eq!(x.u[s], vec![y.u[s][2], y.u[s][1], y.u[s][0]]);
    }
}

fn noisy(stride: usize, nodes_y0: &[f64]) -> TrajectoryRecord {
    let g = Graph::new(
        &(1..=nodes_y0.len() as NodeId).collect::<Vec<_>>(),
        &(1..nodes_y0.len() as NodeId).map(|i| (i, i + 1)).collect::<Vec<_>>(),
    )
    .unwrap();
    let nodes = nodes_y0
        .iter()
        .enumerate()
        .map(|(i, &y)| (i as NodeId + 1, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], y)))
        .collect();
    let noise = NoiseConfig {
        scale: 0.5,
        seed: 11,
        kind: NoiseKind::Held,
    };
    let sc = Scenario::new(
        nodes,
        couplings(&g, || SectorCoupling::sat_sine(0.4).unwrap()),
        g,
        vec![],
        noise,
        solver(1e-3, 2.0, stride),
    )
    .unwrap();
    run(&sc).unwrap()
}

#[test]
fn sample_stride_only_thins_the_record() {
    let (fine, coarse) = (noisy(1, &[0.1, -0.2, 0.3]), noisy(10, &[0.1, -0.2, 0.3]));
    assert_eq!(coarse.len(), (fine.len() - 1) / 10 + 1);
    for (k, s) in (0..fine.len()).step_by(10).enumerate() {
        assert_eq!(fine.times[s], coarse.times[k]);
        assert_eq!(fine.y[s], coarse.y[k]);
        assert_eq!(fine.w[s], coarse.w[k]);
    }
}

#[test]
fn noise_depends_on_node_not_on_network_size() {
    let (small, large) = (noisy(1, &[0.1, -0.2]), noisy(1, &[0.1, -0.2, 0.3, 0.0]));
    for s in 0..small.len() {
        assert_eq!(small.w[s][..], large.w[s][..2]);
    }
    let w1: Vec<f64> = small.w.iter().map(|r| r[0]).collect();
    let mean = w1.iter().sum::<f64>() / w1.len() as f64;
    let sd = (w1.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w1.len() as f64).sqrt();
    assert!(mean.abs() < 0.05 && (sd - 0.5).abs() < 0.05, "mean {mean}, sd {sd}");
}

#[test]
fn identical_runs_are_bit_identical() {
    let sc = ScenarioFile::bundled_example().resolve().unwrap().simulation().unwrap();
    let short = sc.with_solver(solver(1e-3, 16.0, 10)).unwrap();
    let (a, b) = (run(&short).unwrap(), run(&short).unwrap());
    assert_eq!(a, b);
    let (mut ca, mut cb) = (Vec::new(), Vec::new());
    a.write_csv(&mut ca).unwrap();
    b.write_csv(&mut cb).unwrap();
    assert_eq!(ca, cb);
}

#[test]
fn passivity_inequality_holds_along_certified_run() {
    let file = ScenarioFile::bundled_example();
    let resolved = file.resolve().unwrap();
    let graph = resolved.final_graph().unwrap();
    let sc = resolved
        .simulation()
        .unwrap()
        .with_noise(NoiseConfig::none())
        .with_solver(solver(1e-3, 40.0, 1))
        .unwrap();
    let rec = run(&sc).unwrap();

    // V = Φ(DᵀY) on the final graph, valid after the plug
    let start = rec.index_at(15.0).unwrap() + 1;
    let t = &rec.times[start..];
    let coupling: Vec<(usize, usize, &SectorCoupling)> = graph
        .edges()
        .iter()
        .map(|e| {
            (
                rec.column(e.plus).unwrap(),
                rec.column(e.minus).unwrap(),
                &resolved.couplings[&e.key()],
            )
        })
        .collect();
    let mut uy = Vec::new();
    for s in start..rec.len() {
        let y = &rec.y[s];
        let v_dot: f64 = coupling
            .iter()
            .map(|&(p, m, c)| c.evaluate(y[p] - y[m]) * -(y[p] - y[m]))
            .sum();
        let u_dot: f64 = rec.u[s].iter().zip(y).map(|(u, y)| u * y).sum();
        assert!(
            (v_dot - u_dot).abs() <= 1e-12 * (1.0 + u_dot.abs()),
            "{v_dot} vs {u_dot}"
        );
        uy.push(u_dot);
    }

    let nus: Vec<f64> = rec
        .node_ids
        .iter()
        .map(|id| {
            resolved
                .node_indices
                .iter()
                .find(|r| r.id == *id)
                .unwrap()
                .declared_nu
                .unwrap()
        })
        .collect();
    let supply = |tt: f64| {
        let inner = trapz(t, &uy, tt);
        let penalty: f64 = (0..nus.len())
            .map(|i| {
                let col: Vec<[f64; 1]> = rec.u[start..].iter().map(|r| [r[i]]).collect();
                nus[i] * truncated_norm(t, &col, tt).unwrap().powi(2)
            })
            .sum();
        inner - penalty
    };
    let horizons: Vec<f64> = (1..=50)
        .map(|k| t[0] + (t[t.len() - 1] - t[0]) * k as f64 / 50.0)
        .collect();
    let values: Vec<f64> = horizons.iter().map(|&h| supply(h)).collect();
    // δ̄ is the infimum over horizons; it must be attained once the transient has died out
    let delta = values.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = values.iter().fold(1e-12_f64, |m, v| m.max(v.abs()));
    assert!(delta.is_finite());
    let tail = &values[values.len() * 4 / 5..];
    let spread = tail
        .iter()
        .fold(0.0_f64, |m, v| m.max((v - tail[tail.len() - 1]).abs()));
    assert!(spread <= 1e-4 * scale, "supply still drifting: {spread}");
    assert!(values.iter().all(|v| *v >= delta));
}

fn trapz(t: &[f64], f: &[f64], upto: f64) -> f64 {
    let mut acc = 0.0;
    for k in 1..t.len() {
        if t[k] > upto + 1e-12 {
            break;
        }
        acc += 0.5 * (f[k] + f[k - 1]) * (t[k] - t[k - 1]);
    }
    acc
}
