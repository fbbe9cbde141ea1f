//! Fixed-step simulation of diffusively coupled LTI nodes under noise, with
//! scheduled plug-in events.
//!
//! Node `i` obeys `ẋ_i = A_i x_i + B_i u_i`, `y_i = C_i x_i` and receives
//! `u_i = −Σ_{j∈N_i} φ_ij(y_i + w_i − y_j − w_j)`. The stacked state is
//! advanced with classical RK4; the noise sample is held over each step.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Addition, Edge, EdgeKey, Graph, GraphError, NodeId, PlugPlan};
use crate::passivity::{LtiSystem, SectorCoupling};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid solver settings: {0}")]
    Solver(String),
    #[error("node {0} has direct feedthrough; only strictly proper nodes can be simulated")]
    Feedthrough(NodeId),
    #[error("node {0} is not defined in the scenario")]
    UnknownNode(NodeId),
    #[error("node {0} never joins the network")]
    UnusedNode(NodeId),
    #[error("node {0} is added by an event but is already active")]
    AlreadyActive(NodeId),
    #[error("no coupling defined for edge {0}")]
    MissingCoupling(EdgeKey),
    #[error("initial condition for node {node}: {reason}")]
    InitialCondition { node: NodeId, reason: String },
    #[error("event times must be strictly increasing, within [0, t_end] and on the step grid (offending time {0})")]
    EventTime(f64),
    #[error("state diverged at t = {time}")]
    Diverged { time: f64 },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("trajectory file: {0}")]
    Csv(#[from] csv::Error),
    #[error("trajectory file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Minimum-norm state reproducing this output.
    Output(f64),
    State(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeSetup {
    pub system: LtiSystem,
    pub initial: InitialCondition,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// One `N(0, scale²)` sample per node and step, held over the step.
    #[default]
    Held,
    /// Held samples with standard deviation `scale / √dt`, i.e. a piecewise
    /// constant approximation of white noise with intensity `scale²`.
    DensityScaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub kind: NoiseKind,
}

impl NoiseConfig {
    pub fn none() -> Self {
        Self {
            scale: 0.0,
            seed: 0,
            kind: NoiseKind::Held,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    pub sample_stride: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            sample_stride: 1,
        }
    }
}

impl SolverConfig {
    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }
}

/// At `time`, activate `new_nodes` and add the oriented `edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlugEvent {
    pub time: f64,
    pub new_nodes: Vec<NodeId>,
    pub edges: Vec<Edge>,
}

impl PlugEvent {
    /// Event realizing `plan` on a running base network. For a network plug,
    /// `added_running` says whether the added network already runs (so only
    /// boundary edges appear) or starts at the event together with its edges.
    pub fn from_plan(time: f64, plan: &PlugPlan, added_running: bool) -> Self {
        let mut edges = Vec::new();
        let new_nodes = match plan.addition() {
            Addition::Node(n) => vec![*n],
            Addition::Network(_) if added_running => Vec::new(),
            Addition::Network(g) => {
                edges.extend_from_slice(g.edges());
                g.nodes().to_vec()
            }
        };
        edges.extend(plan.boundary_edges());
        Self { time, new_nodes, edges }
    }
}

/// Graph active from `start` until the next phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    pub start: f64,
    pub graph: Graph,
}

/// A fully validated experiment.
#[derive(Debug, Clone)]
pub struct Scenario {
    nodes: BTreeMap<NodeId, NodeSetup>,
    couplings: BTreeMap<EdgeKey, SectorCoupling>,
    phases: Vec<Phase>,
    events: Vec<PlugEvent>,
    noise: NoiseConfig,
    solver: SolverConfig,
}

impl Scenario {
    pub fn new(
        nodes: BTreeMap<NodeId, NodeSetup>,
        couplings: BTreeMap<EdgeKey, SectorCoupling>,
        initial_graph: Graph,
        events: Vec<PlugEvent>,
        noise: NoiseConfig,
        solver: SolverConfig,
    ) -> Result<Self, SimError> {
        let SolverConfig {
            dt,
            t_end,
            sample_stride,
        } = solver;
        if !(dt > 0.0 && dt.is_finite() && t_end >= 0.0 && t_end.is_finite() && sample_stride >= 1) {
            return Err(SimError::Solver(format!(
                "dt = {dt}, t_end = {t_end}, sample_stride = {sample_stride}"
            )));
        }
        if !(noise.scale >= 0.0 && noise.scale.is_finite()) {
            return Err(SimError::Solver(format!("noise scale {}", noise.scale)));
        }
        for (&id, setup) in &nodes {
            if !setup.system.is_strictly_proper() {
                return Err(SimError::Feedthrough(id));
            }
            initial_state(id, setup)?;
        }
        for &n in initial_graph.nodes() {
            if !nodes.contains_key(&n) {
                return Err(SimError::UnknownNode(n));
            }
        }
        let mut phases = vec![Phase {
            start: 0.0,
            graph: initial_graph,
        }];
        let mut last = f64::NEG_INFINITY;
        for ev in &events {
            let on_grid = ((ev.time / dt).round() * dt - ev.time).abs() <= 1e-9 * dt.max(ev.time.abs());
            if !(ev.time > last && ev.time >= 0.0 && ev.time <= t_end && on_grid) {
                return Err(SimError::EventTime(ev.time));
            }
            last = ev.time;
            let current = &phases.last().unwrap().graph;
            for &n in &ev.new_nodes {
                if !nodes.contains_key(&n) {
                    return Err(SimError::UnknownNode(n));
                }
                if current.contains(n) {
                    return Err(SimError::AlreadyActive(n));
                }
            }
            let next = current.extended(&ev.new_nodes, &ev.edges)?;
            phases.push(Phase {
                start: ev.time,
                graph: next,
            });
        }
        let last_graph = &phases.last().unwrap().graph;
        if let Some(&unused) = nodes.keys().find(|n| !last_graph.contains(**n)) {
            return Err(SimError::UnusedNode(unused));
        }
        if let Some(e) = last_graph.edges().iter().find(|e| !couplings.contains_key(&e.key())) {
            return Err(SimError::MissingCoupling(e.key()));
        }
        Ok(Self {
            nodes,
            couplings,
            phases,
            events,
            noise,
            solver,
        })
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, NodeSetup> {
        &self.nodes
    }

    pub fn couplings(&self) -> &BTreeMap<EdgeKey, SectorCoupling> {
        &self.couplings
    }

    pub fn phases(&self) -> &[Phase] {
        &self.phases
    }

    pub fn events(&self) -> &[PlugEvent] {
        &self.events
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    pub fn solver(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn final_graph(&self) -> &Graph {
        &self.phases.last().unwrap().graph
    }

    /// Recorded columns, in ascending node order.
    pub fn columns(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    pub fn with_noise(mut self, noise: NoiseConfig) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_solver(self, solver: SolverConfig) -> Result<Self, SimError> {
        let initial = self.phases[0].graph.clone();
        Self::new(self.nodes, self.couplings, initial, self.events, self.noise, solver)
    }

    pub fn metadata(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            seed: self.noise.seed,
            noise_scale: self.noise.scale,
            noise_kind: self.noise.kind,
            dt: self.solver.dt,
            t_end: self.solver.t_end,
            sample_stride: self.solver.sample_stride,
            node_ids: self.columns(),
            phases: self
                .phases
                .iter()
                .map(|p| PhaseMeta {
                    start: p.start,
                    nodes: p.graph.nodes().to_vec(),
                    edges: p.graph.edges().iter().map(|e| [e.plus, e.minus]).collect(),
                })
                .collect(),
            event_times: self.events.iter().map(|e| e.time).collect(),
        }
    }
}

fn initial_state(id: NodeId, setup: &NodeSetup) -> Result<Vec<f64>, SimError> {
    let n = setup.system.order();
    match &setup.initial {
        InitialCondition::State(x) if x.len() == n && x.iter().all(|v| v.is_finite()) => Ok(x.clone()),
        InitialCondition::State(x) => Err(SimError::InitialCondition {
            node: id,
            reason: format!("expected {n} finite state values, got {}", x.len()),
        }),
        InitialCondition::Output(y0) => setup
            .system
            .state_for_output(*y0)
            .map(|x| x.iter().copied().collect())
            .ok_or_else(|| SimError::InitialCondition {
                node: id,
                reason: format!("output {y0} is unreachable for a zero output map"),
            }),
    }
}

/// Run metadata written next to the trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub seed: u64,
    pub noise_scale: f64,
    pub noise_kind: NoiseKind,
    pub dt: f64,
    pub t_end: f64,
    pub sample_stride: usize,
    pub node_ids: Vec<NodeId>,
    pub phases: Vec<PhaseMeta>,
    pub event_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseMeta {
    pub start: f64,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<[NodeId; 2]>,
}

struct NodeModel {
    order: usize,
    offset: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// Right-hand side of the coupled network for one phase.
pub struct NetworkDynamics<'a> {
    columns: Vec<NodeId>,
    models: Vec<NodeModel>,
    active: Vec<bool>,
    edges: Vec<(usize, usize, &'a SectorCoupling)>,
    state_len: usize,
}

impl<'a> NetworkDynamics<'a> {
    /// One column per entry of `nodes`; only nodes of `graph` are active.
    pub fn new(
        nodes: &BTreeMap<NodeId, NodeSetup>,
        graph: &Graph,
        couplings: &'a BTreeMap<EdgeKey, SectorCoupling>,
    ) -> Result<Self, SimError> {
        let columns: Vec<NodeId> = nodes.keys().copied().collect();
        let col = |n: NodeId| columns.binary_search(&n).map_err(|_| SimError::UnknownNode(n));
        let mut offset = 0;
        let models = nodes
            .values()
            .map(|setup| {
                let sys = &setup.system;
                let order = sys.order();
                let m = NodeModel {
                    order,
                    offset,
                    a: (0..order * order).map(|k| sys.a()[(k / order, k % order)]).collect(),
                    b: sys.b().iter().copied().collect(),
                    c: sys.c().iter().copied().collect(),
                };
                offset += order;
                m
            })
            .collect();
        let mut active = vec![false; columns.len()];
        for &n in graph.nodes() {
            active[col(n)?] = true;
        }
        let edges = graph
            .edges()
            .iter()
            .map(|e| {
                let c = couplings.get(&e.key()).ok_or(SimError::MissingCoupling(e.key()))?;
                Ok((col(e.plus)?, col(e.minus)?, c))
            })
            .collect::<Result<_, SimError>>()?;
        Ok(Self {
            columns,
            models,
            active,
            edges,
            state_len: offset,
        })
    }

    pub fn columns(&self) -> &[NodeId] {
        &self.columns
    }

    pub fn state_len(&self) -> usize {
        self.state_len
    }

    pub fn is_active(&self, column: usize) -> bool {
        self.active[column]
    }

    /// Node outputs; inactive nodes report NaN.
    pub fn outputs(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.columns.len()];
        self.outputs_into(x, &mut y);
        for (yi, act) in y.iter_mut().zip(&self.active) {
            if !act {
                *yi = f64::NAN;
            }
        }
        y
    }

    fn outputs_into(&self, x: &[f64], y: &mut [f64]) {
        for (yi, m) in y.iter_mut().zip(&self.models) {
            *yi = (0..m.order).map(|k| m.c[k] * x[m.offset + k]).sum();
        }
    }

    /// Coupling inputs `u = −D Φ(Dᵀ(y + w))`; inactive nodes report NaN.
    pub fn inputs(&self, x: &[f64], w: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.columns.len()];
        let mut u = vec![0.0; self.columns.len()];
        self.outputs_into(x, &mut y);
        self.inputs_into(&y, w, &mut u);
        for (ui, act) in u.iter_mut().zip(&self.active) {
            if !act {
                *ui = f64::NAN;
            }
        }
        u
    }

    fn inputs_into(&self, y: &[f64], w: &[f64], u: &mut [f64]) {
        u.fill(0.0);
        for &(p, m, c) in &self.edges {
            let v = c.evaluate(y[p] + w[p] - y[m] - w[m]);
            u[p] -= v;
            u[m] += v;
        }
    }

    fn derivative(&self, x: &[f64], w: &[f64], dx: &mut [f64], y: &mut [f64], u: &mut [f64]) {
        self.outputs_into(x, y);
        self.inputs_into(y, w, u);
        for (i, m) in self.models.iter().enumerate() {
            let xs = &x[m.offset..m.offset + m.order];
            let out = &mut dx[m.offset..m.offset + m.order];
            if !self.active[i] {
                out.fill(0.0);
                continue;
            }
            for ((slot, row), b) in out.iter_mut().zip(m.a.chunks_exact(m.order)).zip(&m.b) {
                *slot = row.iter().zip(xs).map(|(a, x)| a * x).sum::<f64>() + b * u[i];
            }
        }
    }

    /// One RK4 step of length `dt` from time `t`, with `w` held over the step.
    pub fn step(&self, x: &mut [f64], w: &[f64], dt: f64, t: f64) -> Result<(), SimError> {
        let n = self.state_len;
        let cols = self.columns.len();
        let (mut y, mut u) = (vec![0.0; cols], vec![0.0; cols]);
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut tmp = vec![0.0; n];
        self.derivative(x, w, &mut k[0], &mut y, &mut u);
        for stage in 1..4 {
            let h = if stage == 3 { dt } else { dt / 2.0 };
            for i in 0..n {
                tmp[i] = x[i] + h * k[stage - 1][i];
            }
            let (_, rest) = k.split_at_mut(stage);
            self.derivative(&tmp, w, &mut rest[0], &mut y, &mut u);
        }
        for i in 0..n {
            x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Diverged { time: t + dt });
        }
        Ok(())
    }

    fn load_initial(
        &self,
        nodes: &BTreeMap<NodeId, NodeSetup>,
        x: &mut [f64],
        which: &[NodeId],
    ) -> Result<(), SimError> {
        for &n in which {
            let i = self.columns.binary_search(&n).map_err(|_| SimError::UnknownNode(n))?;
            let m = &self.models[i];
            let x0 = initial_state(n, &nodes[&n])?;
            x[m.offset..m.offset + m.order].copy_from_slice(&x0);
        }
        Ok(())
    }
}

/// Per-node Gaussian streams: the sample for node `i` at step `k` depends only
/// on `(seed, i, k)`.
struct NoiseSource {
    streams: Vec<ChaCha8Rng>,
    std: f64,
}

impl NoiseSource {
    fn new(cfg: &NoiseConfig, columns: &[NodeId], dt: f64) -> Self {
        let streams = columns
            .iter()
            .map(|&id| {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                rng.set_stream(u64::from(id));
                rng
            })
            .collect();
        let std = match cfg.kind {
            NoiseKind::Held => cfg.scale,
            NoiseKind::DensityScaled => cfg.scale / dt.sqrt(),
        };
        Self { streams, std }
    }

    fn draw(&mut self, out: &mut [f64]) {
        for (w, rng) in out.iter_mut().zip(&mut self.streams) {
            let z: f64 = StandardNormal.sample(rng);
            *w = if self.std == 0.0 { 0.0 } else { self.std * z };
        }
    }
}

/// Sampled outputs, inputs and noise. Rows are samples; columns follow `node_ids`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub node_ids: Vec<NodeId>,
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    /// Index of the active phase at each sample.
    pub phase: Vec<usize>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn column(&self, node: NodeId) -> Option<usize> {
        self.node_ids.iter().position(|&n| n == node)
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at(&self, t: f64) -> Option<usize> {
        let i = self.times.partition_point(|&s| s < t - 1e-12);
        (i < self.times.len()).then_some(i)
    }

    /// Writes `t, y_<id>…, u_<id>…, w_<id>…`, one row per sample.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        for prefix in ["y", "u", "w"] {
            header.extend(self.node_ids.iter().map(|id| format!("{prefix}_{id}")));
        }
        wtr.write_record(&header)?;
        for s in 0..self.len() {
            let row = std::iter::once(self.times[s])
                .chain(self.y[s].iter().copied())
                .chain(self.u[s].iter().copied())
                .chain(self.w[s].iter().copied())
                .map(|v| v.to_string());
            wtr.write_record(row)?;
        }
        wtr.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads a file produced by [`TrajectoryRecord::write_csv`]. Phase indices
    /// are not stored in the CSV and are reset to 0.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(input);
        let header = rdr.headers()?.clone();
        let cols = header.len().saturating_sub(1);
        if header.get(0) != Some("t") || cols % 3 != 0 || cols == 0 {
            return Err(SimError::Format("expected header t, y_*, u_*, w_*".into()));
        }
        let n = cols / 3;
        let node_ids = (0..n)
            .map(|i| {
                header[1 + i]
                    .strip_prefix("y_")
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| SimError::Format(format!("bad column name {}", &header[1 + i])))
            })
            .collect::<Result<Vec<NodeId>, _>>()?;
        let mut rec = Self {
            node_ids,
            times: Vec::new(),
            y: Vec::new(),
            u: Vec::new(),
            w: Vec::new(),
            phase: Vec::new(),
        };
        for row in rdr.records() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>().map_err(|e| SimError::Format(format!("{s:?}: {e}"))))
                .collect::<Result<Vec<f64>, _>>()?;
            rec.times.push(vals[0]);
            rec.y.push(vals[1..1 + n].to_vec());
            rec.u.push(vals[1 + n..1 + 2 * n].to_vec());
            rec.w.push(vals[1 + 2 * n..].to_vec());
            rec.phase.push(0);
        }
        Ok(rec)
    }
}

/// Integrates the scenario phase by phase.
pub fn run(scenario: &Scenario) -> Result<TrajectoryRecord, SimError> {
    let solver = scenario.solver;
    let dt = solver.dt;
    let n_steps = solver.steps();
    let columns = scenario.columns();
    let event_steps: Vec<usize> = scenario.events.iter().map(|e| (e.time / dt).round() as usize).collect();

    let mut phase = 0;
    let mut dynamics = NetworkDynamics::new(&scenario.nodes, &scenario.phases[0].graph, &scenario.couplings)?;
    let mut x = vec![0.0; dynamics.state_len()];
    dynamics.load_initial(&scenario.nodes, &mut x, scenario.phases[0].graph.nodes())?;
    let mut noise = NoiseSource::new(&scenario.noise, &columns, dt);
    let mut w = vec![0.0; columns.len()];

    let mut rec = TrajectoryRecord {
        node_ids: columns.clone(),
        times: Vec::new(),
        y: Vec::new(),
        u: Vec::new(),
        w: Vec::new(),
        phase: Vec::new(),
    };
    for k in 0..=n_steps {
        let t = k as f64 * dt;
        while phase < event_steps.len() && event_steps[phase] == k {
            let ev = &scenario.events[phase];
            phase += 1;
            dynamics = NetworkDynamics::new(&scenario.nodes, &scenario.phases[phase].graph, &scenario.couplings)?;
            dynamics.load_initial(&scenario.nodes, &mut x, &ev.new_nodes)?;
        }
        noise.draw(&mut w);
        if k % solver.sample_stride == 0 {
            rec.times.push(t);
            rec.y.push(dynamics.outputs(&x));
            rec.u.push(dynamics.inputs(&x, &w));
            rec.w.push(w.clone());
            rec.phase.push(phase);
        }
        if k == n_steps {
            break;
        }
        dynamics.step(&mut x, &w, dt, t)?;
    }
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(num: &[f64], den: &[f64], y0: f64) -> NodeSetup {
        NodeSetup {
            system: LtiSystem::realize(num, den).unwrap(),
            initial: InitialCondition::Output(y0),
        }
    }

    fn integrators(y0: &[f64]) -> BTreeMap<NodeId, NodeSetup> {
        y0.iter()
            .enumerate()
            .map(|(i, &y)| (i as NodeId + 1, node(&[1.0], &[1.0, 0.0], y)))
            .collect()
    }

    fn linear_couplings(g: &Graph, a: f64) -> BTreeMap<EdgeKey, SectorCoupling> {
        g.edges()
            .iter()
            .map(|e| (e.key(), SectorCoupling::linear(a).unwrap()))
            .collect()
    }

    #[test]
    fn free_first_order_response() {
        let nodes = BTreeMap::from([(1, node(&[1.0], &[1.0, 1.0], 1.0))]);
        let g = Graph::single(1);
        let couplings = BTreeMap::new();
        let dynamics = NetworkDynamics::new(&nodes, &g, &couplings).unwrap();
        let mut x = vec![1.0];
        let dt = 0.01;
        dynamics.step(&mut x, &[0.0], dt, 0.0).unwrap();
        assert!((x[0] - (-dt).exp()).abs() < 1e-11);
    }

    #[test]
    fn identical_nodes_stay_identical() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let nodes = BTreeMap::from([
            (1, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], 0.3)),
            (2, node(&[1.0, 1.0], &[1.0, 0.7, 0.0], 0.3)),
        ]);
        let couplings = BTreeMap::from([((EdgeKey(1, 2)), SectorCoupling::sat_sine(0.4).unwrap())]);
        let sc = Scenario::new(
            nodes,
            couplings,
            g,
            vec![],
            NoiseConfig::none(),
            SolverConfig {
                dt: 1e-2,
                t_end: 2.0,
                sample_stride: 10,
            },
        )
        .unwrap();
        let rec = run(&sc).unwrap();
        for s in 0..rec.len() {
            assert_eq!(rec.y[s][0], rec.y[s][1]);
            assert_eq!(rec.u[s], vec![0.0, 0.0]);
        }
    }

    #[test]
    fn coupled_integrators_match_exponential() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let a = 0.7;
        let sc = Scenario::new(
            integrators(&[1.0, -1.0]),
            linear_couplings(&g, a),
            g,
            vec![],
            NoiseConfig::none(),
            SolverConfig {
                dt: 1e-3,
                t_end: 5.0,
                sample_stride: 100,
            },
        )
        .unwrap();
        let rec = run(&sc).unwrap();
        for (t, y) in rec.times.iter().zip(&rec.y) {
            let exact = 2.0 * (-2.0 * a * t).exp();
            assert!(((y[0] - y[1]) - exact).abs() <= 1e-9 * exact);
        }
    }

    #[test]
    fn validation_errors() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let solver = SolverConfig::default();
        let mk = |nodes, couplings, g, events, solver| {
            Scenario::new(nodes, couplings, g, events, NoiseConfig::none(), solver)
        };
        assert!(matches!(
            mk(integrators(&[0.0, 0.0]), BTreeMap::new(), g.clone(), vec![], solver),
            Err(SimError::MissingCoupling(EdgeKey(1, 2)))
        ));
        let mut feed = integrators(&[0.0, 0.0]);
        feed.insert(2, node(&[1.0, 1.0], &[1.0, 2.0], 0.0));
        assert!(matches!(
            mk(feed, linear_couplings(&g, 1.0), g.clone(), vec![], solver),
            Err(SimError::Feedthrough(2))
        ));
        assert!(matches!(
            mk(
                integrators(&[0.0, 0.0, 0.0]),
                linear_couplings(&g, 1.0),
                g.clone(),
                vec![],
                solver
            ),
            Err(SimError::UnusedNode(3))
        ));
        let ev = PlugEvent {
            time: 20.0,
            new_nodes: vec![3],
            edges: vec![Edge::new(3, 2)],
        };
        assert!(matches!(
            mk(
                integrators(&[0.0, 0.0, 0.0]),
                linear_couplings(&g, 1.0),
                g.clone(),
                vec![ev],
                solver
            ),
            Err(SimError::EventTime(_))
        ));
        let bad_solver = SolverConfig { dt: 0.0, ..solver };
        assert!(matches!(
            mk(
                integrators(&[0.0, 0.0]),
                linear_couplings(&g, 1.0),
                g,
                vec![],
                bad_solver
            ),
            Err(SimError::Solver(_))
        ));
    }

    #[test]
    fn single_node_event_activates_node() {
        let g = Graph::new(&[1, 2], &[(1, 2)]).unwrap();
        let plan = PlugPlan::single_node(g.clone(), 3, 2).unwrap();
        let mut couplings = linear_couplings(&g, 1.0);
        couplings.insert(EdgeKey(2, 3), SectorCoupling::linear(1.0).unwrap());
        let sc = Scenario::new(
            integrators(&[1.0, -1.0, 5.0]),
            couplings,
            g,
            vec![PlugEvent::from_plan(1.0, &plan, false)],
            NoiseConfig::none(),
            SolverConfig {
                dt: 1e-2,
                t_end: 2.0,
                sample_stride: 10,
            },
        )
        .unwrap();
        let rec = run(&sc).unwrap();
        let before = rec.index_at(0.9).unwrap();
        assert!(rec.y[before][2].is_nan());
        let at = rec.index_at(1.0).unwrap();
        assert_eq!(rec.y[at][2], 5.0);
        assert_eq!(rec.phase[at], 1);
        assert_eq!(sc.phases().len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let rec = TrajectoryRecord {
            node_ids: vec![1, 5],
            times: vec![0.0, 0.5],
            y: vec![vec![1.0, -0.25], vec![0.1, f64::NAN]],
            u: vec![vec![0.0, 0.0], vec![1e-300, 2.5]],
            w: vec![vec![0.0, 0.0], vec![-0.3, 0.7]],
            phase: vec![0, 0],
        };
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,y_1,y_5,u_1,u_5,w_1,w_5\n"));
        let back = TrajectoryRecord::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.node_ids, rec.node_ids);
        assert_eq!(back.u, rec.u);
        assert!(back.y[1][1].is_nan());
    }
}
