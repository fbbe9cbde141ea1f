//! JSON scenario files.
//!
//! A scenario names its nodes (dynamics, optional declared index, initial
//! output), one or more disjoint graphs, a coupling per edge, an optional plug
//! step joining a node or a graph to a base graph, and noise/solver settings.
//! Unknown keys are rejected everywhere. The format is versioned (`"1"`).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{self, CertificateError, CertificateReport, CertifyOptions, PassivityData};
use crate::graph::{EdgeKey, Graph, GraphError, NodeId, PlugPlan};
use crate::passivity::{
    default_grid, estimate_ifp_index, verify_sector, CouplingLaw, LtiSystem, PassivityError, SectorCoupling,
    DEFAULT_REFINE_TOL,
};
use crate::sim::{InitialCondition, NodeSetup, NoiseConfig, PlugEvent, Scenario, SimError, SolverConfig};

pub const FORMAT_VERSION: &str = "1";

/// The two-network example: G1 = {1..4}, G2 = {5..7}, joined at t = 15 s
/// through (1, 5) and (4, 7).
pub const BUNDLED_EXAMPLE: &str = include_str!("../scenarios/paper_example.json");

/// Sampling used to check declared sector bounds while loading.
const SECTOR_SAMPLES: usize = 2000;
const SECTOR_RANGE: f64 = 20.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported scenario version {0:?} (expected \"1\")")]
    Version(String),
    #[error("{field}: {message}")]
    Schema { field: String, message: String },
    #[error(
        "coupling on edge {edge} violates its declared sector [{declared_lower}, {declared_upper}]: observed [{observed_lower}, {observed_upper}]"
    )]
    SectorViolation {
        edge: EdgeKey,
        declared_lower: f64,
        declared_upper: f64,
        observed_lower: f64,
        observed_upper: f64,
    },
    #[error("coupling on edge {0} is not odd")]
    NotOdd(EdgeKey),
    #[error("edge {edge}: {source}")]
    Coupling { edge: EdgeKey, source: PassivityError },
    #[error("node {node}: {source}")]
    Dynamics { node: NodeId, source: PassivityError },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Certificate(#[from] CertificateError),
}

fn schema(field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Schema {
        field: field.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Dynamics {
    Transfer(TransferEntry),
    Abstract(AbstractEntry),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferEntry {
    pub num: Vec<f64>,
    pub den: Vec<f64>,
}

/// A node known only through its passivity index (certification only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AbstractEntry {
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeEntry {
    pub id: NodeId,
    pub dynamics: Dynamics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphEntry {
    pub name: String,
    pub nodes: Vec<NodeId>,
    pub edges: Vec<[NodeId; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CouplingKindName {
    Linear,
    SatSine,
    SatSineContinuous,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub edge: [NodeId; 2],
    pub kind: CouplingKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha_upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlugEntry {
    pub base: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_graph: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub added_node: Option<NodeId>,
    pub boundary: Vec<[NodeId; 2]>,
    /// Simulation time of the interconnection; the plug is ignored by `simulate` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseEntry {
    pub scale: f64,
    pub seed: u64,
    #[serde(default)]
    pub kind: crate::sim::NoiseKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverEntry {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "one")]
    pub sample_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: String,
    pub nodes: Vec<NodeEntry>,
    pub graphs: Vec<GraphEntry>,
    pub couplings: Vec<CouplingEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plug: Option<PlugEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputEntry>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: Self = serde_json::from_str(text)?;
        if file.version != FORMAT_VERSION {
            return Err(ScenarioError::Version(file.version));
        }
        Ok(file)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn bundled_example() -> Self {
        Self::from_json(BUNDLED_EXAMPLE).expect("bundled scenario is valid")
    }

    /// Validates all cross-references and builds the typed model.
    pub fn resolve(&self) -> Result<ResolvedScenario, ScenarioError> {
        resolve(self)
    }
}

/// How the index used for certification was obtained for one node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeIndexRow {
    pub id: NodeId,
    pub declared_nu: Option<f64>,
    pub sweep_nu: Option<f64>,
    /// Minimizing frequency of the sweep; `null` for the high-frequency limit.
    pub sweep_omega: Option<f64>,
    pub sweep_error: Option<String>,
    pub nu_used: f64,
}

/// A validated scenario file.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub file: ScenarioFile,
    pub graphs: Vec<(String, Graph)>,
    pub couplings: BTreeMap<EdgeKey, SectorCoupling>,
    pub systems: BTreeMap<NodeId, Option<LtiSystem>>,
    pub plan: Option<PlugPlan>,
    pub node_indices: Vec<NodeIndexRow>,
}

/// Certificate together with the per-node index table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOutput {
    pub certificate: CertificateReport,
    pub node_indices: Vec<NodeIndexRow>,
}

impl ResolvedScenario {
    pub fn passivity_data(&self) -> PassivityData {
        PassivityData {
            nu: self.node_indices.iter().map(|r| (r.id, r.nu_used)).collect(),
            alpha_upper: self.couplings.iter().map(|(k, c)| (*k, c.alpha_upper)).collect(),
        }
    }

    /// Runs the single-node or network certificate for the plug step.
    pub fn certify(&self, opts: &CertifyOptions) -> Result<CertifyOutput, ScenarioError> {
        let plan = self
            .plan
            .as_ref()
            .ok_or_else(|| schema("plug", "certification needs a plug step"))?;
        let data = self.passivity_data();
        let certificate = match plan.addition() {
            crate::graph::Addition::Node(_) => certificates::certify_single_node_plug(plan, &data, opts)?,
            crate::graph::Addition::Network(_) => certificates::certify_network_plug(plan, &data, opts)?,
        };
        Ok(CertifyOutput {
            certificate,
            node_indices: self.node_indices.clone(),
        })
    }

    /// Graph in force after the plug step (or the union of all graphs).
    pub fn final_graph(&self) -> Result<Graph, ScenarioError> {
        let mut g = self.initial_graph()?;
        if let Some(plan) = &self.plan {
            let ev = PlugEvent::from_plan(0.0, plan, true);
            g = g.extended(&ev.new_nodes, &ev.edges)?;
        }
        Ok(g)
    }

    fn initial_graph(&self) -> Result<Graph, ScenarioError> {
        let mut g = Graph::from_oriented(Vec::new(), Vec::new())?;
        for (_, part) in &self.graphs {
            g = g.disjoint_union(part)?;
        }
        Ok(g)
    }

    /// Simulation model: all graphs run from `t = 0`; the plug step fires at its time.
    pub fn simulation(&self) -> Result<Scenario, ScenarioError> {
        let mut nodes = BTreeMap::new();
        for entry in &self.file.nodes {
            let system = self.systems[&entry.id].clone().ok_or_else(|| {
                schema(
                    format!("nodes[id={}].dynamics", entry.id),
                    "simulation needs a transfer function",
                )
            })?;
            let initial = match (&entry.x0, entry.y0) {
                (Some(_), Some(_)) => {
                    return Err(schema(
                        format!("nodes[id={}]", entry.id),
                        "give either x0 or y0, not both",
                    ));
                }
                (Some(x), None) => InitialCondition::State(x.clone()),
                (None, y) => InitialCondition::Output(y.unwrap_or(0.0)),
            };
            nodes.insert(entry.id, NodeSetup { system, initial });
        }
        let events = match (&self.plan, self.file.plug.as_ref().and_then(|p| p.time)) {
            (Some(plan), Some(t)) => vec![PlugEvent::from_plan(t, plan, true)],
            _ => Vec::new(),
        };
        let noise = self
            .file
            .noise
            .as_ref()
            .map(|n| NoiseConfig {
                scale: n.scale,
                seed: n.seed,
                kind: n.kind,
            })
            .unwrap_or_else(NoiseConfig::none);
        let solver = self
            .file
            .solver
            .as_ref()
            .map(|s| SolverConfig {
                dt: s.dt,
                t_end: s.t_end,
                sample_stride: s.sample_stride,
            })
            .unwrap_or_default();
        let used: BTreeSet<EdgeKey> = self.final_graph()?.edges().iter().map(|e| e.key()).collect();
        let couplings = self
            .couplings
            .iter()
            .filter(|(k, _)| used.contains(k))
            .map(|(k, c)| (*k, c.clone()))
            .collect();
        Ok(Scenario::new(
            nodes,
            couplings,
            self.initial_graph()?,
            events,
            noise,
            solver,
        )?)
    }
}

fn build_coupling(c: &CouplingEntry, key: EdgeKey) -> Result<SectorCoupling, ScenarioError> {
    let field = format!("couplings[edge={key}]");
    let gain = || c.a.ok_or_else(|| schema(format!("{field}.a"), "missing gain"));
    let law = match c.kind {
        CouplingKindName::Linear => CouplingLaw::Linear { gain: gain()? },
        CouplingKindName::SatSine => CouplingLaw::SatSine { gain: gain()? },
        CouplingKindName::SatSineContinuous => CouplingLaw::SatSineContinuous { gain: gain()? },
        CouplingKindName::Tabulated => CouplingLaw::Tabulated {
            x: c.x
                .clone()
                .ok_or_else(|| schema(format!("{field}.x"), "missing table"))?,
            y: c.y
                .clone()
                .ok_or_else(|| schema(format!("{field}.y"), "missing table"))?,
        },
    };
    if c.kind != CouplingKindName::Tabulated && (c.x.is_some() || c.y.is_some()) {
        return Err(schema(field, "x/y tables are only valid for kind \"tabulated\""));
    }
    if c.kind == CouplingKindName::Tabulated && c.a.is_some() {
        return Err(schema(field, "gain a is not valid for kind \"tabulated\""));
    }
    let natural = SectorCoupling::natural(law).map_err(|source| ScenarioError::Coupling { edge: key, source })?;
    let lower = c.alpha_lower.unwrap_or(natural.alpha_lower);
    let upper = c.alpha_upper.unwrap_or(natural.alpha_upper);
    let coupling = SectorCoupling::new(natural.law, lower, upper)
        .map_err(|source| ScenarioError::Coupling { edge: key, source })?;
    let check = verify_sector(&coupling, SECTOR_SAMPLES, SECTOR_RANGE);
    if !check.odd_symmetric {
        return Err(ScenarioError::NotOdd(key));
    }
    if !check.within_declared {
        return Err(ScenarioError::SectorViolation {
            edge: key,
            declared_lower: lower,
            declared_upper: upper,
            observed_lower: check.observed_lower,
            observed_upper: check.observed_upper,
        });
    }
    Ok(coupling)
}

fn resolve(file: &ScenarioFile) -> Result<ResolvedScenario, ScenarioError> {
    if file.nodes.is_empty() {
        return Err(schema("nodes", "at least one node is required"));
    }
    if file.graphs.is_empty() {
        return Err(schema("graphs", "at least one graph is required"));
    }
    let mut systems = BTreeMap::new();
    let mut node_indices = Vec::new();
    let grid = default_grid();
    for (idx, n) in file.nodes.iter().enumerate() {
        let field = format!("nodes[{idx}]");
        if systems.contains_key(&n.id) {
            return Err(schema(format!("{field}.id"), format!("duplicate node id {}", n.id)));
        }
        let mut row = NodeIndexRow {
            id: n.id,
            declared_nu: n.nu,
            sweep_nu: None,
            sweep_omega: None,
            sweep_error: None,
            nu_used: 0.0,
        };
        let system = match &n.dynamics {
            Dynamics::Transfer(t) => {
                let sys = LtiSystem::realize(&t.num, &t.den)
                    .map_err(|source| ScenarioError::Dynamics { node: n.id, source })?;
                match estimate_ifp_index(&sys, &grid, DEFAULT_REFINE_TOL) {
                    Ok(idx) => {
                        row.sweep_nu = Some(idx.nu);
                        if let crate::passivity::Provenance::FrequencySweep { omega } = idx.provenance {
                            row.sweep_omega = omega;
                        }
                    }
                    Err(e) => row.sweep_error = Some(e.to_string()),
                }
                Some(sys)
            }
            Dynamics::Abstract(a) => {
                if n.nu.is_some() {
                    return Err(schema(
                        format!("{field}.nu"),
                        "index already given by the dynamics entry",
                    ));
                }
                row.declared_nu = Some(a.nu);
                None
            }
        };
        row.nu_used = match (row.declared_nu, row.sweep_nu) {
            (Some(v), _) | (None, Some(v)) => v,
            (None, None) => {
                return Err(schema(
                    format!("{field}.nu"),
                    format!(
                        "no declared index and the sweep failed: {}",
                        row.sweep_error.as_deref().unwrap_or("unknown")
                    ),
                ));
            }
        };
        if !row.nu_used.is_finite() {
            return Err(schema(format!("{field}.nu"), "index must be finite"));
        }
        systems.insert(n.id, system);
        node_indices.push(row);
    }

    let mut graphs: Vec<(String, Graph)> = Vec::new();
    let mut placed = BTreeSet::new();
    for (gi, g) in file.graphs.iter().enumerate() {
        let field = format!("graphs[{gi}]");
        if graphs.iter().any(|(name, _)| *name == g.name) {
            return Err(schema(
                format!("{field}.name"),
                format!("duplicate graph name {:?}", g.name),
            ));
        }
        for &n in &g.nodes {
            if !systems.contains_key(&n) {
                return Err(schema(format!("{field}.nodes"), format!("unknown node {n}")));
            }
            if !placed.insert(n) {
                return Err(schema(
                    format!("{field}.nodes"),
                    format!("node {n} appears in more than one graph"),
                ));
            }
        }
        let pairs: Vec<(NodeId, NodeId)> = g.edges.iter().map(|e| (e[0], e[1])).collect();
        let graph = Graph::new(&g.nodes, &pairs).map_err(|e| schema(format!("{field}.edges"), e.to_string()))?;
        graphs.push((g.name.clone(), graph));
    }

    let mut couplings = BTreeMap::new();
    for c in &file.couplings {
        let key = EdgeKey::new(c.edge[0], c.edge[1]);
        if !systems.contains_key(&key.0) || !systems.contains_key(&key.1) {
            return Err(schema(
                format!("couplings[edge={key}]"),
                "edge references an unknown node",
            ));
        }
        if couplings.insert(key, build_coupling(c, key)?).is_some() {
            return Err(schema(format!("couplings[edge={key}]"), "duplicate coupling"));
        }
    }

    let plan = match &file.plug {
        None => None,
        Some(p) => Some(build_plan(p, &graphs, &systems, &placed)?),
    };
    let mut needed: BTreeSet<EdgeKey> = graphs
        .iter()
        .flat_map(|(_, g)| g.edges().iter().map(|e| e.key()))
        .collect();
    if let Some(plan) = &plan {
        needed.extend(plan.boundary().iter().map(|&(p, q)| EdgeKey::new(p, q)));
    }
    if let Some(missing) = needed.iter().find(|k| !couplings.contains_key(*k)) {
        return Err(schema("couplings", format!("no coupling for edge {missing}")));
    }
    if let Some(extra) = couplings.keys().find(|k| !needed.contains(*k)) {
        return Err(schema(
            "couplings",
            format!("coupling on {extra} does not match any edge"),
        ));
    }
    let added_node = plan.as_ref().and_then(|p| match p.addition() {
        crate::graph::Addition::Node(n) => Some(*n),
        _ => None,
    });
    if let Some(&orphan) = systems.keys().find(|n| !placed.contains(*n) && Some(**n) != added_node) {
        return Err(schema(
            "nodes",
            format!("node {orphan} is not part of any graph or plug step"),
        ));
    }

    Ok(ResolvedScenario {
        file: file.clone(),
        graphs,
        couplings,
        systems,
        plan,
        node_indices,
    })
}

fn build_plan(
    p: &PlugEntry,
    graphs: &[(String, Graph)],
    systems: &BTreeMap<NodeId, Option<LtiSystem>>,
    placed: &BTreeSet<NodeId>,
) -> Result<PlugPlan, ScenarioError> {
    let find = |name: &str, field: &str| {
        graphs
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, g)| g.clone())
            .ok_or_else(|| schema(format!("plug.{field}"), format!("unknown graph {name:?}")))
    };
    let base = find(&p.base, "base")?;
    if let Some(t) = p.time {
        if !(t.is_finite() && t >= 0.0) {
            return Err(schema("plug.time", "must be a finite, non-negative time"));
        }
    }
    match (&p.added_graph, p.added_node) {
        (Some(name), None) => {
            if *name == p.base {
                return Err(schema("plug.added_graph", "must differ from the base graph"));
            }
            let added = find(name, "added_graph")?;
            // accept either order, store base side first
            let boundary = p
                .boundary
                .iter()
                .map(|&[a, b]| {
                    if base.contains(b) && added.contains(a) {
                        (b, a)
                    } else {
                        (a, b)
                    }
                })
                .collect();
            PlugPlan::network(base, added, boundary).map_err(|e| schema("plug.boundary", e.to_string()))
        }
        (None, Some(node)) => {
            if !systems.contains_key(&node) {
                return Err(schema("plug.added_node", format!("unknown node {node}")));
            }
            if placed.contains(&node) {
                return Err(schema(
                    "plug.added_node",
                    format!("node {node} already belongs to a graph"),
                ));
            }
            let [edge] = p.boundary.as_slice() else {
                return Err(schema(
                    "plug.boundary",
                    "a single-node plug needs exactly one boundary edge",
                ));
            };
            let attach = match *edge {
                [a, b] if a == node => b,
                [a, b] if b == node => a,
                _ => return Err(schema("plug.boundary", format!("boundary edge must touch node {node}"))),
            };
            PlugPlan::single_node(base, node, attach).map_err(|e| schema("plug.boundary", e.to_string()))
        }
        _ => Err(schema("plug", "give exactly one of added_graph or added_node")),
    }
}
