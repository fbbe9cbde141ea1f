//! Positive-definiteness certificates for `M = DᵀΘD + Σ` and the local
//! interface conditions for plugging a node or a subnetwork into a network.
//!
//! Two independent routes decide whether `M ≻ 0`:
//!
//! * [`gershgorin_pd_check`] evaluates the weighted Gershgorin row condition
//!   for `SMS` edge by edge, using only local data (incident edges of each end).
//! * [`pd_oracle`] assembles `M` densely and computes its smallest eigenvalue.
//!
//! The plug-in checkers ([`certify_single_node_plug`],
//! [`certify_network_plug`]) evaluate the per-edge conditions, compute the
//! boundary weights `γ`, and cross-check the composed problem with both routes.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EdgeKey, Graph, GraphError, NodeId, PlugPlan};

/// Default strictness tolerance applied to margins.
pub const DEFAULT_STRICT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CertificateError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("edge weight s_{index} = {value} is not positive")]
    NonPositiveWeight { index: usize, value: f64 },
    #[error("graph has no edges")]
    NoEdges,
    #[error("graph is not connected")]
    Disconnected,
    #[error("missing passivity index for node {0}")]
    MissingIndex(NodeId),
    #[error("missing upper sector bound for edge {0}")]
    MissingSector(EdgeKey),
    #[error("boundary node {node} has passivity index 0; γ is undefined (use the eigenvalue oracle)")]
    ZeroIndex { node: NodeId },
    #[error("boundary node {node} has no neighbours inside its own network; γ is undefined")]
    NoNeighbours { node: NodeId },
    #[error("interconnection assumption violated by boundary edges ({}, {}) and ({}, {})", .first.0, .first.1, .second.0, .second.1)]
    AssumptionViolated {
        first: (NodeId, NodeId),
        second: (NodeId, NodeId),
    },
    #[error("expected a {0} plan")]
    WrongPlanKind(&'static str),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

impl CertificateError {
    /// True for inputs the conditions cannot be evaluated on (as opposed to
    /// malformed inputs).
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            Self::ZeroIndex { .. } | Self::NoNeighbours { .. } | Self::AssumptionViolated { .. } | Self::Disconnected
        )
    }
}

/// `M = DᵀΘD + Σ` together with Gershgorin weights `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct CertificateProblem {
    graph: Graph,
    theta: Vec<f64>,
    sigma: Vec<f64>,
    s_weights: Vec<f64>,
}

impl CertificateProblem {
    /// `theta` is indexed by node position, `sigma` and `s_weights` by edge.
    pub fn new(graph: Graph, theta: Vec<f64>, sigma: Vec<f64>, s_weights: Vec<f64>) -> Result<Self, CertificateError> {
        if theta.len() != graph.node_count() {
            return Err(CertificateError::Dimension(format!(
                "{} node values for {} nodes",
                theta.len(),
                graph.node_count()
            )));
        }
        for (name, v) in [("sigma", &sigma), ("s", &s_weights)] {
            if v.len() != graph.edge_count() {
                return Err(CertificateError::Dimension(format!(
                    "{} {name} values for {} edges",
                    v.len(),
                    graph.edge_count()
                )));
            }
        }
        if let Some((index, &value)) = s_weights.iter().enumerate().find(|(_, s)| s.is_nan() || **s <= 0.0) {
            return Err(CertificateError::NonPositiveWeight { index, value });
        }
        Ok(Self {
            graph,
            theta,
            sigma,
            s_weights,
        })
    }

    /// Same problem with unit weights.
    pub fn unweighted(graph: Graph, theta: Vec<f64>, sigma: Vec<f64>) -> Result<Self, CertificateError> {
        let s = vec![1.0; graph.edge_count()];
        Self::new(graph, theta, sigma, s)
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn s_weights(&self) -> &[f64] {
        &self.s_weights
    }

    /// Dense `DᵀΘD + Σ`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.graph.incidence_f64();
        let theta = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.theta));
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.sigma));
        d.transpose() * theta * d + sigma
    }
}

/// Outcome of the weighted Gershgorin test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GershgorinResult {
    /// Per edge: `s_k(θ_i + θ_j + σ_k) − Σ_{l≠k, l∋i} s_l|θ_i| − Σ_{l≠k, l∋j} s_l|θ_j|`.
    pub margins: Vec<f64>,
    /// All margins `> tol`.
    pub strict_ok: bool,
    /// All margins `≥ −tol`.
    pub nonstrict_ok: bool,
}

impl GershgorinResult {
    /// The verdict used for certification (strict form).
    pub fn ok(&self) -> bool {
        self.strict_ok
    }
}

pub fn gershgorin_pd_check(prob: &CertificateProblem) -> GershgorinResult {
    gershgorin_pd_check_with(prob, DEFAULT_STRICT_TOL)
}

pub fn gershgorin_pd_check_with(prob: &CertificateProblem, tol: f64) -> GershgorinResult {
    let g = &prob.graph;
    let incident: Vec<Vec<usize>> = g.nodes().iter().map(|&n| g.incident_edges(n)).collect();
    let margins: Vec<f64> = g
        .edges()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let i = g.position(e.plus).unwrap();
            let j = g.position(e.minus).unwrap();
            let (ti, tj) = (prob.theta[i], prob.theta[j]);
            let off = |pos: usize, t: f64| -> f64 {
                incident[pos]
                    .iter()
                    .filter(|&&l| l != k)
                    .map(|&l| prob.s_weights[l] * t.abs())
                    .sum()
            };
            prob.s_weights[k] * (ti + tj + prob.sigma[k]) - off(i, ti) - off(j, tj)
        })
        .collect();
    GershgorinResult {
        strict_ok: margins.iter().all(|m| *m > tol),
        nonstrict_ok: margins.iter().all(|m| *m >= -tol),
        margins,
    }
}

/// Smallest eigenvalue `κ` of `DᵀΘD + Σ`.
pub fn pd_oracle(prob: &CertificateProblem) -> Result<f64, CertificateError> {
    if prob.graph.edge_count() == 0 {
        return Err(CertificateError::NoEdges);
    }
    let eig = SymmetricEigen::new(prob.matrix());
    Ok(eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
}

/// Per-edge local condition
/// `1/ᾱ_ij + ν_i + ν_j − (r_i − 1)|ν_i| − (r_j − 1)|ν_j|`.
pub fn check_edge_condition(nu_i: f64, nu_j: f64, r_i: usize, r_j: usize, alpha_upper: f64) -> f64 {
    1.0 / alpha_upper + nu_i + nu_j - (r_i as f64 - 1.0) * nu_i.abs() - (r_j as f64 - 1.0) * nu_j.abs()
}

/// Passivity indices per node and upper sector bounds per undirected edge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PassivityData {
    pub nu: BTreeMap<NodeId, f64>,
    pub alpha_upper: BTreeMap<EdgeKey, f64>,
}

impl PassivityData {
    pub fn with_nu(mut self, node: NodeId, nu: f64) -> Self {
        self.nu.insert(node, nu);
        self
    }

    pub fn with_alpha(mut self, i: NodeId, j: NodeId, alpha_upper: f64) -> Self {
        self.alpha_upper.insert(EdgeKey::new(i, j), alpha_upper);
        self
    }

    pub fn nu(&self, node: NodeId) -> Result<f64, CertificateError> {
        self.nu.get(&node).copied().ok_or(CertificateError::MissingIndex(node))
    }

    pub fn alpha(&self, i: NodeId, j: NodeId) -> Result<f64, CertificateError> {
        let key = EdgeKey::new(i, j);
        self.alpha_upper
            .get(&key)
            .copied()
            .ok_or(CertificateError::MissingSector(key))
    }

    /// `CertificateProblem` with `θ = ν`, `σ_k = 1/ᾱ_k` and the given weights.
    pub fn problem(&self, graph: &Graph, s_weights: Vec<f64>) -> Result<CertificateProblem, CertificateError> {
        let theta = graph.nodes().iter().map(|&n| self.nu(n)).collect::<Result<_, _>>()?;
        let sigma = graph
            .edges()
            .iter()
            .map(|e| self.alpha(e.plus, e.minus).map(|a| 1.0 / a))
            .collect::<Result<_, _>>()?;
        CertificateProblem::new(graph.clone(), theta, sigma, s_weights)
    }
}

/// One edge's local margin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMargin {
    pub i: NodeId,
    pub j: NodeId,
    pub margin: f64,
}

/// Local condition on every edge of `graph`, with degrees taken in `graph`.
pub fn edge_margins(graph: &Graph, data: &PassivityData) -> Result<Vec<EdgeMargin>, CertificateError> {
    graph
        .edges()
        .iter()
        .map(|e| {
            let (i, j) = (e.plus, e.minus);
            let margin = check_edge_condition(
                data.nu(i)?,
                data.nu(j)?,
                graph.degree(i),
                graph.degree(j),
                data.alpha(i, j)?,
            );
            Ok(EdgeMargin { i, j, margin })
        })
        .collect()
}

/// `γ` for node `c`: the smallest local edge margin at `c` divided by `|ν_c|`.
pub fn compute_gamma(c: NodeId, graph: &Graph, data: &PassivityData) -> Result<f64, CertificateError> {
    let nu_c = data.nu(c)?;
    let neighbours = graph.neighbors(c);
    if neighbours.is_empty() {
        return Err(CertificateError::NoNeighbours { node: c });
    }
    if nu_c == 0.0 {
        return Err(CertificateError::ZeroIndex { node: c });
    }
    let rc = graph.degree(c);
    let mut gamma = f64::INFINITY;
    for j in neighbours {
        let m = check_edge_condition(nu_c, data.nu(j)?, rc, graph.degree(j), data.alpha(c, j)?);
        gamma = gamma.min(m / nu_c.abs());
    }
    Ok(gamma)
}

/// Interface quantities for one boundary edge `(p, q)`, `p` on the base side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMargin {
    pub p: NodeId,
    pub q: NodeId,
    /// `γ_p`, or `γ` of the attachment node for a single-node plug.
    pub gamma_p: Option<f64>,
    pub gamma_q: Option<f64>,
    /// Weight given to the boundary edge (`γ` or `γ_pq`).
    pub gamma: f64,
    pub alpha_upper: f64,
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// Local conditions hold and the eigenvalue oracle confirms `M ≻ 0`.
    Certified,
    /// Some local condition fails, but `M ≻ 0` by the eigenvalue oracle.
    GershgorinFailedOraclePd,
    /// `M` is not positive definite.
    NotPd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlugKind {
    SingleNode,
    Network,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    /// Margins must exceed this to count as strictly positive.
    pub strict_tol: f64,
    /// Skip local conditions and Gershgorin; decide from the eigenvalue alone.
    pub oracle_only: bool,
    /// For network plugs, a boundary node with no intra-network edges adds no
    /// `γ` constraint instead of being rejected.
    pub allow_isolated_side: bool,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            strict_tol: DEFAULT_STRICT_TOL,
            oracle_only: false,
            allow_isolated_side: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateReport {
    pub kind: PlugKind,
    /// Local condition on every pre-existing edge (degrees within each part).
    pub edge_margins: Vec<EdgeMargin>,
    pub boundary: Vec<BoundaryMargin>,
    /// Weighted Gershgorin test on the composed problem; absent in oracle-only
    /// mode or when a boundary weight is not positive.
    pub gershgorin: Option<GershgorinResult>,
    /// Weights used for the composed problem, in composed edge order.
    pub s_weights: Vec<f64>,
    /// `λ_min(DᵀΨD + Λ)` of the composed network.
    pub oracle_min_eigenvalue: f64,
    pub verdict: Verdict,
    /// Edges whose local margin is not strictly positive, as `(i, j)`.
    pub failing_edges: Vec<(NodeId, NodeId)>,
}

impl CertificateReport {
    pub fn is_certified(&self) -> bool {
        self.verdict == Verdict::Certified
    }

    /// Fixed-width text rendering of the report.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let kind = match self.kind {
            PlugKind::SingleNode => "single node",
            PlugKind::Network => "network",
        };
        out.push_str(&format!("plug kind: {kind}\n"));
        out.push_str("edge        local margin\n");
        for m in &self.edge_margins {
            out.push_str(&format!("({:>3},{:>3})   {:>12.6}\n", m.i, m.j, m.margin));
        }
        out.push_str("boundary    gamma_p    gamma_q    gamma      alpha_up   margin\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
        for b in &self.boundary {
            out.push_str(&format!(
                "({:>3},{:>3})   {:>9}  {:>9}  {:>9.4}  {:>9.4}  {:>9.4}\n",
                b.p,
                b.q,
                opt(b.gamma_p),
                opt(b.gamma_q),
                b.gamma,
                b.alpha_upper,
                b.margin
            ));
        }
        if let Some(g) = &self.gershgorin {
            let min = g.margins.iter().copied().fold(f64::INFINITY, f64::min);
            out.push_str(&format!(
                "gershgorin: strict {} / non-strict {} (min row margin {:.3e})\n",
                g.strict_ok, g.nonstrict_ok, min
            ));
        }
        out.push_str(&format!("oracle min eigenvalue: {:.6}\n", self.oracle_min_eigenvalue));
        out.push_str(&format!("verdict: {:?}\n", self.verdict));
        out
    }
}

fn verdict(local_ok: bool, kappa: f64, tol: f64) -> Verdict {
    match (local_ok, kappa > tol) {
        (true, true) => Verdict::Certified,
        (false, true) => Verdict::GershgorinFailedOraclePd,
        (_, false) => Verdict::NotPd,
    }
}

fn oracle_only_report(
    kind: PlugKind,
    composed: &Graph,
    data: &PassivityData,
    tol: f64,
) -> Result<CertificateReport, CertificateError> {
    let prob = data.problem(composed, vec![1.0; composed.edge_count()])?;
    let kappa = pd_oracle(&prob)?;
    Ok(CertificateReport {
        kind,
        edge_margins: Vec::new(),
        boundary: Vec::new(),
        gershgorin: None,
        s_weights: Vec::new(),
        oracle_min_eigenvalue: kappa,
        verdict: if kappa > tol {
            Verdict::Certified
        } else {
            Verdict::NotPd
        },
        failing_edges: Vec::new(),
    })
}

/// Checks a single node plugged into a connected network through one edge.
///
/// The boundary weight is `γ` of the attachment node `c`; the interface
/// margin is `γ(1/ᾱ + ν_new + ν_c) − r_c|ν_c|`, with `r_c` the degree of `c`
/// before the plug.
pub fn certify_single_node_plug(
    plan: &PlugPlan,
    data: &PassivityData,
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertificateError> {
    let crate::graph::Addition::Node(new) = *plan.addition() else {
        return Err(CertificateError::WrongPlanKind("single-node"));
    };
    let base = plan.base();
    if !base.is_connected() {
        return Err(CertificateError::Disconnected);
    }
    let composed = plan.compose();
    if opts.oracle_only {
        return oracle_only_report(PlugKind::SingleNode, &composed, data, opts.strict_tol);
    }
    let (c, _) = plan.boundary()[0];
    let edge_margins = edge_margins(base, data)?;
    let gamma = compute_gamma(c, base, data)?;
    let alpha = data.alpha(new, c)?;
    let nu_c = data.nu(c)?;
    let margin = gamma * (1.0 / alpha + data.nu(new)? + nu_c) - base.degree(c) as f64 * nu_c.abs();
    let boundary = vec![BoundaryMargin {
        p: c,
        q: new,
        gamma_p: Some(gamma),
        gamma_q: None,
        gamma,
        alpha_upper: alpha,
        margin,
    }];
    let mut s_weights = vec![1.0; base.edge_count()];
    s_weights.push(gamma);
    finish(
        PlugKind::SingleNode,
        &composed,
        data,
        edge_margins,
        boundary,
        s_weights,
        opts,
    )
}

/// Checks two connected networks joined through boundary edges.
///
/// Each boundary edge `(p, q)` gets weight `γ_pq = min{γ_p, γ_q}` and the
/// interface margin `γ_pq(1/ᾱ_pq + ν_p + ν_q) − r_p|ν_p| − r_q|ν_q|`, with
/// degrees taken inside each network.
pub fn certify_network_plug(
    plan: &PlugPlan,
    data: &PassivityData,
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertificateError> {
    let crate::graph::Addition::Network(added) = plan.addition() else {
        return Err(CertificateError::WrongPlanKind("network"));
    };
    if let Some((first, second)) = plan.assumption_violation() {
        return Err(CertificateError::AssumptionViolated { first, second });
    }
    let base = plan.base();
    if !base.is_connected() || !added.is_connected() {
        return Err(CertificateError::Disconnected);
    }
    let composed = plan.compose();
    if opts.oracle_only {
        return oracle_only_report(PlugKind::Network, &composed, data, opts.strict_tol);
    }
    let mut edge_margins = edge_margins(base, data)?;
    edge_margins.extend(self::edge_margins(added, data)?);

    let side_gamma = |node: NodeId, g: &Graph| -> Result<Option<f64>, CertificateError> {
        match compute_gamma(node, g, data) {
            Err(CertificateError::NoNeighbours { .. }) if opts.allow_isolated_side => Ok(None),
            other => other.map(Some),
        }
    };
    let mut boundary = Vec::with_capacity(plan.boundary().len());
    for &(p, q) in plan.boundary() {
        let gamma_p = side_gamma(p, base)?;
        let gamma_q = side_gamma(q, added)?;
        let gamma = match (gamma_p, gamma_q) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => return Err(CertificateError::NoNeighbours { node: p }),
        };
        let alpha = data.alpha(p, q)?;
        let (nu_p, nu_q) = (data.nu(p)?, data.nu(q)?);
        let margin = gamma * (1.0 / alpha + nu_p + nu_q)
            - base.degree(p) as f64 * nu_p.abs()
            - added.degree(q) as f64 * nu_q.abs();
        boundary.push(BoundaryMargin {
            p,
            q,
            gamma_p,
            gamma_q,
            gamma,
            alpha_upper: alpha,
            margin,
        });
    }
    let mut s_weights = vec![1.0; base.edge_count() + added.edge_count()];
    s_weights.extend(boundary.iter().map(|b| b.gamma));
    finish(
        PlugKind::Network,
        &composed,
        data,
        edge_margins,
        boundary,
        s_weights,
        opts,
    )
}

fn finish(
    kind: PlugKind,
    composed: &Graph,
    data: &PassivityData,
    edge_margins: Vec<EdgeMargin>,
    boundary: Vec<BoundaryMargin>,
    s_weights: Vec<f64>,
    opts: &CertifyOptions,
) -> Result<CertificateReport, CertificateError> {
    let tol = opts.strict_tol;
    let failing_edges: Vec<(NodeId, NodeId)> = edge_margins
        .iter()
        .map(|m| (m.i, m.j, m.margin))
        .chain(boundary.iter().map(|b| (b.p, b.q, b.margin)))
        .filter(|(_, _, m)| m.is_nan() || *m <= tol)
        .map(|(i, j, _)| (i, j))
        .collect();
    let weighted_ok = s_weights.iter().all(|s| *s > 0.0);
    let gershgorin = if weighted_ok {
        Some(gershgorin_pd_check_with(
            &data.problem(composed, s_weights.clone())?,
            tol,
        ))
    } else {
        None
    };
    let kappa = pd_oracle(&data.problem(composed, vec![1.0; composed.edge_count()])?)?;
    let local_ok = failing_edges.is_empty() && gershgorin.as_ref().is_some_and(|g| g.nonstrict_ok);
    Ok(CertificateReport {
        kind,
        edge_margins,
        boundary,
        gershgorin,
        s_weights,
        oracle_min_eigenvalue: kappa,
        verdict: verdict(local_ok, kappa, tol),
        failing_edges,
    })
}
