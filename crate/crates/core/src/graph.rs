//! Undirected graphs with a fixed edge orientation and incidence algebra.
//!
//! Every edge carries a `+` end and a `-` end. The orientation is chosen once
//! at construction and never changes, so column `k` of the incidence matrix
//! always refers to the same edge. Intra-network edges put the smaller label
//! at the `+` end; edges created by a [`PlugPlan`] follow the plan's rule.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Node label. Labels are preserved across composition.
pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("self-loop at node {0}")]
    SelfLoop(NodeId),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(NodeId, NodeId),
    #[error("duplicate node label {0}")]
    DuplicateNode(NodeId),
    #[error("edge ({0}, {1}) references an unknown node")]
    UnknownNode(NodeId, NodeId),
    #[error("boundary edge ({0}, {1}) must join node {0} of the base graph to node {1} of the added part")]
    BoundaryMisplaced(NodeId, NodeId),
    #[error("plan has no boundary edges")]
    NoBoundary,
}

/// An oriented edge: `plus` is the `+` end, `minus` the `-` end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub plus: NodeId,
    pub minus: NodeId,
}

impl Edge {
    pub fn new(plus: NodeId, minus: NodeId) -> Self {
        Self { plus, minus }
    }

    /// Unordered key `(min, max)` identifying the undirected edge.
    pub fn key(&self) -> EdgeKey {
        EdgeKey::new(self.plus, self.minus)
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.plus == node || self.minus == node
    }

    /// The opposite end, if `node` is one of the ends.
    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if self.plus == node {
            Some(self.minus)
        } else if self.minus == node {
            Some(self.plus)
        } else {
            None
        }
    }
}

impl fmt::Display for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.plus, self.minus)
    }
}

/// Orientation-free edge identifier, always stored as `(min, max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EdgeKey(pub NodeId, pub NodeId);

impl EdgeKey {
    pub fn new(i: NodeId, j: NodeId) -> Self {
        if i <= j {
            Self(i, j)
        } else {
            Self(j, i)
        }
    }
}

impl fmt::Display for EdgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.0, self.1)
    }
}

/// Immutable undirected graph with ordered nodes and ordered, oriented edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: Vec<NodeId>,
    edges: Vec<Edge>,
    position: BTreeMap<NodeId, usize>,
}

impl Graph {
    /// Builds a graph from unordered pairs; the smaller label becomes the `+` end.
    pub fn new(nodes: &[NodeId], pairs: &[(NodeId, NodeId)]) -> Result<Self, GraphError> {
        let edges = pairs.iter().map(|&(i, j)| Edge::new(i.min(j), i.max(j))).collect();
        Self::from_oriented(nodes.to_vec(), edges)
    }

    /// Builds a graph keeping the given orientations verbatim.
    pub fn from_oriented(nodes: Vec<NodeId>, edges: Vec<Edge>) -> Result<Self, GraphError> {
        let mut position = BTreeMap::new();
        for (idx, &n) in nodes.iter().enumerate() {
            if position.insert(n, idx).is_some() {
                return Err(GraphError::DuplicateNode(n));
            }
        }
        let mut seen = BTreeSet::new();
        for e in &edges {
            if e.plus == e.minus {
                return Err(GraphError::SelfLoop(e.plus));
            }
            if !position.contains_key(&e.plus) || !position.contains_key(&e.minus) {
                return Err(GraphError::UnknownNode(e.plus, e.minus));
            }
            if !seen.insert(e.key()) {
                return Err(GraphError::DuplicateEdge(e.plus, e.minus));
            }
        }
        Ok(Self { nodes, edges, position })
    }

    pub fn single(node: NodeId) -> Self {
        Self {
            nodes: vec![node],
            edges: Vec::new(),
            position: BTreeMap::from([(node, 0)]),
        }
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Row index of `node` in the incidence matrix.
    pub fn position(&self, node: NodeId) -> Option<usize> {
        self.position.get(&node).copied()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        self.position.contains_key(&node)
    }

    /// Column index of the undirected edge `{i, j}`.
    pub fn edge_index(&self, i: NodeId, j: NodeId) -> Option<usize> {
        let key = EdgeKey::new(i, j);
        self.edges.iter().position(|e| e.key() == key)
    }

    pub fn has_edge(&self, i: NodeId, j: NodeId) -> bool {
        self.edge_index(i, j).is_some()
    }

    /// Indices of the edges incident to `node` (the set `L_i^+ ∪ L_i^-`).
    pub fn incident_edges(&self, node: NodeId) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.touches(node))
            .map(|(k, _)| k)
            .collect()
    }

    /// Edges where `node` is the `+` end.
    pub fn positive_edges(&self, node: NodeId) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.plus == node)
            .map(|(k, _)| k)
            .collect()
    }

    /// Edges where `node` is the `-` end.
    pub fn negative_edges(&self, node: NodeId) -> Vec<usize> {
        self.edges
            .iter()
            .enumerate()
            .filter(|(_, e)| e.minus == node)
            .map(|(k, _)| k)
            .collect()
    }

    pub fn neighbors(&self, node: NodeId) -> Vec<NodeId> {
        self.edges.iter().filter_map(|e| e.other(node)).collect()
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.edges.iter().filter(|e| e.touches(node)).count()
    }

    /// Node-by-edge incidence matrix with entries in {-1, 0, +1}.
    pub fn incidence(&self) -> DMatrix<i32> {
        let mut d = DMatrix::zeros(self.nodes.len(), self.edges.len());
        for (k, e) in self.edges.iter().enumerate() {
            d[(self.position[&e.plus], k)] = 1;
            d[(self.position[&e.minus], k)] = -1;
        }
        d
    }

    pub fn incidence_f64(&self) -> DMatrix<f64> {
        self.incidence().map(f64::from)
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Connected components, each listed in BFS order from its smallest-position node.
    pub fn components(&self) -> Vec<Vec<NodeId>> {
        let mut adjacency: BTreeMap<NodeId, Vec<NodeId>> = self.nodes.iter().map(|&n| (n, Vec::new())).collect();
        for e in &self.edges {
            adjacency.get_mut(&e.plus).unwrap().push(e.minus);
            adjacency.get_mut(&e.minus).unwrap().push(e.plus);
        }
        let mut visited = BTreeSet::new();
        let mut out = Vec::new();
        for &start in &self.nodes {
            if !visited.insert(start) {
                continue;
            }
            let mut comp = vec![start];
            let mut queue = VecDeque::from([start]);
            while let Some(n) = queue.pop_front() {
                for &m in &adjacency[&n] {
                    if visited.insert(m) {
                        comp.push(m);
                        queue.push_back(m);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    /// Appends nodes and oriented edges, keeping the existing order as a leading block.
    pub fn extended(&self, new_nodes: &[NodeId], new_edges: &[Edge]) -> Result<Self, GraphError> {
        let mut nodes = self.nodes.clone();
        nodes.extend_from_slice(new_nodes);
        let mut edges = self.edges.clone();
        edges.extend_from_slice(new_edges);
        Self::from_oriented(nodes, edges)
    }

    /// Disjoint union: `self`'s nodes and edges first, then `other`'s.
    pub fn disjoint_union(&self, other: &Graph) -> Result<Self, GraphError> {
        self.extended(&other.nodes, &other.edges)
    }

    /// Removes the listed undirected edges (missing ones are ignored).
    pub fn without_edges(&self, removed: &[(NodeId, NodeId)]) -> Self {
        let keys: BTreeSet<EdgeKey> = removed.iter().map(|&(i, j)| EdgeKey::new(i, j)).collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| !keys.contains(&e.key()))
            .collect();
        Self::from_oriented(self.nodes.clone(), edges).expect("subgraph of a valid graph")
    }

    /// Subgraph induced by `keep`, in this graph's node and edge order.
    pub fn induced(&self, keep: &[NodeId]) -> Self {
        let keep: BTreeSet<NodeId> = keep.iter().copied().collect();
        let nodes = self.nodes.iter().copied().filter(|n| keep.contains(n)).collect();
        let edges = self
            .edges
            .iter()
            .copied()
            .filter(|e| keep.contains(&e.plus) && keep.contains(&e.minus))
            .collect();
        Self::from_oriented(nodes, edges).expect("subgraph of a valid graph")
    }
}

/// What a plug-and-play step attaches to the base graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Addition {
    /// A single new system joined through exactly one edge.
    Node(NodeId),
    /// A whole subnetwork joined through a set of boundary edges.
    Network(Graph),
}

/// A validated plug-and-play interconnection.
///
/// Boundary edges are stored as `(base node, added node)`. For a single-node
/// plug the new node is the `+` end of the new edge; for a network plug the
/// base-side node is the `+` end.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlugPlan {
    base: Graph,
    added: Addition,
    boundary: Vec<(NodeId, NodeId)>,
}

impl PlugPlan {
    /// Attach `new_node` to `attach_to` in `base` through one edge.
    pub fn single_node(base: Graph, new_node: NodeId, attach_to: NodeId) -> Result<Self, GraphError> {
        if base.contains(new_node) {
            return Err(GraphError::DuplicateNode(new_node));
        }
        if !base.contains(attach_to) {
            return Err(GraphError::BoundaryMisplaced(attach_to, new_node));
        }
        Ok(Self {
            base,
            added: Addition::Node(new_node),
            boundary: vec![(attach_to, new_node)],
        })
    }

    /// Join `added` to `base` through `boundary`, each pair given as `(p, q)` with
    /// `p` in `base` and `q` in `added`.
    pub fn network(base: Graph, added: Graph, boundary: Vec<(NodeId, NodeId)>) -> Result<Self, GraphError> {
        if let Some(&dup) = added.nodes().iter().find(|n| base.contains(**n)) {
            return Err(GraphError::DuplicateNode(dup));
        }
        if boundary.is_empty() {
            return Err(GraphError::NoBoundary);
        }
        let mut seen = BTreeSet::new();
        for &(p, q) in &boundary {
            if !base.contains(p) || !added.contains(q) {
                if base.contains(q) && added.contains(p) {
                    return Err(GraphError::BoundaryMisplaced(p, q));
                }
                return Err(GraphError::UnknownNode(p, q));
            }
            if !seen.insert(EdgeKey::new(p, q)) {
                return Err(GraphError::DuplicateEdge(p, q));
            }
        }
        Ok(Self {
            base,
            added: Addition::Network(added),
            boundary,
        })
    }

    pub fn base(&self) -> &Graph {
        &self.base
    }

    pub fn addition(&self) -> &Addition {
        &self.added
    }

    /// The added part as a graph (a single isolated node for [`Addition::Node`]).
    pub fn added_graph(&self) -> Graph {
        match &self.added {
            Addition::Node(n) => Graph::single(*n),
            Addition::Network(g) => g.clone(),
        }
    }

    /// Boundary edges as `(base node, added node)`.
    pub fn boundary(&self) -> &[(NodeId, NodeId)] {
        &self.boundary
    }

    /// Boundary edges with the orientation they receive in the composed graph.
    pub fn boundary_edges(&self) -> Vec<Edge> {
        self.boundary
            .iter()
            .map(|&(p, q)| match self.added {
                Addition::Node(_) => Edge::new(q, p),
                Addition::Network(_) => Edge::new(p, q),
            })
            .collect()
    }

    /// True iff no two boundary edges share adjacent endpoints on either side.
    pub fn check_assumption_1(&self) -> bool {
        self.assumption_violation().is_none()
    }

    /// First pair of boundary edges violating the non-adjacency requirement.
    pub fn assumption_violation(&self) -> Option<((NodeId, NodeId), (NodeId, NodeId))> {
        let added = self.added_graph();
        for (r, &(ir, jr)) in self.boundary.iter().enumerate() {
            for &(is, js) in &self.boundary[r + 1..] {
                if self.base.has_edge(ir, is) || added.has_edge(jr, js) {
                    return Some(((ir, jr), (is, js)));
                }
            }
        }
        None
    }

    /// Augmented graph: base nodes and edges first, then the added part, then
    /// the boundary edges.
    pub fn compose(&self) -> Graph {
        let added = self.added_graph();
        self.base
            .disjoint_union(&added)
            .and_then(|g| g.extended(&[], &self.boundary_edges()))
            .expect("plan validated at construction")
    }

    /// Splits a composed graph back into `(base, added)`.
    pub fn decompose(&self, composed: &Graph) -> (Graph, Graph) {
        let stripped = composed.without_edges(&self.boundary);
        let added = self.added_graph();
        (stripped.induced(self.base.nodes()), stripped.induced(added.nodes()))
    }
}
