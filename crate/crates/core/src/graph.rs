//! Typed risk DAG: nodes with discrete state spaces, explicitly ordered
//! parent lists, and structural validation.
//!
//! The parent list of each node is the only edge storage, so the ordered
//! parent list and the edge set can never disagree. The order is persisted
//! and defines CPT row enumeration.

use std::borrow::Borrow;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Label of the normal-operation state every consequence node must carry.
pub const SAFE_STATE: &str = "safe";

/// Parent count above which validation emits a warning.
pub const PARENT_SOFT_LIMIT: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        Self(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        Self(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        Self(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    Cause,
    Context,
    GateAnd,
    GateOr,
    TopEvent,
    Barrier,
    Event,
    Consequence,
}

impl NodeKind {
    pub const ALL: [NodeKind; 8] = [
        NodeKind::Cause,
        NodeKind::Context,
        NodeKind::GateAnd,
        NodeKind::GateOr,
        NodeKind::TopEvent,
        NodeKind::Barrier,
        NodeKind::Event,
        NodeKind::Consequence,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Cause => "cause",
            NodeKind::Context => "context",
            NodeKind::GateAnd => "gate-and",
            NodeKind::GateOr => "gate-or",
            NodeKind::TopEvent => "top-event",
            NodeKind::Barrier => "barrier",
            NodeKind::Event => "event",
            NodeKind::Consequence => "consequence",
        }
    }

    pub fn is_gate(self) -> bool {
        matches!(self, NodeKind::GateAnd | NodeKind::GateOr)
    }
}

impl fmt::Display for NodeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeKind {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NodeKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| GraphError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndpointMode {
    Poll,
    Push,
}

impl EndpointMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EndpointMode::Poll => "poll",
            EndpointMode::Push => "push",
        }
    }
}

impl FromStr for EndpointMode {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "poll" => Ok(EndpointMode::Poll),
            "push" => Ok(EndpointMode::Push),
            other => Err(GraphError::UnknownEndpointMode(other.to_owned())),
        }
    }
}

/// REST source or notification target attached to a node.
///
/// `threshold` only applies to notification targets: the posterior change
/// that triggers a dispatch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointDescriptor {
    pub url: String,
    pub mode: EndpointMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl EndpointDescriptor {
    pub fn new(url: impl Into<String>, mode: EndpointMode) -> Self {
        Self {
            url: url.into(),
            mode,
            threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskNode {
    pub id: NodeId,
    pub name: String,
    pub kind: NodeKind,
    pub states: Vec<String>,
    #[serde(default)]
    pub activation: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence_source: Option<EndpointDescriptor>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notify_targets: Vec<EndpointDescriptor>,
}

impl RiskNode {
    pub fn new<S: Into<String>>(
        id: impl Into<NodeId>,
        name: impl Into<String>,
        kind: NodeKind,
        states: impl IntoIterator<Item = S>,
    ) -> Self {
        Self {
            id: id.into(),
            name: name.into(),
            kind,
            states: states.into_iter().map(Into::into).collect(),
            activation: false,
            evidence_source: None,
            notify_targets: Vec::new(),
        }
    }

    /// Binary node with states `[false, true]`.
    pub fn boolean(id: impl Into<NodeId>, name: impl Into<String>, kind: NodeKind) -> Self {
        Self::new(id, name, kind, ["false", "true"])
    }

    pub fn with_activation(mut self, flag: bool) -> Self {
        self.activation = flag;
        self
    }

    pub fn with_evidence_source(mut self, source: EndpointDescriptor) -> Self {
        self.evidence_source = Some(source);
        self
    }

    pub fn with_notify_target(mut self, target: EndpointDescriptor) -> Self {
        self.notify_targets.push(target);
        self
    }

    pub fn cardinality(&self) -> usize {
        self.states.len()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.states.iter().position(|s| s == label)
    }

    /// Checks the state-space invariants of a single node.
    pub fn check_states(&self) -> Result<(), GraphError> {
        let mut seen = BTreeSet::new();
        for label in &self.states {
            if label.trim().is_empty() {
                return Err(GraphError::EmptyStateLabel(self.id.clone()));
            }
            if !seen.insert(label.as_str()) {
                return Err(GraphError::DuplicateState {
                    node: self.id.clone(),
                    label: label.clone(),
                });
            }
        }
        if self.states.len() < 2 {
            return Err(GraphError::TooFewStates {
                node: self.id.clone(),
                count: self.states.len(),
            });
        }
        if self.kind == NodeKind::Consequence && self.state_index(SAFE_STATE).is_none() {
            return Err(GraphError::MissingSafeState(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("node `{0}` already exists")]
    DuplicateNode(NodeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("unknown node kind `{0}`")]
    UnknownKind(String),
    #[error("unknown endpoint mode `{0}`")]
    UnknownEndpointMode(String),
    #[error("node `{0}` has an empty state label")]
    EmptyStateLabel(NodeId),
    #[error("node `{node}` has duplicate state label `{label}`")]
    DuplicateState { node: NodeId, label: String },
    #[error("node `{node}` has {count} states; at least 2 are required")]
    TooFewStates { node: NodeId, count: usize },
    #[error("consequence node `{0}` is missing the `safe` state")]
    MissingSafeState(NodeId),
    #[error("self-loop on `{0}`")]
    SelfLoop(NodeId),
    #[error("edge `{parent}` -> `{child}` already exists")]
    DuplicateEdge { parent: NodeId, child: NodeId },
    #[error("edge `{parent}` -> `{child}` does not exist")]
    MissingEdge { parent: NodeId, child: NodeId },
    #[error("edge would close the cycle {}", format_path(.path))]
    Cycle { path: Vec<NodeId> },
    #[error("graph contains a cycle; no topological order exists")]
    NotAcyclic,
    #[error("new parent order for `{0}` is not a permutation of its parents")]
    BadParentOrder(NodeId),
}

fn format_path(path: &[NodeId]) -> String {
    path.iter()
        .map(NodeId::as_str)
        .collect::<Vec<_>>()
        .join(" -> ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "kebab-case")]
pub enum Finding {
    Cycle { path: Vec<NodeId> },
    MissingSafeState { node: NodeId },
    TooFewStates { node: NodeId, count: usize },
    InvalidStateLabels { node: NodeId, detail: String },
    DanglingEdge { parent: NodeId, child: NodeId },
    DuplicateEdge { parent: NodeId, child: NodeId },
    TooManyParents { node: NodeId, count: usize },
}

impl Finding {
    pub fn severity(&self) -> Severity {
        match self {
            Finding::TooManyParents { .. } => Severity::Warning,
            _ => Severity::Error,
        }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Cycle { path } => write!(f, "cycle {}", format_path(path)),
            Finding::MissingSafeState { node } => {
                write!(f, "consequence node `{node}` is missing safe")
            }
            Finding::TooFewStates { node, count } => {
                write!(f, "node `{node}` has {count} states (K < 2)")
            }
            Finding::InvalidStateLabels { node, detail } => {
                write!(f, "node `{node}`: {detail}")
            }
            Finding::DanglingEdge { parent, child } => {
                write!(f, "dangling edge `{parent}` -> `{child}`")
            }
            Finding::DuplicateEdge { parent, child } => {
                write!(f, "duplicate edge `{parent}` -> `{child}`")
            }
            Finding::TooManyParents { node, count } => write!(
                f,
                "node `{node}` has {count} parents (soft limit {PARENT_SOFT_LIMIT})"
            ),
        }
    }
}

/// Structural findings. `findings` holds errors; an empty `findings` list
/// means the model is structurally runtime-ready. `warnings` never block.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_runtime_ready(&self) -> bool {
        self.findings.is_empty()
    }

    fn push(&mut self, finding: Finding) {
        match finding.severity() {
            Severity::Error => self.findings.push(finding),
            Severity::Warning => self.warnings.push(finding),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RiskDag {
    nodes: BTreeMap<NodeId, RiskNode>,
    parents: BTreeMap<NodeId, Vec<NodeId>>,
}

impl RiskDag {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a graph without structural checks. Used by importers so that
    /// broken documents can still be loaded and reported on by [`validate`].
    ///
    /// [`validate`]: RiskDag::validate
    pub fn from_unchecked_parts(
        nodes: impl IntoIterator<Item = RiskNode>,
        edges: impl IntoIterator<Item = (NodeId, NodeId)>,
    ) -> Self {
        let mut dag = RiskDag::default();
        for node in nodes {
            dag.parents.entry(node.id.clone()).or_default();
            dag.nodes.insert(node.id.clone(), node);
        }
        for (parent, child) in edges {
            dag.parents.entry(child).or_default().push(parent);
        }
        dag
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Result<&RiskNode, GraphError> {
        self.nodes
            .get(id)
            .ok_or_else(|| GraphError::UnknownNode(NodeId::from(id)))
    }

    /// Nodes in id order.
    pub fn nodes(&self) -> impl Iterator<Item = &RiskNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &NodeId> {
        self.nodes.keys()
    }

    /// All edges as `(parent, child)`, grouped by child in id order and in
    /// parent order within each child.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        self.parents
            .iter()
            .flat_map(|(child, ps)| ps.iter().map(move |p| (p.clone(), child.clone())))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.values().map(Vec::len).sum()
    }

    pub fn has_edge(&self, parent: &str, child: &str) -> bool {
        self.parents
            .get(child)
            .is_some_and(|ps| ps.iter().any(|p| p.as_str() == parent))
    }

    /// Ordered parent list of `id`.
    pub fn parents(&self, id: &str) -> Result<&[NodeId], GraphError> {
        self.node(id)?;
        Ok(self.parents.get(id).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Children of `id` in id order.
    pub fn children(&self, id: &str) -> Result<Vec<NodeId>, GraphError> {
        self.node(id)?;
        Ok(self
            .parents
            .iter()
            .filter(|(_, ps)| ps.iter().any(|p| p.as_str() == id))
            .map(|(c, _)| c.clone())
            .collect())
    }

    /// Child lists for every node, computed once.
    pub fn children_map(&self) -> BTreeMap<NodeId, Vec<NodeId>> {
        let mut out: BTreeMap<NodeId, Vec<NodeId>> =
            self.nodes.keys().map(|k| (k.clone(), Vec::new())).collect();
        for (child, ps) in &self.parents {
            for p in ps {
                if let Some(list) = out.get_mut(p) {
                    list.push(child.clone());
                }
            }
        }
        out
    }

    pub fn ancestors(&self, id: &str) -> Result<BTreeSet<NodeId>, GraphError> {
        self.node(id)?;
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = self.parents.get(id).into_iter().flatten().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(self.parents.get(n.as_str()).into_iter().flatten());
            }
        }
        Ok(seen)
    }

    pub fn descendants(&self, id: &str) -> Result<BTreeSet<NodeId>, GraphError> {
        self.node(id)?;
        let children = self.children_map();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<&NodeId> = children[id].iter().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n.clone()) {
                queue.extend(children.get(n).into_iter().flatten());
            }
        }
        Ok(seen)
    }

    pub fn add_node(&mut self, node: RiskNode) -> Result<(), GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateNode(node.id));
        }
        node.check_states()?;
        self.parents.entry(node.id.clone()).or_default();
        self.nodes.insert(node.id.clone(), node);
        Ok(())
    }

    /// Removes a node together with all incident edges.
    pub fn remove_node(&mut self, id: &str) -> Result<RiskNode, GraphError> {
        let node = self
            .nodes
            .remove(id)
            .ok_or_else(|| GraphError::UnknownNode(NodeId::from(id)))?;
        self.parents.remove(id);
        for ps in self.parents.values_mut() {
            ps.retain(|p| p.as_str() != id);
        }
        Ok(node)
    }

    /// Appends `parent` to the ordered parent list of `child`.
    pub fn add_edge(&mut self, parent: &str, child: &str) -> Result<(), GraphError> {
        self.node(parent)?;
        self.node(child)?;
        if parent == child {
            return Err(GraphError::SelfLoop(NodeId::from(parent)));
        }
        if self.has_edge(parent, child) {
            return Err(GraphError::DuplicateEdge {
                parent: parent.into(),
                child: child.into(),
            });
        }
        if let Some(mut path) = self.directed_path(child, parent) {
            path.push(NodeId::from(child));
            return Err(GraphError::Cycle { path });
        }
        self.parents
            .entry(NodeId::from(child))
            .or_default()
            .push(NodeId::from(parent));
        Ok(())
    }

    pub fn remove_edge(&mut self, parent: &str, child: &str) -> Result<(), GraphError> {
        if !self.has_edge(parent, child) {
            return Err(GraphError::MissingEdge {
                parent: parent.into(),
                child: child.into(),
            });
        }
        if let Some(ps) = self.parents.get_mut(child) {
            ps.retain(|p| p.as_str() != parent);
        }
        Ok(())
    }

    /// Replaces the parent order of `child` with a permutation of its parents.
    pub fn reorder_parents(&mut self, child: &str, order: &[NodeId]) -> Result<(), GraphError> {
        let current = self.parents(child)?;
        let a: BTreeSet<_> = current.iter().collect();
        let b: BTreeSet<_> = order.iter().collect();
        if a != b || order.len() != current.len() {
            return Err(GraphError::BadParentOrder(child.into()));
        }
        self.parents.insert(child.into(), order.to_vec());
        Ok(())
    }

    pub fn rename_node(&mut self, id: &str, name: impl Into<String>) -> Result<(), GraphError> {
        self.node_mut(id)?.name = name.into();
        Ok(())
    }

    /// Replaces the state list of a node, keeping it valid.
    pub fn set_states(&mut self, id: &str, states: Vec<String>) -> Result<(), GraphError> {
        let mut candidate = self.node(id)?.clone();
        candidate.states = states;
        candidate.check_states()?;
        *self.node_mut(id)? = candidate;
        Ok(())
    }

    pub fn set_activation(&mut self, id: &str, flag: bool) -> Result<(), GraphError> {
        self.node_mut(id)?.activation = flag;
        Ok(())
    }

    pub fn node_mut(&mut self, id: &str) -> Result<&mut RiskNode, GraphError> {
        self.nodes
            .get_mut(id)
            .ok_or_else(|| GraphError::UnknownNode(NodeId::from(id)))
    }

    /// Directed path `from -> ... -> to` over existing edges, if any.
    pub fn directed_path(&self, from: &str, to: &str) -> Option<Vec<NodeId>> {
        let children = self.children_map();
        let mut pred: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let start = self.nodes.get_key_value(from)?.0;
        let mut queue = VecDeque::from([start]);
        let mut seen = BTreeSet::from([start]);
        while let Some(n) = queue.pop_front() {
            if n.as_str() == to {
                let mut path = vec![n.clone()];
                let mut cur = n;
                while let Some(p) = pred.get(cur) {
                    path.push((*p).clone());
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for c in children.get(n).into_iter().flatten() {
                if seen.insert(c) {
                    pred.insert(c, n);
                    queue.push_back(c);
                }
            }
        }
        None
    }

    /// Kahn's algorithm; ties resolved in id order.
    pub fn topological_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let (order, complete) = self.partial_topological_order();
        if complete {
            Ok(order)
        } else {
            Err(GraphError::NotAcyclic)
        }
    }

    /// Topological prefix over the acyclic part; the flag reports whether
    /// every node was ordered.
    pub(crate) fn partial_topological_order(&self) -> (Vec<NodeId>, bool) {
        let children = self.children_map();
        let mut indegree: BTreeMap<&NodeId, usize> = self
            .nodes
            .keys()
            .map(|id| {
                let d = self
                    .parents
                    .get(id)
                    .map(|ps| ps.iter().filter(|p| self.nodes.contains_key(*p)).count())
                    .unwrap_or(0);
                (id, d)
            })
            .collect();
        let mut ready: BTreeSet<&NodeId> = indegree
            .iter()
            .filter(|(_, d)| **d == 0)
            .map(|(id, _)| *id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.clone());
            for c in &children[n] {
                let Some(d) = indegree.get_mut(c) else {
                    continue;
                };
                *d -= 1;
                if *d == 0 {
                    ready.insert(c);
                }
            }
        }
        let complete = order.len() == self.nodes.len();
        (order, complete)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();

        for node in self.nodes.values() {
            match node.check_states() {
                Ok(()) => {}
                Err(GraphError::TooFewStates { node, count }) => {
                    report.push(Finding::TooFewStates { node, count })
                }
                Err(GraphError::MissingSafeState(node)) => {
                    report.push(Finding::MissingSafeState { node })
                }
                Err(e) => report.push(Finding::InvalidStateLabels {
                    node: node.id.clone(),
                    detail: e.to_string(),
                }),
            }
            // check_states stops at the first problem; K < 2 must not hide a
            // missing safe state.
            if node.kind == NodeKind::Consequence
                && node.states.len() < 2
                && node.state_index(SAFE_STATE).is_none()
            {
                report.push(Finding::MissingSafeState {
                    node: node.id.clone(),
                });
            }
        }

        for (child, ps) in &self.parents {
            let mut seen = BTreeSet::new();
            for p in ps {
                if !self.nodes.contains_key(p) || !self.nodes.contains_key(child) {
                    report.push(Finding::DanglingEdge {
                        parent: p.clone(),
                        child: child.clone(),
                    });
                } else if !seen.insert(p) {
                    report.push(Finding::DuplicateEdge {
                        parent: p.clone(),
                        child: child.clone(),
                    });
                }
            }
            if self.nodes.contains_key(child) && seen.len() > PARENT_SOFT_LIMIT {
                report.push(Finding::TooManyParents {
                    node: child.clone(),
                    count: seen.len(),
                });
            }
        }

        for path in self.cycles() {
            report.push(Finding::Cycle { path });
        }
        report
    }

    /// One witness cycle per cyclic strongly connected component.
    fn cycles(&self) -> Vec<Vec<NodeId>> {
        let children = self.children_map();
        let mut out = Vec::new();
        for component in self.strongly_connected_components(&children) {
            let start = component.iter().next().expect("non-empty component").clone();
            let self_loop = children[&start].contains(&start);
            if component.len() == 1 && !self_loop {
                continue;
            }
            if self_loop {
                out.push(vec![start.clone(), start]);
                continue;
            }
            // Shortest path from start back to itself inside the component.
            let mut pred: BTreeMap<NodeId, NodeId> = BTreeMap::new();
            let mut queue = VecDeque::from([start.clone()]);
            let mut seen = BTreeSet::from([start.clone()]);
            let mut closing = None;
            'bfs: while let Some(n) = queue.pop_front() {
                for c in &children[&n] {
                    if !component.contains(c) {
                        continue;
                    }
                    if *c == start {
                        closing = Some(n.clone());
                        break 'bfs;
                    }
                    if seen.insert(c.clone()) {
                        pred.insert(c.clone(), n.clone());
                        queue.push_back(c.clone());
                    }
                }
            }
            let last = closing.expect("component is cyclic");
            let mut path = vec![last.clone()];
            let mut cur = last;
            while let Some(p) = pred.get(&cur) {
                path.push(p.clone());
                cur = p.clone();
            }
            path.reverse();
            path.push(start);
            out.push(path);
        }
        out
    }

    /// Kosaraju over existing nodes; components in order of their smallest id.
    fn strongly_connected_components(
        &self,
        children: &BTreeMap<NodeId, Vec<NodeId>>,
    ) -> Vec<BTreeSet<NodeId>> {
        let mut finished: Vec<&NodeId> = Vec::new();
        let mut visited: BTreeSet<&NodeId> = BTreeSet::new();
        for root in self.nodes.keys() {
            if visited.contains(root) {
                continue;
            }
            visited.insert(root);
            let mut stack: Vec<(&NodeId, usize)> = vec![(root, 0)];
            while let Some((n, i)) = stack.pop() {
                let cs = &children[n];
                if i < cs.len() {
                    stack.push((n, i + 1));
                    let c = &cs[i];
                    if visited.insert(c) {
                        stack.push((c, 0));
                    }
                } else {
                    finished.push(n);
                }
            }
        }

        let mut assigned: BTreeSet<&NodeId> = BTreeSet::new();
        let mut components = Vec::new();
        for root in finished.into_iter().rev() {
            if assigned.contains(root) {
                continue;
            }
            let mut component = BTreeSet::new();
            let mut stack = vec![root];
            assigned.insert(root);
            while let Some(n) = stack.pop() {
                component.insert(n.clone());
                for p in self.parents.get(n).into_iter().flatten() {
                    if let Some((k, _)) = self.nodes.get_key_value(p) {
                        if assigned.insert(k) {
                            stack.push(k);
                        }
                    }
                }
            }
            components.push(component);
        }
        components.sort();
        components
    }

    /// Induced subgraph on `ids` plus the parents of every node in `ids`,
    /// so that every requested node keeps its full ordered parent list.
    /// Boundary parents keep only those of their own parents that are
    /// retained.
    pub fn extract_subgraph<'a, I>(&self, ids: I) -> Result<RiskDag, GraphError>
    where
        I: IntoIterator<Item = &'a NodeId>,
    {
        let mut retained = BTreeSet::new();
        for id in ids {
            retained.insert(id.clone());
            retained.extend(self.parents(id.as_str())?.iter().cloned());
        }
        let mut sub = RiskDag::default();
        for id in &retained {
            let node = self.nodes[id].clone();
            sub.parents.insert(id.clone(), Vec::new());
            sub.nodes.insert(id.clone(), node);
        }
        for id in &retained {
            let kept: Vec<NodeId> = self.parents[id]
                .iter()
                .filter(|p| retained.contains(*p))
                .cloned()
                .collect();
            sub.parents.insert(id.clone(), kept);
        }
        Ok(sub)
    }

    /// Parents pulled in by [`extract_subgraph`](RiskDag::extract_subgraph)
    /// that were not requested.
    pub fn boundary_parents<'a, I>(&self, ids: I) -> Result<BTreeSet<NodeId>, GraphError>
    where
        I: IntoIterator<Item = &'a NodeId> + Clone,
    {
        let scope: BTreeSet<&NodeId> = ids.clone().into_iter().collect();
        let mut out = BTreeSet::new();
        for id in ids {
            for p in self.parents(id.as_str())? {
                if !scope.contains(p) {
                    out.insert(p.clone());
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::{IndexedRandom, SliceRandom};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn boolean(id: &str) -> RiskNode {
        RiskNode::boolean(id, id.to_uppercase(), NodeKind::Event)
    }

    fn chain(ids: &[&str]) -> RiskDag {
        let mut dag = RiskDag::new();
        for id in ids {
            dag.add_node(boolean(id)).unwrap();
        }
        for w in ids.windows(2) {
            dag.add_edge(w[0], w[1]).unwrap();
        }
        dag
    }

    #[test]
    fn add_node_to_empty_graph() {
        let mut dag = RiskDag::new();
        dag.add_node(boolean("a")).unwrap();
        assert_eq!(dag.len(), 1);
        assert_eq!(dag.edge_count(), 0);
    }

    #[test]
    fn duplicate_node_rejected() {
        let mut dag = chain(&["a"]);
        assert_eq!(
            dag.add_node(boolean("a")),
            Err(GraphError::DuplicateNode("a".into()))
        );
    }

    #[test]
    fn consequence_without_safe_rejected() {
        let mut dag = chain(&["a"]);
        let c = RiskNode::new("c", "C", NodeKind::Consequence, ["degraded", "loss"]);
        assert_eq!(
            dag.add_node(c),
            Err(GraphError::MissingSafeState("c".into()))
        );
    }

    #[test]
    fn bad_state_labels_rejected() {
        let mut dag = RiskDag::new();
        let empty = RiskNode::new("x", "X", NodeKind::Event, ["a", " "]);
        assert!(matches!(
            dag.add_node(empty),
            Err(GraphError::EmptyStateLabel(_))
        ));
        let dup = RiskNode::new("x", "X", NodeKind::Event, ["a", "a"]);
        assert!(matches!(
            dag.add_node(dup),
            Err(GraphError::DuplicateState { .. })
        ));
        let single = RiskNode::new("x", "X", NodeKind::Event, ["a"]);
        assert!(matches!(
            dag.add_node(single),
            Err(GraphError::TooFewStates { count: 1, .. })
        ));
    }

    #[test]
    fn edges_and_cycles() {
        let mut dag = chain(&["a", "b"]);
        assert!(dag.has_edge("a", "b"));
        assert_eq!(
            dag.add_edge("b", "a"),
            Err(GraphError::Cycle {
                path: vec!["a".into(), "b".into(), "a".into()]
            })
        );
        assert_eq!(dag.add_edge("a", "a"), Err(GraphError::SelfLoop("a".into())));
        assert!(matches!(
            dag.add_edge("a", "b"),
            Err(GraphError::DuplicateEdge { .. })
        ));
        assert!(matches!(
            dag.add_edge("a", "zz"),
            Err(GraphError::UnknownNode(_))
        ));
    }

    #[test]
    fn parent_list_follows_insertion_order() {
        let mut dag = RiskDag::new();
        for id in ["c", "a", "b"] {
            dag.add_node(boolean(id)).unwrap();
        }
        dag.add_edge("b", "c").unwrap();
        dag.add_edge("a", "c").unwrap();
        assert_eq!(dag.parents("c").unwrap(), &["b".into(), "a".into()] as &[NodeId]);
        dag.reorder_parents("c", &["a".into(), "b".into()]).unwrap();
        assert_eq!(dag.parents("c").unwrap()[0].as_str(), "a");
        assert!(dag.reorder_parents("c", &["a".into()]).is_err());
    }

    #[test]
    fn valid_chain_has_empty_report() {
        let dag = chain(&["a", "b", "c"]);
        assert_eq!(dag.validate(), ValidationReport::default());
        assert_eq!(
            dag.topological_order().unwrap(),
            vec![NodeId::from("a"), "b".into(), "c".into()]
        );
    }

    #[test]
    fn consequence_missing_safe_found_by_validate() {
        let c = RiskNode::new("c", "C", NodeKind::Consequence, ["degraded", "loss"]);
        let dag = RiskDag::from_unchecked_parts([c], []);
        assert_eq!(
            dag.validate().findings,
            vec![Finding::MissingSafeState { node: "c".into() }]
        );
    }

    #[test]
    fn dangling_edge_and_soft_limit() {
        let dag = RiskDag::from_unchecked_parts(
            [boolean("a")],
            [(NodeId::from("ghost"), NodeId::from("a"))],
        );
        assert_eq!(
            dag.validate().findings,
            vec![Finding::DanglingEdge {
                parent: "ghost".into(),
                child: "a".into()
            }]
        );

        let mut wide = RiskDag::new();
        wide.add_node(boolean("x")).unwrap();
        for i in 0..6 {
            let id = format!("p{i}");
            wide.add_node(boolean(&id)).unwrap();
            wide.add_edge(&id, "x").unwrap();
        }
        let report = wide.validate();
        assert!(report.is_runtime_ready());
        assert_eq!(
            report.warnings,
            vec![Finding::TooManyParents { node: "x".into(), count: 6 }]
        );
    }

    #[test]
    fn diamond_ancestry_and_subgraph() {
        let mut dag = RiskDag::new();
        for id in ["a", "b", "c", "d"] {
            dag.add_node(boolean(id)).unwrap();
        }
        for (p, c) in [("a", "b"), ("a", "c"), ("b", "d"), ("c", "d")] {
            dag.add_edge(p, c).unwrap();
        }
        let anc: Vec<_> = dag.ancestors("d").unwrap().into_iter().collect();
        assert_eq!(anc, vec![NodeId::from("a"), "b".into(), "c".into()]);
        let desc: Vec<_> = dag.descendants("a").unwrap().into_iter().collect();
        assert_eq!(desc, vec![NodeId::from("b"), "c".into(), "d".into()]);

        let ab = chain(&["a", "b"]);
        let sub = ab.extract_subgraph([&NodeId::from("b")]).unwrap();
        assert!(sub.contains("a") && sub.contains("b"));
        assert!(sub.has_edge("a", "b"));
        assert!(ab.extract_subgraph([&NodeId::from("nope")]).is_err());
    }

    #[test]
    fn remove_node_drops_incident_edges() {
        let mut dag = chain(&["a", "b", "c"]);
        dag.remove_node("b").unwrap();
        assert_eq!(dag.edge_count(), 0);
        assert!(dag.validate().is_runtime_ready());
    }

    fn random_dag(rng: &mut ChaCha8Rng, n: usize, p: f64) -> (RiskDag, Vec<NodeId>) {
        let mut ids: Vec<NodeId> = (0..n).map(|i| NodeId::new(format!("n{i}"))).collect();
        ids.shuffle(rng);
        let mut dag = RiskDag::new();
        for id in &ids {
            dag.add_node(boolean(id.as_str())).unwrap();
        }
        // `ids` order is a topological order of the generated graph.
        for j in 0..n {
            for i in 0..j {
                if rng.random_bool(p) {
                    dag.add_edge(ids[i].as_str(), ids[j].as_str()).unwrap();
                }
            }
        }
        (dag, ids)
    }

    #[test]
    fn one_back_edge_gives_exactly_one_cycle_finding() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut checked = 0;
        while checked < 50 {
            let (dag, order) = random_dag(&mut rng, 10, 0.3);
            let edges = dag.edges();
            // Back edge from a descendant to an ancestor closes a cycle.
            let Some((p, c)) = edges.choose(&mut rng).cloned() else {
                continue;
            };
            let _ = order;
            let nodes: Vec<RiskNode> = dag.nodes().cloned().collect();
            let mut mutated_edges = edges.clone();
            mutated_edges.push((c.clone(), p.clone()));
            let broken = RiskDag::from_unchecked_parts(nodes, mutated_edges);
            let report = broken.validate();
            let cycles: Vec<_> = report
                .findings
                .iter()
                .filter(|f| matches!(f, Finding::Cycle { .. }))
                .collect();
            assert_eq!(cycles.len(), 1, "{report:?}");
            if let Finding::Cycle { path } = cycles[0] {
                assert_eq!(path.first(), path.last());
                for w in path.windows(2) {
                    assert!(broken.has_edge(w[0].as_str(), w[1].as_str()));
                }
            }
            assert!(broken.topological_order().is_err());
            checked += 1;
        }
    }

    #[test]
    fn random_edit_sequences_stay_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let mut dag = RiskDag::new();
            let ids: Vec<String> = (0..8).map(|i| format!("v{i}")).collect();
            for id in &ids {
                dag.add_node(boolean(id)).unwrap();
            }
            for _ in 0..40 {
                let a = &ids[rng.random_range(0..ids.len())];
                let b = &ids[rng.random_range(0..ids.len())];
                if rng.random_bool(0.75) {
                    let _ = dag.add_edge(a, b);
                } else {
                    let _ = dag.remove_edge(a, b);
                }
            }
            assert!(dag.validate().findings.is_empty());
            assert!(dag.topological_order().is_ok());
            for id in &ids {
                assert!(!dag.ancestors(id).unwrap().contains(id.as_str()));
            }
            let scope: Vec<NodeId> = ids[..3].iter().map(|s| NodeId::from(s.as_str())).collect();
            let sub = dag.extract_subgraph(scope.iter()).unwrap();
            assert!(!sub
                .validate()
                .findings
                .iter()
                .any(|f| matches!(f, Finding::DanglingEdge { .. })));
            for id in &scope {
                assert_eq!(sub.parents(id.as_str()).unwrap(), dag.parents(id.as_str()).unwrap());
            }
        }
    }
}
