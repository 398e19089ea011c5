//! Structural causal queries and interventions by truncated factorization.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpt::{Cpt, CptError, CptRow, CptSet, RowStatus};
use crate::graph::{GraphError, NodeId, RiskDag};
use crate::inference::{posterior, Evidence, InferenceError};

/// Largest candidate pool for exhaustive backdoor enumeration.
pub const BACKDOOR_CANDIDATE_LIMIT: usize = 20;
/// Upper bound on trails returned by a single query.
pub const TRAIL_LIMIT: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CausalError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Cpt(#[from] CptError),
    #[error("`{0}` appears in more than one node set")]
    Overlap(NodeId),
    #[error("node set must not be empty")]
    EmptySet,
    #[error("{count} backdoor candidates exceed the limit of {limit}")]
    TooManyCandidates { count: usize, limit: usize },
    #[error("more than {0} trails")]
    TooManyTrails(usize),
    #[error("state {state} out of range for `{node}`")]
    StateOutOfRange { node: NodeId, state: usize },
    #[error("`{0}` is both observed and intervened on")]
    EvidenceOnIntervened(NodeId),
}

/// Forced state index per intervened node.
pub type Intervention = BTreeMap<NodeId, usize>;

fn check_nodes(dag: &RiskDag, sets: &[&BTreeSet<NodeId>]) -> Result<(), CausalError> {
    let mut seen = BTreeSet::new();
    for set in sets {
        for id in set.iter() {
            dag.node(id.as_str())?;
            if !seen.insert(id) {
                return Err(CausalError::Overlap(id.clone()));
            }
        }
    }
    Ok(())
}

fn ancestors_of_set(dag: &RiskDag, z: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>, GraphError> {
    let mut out = z.clone();
    for id in z {
        out.extend(dag.ancestors(id.as_str())?);
    }
    Ok(out)
}

/// Nodes reachable from `x` along trails that are active given `z`.
fn reachable(dag: &RiskDag, x: &BTreeSet<NodeId>, z: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>, GraphError> {
    let an_z = ancestors_of_set(dag, z)?;
    let children = dag.children_map();
    let mut visited: BTreeSet<(NodeId, bool)> = BTreeSet::new();
    let mut queue: VecDeque<(NodeId, bool)> = x.iter().map(|id| (id.clone(), true)).collect();
    let mut out = BTreeSet::new();
    // `up` means the trail arrived from a child.
    while let Some((node, up)) = queue.pop_front() {
        if !visited.insert((node.clone(), up)) {
            continue;
        }
        let observed = z.contains(&node);
        if !observed {
            out.insert(node.clone());
        }
        let kids = children.get(&node).map(Vec::as_slice).unwrap_or(&[]);
        if up && !observed {
            for p in dag.parents(node.as_str())? {
                queue.push_back((p.clone(), true));
            }
            for c in kids {
                queue.push_back((c.clone(), false));
            }
        } else if !up {
            if !observed {
                for c in kids {
                    queue.push_back((c.clone(), false));
                }
            }
            if an_z.contains(&node) {
                for p in dag.parents(node.as_str())? {
                    queue.push_back((p.clone(), true));
                }
            }
        }
    }
    Ok(out)
}

/// Whether every trail between `x` and `y` is blocked given `z`.
pub fn d_separated(
    dag: &RiskDag,
    x: &BTreeSet<NodeId>,
    y: &BTreeSet<NodeId>,
    z: &BTreeSet<NodeId>,
) -> Result<bool, CausalError> {
    check_nodes(dag, &[x, y, z])?;
    if x.is_empty() || y.is_empty() {
        return Err(CausalError::EmptySet);
    }
    let reach = reachable(dag, x, z)?;
    Ok(y.iter().all(|id| !reach.contains(id)))
}

fn neighbours(dag: &RiskDag, children: &BTreeMap<NodeId, Vec<NodeId>>, id: &NodeId) -> Result<Vec<NodeId>, GraphError> {
    let mut out: BTreeSet<NodeId> = dag.parents(id.as_str())?.iter().cloned().collect();
    if let Some(kids) = children.get(id) {
        out.extend(kids.iter().cloned());
    }
    Ok(out.into_iter().collect())
}

/// Whether the middle node of `a - m - b` passes the trail given `z`.
fn passes(dag: &RiskDag, a: &NodeId, m: &NodeId, b: &NodeId, z: &BTreeSet<NodeId>, an_z: &BTreeSet<NodeId>) -> bool {
    let collider = dag.has_edge(a.as_str(), m.as_str()) && dag.has_edge(b.as_str(), m.as_str());
    if collider {
        an_z.contains(m)
    } else {
        !z.contains(m)
    }
}

/// Every simple trail from a node of `x` to a node of `y` that is active
/// given `z`, ordered by length then by node ids.
pub fn d_connected_trails(
    dag: &RiskDag,
    x: &BTreeSet<NodeId>,
    y: &BTreeSet<NodeId>,
    z: &BTreeSet<NodeId>,
) -> Result<Vec<Vec<NodeId>>, CausalError> {
    check_nodes(dag, &[x, y, z])?;
    if x.is_empty() || y.is_empty() {
        return Err(CausalError::EmptySet);
    }
    let an_z = ancestors_of_set(dag, z)?;
    let children = dag.children_map();
    let mut trails = Vec::new();
    for start in x {
        let mut path = vec![start.clone()];
        let mut on_path: BTreeSet<NodeId> = [start.clone()].into();
        extend_trails(dag, &children, y, z, &an_z, &mut path, &mut on_path, &mut trails)?;
    }
    trails.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(trails)
}

#[allow(clippy::too_many_arguments)]
fn extend_trails(
    dag: &RiskDag,
    children: &BTreeMap<NodeId, Vec<NodeId>>,
    y: &BTreeSet<NodeId>,
    z: &BTreeSet<NodeId>,
    an_z: &BTreeSet<NodeId>,
    path: &mut Vec<NodeId>,
    on_path: &mut BTreeSet<NodeId>,
    out: &mut Vec<Vec<NodeId>>,
) -> Result<(), CausalError> {
    let last = path.last().expect("non-empty").clone();
    for next in neighbours(dag, children, &last)? {
        if on_path.contains(&next) {
            continue;
        }
        if path.len() >= 2 && !passes(dag, &path[path.len() - 2], &last, &next, z, an_z) {
            continue;
        }
        path.push(next.clone());
        if y.contains(&next) {
            if out.len() >= TRAIL_LIMIT {
                return Err(CausalError::TooManyTrails(TRAIL_LIMIT));
            }
            out.push(path.clone());
        } else {
            on_path.insert(next.clone());
            extend_trails(dag, children, y, z, an_z, path, on_path, out)?;
            on_path.remove(&next);
        }
        path.pop();
    }
    Ok(())
}

fn without_outgoing(dag: &RiskDag, nodes: &BTreeSet<NodeId>) -> Result<RiskDag, GraphError> {
    let mut g = dag.clone();
    for id in nodes {
        for c in dag.children(id.as_str())? {
            g.remove_edge(id.as_str(), c.as_str())?;
        }
    }
    Ok(g)
}

fn without_incoming(dag: &RiskDag, nodes: &BTreeSet<NodeId>) -> Result<RiskDag, GraphError> {
    let mut g = dag.clone();
    for id in nodes {
        for p in dag.parents(id.as_str())?.to_vec() {
            g.remove_edge(p.as_str(), id.as_str())?;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackdoorMode {
    Minimal,
    All,
}

impl std::str::FromStr for BackdoorMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "minimal" => Ok(BackdoorMode::Minimal),
            "all" => Ok(BackdoorMode::All),
            other => Err(format!("unknown backdoor mode `{other}`")),
        }
    }
}

/// Backdoor criterion for a given adjustment set.
pub fn satisfies_backdoor(dag: &RiskDag, x: &NodeId, y: &NodeId, z: &BTreeSet<NodeId>) -> Result<bool, CausalError> {
    let xs: BTreeSet<NodeId> = [x.clone()].into();
    let ys: BTreeSet<NodeId> = [y.clone()].into();
    check_nodes(dag, &[&xs, &ys, z])?;
    let desc = dag.descendants(x.as_str())?;
    if z.iter().any(|n| desc.contains(n)) {
        return Ok(false);
    }
    let cut = without_outgoing(dag, &xs)?;
    d_separated(&cut, &xs, &ys, z)
}

/// Adjustment sets satisfying the backdoor criterion for the effect of `x`
/// on `y`, by exhaustive search over non-descendants of `x`. Sets are
/// ordered by size then by node ids.
pub fn backdoor_sets(
    dag: &RiskDag,
    x: &NodeId,
    y: &NodeId,
    mode: BackdoorMode,
) -> Result<Vec<BTreeSet<NodeId>>, CausalError> {
    dag.node(x.as_str())?;
    dag.node(y.as_str())?;
    if x == y {
        return Err(CausalError::Overlap(x.clone()));
    }
    let desc = dag.descendants(x.as_str())?;
    let candidates: Vec<NodeId> = dag
        .node_ids()
        .filter(|n| *n != x && *n != y && !desc.contains(*n))
        .cloned()
        .collect();
    if candidates.len() > BACKDOOR_CANDIDATE_LIMIT {
        return Err(CausalError::TooManyCandidates {
            count: candidates.len(),
            limit: BACKDOOR_CANDIDATE_LIMIT,
        });
    }
    let xs: BTreeSet<NodeId> = [x.clone()].into();
    let ys: BTreeSet<NodeId> = [y.clone()].into();
    let cut = without_outgoing(dag, &xs)?;
    let mut masks: Vec<u32> = (0..(1u32 << candidates.len())).collect();
    masks.sort_by_key(|m| m.count_ones());
    let mut found: Vec<u32> = Vec::new();
    for mask in masks {
        if mode == BackdoorMode::Minimal && found.iter().any(|f| f & mask == *f) {
            continue;
        }
        let z: BTreeSet<NodeId> = candidates
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, n)| n.clone())
            .collect();
        if d_separated(&cut, &xs, &ys, &z)? {
            found.push(mask);
        }
    }
    let mut sets: Vec<BTreeSet<NodeId>> = found
        .into_iter()
        .map(|mask| {
            candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, n)| n.clone())
                .collect()
        })
        .collect();
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    Ok(sets)
}

fn directed_path_avoiding(dag: &RiskDag, from: &NodeId, to: &NodeId, avoid: &BTreeSet<NodeId>) -> bool {
    let children = dag.children_map();
    let mut stack = vec![from.clone()];
    let mut seen = BTreeSet::new();
    while let Some(n) = stack.pop() {
        if &n == to {
            return true;
        }
        if !seen.insert(n.clone()) {
            continue;
        }
        for c in children.get(&n).into_iter().flatten() {
            if !avoid.contains(c) {
                stack.push(c.clone());
            }
        }
    }
    false
}

/// Frontdoor criterion for mediator set `m`.
pub fn frontdoor_check(dag: &RiskDag, x: &NodeId, y: &NodeId, m: &BTreeSet<NodeId>) -> Result<bool, CausalError> {
    let xs: BTreeSet<NodeId> = [x.clone()].into();
    let ys: BTreeSet<NodeId> = [y.clone()].into();
    check_nodes(dag, &[&xs, &ys, m])?;
    if directed_path_avoiding(dag, x, y, m) {
        return Ok(false);
    }
    if m.is_empty() {
        return Ok(true);
    }
    let x_cut = without_outgoing(dag, &xs)?;
    if !d_separated(&x_cut, &xs, m, &BTreeSet::new())? {
        return Ok(false);
    }
    for mediator in m {
        let ms: BTreeSet<NodeId> = [mediator.clone()].into();
        let cut = without_outgoing(dag, &ms)?;
        if !d_separated(&cut, &ms, &ys, &xs)? {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalIndependence {
    pub node: NodeId,
    pub independent_of: BTreeSet<NodeId>,
    pub given: BTreeSet<NodeId>,
}

/// The local Markov statement of a node: independent of its
/// non-descendants given its parents.
pub fn local_independencies(dag: &RiskDag, node: &NodeId) -> Result<LocalIndependence, CausalError> {
    let given: BTreeSet<NodeId> = dag.parents(node.as_str())?.iter().cloned().collect();
    let desc = dag.descendants(node.as_str())?;
    let independent_of: BTreeSet<NodeId> = dag
        .node_ids()
        .filter(|n| *n != node && !desc.contains(*n) && !given.contains(*n))
        .cloned()
        .collect();
    Ok(LocalIndependence {
        node: node.clone(),
        independent_of,
        given,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mutilated {
    pub dag: RiskDag,
    pub cpts: CptSet,
    pub warnings: Vec<String>,
}

/// Cuts the incoming edges of every intervened node and replaces its CPT
/// by a unit vector at the forced state.
pub fn do_transform(dag: &RiskDag, cpts: &CptSet, intervention: &Intervention) -> Result<Mutilated, CausalError> {
    let mut warnings = Vec::new();
    for (id, &s) in intervention {
        let node = dag.node(id.as_str())?;
        if s >= node.cardinality() {
            return Err(CausalError::StateOutOfRange {
                node: id.clone(),
                state: s,
            });
        }
        if !node.activation {
            warnings.push(format!("`{id}` is not an activation node"));
        }
    }
    let targets: BTreeSet<NodeId> = intervention.keys().cloned().collect();
    let cut = without_incoming(dag, &targets)?;
    let mut out = cpts.clone();
    for (id, &s) in intervention {
        let k = dag.node(id.as_str())?.cardinality();
        let mut probs = vec![0.0; k];
        probs[s] = 1.0;
        out.insert(Cpt::from_raw_parts(
            id.clone(),
            Vec::new(),
            Vec::new(),
            k,
            vec![CptRow {
                probs,
                status: RowStatus::Complete,
            }],
        ));
    }
    Ok(Mutilated {
        dag: cut,
        cpts: out,
        warnings,
    })
}

/// `P(target = state | evidence, do(intervention))`.
pub fn interventional_posterior(
    dag: &RiskDag,
    cpts: &CptSet,
    evidence: &Evidence,
    intervention: &Intervention,
    target: &NodeId,
    state: usize,
) -> Result<f64, CausalError> {
    if let Some(id) = intervention.keys().find(|id| evidence.contains(id.as_str())) {
        return Err(CausalError::EvidenceOnIntervened(id.clone()));
    }
    let k = dag.node(target.as_str())?.cardinality();
    if state >= k {
        return Err(CausalError::StateOutOfRange {
            node: target.clone(),
            state,
        });
    }
    let query = [target.clone()];
    let table = if intervention.is_empty() {
        posterior(dag, cpts, evidence, Some(&query))?
    } else {
        let m = do_transform(dag, cpts, intervention)?;
        posterior(&m.dag, &m.cpts, evidence, Some(&query))?
    };
    Ok(table[target][state])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedIntervention {
    pub node: NodeId,
    pub state: usize,
    pub label: String,
    pub probability: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionRanking {
    pub target: NodeId,
    pub state: usize,
    pub baseline: f64,
    pub entries: Vec<RankedIntervention>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// Single-node interventions over every state of every candidate, ranked
/// ascending by the resulting target probability (ties by node id, then
/// state). An observation on the candidate itself is superseded by the
/// intervention. Candidates default to all activation nodes.
pub fn rank_interventions(
    dag: &RiskDag,
    cpts: &CptSet,
    evidence: &Evidence,
    target: &NodeId,
    state: usize,
    candidates: Option<&BTreeSet<NodeId>>,
) -> Result<InterventionRanking, CausalError> {
    let baseline = interventional_posterior(dag, cpts, evidence, &Intervention::new(), target, state)?;
    let pool: BTreeSet<NodeId> = match candidates {
        Some(c) => c.clone(),
        None => dag
            .nodes()
            .filter(|n| n.activation)
            .map(|n| n.id.clone())
            .collect(),
    };
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for id in &pool {
        let node = dag.node(id.as_str())?;
        let mut ev = evidence.clone();
        if ev.remove(id.as_str()).is_some() {
            warnings.push(format!("observation on `{id}` superseded by the intervention"));
        }
        for (s, label) in node.states.iter().enumerate() {
            let iv: Intervention = [(id.clone(), s)].into();
            match interventional_posterior(dag, cpts, &ev, &iv, target, state) {
                Ok(p) => entries.push(RankedIntervention {
                    node: id.clone(),
                    state: s,
                    label: label.clone(),
                    probability: p,
                    delta: p - baseline,
                }),
                Err(CausalError::Inference(InferenceError::Contradiction { .. })) => {
                    warnings.push(format!("do({id}={label}) contradicts the evidence"));
                }
                Err(e) => return Err(e),
            }
        }
    }
    entries.sort_by(|a, b| {
        a.probability
            .total_cmp(&b.probability)
            .then_with(|| a.node.cmp(&b.node))
            .then(a.state.cmp(&b.state))
    });
    Ok(InterventionRanking {
        target: target.clone(),
        state,
        baseline,
        entries,
        warnings,
    })
}
