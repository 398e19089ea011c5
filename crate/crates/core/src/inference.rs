//! Exact posterior marginals by variable elimination, plus a full-joint
//! enumeration used as a reference.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpt::{CptError, CptSet};
use crate::graph::{GraphError, NodeId, RiskDag};

/// Largest joint state space the enumeration reference will walk.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cpt(#[from] CptError),
    #[error("CPT of `{node}` has incomplete rows {rows:?}")]
    IncompleteCpt { node: NodeId, rows: Vec<usize> },
    #[error("CPT of `{0}` has a stale parent snapshot")]
    StaleCpt(NodeId),
    #[error("state {state} out of range for `{node}`")]
    StateOutOfRange { node: NodeId, state: usize },
    #[error("`{node}` has no state `{label}`")]
    UnknownState { node: NodeId, label: String },
    #[error("evidence has zero probability: {evidence:?}")]
    Contradiction { evidence: BTreeMap<NodeId, String> },
    #[error("joint state space of {size} exceeds the enumeration limit")]
    StateSpaceTooLarge { size: u128 },
}

/// Observed state index per node.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Evidence(BTreeMap<NodeId, usize>);

impl Evidence {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses `node=label` pairs.
    pub fn from_labels<'a, I>(dag: &RiskDag, pairs: I) -> Result<Self, InferenceError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut ev = Evidence::new();
        for (node, label) in pairs {
            ev.observe_label(dag, node, label)?;
        }
        Ok(ev)
    }

    pub fn observe_label(&mut self, dag: &RiskDag, node: &str, label: &str) -> Result<(), InferenceError> {
        let n = dag.node(node)?;
        let s = n.state_index(label).ok_or_else(|| InferenceError::UnknownState {
            node: n.id.clone(),
            label: label.to_owned(),
        })?;
        self.0.insert(n.id.clone(), s);
        Ok(())
    }

    pub fn insert(&mut self, node: impl Into<NodeId>, state: usize) {
        self.0.insert(node.into(), state);
    }

    pub fn remove(&mut self, node: &str) -> Option<usize> {
        self.0.remove(node)
    }

    pub fn get(&self, node: &str) -> Option<usize> {
        self.0.get(node).copied()
    }

    pub fn contains(&self, node: &str) -> bool {
        self.0.contains_key(node)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, usize)> {
        self.0.iter().map(|(k, v)| (k, *v))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Checks that every observed node exists and the state is in range.
    pub fn check(&self, dag: &RiskDag) -> Result<(), InferenceError> {
        for (id, &s) in &self.0 {
            if s >= dag.node(id.as_str())?.cardinality() {
                return Err(InferenceError::StateOutOfRange {
                    node: id.clone(),
                    state: s,
                });
            }
        }
        Ok(())
    }

    pub fn labels(&self, dag: &RiskDag) -> BTreeMap<NodeId, String> {
        self.0
            .iter()
            .map(|(id, &s)| {
                let label = dag
                    .node(id.as_str())
                    .ok()
                    .and_then(|n| n.states.get(s).cloned())
                    .unwrap_or_else(|| s.to_string());
                (id.clone(), label)
            })
            .collect()
    }
}

/// Probability vector over the states of each queried node.
pub type PosteriorTable = BTreeMap<NodeId, Vec<f64>>;

/// Checks that the model is fully parameterized and current.
pub fn check_ready(dag: &RiskDag, cpts: &CptSet) -> Result<(), InferenceError> {
    dag.topological_order()?;
    for id in dag.node_ids() {
        let cpt = cpts.require(id.as_str())?;
        if !cpt.is_current(dag) {
            return Err(InferenceError::StaleCpt(id.clone()));
        }
        let rows = cpt.incomplete_rows();
        if !rows.is_empty() || cpt.row_count() != cpt.expected_row_count() {
            return Err(InferenceError::IncompleteCpt {
                node: id.clone(),
                rows,
            });
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Factor {
    /// Variable indices, ascending.
    vars: Vec<usize>,
    cards: Vec<usize>,
    /// Row-major values, last variable fastest.
    values: Vec<f64>,
}

impl Factor {
    fn scalar(v: f64) -> Self {
        Self {
            vars: Vec::new(),
            cards: Vec::new(),
            values: vec![v],
        }
    }

    fn strides(cards: &[usize]) -> Vec<usize> {
        let mut strides = vec![1; cards.len()];
        for i in (0..cards.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * cards[i + 1];
        }
        strides
    }

    /// Strides of `self` laid over the positions of `vars`; zero where the
    /// variable is absent.
    fn strides_in(&self, vars: &[usize]) -> Vec<usize> {
        let own = Self::strides(&self.cards);
        vars.iter()
            .map(|v| match self.vars.binary_search(v) {
                Ok(i) => own[i],
                Err(_) => 0,
            })
            .collect()
    }

    fn product(&self, other: &Factor) -> Factor {
        let vars: Vec<usize> = self
            .vars
            .iter()
            .chain(&other.vars)
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| match self.vars.binary_search(v) {
                Ok(i) => self.cards[i],
                Err(_) => other.cards[other.vars.binary_search(v).expect("in union")],
            })
            .collect();
        let sa = self.strides_in(&vars);
        let sb = other.strides_in(&vars);
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut counter = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            for pos in (0..vars.len()).rev() {
                counter[pos] += 1;
                ia += sa[pos];
                ib += sb[pos];
                if counter[pos] < cards[pos] {
                    break;
                }
                ia -= sa[pos] * cards[pos];
                ib -= sb[pos] * cards[pos];
                counter[pos] = 0;
            }
        }
        Factor { vars, cards, values }
    }

    fn sum_out(&self, var: usize) -> Factor {
        let Ok(pos) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        let k = cards.remove(pos);
        let inner: usize = self.cards[pos + 1..].iter().product();
        let outer: usize = self.cards[..pos].iter().product();
        let mut values = vec![0.0; outer * inner];
        for o in 0..outer {
            for s in 0..k {
                let base = (o * k + s) * inner;
                for i in 0..inner {
                    values[o * inner + i] += self.values[base + i];
                }
            }
        }
        Factor { vars, cards, values }
    }

    fn reduce(&self, var: usize, state: usize) -> Factor {
        let Ok(pos) = self.vars.binary_search(&var) else {
            return self.clone();
        };
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        let k = cards.remove(pos);
        let inner: usize = self.cards[pos + 1..].iter().product();
        let outer: usize = self.cards[..pos].iter().product();
        let mut values = Vec::with_capacity(outer * inner);
        for o in 0..outer {
            let base = (o * k + state) * inner;
            values.extend_from_slice(&self.values[base..base + inner]);
        }
        Factor { vars, cards, values }
    }
}

struct Model<'a> {
    dag: &'a RiskDag,
    cpts: &'a CptSet,
    ids: Vec<NodeId>,
    index: BTreeMap<NodeId, usize>,
}

impl<'a> Model<'a> {
    fn new(dag: &'a RiskDag, cpts: &'a CptSet) -> Result<Self, InferenceError> {
        check_ready(dag, cpts)?;
        let ids: Vec<NodeId> = dag.node_ids().cloned().collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Ok(Self {
            dag,
            cpts,
            ids,
            index,
        })
    }

    fn factor(&self, id: &NodeId) -> Result<Factor, InferenceError> {
        let cpt = self.cpts.require(id.as_str())?;
        let mut scope: Vec<(usize, usize)> = cpt
            .parents()
            .iter()
            .zip(cpt.parent_cards())
            .map(|(p, &k)| (self.index[p], k))
            .collect();
        scope.push((self.index[id], cpt.cardinality()));
        // position of each cpt variable (parents..., node) in sorted order
        let mut sorted = scope.clone();
        sorted.sort();
        let vars: Vec<usize> = sorted.iter().map(|(v, _)| *v).collect();
        let cards: Vec<usize> = sorted.iter().map(|(_, k)| *k).collect();
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut counter = vec![0usize; vars.len()];
        let slot: Vec<usize> = scope
            .iter()
            .map(|(v, _)| vars.binary_search(v).expect("present"))
            .collect();
        let n_parents = scope.len() - 1;
        for _ in 0..size {
            let mut row = 0;
            for (j, &k) in cpt.parent_cards().iter().enumerate() {
                row = row * k + counter[slot[j]];
            }
            let state = counter[slot[n_parents]];
            values.push(cpt.rows()[row].probs[state]);
            for pos in (0..vars.len()).rev() {
                counter[pos] += 1;
                if counter[pos] < cards[pos] {
                    break;
                }
                counter[pos] = 0;
            }
        }
        Ok(Factor { vars, cards, values })
    }

    /// Unnormalized marginal over `keep` (or the evidence probability when
    /// `keep` is `None`), restricted to ancestors of the query and evidence.
    fn eliminate(&self, evidence: &Evidence, keep: Option<&NodeId>) -> Result<Vec<f64>, InferenceError> {
        let mut relevant: BTreeSet<NodeId> = BTreeSet::new();
        for id in evidence.iter().map(|(id, _)| id).chain(keep) {
            relevant.insert(id.clone());
            relevant.extend(self.dag.ancestors(id.as_str())?);
        }
        let mut factors = Vec::with_capacity(relevant.len());
        for id in &relevant {
            let mut f = self.factor(id)?;
            for (e, s) in evidence.iter() {
                f = f.reduce(self.index[e], s);
            }
            factors.push(f);
        }
        let keep_var = keep.map(|k| self.index[k]);
        let mut pending: BTreeSet<usize> = relevant
            .iter()
            .filter(|id| !evidence.contains(id.as_str()))
            .map(|id| self.index[id])
            .filter(|v| Some(*v) != keep_var)
            .collect();
        while !pending.is_empty() {
            let var = *pending
                .iter()
                .min_by_key(|v| {
                    let neighbours: BTreeSet<usize> = factors
                        .iter()
                        .filter(|f| f.vars.binary_search(v).is_ok())
                        .flat_map(|f| f.vars.iter().copied())
                        .collect();
                    (neighbours.len(), **v)
                })
                .expect("non-empty");
            pending.remove(&var);
            let (with, without): (Vec<Factor>, Vec<Factor>) = factors
                .into_iter()
                .partition(|f| f.vars.binary_search(&var).is_ok());
            factors = without;
            let merged = with
                .iter()
                .fold(Factor::scalar(1.0), |acc, f| acc.product(f));
            factors.push(merged.sum_out(var));
        }
        let result = factors
            .iter()
            .fold(Factor::scalar(1.0), |acc, f| acc.product(f));
        Ok(result.values)
    }

    fn contradiction(&self, evidence: &Evidence) -> InferenceError {
        InferenceError::Contradiction {
            evidence: evidence.labels(self.dag),
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let z: f64 = v.iter().sum();
    if !(z > 0.0 && z.is_finite()) {
        return None;
    }
    for x in &mut v {
        *x /= z;
    }
    Some(v)
}

fn unit(k: usize, s: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[s] = 1.0;
    v
}

/// Probability of the evidence under the model.
pub fn evidence_probability(dag: &RiskDag, cpts: &CptSet, evidence: &Evidence) -> Result<f64, InferenceError> {
    evidence.check(dag)?;
    let model = Model::new(dag, cpts)?;
    Ok(model.eliminate(evidence, None)?.iter().sum())
}

/// Exact posterior marginals by variable elimination with a min-degree
/// order. `query = None` returns every node.
pub fn posterior(
    dag: &RiskDag,
    cpts: &CptSet,
    evidence: &Evidence,
    query: Option<&[NodeId]>,
) -> Result<PosteriorTable, InferenceError> {
    evidence.check(dag)?;
    let model = Model::new(dag, cpts)?;
    let query: Vec<NodeId> = match query {
        Some(q) => {
            for id in q {
                dag.node(id.as_str())?;
            }
            q.to_vec()
        }
        None => model.ids.clone(),
    };
    let pe: f64 = model.eliminate(evidence, None)?.iter().sum();
    if !(pe > 0.0) {
        return Err(model.contradiction(evidence));
    }
    let mut out = PosteriorTable::new();
    for id in query {
        let k = dag.node(id.as_str())?.cardinality();
        let dist = match evidence.get(id.as_str()) {
            Some(s) => unit(k, s),
            None => normalize(model.eliminate(evidence, Some(&id))?)
                .ok_or_else(|| model.contradiction(evidence))?,
        };
        out.insert(id, dist);
    }
    Ok(out)
}

pub fn prior_marginals(dag: &RiskDag, cpts: &CptSet) -> Result<PosteriorTable, InferenceError> {
    posterior(dag, cpts, &Evidence::new(), None)
}

/// Reference marginals by walking the full joint distribution.
pub fn joint_brute_force(
    dag: &RiskDag,
    cpts: &CptSet,
    evidence: &Evidence,
    query: Option<&[NodeId]>,
) -> Result<PosteriorTable, InferenceError> {
    evidence.check(dag)?;
    let model = Model::new(dag, cpts)?;
    let order = dag.topological_order()?;
    let cards: Vec<usize> = order
        .iter()
        .map(|id| dag.node(id.as_str()).map(|n| n.cardinality()))
        .collect::<Result<_, _>>()?;
    let size = cards.iter().map(|&k| k as u128).product::<u128>();
    if size > BRUTE_FORCE_LIMIT {
        return Err(InferenceError::StateSpaceTooLarge { size });
    }
    let pos: BTreeMap<&NodeId, usize> = order.iter().enumerate().map(|(i, id)| (id, i)).collect();
    let tables: Vec<_> = order
        .iter()
        .map(|id| cpts.require(id.as_str()))
        .collect::<Result<_, _>>()?;
    let parent_pos: Vec<Vec<usize>> = tables
        .iter()
        .map(|c| c.parents().iter().map(|p| pos[p]).collect())
        .collect();
    let observed: Vec<Option<usize>> = order.iter().map(|id| evidence.get(id.as_str())).collect();

    let mut sums: Vec<Vec<f64>> = cards.iter().map(|&k| vec![0.0; k]).collect();
    let mut assignment = vec![0usize; order.len()];
    let mut total = 0.0;
    'outer: for _ in 0..size {
        let consistent = observed
            .iter()
            .zip(&assignment)
            .all(|(o, a)| o.is_none_or(|s| s == *a));
        if consistent {
            let mut p = 1.0;
            for (i, cpt) in tables.iter().enumerate() {
                let config: Vec<usize> = parent_pos[i].iter().map(|&j| assignment[j]).collect();
                let row = cpt.row_index(&config)?;
                p *= cpt.rows()[row].probs[assignment[i]];
                if p == 0.0 {
                    break;
                }
            }
            total += p;
            for (i, &a) in assignment.iter().enumerate() {
                sums[i][a] += p;
            }
        }
        for i in (0..assignment.len()).rev() {
            assignment[i] += 1;
            if assignment[i] < cards[i] {
                continue 'outer;
            }
            assignment[i] = 0;
        }
    }
    if !(total > 0.0) {
        return Err(model.contradiction(evidence));
    }
    let wanted: Vec<NodeId> = match query {
        Some(q) => q.to_vec(),
        None => model.ids.clone(),
    };
    let mut out = PosteriorTable::new();
    for id in wanted {
        let i = *pos
            .get(&id)
            .ok_or_else(|| GraphError::UnknownNode(id.clone()))?;
        out.insert(id, sums[i].iter().map(|x| x / total).collect());
    }
    Ok(out)
}
