//! Conditional probability tables over ordered parent configurations.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, NodeId, RiskDag};

/// Allowed deviation of a row sum from 1.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CptError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("expected {expected} values, got {got}")]
    WrongArity { expected: usize, got: usize },
    #[error("probability {value} at position {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("row sums to {sum}, not 1")]
    BadRowSum { sum: f64 },
    #[error("row index {index} out of range ({rows} rows)")]
    RowOutOfRange { index: usize, rows: usize },
    #[error("no CPT for node `{0}`")]
    MissingCpt(NodeId),
    #[error("parent state {state} out of range for `{parent}`")]
    StateOutOfRange { parent: NodeId, state: usize },
}

/// One parent-state assignment, following the node's ordered parent list.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ParentConfig(pub Vec<(NodeId, usize)>);

impl ParentConfig {
    pub fn assignments(&self) -> &[(NodeId, usize)] {
        &self.0
    }

    pub fn indices(&self) -> Vec<usize> {
        self.0.iter().map(|(_, s)| *s).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowStatus {
    Unelicited,
    Partial,
    Complete,
    Invalid,
}

impl RowStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RowStatus::Unelicited => "unelicited",
            RowStatus::Partial => "partial",
            RowStatus::Complete => "complete",
            RowStatus::Invalid => "invalid",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "unelicited" => Some(RowStatus::Unelicited),
            "partial" => Some(RowStatus::Partial),
            "complete" => Some(RowStatus::Complete),
            "invalid" => Some(RowStatus::Invalid),
            _ => None,
        }
    }
}

impl fmt::Display for RowStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CptRow {
    pub probs: Vec<f64>,
    pub status: RowStatus,
}

/// Rows are stored in lexicographic parent-configuration order, first
/// parent most significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpt {
    node: NodeId,
    parents: Vec<NodeId>,
    parent_cards: Vec<usize>,
    card: usize,
    rows: Vec<CptRow>,
}

impl Cpt {
    /// Uniform placeholder rows flagged `unelicited`.
    pub fn uniform(dag: &RiskDag, node: &str) -> Result<Self, CptError> {
        let (parents, parent_cards, card) = snapshot(dag, node)?;
        let rows = (0..parent_cards.iter().product::<usize>())
            .map(|_| CptRow {
                probs: vec![1.0 / card as f64; card],
                status: RowStatus::Unelicited,
            })
            .collect();
        Ok(Self {
            node: NodeId::from(node),
            parents,
            parent_cards,
            card,
            rows,
        })
    }

    /// Builds a CPT from complete rows, rejecting any row that does not
    /// satisfy the normalization constraint.
    pub fn from_complete_rows(
        dag: &RiskDag,
        node: &str,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, CptError> {
        let mut cpt = Self::uniform(dag, node)?;
        if rows.len() != cpt.rows.len() {
            return Err(CptError::WrongArity {
                expected: cpt.rows.len(),
                got: rows.len(),
            });
        }
        for (i, r) in rows.into_iter().enumerate() {
            cpt.set_row(i, r)?;
        }
        Ok(cpt)
    }

    /// Assembles a table without any checks, as read from a document.
    pub fn from_raw_parts(
        node: NodeId,
        parents: Vec<NodeId>,
        parent_cards: Vec<usize>,
        card: usize,
        rows: Vec<CptRow>,
    ) -> Self {
        Self {
            node,
            parents,
            parent_cards,
            card,
            rows,
        }
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    pub fn parents(&self) -> &[NodeId] {
        &self.parents
    }

    pub fn parent_cards(&self) -> &[usize] {
        &self.parent_cards
    }

    pub fn cardinality(&self) -> usize {
        self.card
    }

    pub fn rows(&self) -> &[CptRow] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn expected_row_count(&self) -> usize {
        self.parent_cards.iter().product()
    }

    pub fn row(&self, index: usize) -> Result<&CptRow, CptError> {
        self.rows.get(index).ok_or(CptError::RowOutOfRange {
            index,
            rows: self.rows.len(),
        })
    }

    /// Replaces a row with a full, normalized probability vector.
    pub fn set_row(&mut self, index: usize, probs: Vec<f64>) -> Result<(), CptError> {
        check_full_row(&probs, self.card)?;
        let rows = self.rows.len();
        let row = self
            .rows
            .get_mut(index)
            .ok_or(CptError::RowOutOfRange { index, rows })?;
        row.probs = probs;
        row.status = RowStatus::Complete;
        Ok(())
    }

    pub fn set_status(&mut self, index: usize, status: RowStatus) -> Result<(), CptError> {
        let rows = self.rows.len();
        self.rows
            .get_mut(index)
            .ok_or(CptError::RowOutOfRange { index, rows })?
            .status = status;
        Ok(())
    }

    /// Row index of a parent configuration given as state indices.
    pub fn row_index(&self, config: &[usize]) -> Result<usize, CptError> {
        if config.len() != self.parent_cards.len() {
            return Err(CptError::WrongArity {
                expected: self.parent_cards.len(),
                got: config.len(),
            });
        }
        let mut index = 0;
        for ((&s, &k), p) in config.iter().zip(&self.parent_cards).zip(&self.parents) {
            if s >= k {
                return Err(CptError::StateOutOfRange {
                    parent: p.clone(),
                    state: s,
                });
            }
            index = index * k + s;
        }
        Ok(index)
    }

    /// Inverse of [`row_index`](Cpt::row_index).
    pub fn config_at(&self, mut index: usize) -> Vec<usize> {
        let mut config = vec![0; self.parent_cards.len()];
        for (slot, &k) in config.iter_mut().zip(&self.parent_cards).rev() {
            *slot = index % k;
            index /= k;
        }
        config
    }

    /// Whether the parent snapshot still matches the graph.
    pub fn is_current(&self, dag: &RiskDag) -> bool {
        match snapshot(dag, self.node.as_str()) {
            Ok((parents, cards, card)) => {
                parents == self.parents && cards == self.parent_cards && card == self.card
            }
            Err(_) => false,
        }
    }

    /// Row indices whose status isn't `complete`, or whose numbers break
    /// normalization.
    pub fn incomplete_rows(&self) -> Vec<usize> {
        self.rows
            .iter()
            .enumerate()
            .filter(|(_, r)| {
                r.status != RowStatus::Complete || check_full_row(&r.probs, self.card).is_err()
            })
            .map(|(i, _)| i)
            .collect()
    }
}

fn snapshot(dag: &RiskDag, node: &str) -> Result<(Vec<NodeId>, Vec<usize>, usize), GraphError> {
    let card = dag.node(node)?.cardinality();
    let parents = dag.parents(node)?.to_vec();
    let cards = parents
        .iter()
        .map(|p| dag.node(p.as_str()).map(|n| n.cardinality()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((parents, cards, card))
}

fn check_full_row(probs: &[f64], card: usize) -> Result<(), CptError> {
    if probs.len() != card {
        return Err(CptError::WrongArity {
            expected: card,
            got: probs.len(),
        });
    }
    for (index, &value) in probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(CptError::OutOfRange { index, value });
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
        return Err(CptError::BadRowSum { sum });
    }
    Ok(())
}

/// All state-index tuples for the given cardinalities, in lexicographic
/// order with the first position most significant. One empty tuple for no
/// positions.
pub fn configurations(cards: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut current = vec![0; cards.len()];
    for _ in 0..total {
        out.push(current.clone());
        for pos in (0..cards.len()).rev() {
            current[pos] += 1;
            if current[pos] < cards[pos] {
                break;
            }
            current[pos] = 0;
        }
    }
    out
}

pub fn enumerate_rows(dag: &RiskDag, node: &str) -> Result<Vec<ParentConfig>, GraphError> {
    let (parents, cards, _) = snapshot(dag, node)?;
    Ok(configurations(&cards)
        .into_iter()
        .map(|c| ParentConfig(parents.iter().cloned().zip(c).collect()))
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum Completion {
    Complete { probs: Vec<f64> },
    Invalid { sum: f64 },
}

/// Completes a row from its first `k - 1` probabilities.
pub fn complete_last_state(partial: &[f64], k: usize) -> Result<Completion, CptError> {
    if k < 2 || partial.len() != k - 1 {
        return Err(CptError::WrongArity {
            expected: k.saturating_sub(1),
            got: partial.len(),
        });
    }
    for (index, &value) in partial.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(CptError::OutOfRange { index, value });
        }
    }
    let sum: f64 = partial.iter().sum();
    if sum > 1.0 + ROW_SUM_TOLERANCE {
        return Ok(Completion::Invalid { sum });
    }
    let mut probs = partial.to_vec();
    probs.push((1.0 - sum).clamp(0.0, 1.0));
    Ok(Completion::Complete { probs })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CptSet(BTreeMap<NodeId, Cpt>);

impl CptSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uniform placeholders for every node of the graph.
    pub fn uniform_for(dag: &RiskDag) -> Result<Self, CptError> {
        let mut set = CptSet::new();
        for id in dag.node_ids() {
            set.insert(Cpt::uniform(dag, id.as_str())?);
        }
        Ok(set)
    }

    pub fn insert(&mut self, cpt: Cpt) -> Option<Cpt> {
        self.0.insert(cpt.node.clone(), cpt)
    }

    pub fn remove(&mut self, node: &str) -> Option<Cpt> {
        self.0.remove(node)
    }

    pub fn get(&self, node: &str) -> Option<&Cpt> {
        self.0.get(node)
    }

    pub fn get_mut(&mut self, node: &str) -> Option<&mut Cpt> {
        self.0.get_mut(node)
    }

    pub fn require(&self, node: &str) -> Result<&Cpt, CptError> {
        self.get(node)
            .ok_or_else(|| CptError::MissingCpt(NodeId::from(node)))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Cpt> {
        self.0.values()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Replaces every stale or missing CPT with fresh placeholders and drops
    /// tables for removed nodes. Returns the affected node ids. Stale rows
    /// are never remapped onto a new parent layout.
    pub fn refresh_stale(&mut self, dag: &RiskDag) -> Result<Vec<NodeId>, CptError> {
        let mut touched = Vec::new();
        self.0.retain(|id, _| {
            let keep = dag.contains(id.as_str());
            if !keep {
                touched.push(id.clone());
            }
            keep
        });
        for id in dag.node_ids() {
            let fresh = match self.0.get(id) {
                Some(cpt) => !cpt.is_current(dag),
                None => true,
            };
            if fresh {
                self.insert(Cpt::uniform(dag, id.as_str())?);
                touched.push(id.clone());
            }
        }
        touched.sort();
        Ok(touched)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "finding", rename_all = "kebab-case")]
pub enum CptFinding {
    MissingCpt { node: NodeId },
    OrphanCpt { node: NodeId },
    StaleParentOrder { node: NodeId },
    RowCount { node: NodeId, expected: usize, found: usize },
    RowLength { node: NodeId, row: usize, expected: usize, found: usize },
    ValueOutOfRange { node: NodeId, row: usize, state: usize, value: f64 },
    RowSum { node: NodeId, row: usize, sum: f64 },
}

impl fmt::Display for CptFinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CptFinding::MissingCpt { node } => write!(f, "`{node}` has no CPT"),
            CptFinding::OrphanCpt { node } => write!(f, "CPT for unknown node `{node}`"),
            CptFinding::StaleParentOrder { node } => {
                write!(f, "CPT of `{node}` has a stale parent order")
            }
            CptFinding::RowCount { node, expected, found } => {
                write!(f, "CPT of `{node}` has {found} rows, expected {expected}")
            }
            CptFinding::RowLength { node, row, expected, found } => write!(
                f,
                "CPT of `{node}` row {row} has {found} entries, expected {expected}"
            ),
            CptFinding::ValueOutOfRange { node, row, state, value } => write!(
                f,
                "CPT of `{node}` row {row} state {state}: {value} outside [0, 1]"
            ),
            CptFinding::RowSum { node, row, sum } => {
                write!(f, "CPT of `{node}` row {row}: row sum {sum}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CptReport {
    pub findings: Vec<CptFinding>,
}

impl CptReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }
}

pub fn validate_cpts(dag: &RiskDag, cpts: &CptSet) -> CptReport {
    let mut findings = Vec::new();
    for id in dag.node_ids() {
        let Some(cpt) = cpts.get(id.as_str()) else {
            findings.push(CptFinding::MissingCpt { node: id.clone() });
            continue;
        };
        if !cpt.is_current(dag) {
            findings.push(CptFinding::StaleParentOrder { node: id.clone() });
        }
        let expected = cpt.expected_row_count();
        if cpt.rows.len() != expected {
            findings.push(CptFinding::RowCount {
                node: id.clone(),
                expected,
                found: cpt.rows.len(),
            });
        }
        for (r, row) in cpt.rows.iter().enumerate() {
            if row.probs.len() != cpt.card {
                findings.push(CptFinding::RowLength {
                    node: id.clone(),
                    row: r,
                    expected: cpt.card,
                    found: row.probs.len(),
                });
                continue;
            }
            for (s, &v) in row.probs.iter().enumerate() {
                if !(0.0..=1.0).contains(&v) {
                    findings.push(CptFinding::ValueOutOfRange {
                        node: id.clone(),
                        row: r,
                        state: s,
                        value: v,
                    });
                }
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                findings.push(CptFinding::RowSum {
                    node: id.clone(),
                    row: r,
                    sum,
                });
            }
        }
    }
    for cpt in cpts.iter() {
        if !dag.contains(cpt.node.as_str()) {
            findings.push(CptFinding::OrphanCpt {
                node: cpt.node.clone(),
            });
        }
    }
    CptReport { findings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeKind, RiskNode};
    use proptest::prelude::*;

    fn two_parent_dag() -> RiskDag {
        let mut dag = RiskDag::new();
        dag.add_node(RiskNode::boolean("a", "A", NodeKind::Cause)).unwrap();
        dag.add_node(RiskNode::new("b", "B", NodeKind::Cause, ["x", "y", "z"]))
            .unwrap();
        dag.add_node(RiskNode::boolean("c", "C", NodeKind::Event)).unwrap();
        dag.add_edge("a", "c").unwrap();
        dag.add_edge("b", "c").unwrap();
        dag
    }

    #[test]
    fn rows_enumerate_lexicographically() {
        let dag = two_parent_dag();
        let rows: Vec<Vec<usize>> = enumerate_rows(&dag, "c")
            .unwrap()
            .iter()
            .map(ParentConfig::indices)
            .collect();
        assert_eq!(
            rows,
            vec![
                vec![0, 0],
                vec![0, 1],
                vec![0, 2],
                vec![1, 0],
                vec![1, 1],
                vec![1, 2]
            ]
        );
        assert_eq!(enumerate_rows(&dag, "a").unwrap(), vec![ParentConfig(vec![])]);
        assert!(enumerate_rows(&dag, "nope").is_err());
    }

    #[test]
    fn single_binary_parent_gives_two_rows() {
        let mut dag = RiskDag::new();
        dag.add_node(RiskNode::boolean("a", "A", NodeKind::Cause)).unwrap();
        dag.add_node(RiskNode::boolean("b", "B", NodeKind::Event)).unwrap();
        dag.add_edge("a", "b").unwrap();
        assert_eq!(enumerate_rows(&dag, "b").unwrap().len(), 2);
    }

    #[test]
    fn last_state_completion() {
        assert_eq!(
            complete_last_state(&[0.2, 0.3], 3).unwrap(),
            Completion::Complete {
                probs: vec![0.2, 0.3, 0.5]
            }
        );
        assert_eq!(
            complete_last_state(&[0.7, 0.6], 2),
            Err(CptError::WrongArity {
                expected: 1,
                got: 2
            })
        );
        match complete_last_state(&[0.8, 0.4], 3).unwrap() {
            Completion::Invalid { sum } => assert!((sum - 1.2).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            complete_last_state(&[1.5], 2),
            Err(CptError::OutOfRange { .. })
        ));
    }

    #[test]
    fn row_sum_finding() {
        let dag = RiskDag::from_unchecked_parts(
            [RiskNode::boolean("a", "A", NodeKind::Cause)],
            [],
        );
        let mut cpts = CptSet::new();
        cpts.insert(Cpt::from_raw_parts(
            "a".into(),
            vec![],
            vec![],
            2,
            vec![CptRow {
                probs: vec![0.5, 0.6],
                status: RowStatus::Complete,
            }],
        ));
        let report = validate_cpts(&dag, &cpts);
        assert_eq!(report.findings.len(), 1);
        match &report.findings[0] {
            CptFinding::RowSum { sum, .. } => assert!((sum - 1.1).abs() < 1e-12),
            other => panic!("{other:?}"),
        }
        let mut a = Cpt::uniform(&dag, "a").unwrap();
        assert!(matches!(
            a.set_row(0, vec![0.5, 0.6]),
            Err(CptError::BadRowSum { .. })
        ));
    }

    #[test]
    fn stale_snapshot_after_parent_added() {
        let mut dag = two_parent_dag();
        let mut cpts = CptSet::uniform_for(&dag).unwrap();
        assert!(validate_cpts(&dag, &cpts).is_clean());
        dag.add_node(RiskNode::boolean("d", "D", NodeKind::Context)).unwrap();
        dag.add_edge("d", "c").unwrap();
        let report = validate_cpts(&dag, &cpts);
        assert!(report
            .findings
            .contains(&CptFinding::StaleParentOrder { node: "c".into() }));
        assert!(report
            .findings
            .contains(&CptFinding::MissingCpt { node: "d".into() }));
        let touched = cpts.refresh_stale(&dag).unwrap();
        assert_eq!(touched, vec![NodeId::from("c"), "d".into()]);
        assert!(validate_cpts(&dag, &cpts).is_clean());
        assert_eq!(cpts.get("c").unwrap().row_count(), 12);
    }

    #[test]
    fn stale_snapshot_after_reorder_or_state_change() {
        let mut dag = two_parent_dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        dag.reorder_parents("c", &["b".into(), "a".into()]).unwrap();
        assert!(!cpts.get("c").unwrap().is_current(&dag));
        let mut dag = two_parent_dag();
        dag.set_states("a", vec!["lo".into(), "mid".into(), "hi".into()])
            .unwrap();
        assert!(!cpts.get("c").unwrap().is_current(&dag));
    }

    proptest! {
        #[test]
        fn enumeration_is_a_bijection(cards in prop::collection::vec(1usize..4, 0..5)) {
            let configs = configurations(&cards);
            prop_assert_eq!(configs.len(), cards.iter().product::<usize>());
            let unique: std::collections::BTreeSet<_> = configs.iter().cloned().collect();
            prop_assert_eq!(unique.len(), configs.len());
            let cpt = Cpt::from_raw_parts(
                "x".into(),
                (0..cards.len()).map(|i| NodeId::new(format!("p{i}"))).collect(),
                cards.clone(),
                2,
                vec![],
            );
            for (i, c) in configs.iter().enumerate() {
                prop_assert!(c.iter().zip(&cards).all(|(s, k)| s < k));
                prop_assert_eq!(cpt.row_index(c).unwrap(), i);
                prop_assert_eq!(&cpt.config_at(i), c);
            }
        }

        #[test]
        fn completion_reproduces_complete_rows(raw in prop::collection::vec(0.0f64..1.0, 2..6)) {
            let total: f64 = raw.iter().sum();
            let row: Vec<f64> = raw.iter().map(|v| v / total).collect();
            prop_assume!(row.iter().all(|v| v.is_finite()));
            let k = row.len();
            match complete_last_state(&row[..k - 1], k).unwrap() {
                Completion::Complete { probs } => {
                    for (a, b) in probs.iter().zip(&row) {
                        prop_assert!((a - b).abs() <= ROW_SUM_TOLERANCE);
                    }
                    let sum: f64 = probs.iter().sum();
                    prop_assert!((sum - 1.0).abs() <= ROW_SUM_TOLERANCE);
                }
                Completion::Invalid { sum } => prop_assert!(false, "sum {}", sum),
            }
        }
    }
}
