use std::collections::BTreeSet;

use sha2::{Digest, Sha256};

use super::{CaptureError, CaptureState, Question, QuestionId};
use crate::cpt::{enumerate_rows, CptSet, ParentConfig};
use crate::graph::{NodeId, RiskDag};

/// Quick-set scale anchors and their stored values.
pub const QUICK_SET: [(&str, f64); 7] = [
    ("None", 0.0),
    ("Very low", 0.05),
    ("Low", 0.2),
    ("Medium", 0.5),
    ("High", 0.8),
    ("Very high", 0.95),
    ("Evidence", 1.0),
];

pub fn quick_set(label: &str) -> Result<f64, CaptureError> {
    QUICK_SET
        .iter()
        .find(|(l, _)| l.eq_ignore_ascii_case(label.trim()))
        .map(|(_, v)| *v)
        .ok_or_else(|| CaptureError::UnknownQuickSet(label.to_owned()))
}

/// `q-` followed by the first 16 hex digits of a SHA-256 over node id,
/// target state index and the parent configuration.
pub fn question_id(node: &NodeId, state: usize, config: &ParentConfig) -> QuestionId {
    let mut hasher = Sha256::new();
    hasher.update(node.as_str().as_bytes());
    hasher.update([0x1f]);
    hasher.update(state.to_le_bytes());
    for (parent, s) in config.assignments() {
        hasher.update([0x1e]);
        hasher.update(parent.as_str().as_bytes());
        hasher.update([0x1f]);
        hasher.update(s.to_le_bytes());
    }
    let digest = hasher.finalize();
    QuestionId::new(format!("q-{}", hex::encode(&digest[..8])))
}

pub fn render_question_text(
    dag: &RiskDag,
    node: &NodeId,
    state: usize,
    config: &ParentConfig,
) -> Result<String, CaptureError> {
    let target = dag.node(node.as_str())?;
    let label = target
        .states
        .get(state)
        .ok_or_else(|| CaptureError::InvalidParameter(format!("state {state} of `{node}`")))?;
    let mut conditions = Vec::with_capacity(config.assignments().len());
    for (parent, s) in config.assignments() {
        let p = dag.node(parent.as_str())?;
        let l = p
            .states
            .get(*s)
            .ok_or_else(|| CaptureError::InvalidParameter(format!("state {s} of `{parent}`")))?;
        conditions.push(format!("{}={}", p.name, l));
    }
    let given = match conditions.len() {
        0 => "given no preconditions".to_owned(),
        1 => format!("given that {}", conditions[0]),
        2 => format!("given that {} and {}", conditions[0], conditions[1]),
        n => format!(
            "given that {}, and {}",
            conditions[..n - 1].join(", "),
            conditions[n - 1]
        ),
    };
    Ok(format!(
        "What is the probability that {}={}, {}?",
        target.name, label, given
    ))
}

/// Questions for every in-scope, non-gate node: one per row and per state
/// except the last, in row enumeration order then state order. Nodes are
/// visited in topological order (id order for ties). `scope = None` means
/// the whole model.
pub fn generate_questions(
    dag: &RiskDag,
    cpts: &CptSet,
    scope: Option<&BTreeSet<NodeId>>,
    capture: Option<&CaptureState>,
) -> Result<Vec<Question>, CaptureError> {
    if let Some(scope) = scope {
        for id in scope {
            dag.node(id.as_str())?;
        }
    }
    let order = dag.topological_order()?;
    let mut out = Vec::new();
    for id in order {
        if scope.is_some_and(|s| !s.contains(&id)) {
            continue;
        }
        let node = dag.node(id.as_str())?;
        if node.kind.is_gate() {
            continue;
        }
        if let Some(cpt) = cpts.get(id.as_str()) {
            if !cpt.is_current(dag) {
                return Err(CaptureError::StaleCpt(id));
            }
        }
        for config in enumerate_rows(dag, id.as_str())? {
            for state in 0..node.cardinality() - 1 {
                let qid = question_id(&id, state, &config);
                let overrides = capture
                    .and_then(|c| c.overrides.get(&qid))
                    .cloned()
                    .unwrap_or_default();
                out.push(Question {
                    text: render_question_text(dag, &id, state, &config)?,
                    id: qid,
                    node: id.clone(),
                    state,
                    config: config.clone(),
                    overrides,
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeKind, RiskNode};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn node(id: &str, name: &str, states: &[&str]) -> RiskNode {
        RiskNode::new(id, name, NodeKind::Event, states.iter().copied())
    }

    #[test]
    fn quick_set_scale() {
        assert_eq!(quick_set("Medium").unwrap(), 0.5);
        assert_eq!(quick_set("None").unwrap(), 0.0);
        assert_eq!(quick_set("Evidence").unwrap(), 1.0);
        assert_eq!(quick_set("very high").unwrap(), 0.95);
        assert!(quick_set("Somewhat").is_err());
    }

    #[test]
    fn counts_per_node() {
        let mut dag = RiskDag::new();
        dag.add_node(node("a", "A", &["false", "true"])).unwrap();
        dag.add_node(node("b", "B", &["false", "true"])).unwrap();
        dag.add_node(node("c", "C", &["false", "true"])).unwrap();
        dag.add_node(node("t", "T", &["lo", "mid", "hi"])).unwrap();
        dag.add_edge("a", "c").unwrap();
        dag.add_edge("b", "c").unwrap();
        dag.add_edge("a", "t").unwrap();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let c: BTreeSet<NodeId> = [NodeId::from("c")].into();
        assert_eq!(generate_questions(&dag, &cpts, Some(&c), None).unwrap().len(), 4);
        let t: BTreeSet<NodeId> = [NodeId::from("t")].into();
        let qs = generate_questions(&dag, &cpts, Some(&t), None).unwrap();
        assert_eq!(qs.len(), 4);
        assert!(qs.iter().all(|q| q.state < 2));
        assert_eq!(
            qs.iter().map(|q| (q.config.indices(), q.state)).collect::<Vec<_>>(),
            vec![(vec![0], 0), (vec![0], 1), (vec![1], 0), (vec![1], 1)]
        );
    }

    #[test]
    fn consequence_with_three_binary_parents() {
        let mut dag = RiskDag::new();
        for id in ["p1", "p2", "p3"] {
            dag.add_node(node(id, id, &["works", "fails"])).unwrap();
        }
        dag.add_node(RiskNode::new(
            "c",
            "Consequence",
            NodeKind::Consequence,
            ["safe", "degraded service", "partial outage", "transaction loss"],
        ))
        .unwrap();
        for p in ["p1", "p2", "p3"] {
            dag.add_edge(p, "c").unwrap();
        }
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let scope: BTreeSet<NodeId> = [NodeId::from("c")].into();
        assert_eq!(
            generate_questions(&dag, &cpts, Some(&scope), None).unwrap().len(),
            8 * 3
        );
    }

    #[test]
    fn gates_are_skipped_and_stale_cpts_rejected() {
        let mut dag = RiskDag::new();
        dag.add_node(node("a", "A", &["false", "true"])).unwrap();
        dag.add_node(RiskNode::boolean("g", "G", NodeKind::GateOr)).unwrap();
        dag.add_edge("a", "g").unwrap();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let qs = generate_questions(&dag, &cpts, None, None).unwrap();
        assert_eq!(qs.len(), 1);
        assert_eq!(qs[0].node.as_str(), "a");

        dag.add_node(node("b", "B", &["false", "true"])).unwrap();
        dag.add_edge("b", "g").unwrap();
        dag.add_node(node("x", "X", &["false", "true"])).unwrap();
        dag.add_edge("b", "a").unwrap();
        assert_eq!(
            generate_questions(&dag, &cpts, None, None),
            Err(CaptureError::StaleCpt("a".into()))
        );
    }

    #[test]
    fn text_follows_parent_order() {
        let mut dag = RiskDag::new();
        dag.add_node(node("sd", "Service Degradation", &["false", "true"]))
            .unwrap();
        dag.add_node(node("fc", "Faulty Change", &["false", "true"])).unwrap();
        dag.add_node(node("pl", "Peak Load Window", &["false", "true"])).unwrap();
        dag.add_node(node("cr", "Canary Rollout", &["works", "fails"])).unwrap();
        for p in ["fc", "pl", "cr"] {
            dag.add_edge(p, "sd").unwrap();
        }
        let config = ParentConfig(vec![("fc".into(), 1), ("pl".into(), 1), ("cr".into(), 1)]);
        let text = render_question_text(&dag, &"sd".into(), 1, &config).unwrap();
        assert_eq!(
            text,
            "What is the probability that Service Degradation=true, given that \
             Faulty Change=true, Peak Load Window=true, and Canary Rollout=fails?"
        );
        let root = render_question_text(&dag, &"fc".into(), 1, &ParentConfig(vec![])).unwrap();
        assert_eq!(
            root,
            "What is the probability that Faulty Change=true, given no preconditions?"
        );

        let id_before = question_id(&"sd".into(), 1, &config);
        dag.rename_node("sd", "Degradation Under Load").unwrap();
        let renamed = render_question_text(&dag, &"sd".into(), 1, &config).unwrap();
        assert!(renamed.contains("Degradation Under Load=true"));
        assert_eq!(question_id(&"sd".into(), 1, &config), id_before);
    }

    #[test]
    fn randomized_counts_and_unique_ids() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let mut dag = RiskDag::new();
            let n_parents = rng.random_range(0..4);
            let mut expected = 1;
            for i in 0..n_parents {
                let k = rng.random_range(2..5);
                expected *= k;
                let states: Vec<String> = (0..k).map(|s| format!("s{s}")).collect();
                dag.add_node(RiskNode::new(format!("p{i}"), format!("P{i}"), NodeKind::Cause, states))
                    .unwrap();
            }
            let k = rng.random_range(2..5);
            let states: Vec<String> = (0..k).map(|s| format!("t{s}")).collect();
            dag.add_node(RiskNode::new("x", "X", NodeKind::Event, states)).unwrap();
            for i in 0..n_parents {
                dag.add_edge(&format!("p{i}"), "x").unwrap();
            }
            let cpts = CptSet::uniform_for(&dag).unwrap();
            let scope: BTreeSet<NodeId> = [NodeId::from("x")].into();
            let qs = generate_questions(&dag, &cpts, Some(&scope), None).unwrap();
            assert_eq!(qs.len(), expected * (k - 1));
            let ids: BTreeSet<_> = qs.iter().map(|q| q.id.clone()).collect();
            assert_eq!(ids.len(), qs.len());
        }
    }
}
