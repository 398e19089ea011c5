use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::estimators::{estimate_question, QuestionEstimate};
use super::questions::generate_questions;
use super::{CaptureError, CaptureState, Estimator, Question, QuestionId};
use crate::cpt::{complete_last_state, Completion, Cpt, CptError, CptSet, RowStatus};
use crate::graph::{NodeId, RiskDag};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowRef {
    pub node: NodeId,
    pub row: usize,
    pub config: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "kebab-case")]
pub enum SkipReason {
    /// No answers and no active prior for any asked state.
    NoData,
    /// Some asked states have estimates, others do not.
    PartialData { missing_states: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    #[serde(flatten)]
    pub row: RowRef,
    #[serde(flatten)]
    pub reason: SkipReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvalidRow {
    #[serde(flatten)]
    pub row: RowRef,
    pub estimates: Vec<f64>,
    pub sum: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MaterializeReport {
    pub filled: Vec<RowRef>,
    pub skipped: Vec<SkippedRow>,
    pub invalid: Vec<InvalidRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

fn cpt_err(e: CptError) -> CaptureError {
    match e {
        CptError::Graph(g) => CaptureError::Graph(g),
        other => CaptureError::InvalidParameter(other.to_string()),
    }
}

/// Estimates every asked state of every non-gate row with the configured
/// estimator, completes the last state and writes the row. Rows whose asked
/// states sum above one are flagged `invalid` and keep their numbers; rows
/// with only some estimates are flagged `partial`. `now` defaults to the
/// latest ledger timestamp.
pub fn materialize_cpts(
    dag: &RiskDag,
    cpts: &CptSet,
    capture: &CaptureState,
    now: Option<DateTime<Utc>>,
) -> Result<(CptSet, MaterializeReport), CaptureError> {
    capture.config.check()?;
    let questions = generate_questions(dag, cpts, None, Some(capture))?;
    let now = now
        .or_else(|| capture.ledger.latest_timestamp())
        .unwrap_or_else(Utc::now);
    let answers = capture.ledger.by_question();

    let mut rows: BTreeMap<(NodeId, usize), Vec<&Question>> = BTreeMap::new();
    let mut out = cpts.clone();
    for q in &questions {
        if out.get(q.node.as_str()).is_none() {
            out.insert(Cpt::uniform(dag, q.node.as_str()).map_err(cpt_err)?);
        }
        let cpt = out.require(q.node.as_str()).map_err(cpt_err)?;
        let row = cpt.row_index(&q.config.indices()).map_err(cpt_err)?;
        rows.entry((q.node.clone(), row)).or_default().push(q);
    }

    let mut report = MaterializeReport::default();
    for ((node, row), qs) in rows {
        let cpt = out.get_mut(node.as_str()).expect("inserted above");
        let card = cpt.cardinality();
        let row_ref = RowRef {
            node: node.clone(),
            row,
            config: cpt.config_at(row),
        };
        let mut estimates = vec![None; card - 1];
        for q in &qs {
            let empty = Vec::new();
            let given = answers.get(&q.id).unwrap_or(&empty);
            let cfg = capture.effective_config(&q.id);
            let est = estimate_question(&q.id, given, &cfg, now)?;
            for w in est.warnings {
                report.warnings.push(format!("{}: {w}", q.id));
            }
            estimates[q.state] = est.value;
        }
        let missing: Vec<usize> = (0..card - 1).filter(|s| estimates[*s].is_none()).collect();
        if missing.len() == card - 1 {
            report.skipped.push(SkippedRow {
                row: row_ref,
                reason: SkipReason::NoData,
            });
            continue;
        }
        if !missing.is_empty() {
            cpt.set_status(row, RowStatus::Partial).map_err(cpt_err)?;
            report.skipped.push(SkippedRow {
                row: row_ref,
                reason: SkipReason::PartialData {
                    missing_states: missing,
                },
            });
            continue;
        }
        let partial: Vec<f64> = estimates.into_iter().map(|e| e.expect("checked")).collect();
        match complete_last_state(&partial, card).map_err(cpt_err)? {
            Completion::Complete { probs } => {
                cpt.set_row(row, probs).map_err(cpt_err)?;
                report.filled.push(row_ref);
            }
            Completion::Invalid { sum } => {
                cpt.set_status(row, RowStatus::Invalid).map_err(cpt_err)?;
                report.invalid.push(InvalidRow {
                    row: row_ref,
                    estimates: partial,
                    sum,
                });
            }
        }
    }
    Ok((out, report))
}

/// Estimates for every generated question, in questionnaire order, with
/// `estimator` replacing the configured primary choice when given.
pub fn estimate_model(
    dag: &RiskDag,
    cpts: &CptSet,
    capture: &CaptureState,
    scope: Option<&BTreeSet<NodeId>>,
    estimator: Option<Estimator>,
    now: Option<DateTime<Utc>>,
) -> Result<Vec<QuestionEstimate>, CaptureError> {
    let questions = generate_questions(dag, cpts, scope, Some(capture))?;
    let now = now
        .or_else(|| capture.ledger.latest_timestamp())
        .unwrap_or_else(Utc::now);
    let answers = capture.ledger.by_question();
    let empty = Vec::new();
    questions
        .iter()
        .map(|q| {
            let mut cfg = capture.effective_config(&q.id);
            if let Some(e) = estimator {
                cfg.estimator = e;
            }
            estimate_question(&q.id, answers.get(&q.id).unwrap_or(&empty), &cfg, now)
        })
        .collect()
}

/// Question ids of one row, in state order.
pub fn row_questions(questions: &[Question], node: &str, config: &[usize]) -> Vec<QuestionId> {
    questions
        .iter()
        .filter(|q| q.node.as_str() == node && q.config.indices() == config)
        .map(|q| q.id.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capture::{question_id, Answer, Estimator, Origin};
    use crate::cpt::ParentConfig;
    use crate::graph::{NodeKind, RiskNode};
    use chrono::TimeZone;

    fn at(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_750_000_000 + secs, 0).unwrap()
    }

    fn answer(q: &QuestionId, value: f64, secs: i64) -> Answer {
        Answer {
            question: q.clone(),
            value,
            timestamp: at(secs),
            respondent: format!("expert-{secs}"),
            origin: Origin::Manual,
        }
    }

    fn dag() -> RiskDag {
        let mut dag = RiskDag::new();
        dag.add_node(RiskNode::boolean("fc", "Faulty Change", NodeKind::Cause)).unwrap();
        dag.add_node(RiskNode::new(
            "ar",
            "Automatic Rollback",
            NodeKind::Barrier,
            ["works", "fails"],
        ))
        .unwrap();
        dag.add_node(RiskNode::new("tri", "Tri", NodeKind::Event, ["a", "b", "c"]))
            .unwrap();
        dag.add_edge("fc", "ar").unwrap();
        dag
    }

    #[test]
    fn fills_binary_row_from_mean() {
        let dag = dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let mut capture = CaptureState::default();
        capture.config.estimator = Estimator::EqualAverage;
        let q = question_id(&"ar".into(), 0, &ParentConfig(vec![("fc".into(), 1)]));
        for (i, v) in [0.78, 0.81, 0.79, 0.84].into_iter().enumerate() {
            capture.ledger.append(answer(&q, v, i as i64)).unwrap();
        }
        let (out, report) = materialize_cpts(&dag, &cpts, &capture, None).unwrap();
        let row = out.get("ar").unwrap().row(1).unwrap();
        assert_eq!(row.status, RowStatus::Complete);
        assert!((row.probs[0] - 0.805).abs() < 1e-12);
        assert!((row.probs[1] - 0.195).abs() < 1e-12);
        assert_eq!(report.filled.len(), 1);
        assert_eq!(out.get("ar").unwrap().row(0).unwrap().status, RowStatus::Unelicited);
        assert!(report.skipped.iter().any(|s| s.row.node.as_str() == "fc"));
    }

    #[test]
    fn oversubscribed_row_is_invalid_and_untouched() {
        let dag = dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let mut capture = CaptureState::default();
        let empty = ParentConfig(vec![]);
        let q0 = question_id(&"tri".into(), 0, &empty);
        let q1 = question_id(&"tri".into(), 1, &empty);
        capture.ledger.append(answer(&q0, 0.8, 0)).unwrap();
        capture.ledger.append(answer(&q1, 0.4, 0)).unwrap();
        let (out, report) = materialize_cpts(&dag, &cpts, &capture, None).unwrap();
        let row = out.get("tri").unwrap().row(0).unwrap();
        assert_eq!(row.status, RowStatus::Invalid);
        assert_eq!(row.probs, vec![1.0 / 3.0; 3]);
        assert_eq!(report.invalid.len(), 1);
        assert!((report.invalid[0].sum - 1.2).abs() < 1e-12);
    }

    #[test]
    fn partial_rows_are_flagged() {
        let dag = dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let mut capture = CaptureState::default();
        let q0 = question_id(&"tri".into(), 0, &ParentConfig(vec![]));
        capture.ledger.append(answer(&q0, 0.3, 0)).unwrap();
        let (out, report) = materialize_cpts(&dag, &cpts, &capture, None).unwrap();
        assert_eq!(out.get("tri").unwrap().row(0).unwrap().status, RowStatus::Partial);
        assert!(report.skipped.iter().any(|s| s.reason
            == SkipReason::PartialData {
                missing_states: vec![1]
            }));
    }

    #[test]
    fn prior_fills_rows_without_answers() {
        let dag = dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let mut capture = CaptureState::default();
        capture.config.p0 = 0.1;
        capture.config.k_prior = 5.0;
        let (out, report) = materialize_cpts(&dag, &cpts, &capture, Some(at(0))).unwrap();
        let fc = out.get("fc").unwrap().row(0).unwrap();
        assert_eq!(fc.status, RowStatus::Complete);
        assert!((fc.probs[0] - 0.1).abs() < 1e-12);
        assert!(report.skipped.is_empty());
        // Two asked states at 0.1 each: 0.1, 0.1, 0.8.
        let tri = out.get("tri").unwrap().row(0).unwrap();
        assert!((tri.probs[2] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn overrides_change_one_question() {
        let dag = dag();
        let cpts = CptSet::uniform_for(&dag).unwrap();
        let mut capture = CaptureState::default();
        capture.config.p0 = 0.1;
        capture.config.k_prior = 5.0;
        let q = question_id(&"fc".into(), 0, &ParentConfig(vec![]));
        capture.overrides.insert(
            q,
            crate::capture::QuestionOverride {
                prior: Some(crate::capture::Prior::new(0.6, 2.0).unwrap()),
                ..Default::default()
            },
        );
        let (out, _) = materialize_cpts(&dag, &cpts, &capture, Some(at(0))).unwrap();
        assert!((out.get("fc").unwrap().row(0).unwrap().probs[0] - 0.6).abs() < 1e-12);
        assert!((out.get("ar").unwrap().row(0).unwrap().probs[0] - 0.1).abs() < 1e-12);
    }
}
