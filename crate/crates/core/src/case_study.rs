//! Bundled instant-payments gateway model: the source bowtie, the refined
//! runtime DAG with hand-set CPTs, an illustrative elicitation ledger and
//! three operational situation cuts.
//!
//! The CPT numbers are constructed for this fixture. They are not measured
//! incident frequencies.

use chrono::{DateTime, TimeZone, Utc};

use crate::bowtie::{BowtieModel, MitigativeBarrier, PreventiveBarrier};
use crate::capture::{question_id, Answer, CaptureState, Origin, QuestionId, QuestionOverride};
use crate::cpt::{configurations, Cpt, CptSet, ParentConfig};
use crate::graph::{EndpointDescriptor, EndpointMode, NodeId, NodeKind, RiskDag, RiskNode};
use crate::inference::Evidence;
use crate::model_io::{ModelDocument, Position, UiMetadata};

pub const MODEL_NAME: &str = "Instant-Payments Gateway";

pub const VALIDATION_GATE: &str = "validation_gate";
pub const ROUTING_MISCONFIGURATION: &str = "routing_misconfiguration";
pub const OBSERVABILITY_DEGRADED: &str = "observability_degraded";
pub const PEAK_LOAD_WINDOW: &str = "peak_load_window";
pub const QUEUE_PROTECTION: &str = "queue_protection";
pub const TRAFFIC_SHEDDING: &str = "traffic_shedding";
pub const REGIONAL_ISOLATION: &str = "regional_isolation";
pub const FAULTY_CHANGE: &str = "faulty_change";
pub const CANARY_ROLLOUT: &str = "canary_rollout";
pub const SERVICE_DEGRADATION: &str = "service_degradation";
pub const QUEUE_SATURATION: &str = "queue_saturation";
pub const HIGH_LATENCY: &str = "high_latency";
pub const RETRY_STORM: &str = "retry_storm";
pub const AUTOMATIC_ROLLBACK: &str = "automatic_rollback";
pub const CONSEQUENCE: &str = "consequence";

pub const TRANSACTION_LOSS: &str = "transaction loss";

/// Rollback question answers from four deployment experts.
pub const ROLLBACK_ANSWERS: [f64; 4] = [0.78, 0.81, 0.79, 0.84];
/// Retry-storm question answers with hidden context heterogeneity.
pub const RETRY_STORM_ANSWERS: [f64; 4] = [0.20, 0.35, 0.62, 0.78];

const BARRIER: [&str; 2] = ["works", "fails"];

/// The source bowtie: 4 threats, 4 preventive barriers, 4 escalation
/// events, 5 mitigative barriers and 3 adverse end states.
pub fn bowtie() -> BowtieModel {
    let pb = |name: &str, guards: &[&str]| PreventiveBarrier {
        name: name.into(),
        guards: guards.iter().map(|g| g.to_string()).collect(),
    };
    let mb = |name: &str, guards: &[&str]| MitigativeBarrier {
        name: name.into(),
        guards: guards.iter().map(|g| g.to_string()).collect(),
    };
    BowtieModel {
        top_event: "Service Degradation Under Load".into(),
        threats: vec![
            "Faulty Production Change".into(),
            "Routing Misconfiguration".into(),
            "Insufficient Rollout Validation".into(),
            "Peak Operational Load".into(),
        ],
        gates: Vec::new(),
        preventive_barriers: vec![
            pb("Config Routing Validation", &["Routing Misconfiguration"]),
            pb("Pre-Deployment Tests", &["Faulty Production Change"]),
            pb("Change Approval", &["Faulty Production Change"]),
            pb(
                "Canary Release With Automated Rollback",
                &["Insufficient Rollout Validation"],
            ),
        ],
        escalation_events: vec![
            "High Latency".into(),
            "Retry Storm".into(),
            "Partial Unavailability".into(),
            "Complete Unavailability".into(),
        ],
        mitigative_barriers: vec![
            mb("Automatic Rollback", &["High Latency"]),
            mb("Traffic Shedding", &["Retry Storm"]),
            mb("Queue Protection", &["High Latency"]),
            mb("Regional Isolation", &["Partial Unavailability"]),
            mb("Manual Failover", &["Complete Unavailability"]),
        ],
        consequences: vec![
            "degraded service".into(),
            "partial outage".into(),
            "transaction loss".into(),
        ],
        contexts: Vec::new(),
        consequence_name: None,
    }
}

/// Nodes with kinds, states and integration descriptors.
fn nodes() -> Vec<RiskNode> {
    let barrier = |id: &str, name: &str| {
        RiskNode::new(id, name, NodeKind::Barrier, BARRIER).with_activation(true)
    };
    vec![
        barrier(VALIDATION_GATE, "Validation Gate"),
        RiskNode::boolean(ROUTING_MISCONFIGURATION, "Routing Misconfiguration", NodeKind::Cause),
        RiskNode::boolean(OBSERVABILITY_DEGRADED, "Observability Degraded", NodeKind::Context),
        RiskNode::boolean(PEAK_LOAD_WINDOW, "Peak Load Window", NodeKind::Context)
            .with_evidence_source(EndpointDescriptor::new(
                "http://context.payments.invalid/load-window",
                EndpointMode::Poll,
            )),
        barrier(QUEUE_PROTECTION, "Queue Protection"),
        barrier(TRAFFIC_SHEDDING, "Traffic Shedding"),
        barrier(REGIONAL_ISOLATION, "Regional Isolation").with_evidence_source(
            EndpointDescriptor::new("http://steering.payments.invalid/isolation", EndpointMode::Poll),
        ),
        RiskNode::boolean(FAULTY_CHANGE, "Faulty Change", NodeKind::Cause),
        barrier(CANARY_ROLLOUT, "Canary Rollout"),
        RiskNode::boolean(SERVICE_DEGRADATION, "Service Degradation", NodeKind::TopEvent),
        RiskNode::new(
            QUEUE_SATURATION,
            "Queue Saturation",
            NodeKind::Event,
            ["normal", "elevated", "critical"],
        )
        .with_evidence_source(EndpointDescriptor::new(
            "http://metrics.payments.invalid/queue-depth",
            EndpointMode::Push,
        )),
        RiskNode::boolean(HIGH_LATENCY, "High Latency", NodeKind::Event),
        RiskNode::new(
            RETRY_STORM,
            "Retry Storm",
            NodeKind::Event,
            ["sustained", "local", "none"],
        ),
        barrier(AUTOMATIC_ROLLBACK, "Automatic Rollback").with_evidence_source(
            EndpointDescriptor::new("http://deploy.payments.invalid/rollback", EndpointMode::Push),
        ),
        RiskNode::new(
            CONSEQUENCE,
            "Consequence",
            NodeKind::Consequence,
            ["safe", "degraded service", "partial outage", TRANSACTION_LOSS],
        )
        .with_notify_target(EndpointDescriptor {
            threshold: Some(0.1),
            ..EndpointDescriptor::new("http://incident.payments.invalid/consequence", EndpointMode::Push)
        }),
    ]
}

/// Parent lists in declared order.
const EDGES: [(&str, &[&str]); 8] = [
    (FAULTY_CHANGE, &[VALIDATION_GATE, ROUTING_MISCONFIGURATION]),
    (CANARY_ROLLOUT, &[OBSERVABILITY_DEGRADED]),
    (SERVICE_DEGRADATION, &[FAULTY_CHANGE, PEAK_LOAD_WINDOW, CANARY_ROLLOUT]),
    (QUEUE_SATURATION, &[SERVICE_DEGRADATION, PEAK_LOAD_WINDOW, QUEUE_PROTECTION]),
    (HIGH_LATENCY, &[QUEUE_SATURATION, TRAFFIC_SHEDDING]),
    (RETRY_STORM, &[HIGH_LATENCY]),
    (AUTOMATIC_ROLLBACK, &[FAULTY_CHANGE, PEAK_LOAD_WINDOW]),
    (
        CONSEQUENCE,
        &[RETRY_STORM, REGIONAL_ISOLATION, AUTOMATIC_ROLLBACK, TRAFFIC_SHEDDING],
    ),
];

pub fn dag() -> RiskDag {
    let mut dag = RiskDag::new();
    for n in nodes() {
        dag.add_node(n).expect("fixture nodes are unique");
    }
    for (child, parents) in EDGES {
        for p in parents {
            dag.add_edge(p, child).expect("fixture edges are valid");
        }
    }
    dag
}

/// Moves fraction `f` of every non-terminal state's mass one state toward
/// the most severe outcome.
fn escalate(dist: &[f64], f: f64) -> Vec<f64> {
    let k = dist.len();
    let mut out = vec![0.0; k];
    for i in 0..k {
        if i + 1 == k {
            out[i] += dist[i];
        } else {
            out[i] += dist[i] * (1.0 - f);
            out[i + 1] += dist[i] * f;
        }
    }
    out
}

fn consequence_rows() -> Vec<Vec<f64>> {
    // Indexed by retry storm state: sustained, local, none.
    let base = [
        [0.30, 0.35, 0.25, 0.10],
        [0.62, 0.28, 0.08, 0.02],
        [0.96, 0.03, 0.008, 0.002],
    ];
    // Barrier failures matter less the calmer the retry situation is.
    let reach = [1.0, 0.6, 0.15];
    configurations(&[3, 2, 2, 2])
        .into_iter()
        .map(|c| {
            let r = reach[c[0]];
            let mut d = base[c[0]].to_vec();
            if c[1] == 1 {
                d = escalate(&d, 0.45 * r);
            }
            if c[2] == 1 {
                d = escalate(&d, 0.20 * r);
            }
            if c[3] == 1 {
                d = escalate(&d, 0.35 * r);
            }
            normalize_last(d)
        })
        .collect()
}

/// Recomputes the last entry so the row sums to one after rounding.
fn normalize_last(mut d: Vec<f64>) -> Vec<f64> {
    let k = d.len();
    let head: f64 = d[..k - 1].iter().sum();
    d[k - 1] = 1.0 - head;
    d
}

fn service_degradation_rows() -> Vec<Vec<f64>> {
    // Noisy-OR over a leak, the faulty change (weaker when the canary
    // works) and the load window.
    configurations(&[2, 2, 2])
        .into_iter()
        .map(|c| {
            let change = match (c[0], c[2]) {
                (1, 0) => 0.35,
                (1, _) => 0.75,
                _ => 0.0,
            };
            let load = if c[1] == 1 { 0.12 } else { 0.0 };
            let t = 1.0 - (1.0 - 0.02) * (1.0 - change) * (1.0 - load);
            vec![1.0 - t, t]
        })
        .collect()
}

fn rows_for(node: &str) -> Vec<Vec<f64>> {
    let v = |rows: &[&[f64]]| rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    match node {
        VALIDATION_GATE => v(&[&[0.85, 0.15]]),
        ROUTING_MISCONFIGURATION => v(&[&[0.92, 0.08]]),
        OBSERVABILITY_DEGRADED => v(&[&[0.9, 0.1]]),
        PEAK_LOAD_WINDOW => v(&[&[0.7, 0.3]]),
        QUEUE_PROTECTION => v(&[&[0.9, 0.1]]),
        TRAFFIC_SHEDDING => v(&[&[0.4, 0.6]]),
        REGIONAL_ISOLATION => v(&[&[0.8, 0.2]]),
        FAULTY_CHANGE => v(&[&[0.97, 0.03], &[0.6, 0.4], &[0.85, 0.15], &[0.2, 0.8]]),
        CANARY_ROLLOUT => v(&[&[0.9, 0.1], &[0.45, 0.55]]),
        SERVICE_DEGRADATION => service_degradation_rows(),
        QUEUE_SATURATION => v(&[
            &[0.95, 0.04, 0.01],
            &[0.88, 0.09, 0.03],
            &[0.80, 0.16, 0.04],
            &[0.65, 0.25, 0.10],
            &[0.45, 0.40, 0.15],
            &[0.25, 0.45, 0.30],
            &[0.25, 0.45, 0.30],
            &[0.10, 0.35, 0.55],
        ]),
        HIGH_LATENCY => v(&[
            &[0.96, 0.04],
            &[0.92, 0.08],
            &[0.55, 0.45],
            &[0.35, 0.65],
            &[0.2, 0.8],
            &[0.07, 0.93],
        ]),
        RETRY_STORM => v(&[&[0.03, 0.12, 0.85], &[0.4875, 0.30, 0.2125]]),
        AUTOMATIC_ROLLBACK => v(&[&[0.97, 0.03], &[0.93, 0.07], &[0.88, 0.12], &[0.805, 0.195]]),
        CONSEQUENCE => consequence_rows(),
        _ => unreachable!("unknown fixture node {node}"),
    }
}

pub fn cpts(dag: &RiskDag) -> CptSet {
    let mut set = CptSet::new();
    for n in dag.nodes() {
        let id = n.id.as_str();
        set.insert(Cpt::from_complete_rows(dag, id, rows_for(id)).expect("fixture rows are valid"));
    }
    set
}

fn config(pairs: &[(&str, usize)]) -> ParentConfig {
    ParentConfig(pairs.iter().map(|(n, s)| (NodeId::new(*n), *s)).collect())
}

/// `Automatic Rollback=works | Faulty Change=true, Peak Load Window=true`.
pub fn rollback_question() -> QuestionId {
    question_id(
        &NodeId::new(AUTOMATIC_ROLLBACK),
        0,
        &config(&[(FAULTY_CHANGE, 1), (PEAK_LOAD_WINDOW, 1)]),
    )
}

/// `Retry Storm=sustained | High Latency=true`.
pub fn retry_storm_question() -> QuestionId {
    question_id(&NodeId::new(RETRY_STORM), 0, &config(&[(HIGH_LATENCY, 1)]))
}

fn at(day: u32, hour: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, day, hour, 0, 0).unwrap()
}

pub fn capture() -> CaptureState {
    let mut state = CaptureState::default();
    let rollback = rollback_question();
    for (i, v) in ROLLBACK_ANSWERS.iter().enumerate() {
        state
            .ledger
            .append(Answer {
                question: rollback.clone(),
                value: *v,
                timestamp: at(2, 9 + i as u32),
                respondent: format!("deploy-{}", i + 1),
                origin: Origin::Manual,
            })
            .expect("fixture answers are valid");
    }
    let retry = retry_storm_question();
    for (i, v) in RETRY_STORM_ANSWERS.iter().enumerate() {
        state
            .ledger
            .append(Answer {
                question: retry.clone(),
                value: *v,
                timestamp: at(3, 9 + i as u32),
                respondent: format!("sre-{}", i + 1),
                origin: Origin::Manual,
            })
            .expect("fixture answers are valid");
    }
    // Weakly anchored question: a lower expert concentration.
    state.overrides.insert(
        retry,
        QuestionOverride {
            kappa: Some(4.0),
            ..QuestionOverride::default()
        },
    );
    state
}

fn layout() -> UiMetadata {
    let grid: [(&str, f64, f64); 15] = [
        (VALIDATION_GATE, 0.0, 0.0),
        (ROUTING_MISCONFIGURATION, 0.0, 120.0),
        (OBSERVABILITY_DEGRADED, 0.0, 240.0),
        (PEAK_LOAD_WINDOW, 0.0, 360.0),
        (FAULTY_CHANGE, 200.0, 60.0),
        (CANARY_ROLLOUT, 200.0, 240.0),
        (SERVICE_DEGRADATION, 400.0, 180.0),
        (QUEUE_PROTECTION, 400.0, 360.0),
        (AUTOMATIC_ROLLBACK, 400.0, 0.0),
        (QUEUE_SATURATION, 600.0, 240.0),
        (TRAFFIC_SHEDDING, 600.0, 400.0),
        (HIGH_LATENCY, 800.0, 240.0),
        (RETRY_STORM, 1000.0, 240.0),
        (REGIONAL_ISOLATION, 1000.0, 60.0),
        (CONSEQUENCE, 1200.0, 180.0),
    ];
    UiMetadata {
        positions: grid
            .iter()
            .map(|(id, x, y)| (NodeId::new(*id), Position { x: *x, y: *y }))
            .collect(),
    }
}

pub fn document() -> ModelDocument {
    let dag = dag();
    let cpts = cpts(&dag);
    ModelDocument {
        name: Some(MODEL_NAME.into()),
        bowtie: Some(bowtie()),
        dag,
        cpts,
        capture: capture(),
        ui: layout(),
    }
}

/// Evidence labels for situation cut 1, 2 or 3.
pub fn cut_labels(cut: usize) -> Vec<(&'static str, &'static str)> {
    match cut {
        1 => vec![
            (PEAK_LOAD_WINDOW, "true"),
            (QUEUE_SATURATION, "normal"),
            (HIGH_LATENCY, "false"),
            (AUTOMATIC_ROLLBACK, "works"),
        ],
        2 => vec![
            (FAULTY_CHANGE, "true"),
            (QUEUE_SATURATION, "elevated"),
            (HIGH_LATENCY, "true"),
        ],
        3 => vec![
            (QUEUE_SATURATION, "critical"),
            (RETRY_STORM, "sustained"),
            (REGIONAL_ISOLATION, "fails"),
            (AUTOMATIC_ROLLBACK, "fails"),
        ],
        _ => Vec::new(),
    }
}

pub fn cut_evidence(dag: &RiskDag, cut: usize) -> Evidence {
    Evidence::from_labels(dag, cut_labels(cut)).expect("fixture labels resolve")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpt::validate_cpts;

    #[test]
    fn fixture_is_clean() {
        let doc = document();
        assert!(doc.dag.validate().findings.is_empty());
        assert!(validate_cpts(&doc.dag, &doc.cpts).is_clean());
        assert_eq!(doc.capture.ledger.len(), 8);
        let n = doc.dag.node(CONSEQUENCE).unwrap();
        assert_eq!(n.states[0], "safe");
    }

    #[test]
    fn source_bowtie_transforms() {
        let out = crate::bowtie::transform(&bowtie()).unwrap();
        let c = out
            .dag
            .nodes()
            .find(|n| n.kind == NodeKind::Consequence)
            .unwrap();
        assert_eq!(
            c.states,
            ["safe", "degraded service", "partial outage", "transaction loss"]
        );
    }

    #[test]
    fn escalation_preserves_mass() {
        for row in consequence_rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn cuts_escalate_and_barriers_help() {
        let dag = dag();
        let cpts = cpts(&dag);
        let mut safe = Vec::new();
        for cut in 1..=3 {
            let ev = cut_evidence(&dag, cut);
            let post = crate::inference::posterior(&dag, &cpts, &ev, None).unwrap();
            let c = &post[&NodeId::new(CONSEQUENCE)];
            println!("cut {cut}: {c:?}");
            safe.push(c[0]);
        }
        assert!(safe[0] > safe[1] && safe[1] > safe[2], "{safe:?}");

        let ev = cut_evidence(&dag, 3);
        let r = crate::causal::rank_interventions(&dag, &cpts, &ev, &NodeId::new(CONSEQUENCE), 3, None)
            .unwrap();
        println!("baseline {}", r.baseline);
        for e in r.entries.iter().filter(|e| e.label == "works") {
            println!("do({}=works) {}", e.node, e.probability);
            assert!(e.probability <= r.baseline + 1e-12);
        }
        let pick = |id: &str| {
            r.entries
                .iter()
                .find(|e| e.node.as_str() == id && e.state == 0)
                .unwrap()
                .probability
        };
        let (ri, ts, ar) = (pick(REGIONAL_ISOLATION), pick(TRAFFIC_SHEDDING), pick(AUTOMATIC_ROLLBACK));
        assert!(ri < ts && ts < ar && ar < r.baseline);
    }
}
