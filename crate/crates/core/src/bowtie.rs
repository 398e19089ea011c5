//! Bowtie-to-DAG transformation.
//!
//! Threats and gates feed the top event from the left; the escalation chain
//! runs from the top event to a single consequence node on the right.
//! Barriers become `[works, fails]` activation nodes wired as parents of the
//! transition they guard. Gate nodes get deterministic CPTs, everything else
//! gets uniform placeholders awaiting elicitation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cpt::{configurations, Cpt, CptError, CptRow, CptSet, RowStatus};
use crate::graph::{GraphError, NodeId, NodeKind, RiskDag, RiskNode, SAFE_STATE};

pub const BARRIER_STATES: [&str; 2] = ["works", "fails"];
pub const BOOLEAN_STATES: [&str; 2] = ["false", "true"];
pub const DEFAULT_CONSEQUENCE_NAME: &str = "Consequence";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateKind {
    And,
    Or,
}

impl GateKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GateKind::And => "and",
            GateKind::Or => "or",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "and" => Some(GateKind::And),
            "or" => Some(GateKind::Or),
            _ => None,
        }
    }

    fn node_kind(self) -> NodeKind {
        match self {
            GateKind::And => NodeKind::GateAnd,
            GateKind::Or => NodeKind::GateOr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub name: String,
    pub kind: GateKind,
    /// Names of threats or other gates.
    pub inputs: Vec<String>,
}

/// Preventive barrier. `guards` lists the threat paths it covers; the
/// barrier node becomes a parent of the top event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreventiveBarrier {
    pub name: String,
    #[serde(default)]
    pub guards: Vec<String>,
}

/// Mitigative barrier. `guards` names escalation events or the consequence
/// node; an empty list guards the consequence node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigativeBarrier {
    pub name: String,
    #[serde(default)]
    pub guards: Vec<String>,
}

/// Context or precondition node added as an extra parent of the elements
/// it influences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextFactor {
    pub name: String,
    #[serde(default = "default_boolean_states")]
    pub states: Vec<String>,
    pub influences: Vec<String>,
}

fn default_boolean_states() -> Vec<String> {
    BOOLEAN_STATES.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BowtieModel {
    pub top_event: String,
    pub threats: Vec<String>,
    #[serde(default)]
    pub gates: Vec<Gate>,
    #[serde(default)]
    pub preventive_barriers: Vec<PreventiveBarrier>,
    #[serde(default)]
    pub escalation_events: Vec<String>,
    #[serde(default)]
    pub mitigative_barriers: Vec<MitigativeBarrier>,
    pub consequences: Vec<String>,
    #[serde(default)]
    pub contexts: Vec<ContextFactor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consequence_name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BowtieError {
    #[error("malformed bowtie: {0}")]
    Malformed(String),
    #[error("gate `{gate}` input `{input}` is not binary [false, true]")]
    NonBinaryParent { gate: NodeId, input: NodeId },
    #[error("gate needs at least one input")]
    EmptyGate,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Cpt(#[from] CptError),
}

fn malformed(msg: impl Into<String>) -> BowtieError {
    BowtieError::Malformed(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ElementKind {
    Threat,
    Gate,
    TopEvent,
    PreventiveBarrier,
    EscalationEvent,
    MitigativeBarrier,
    Consequence,
    Context,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementMapping {
    pub element: String,
    pub kind: ElementKind,
    pub nodes: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformReport {
    pub node_count: usize,
    pub edge_count: usize,
    pub mappings: Vec<ElementMapping>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutput {
    pub dag: RiskDag,
    pub cpts: CptSet,
    pub report: TransformReport,
}

/// Lowercase ASCII slug; runs of other characters collapse into `-`.
pub fn slug(name: &str) -> String {
    let mut out = String::with_capacity(name.len());
    for ch in name.trim().chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
        } else if !out.ends_with('-') && !out.is_empty() {
            out.push('-');
        }
    }
    while out.ends_with('-') {
        out.pop();
    }
    out
}

impl BowtieModel {
    fn consequence_name(&self) -> &str {
        self.consequence_name
            .as_deref()
            .unwrap_or(DEFAULT_CONSEQUENCE_NAME)
    }

    pub fn check(&self) -> Result<(), BowtieError> {
        if self.top_event.trim().is_empty() {
            return Err(malformed("exactly one named top event is required"));
        }
        if self.threats.is_empty() {
            return Err(malformed("at least one threat is required"));
        }
        if self.consequences.is_empty() {
            return Err(malformed("at least one consequence is required"));
        }
        let mut labels = BTreeSet::new();
        for c in &self.consequences {
            if c.trim().is_empty() {
                return Err(malformed("empty consequence name"));
            }
            if c == SAFE_STATE {
                return Err(malformed("`safe` is added automatically"));
            }
            if !labels.insert(c.as_str()) {
                return Err(malformed(format!("duplicate consequence `{c}`")));
            }
        }

        let mut names = BTreeSet::new();
        let all_names = std::iter::once(self.top_event.as_str())
            .chain(self.threats.iter().map(String::as_str))
            .chain(self.gates.iter().map(|g| g.name.as_str()))
            .chain(self.preventive_barriers.iter().map(|b| b.name.as_str()))
            .chain(self.escalation_events.iter().map(String::as_str))
            .chain(self.mitigative_barriers.iter().map(|b| b.name.as_str()))
            .chain(self.contexts.iter().map(|c| c.name.as_str()))
            .chain(std::iter::once(self.consequence_name()));
        for name in all_names {
            if slug(name).is_empty() {
                return Err(malformed(format!("element name `{name}` has no usable characters")));
            }
            if !names.insert(slug(name)) {
                return Err(malformed(format!("element name `{name}` is not unique")));
            }
        }

        let threats: BTreeSet<&str> = self.threats.iter().map(String::as_str).collect();
        let gates: BTreeMap<&str, &Gate> =
            self.gates.iter().map(|g| (g.name.as_str(), g)).collect();
        for g in &self.gates {
            if g.inputs.is_empty() {
                return Err(malformed(format!("gate `{}` has no inputs", g.name)));
            }
            let mut seen = BTreeSet::new();
            for i in &g.inputs {
                if !threats.contains(i.as_str()) && !gates.contains_key(i.as_str()) {
                    return Err(malformed(format!(
                        "gate `{}` input `{i}` is not a declared threat or gate",
                        g.name
                    )));
                }
                if !seen.insert(i) {
                    return Err(malformed(format!("gate `{}` lists `{i}` twice", g.name)));
                }
            }
        }
        // Gate nesting must be acyclic.
        let mut state: BTreeMap<&str, u8> = BTreeMap::new();
        fn visit<'a>(
            g: &'a str,
            gates: &BTreeMap<&'a str, &'a Gate>,
            state: &mut BTreeMap<&'a str, u8>,
        ) -> bool {
            match state.get(g) {
                Some(1) => return false,
                Some(2) => return true,
                _ => {}
            }
            state.insert(g, 1);
            for i in &gates[g].inputs {
                if gates.contains_key(i.as_str()) && !visit(i, gates, state) {
                    return false;
                }
            }
            state.insert(g, 2);
            true
        }
        for g in gates.keys() {
            if !visit(g, &gates, &mut state) {
                return Err(malformed(format!("gate `{g}` is part of a gate cycle")));
            }
        }

        for b in &self.preventive_barriers {
            for t in &b.guards {
                if !threats.contains(t.as_str()) {
                    return Err(malformed(format!(
                        "preventive barrier `{}` guards unknown threat `{t}`",
                        b.name
                    )));
                }
            }
        }
        let events: BTreeSet<&str> = self.escalation_events.iter().map(String::as_str).collect();
        for b in &self.mitigative_barriers {
            for t in &b.guards {
                if !events.contains(t.as_str()) && t != self.consequence_name() {
                    return Err(malformed(format!(
                        "mitigative barrier `{}` guards unknown element `{t}`",
                        b.name
                    )));
                }
            }
        }
        for c in &self.contexts {
            for t in &c.influences {
                if gates.contains_key(t.as_str()) {
                    return Err(malformed(format!(
                        "context `{}` cannot influence deterministic gate `{t}`",
                        c.name
                    )));
                }
                let known = threats.contains(t.as_str())
                    || events.contains(t.as_str())
                    || *t == self.top_event
                    || t == self.consequence_name()
                    || self.preventive_barriers.iter().any(|b| &b.name == t)
                    || self.mitigative_barriers.iter().any(|b| &b.name == t)
                    || self.contexts.iter().any(|o| &o.name == t && o.name != c.name);
                if !known {
                    return Err(malformed(format!(
                        "context `{}` influences unknown element `{t}`",
                        c.name
                    )));
                }
            }
        }
        Ok(())
    }
}

struct Ids<'a> {
    bowtie: &'a BowtieModel,
}

impl Ids<'_> {
    fn threat(&self, name: &str) -> NodeId {
        NodeId::new(format!("threat:{}", slug(name)))
    }
    fn gate(&self, name: &str) -> NodeId {
        NodeId::new(format!("gate:{}", slug(name)))
    }
    fn top(&self) -> NodeId {
        NodeId::new(format!("top:{}", slug(&self.bowtie.top_event)))
    }
    fn barrier(&self, name: &str) -> NodeId {
        NodeId::new(format!("barrier:{}", slug(name)))
    }
    fn event(&self, name: &str) -> NodeId {
        NodeId::new(format!("event:{}", slug(name)))
    }
    fn context(&self, name: &str) -> NodeId {
        NodeId::new(format!("context:{}", slug(name)))
    }
    fn consequence(&self) -> NodeId {
        NodeId::new(format!("consequence:{}", slug(self.bowtie.consequence_name())))
    }

    /// Node for any named element that may receive a context edge.
    fn resolve(&self, name: &str) -> NodeId {
        let b = self.bowtie;
        if b.threats.iter().any(|t| t == name) {
            self.threat(name)
        } else if b.escalation_events.iter().any(|e| e == name) {
            self.event(name)
        } else if name == b.top_event {
            self.top()
        } else if name == b.consequence_name() {
            self.consequence()
        } else if b.contexts.iter().any(|c| c.name == name) {
            self.context(name)
        } else {
            self.barrier(name)
        }
    }
}

pub fn transform(bowtie: &BowtieModel) -> Result<TransformOutput, BowtieError> {
    bowtie.check()?;
    let ids = Ids { bowtie };
    let mut dag = RiskDag::new();
    let mut report = TransformReport::default();

    for t in &bowtie.threats {
        dag.add_node(RiskNode::new(ids.threat(t), t, NodeKind::Cause, BOOLEAN_STATES))?;
        report.mappings.push(ElementMapping {
            element: t.clone(),
            kind: ElementKind::Threat,
            nodes: vec![ids.threat(t)],
        });
    }
    for g in &bowtie.gates {
        dag.add_node(RiskNode::new(
            ids.gate(&g.name),
            &g.name,
            g.kind.node_kind(),
            BOOLEAN_STATES,
        ))?;
        report.mappings.push(ElementMapping {
            element: g.name.clone(),
            kind: ElementKind::Gate,
            nodes: vec![ids.gate(&g.name)],
        });
    }
    dag.add_node(RiskNode::new(
        ids.top(),
        &bowtie.top_event,
        NodeKind::TopEvent,
        BOOLEAN_STATES,
    ))?;
    report.mappings.push(ElementMapping {
        element: bowtie.top_event.clone(),
        kind: ElementKind::TopEvent,
        nodes: vec![ids.top()],
    });
    for b in &bowtie.preventive_barriers {
        dag.add_node(
            RiskNode::new(ids.barrier(&b.name), &b.name, NodeKind::Barrier, BARRIER_STATES)
                .with_activation(true),
        )?;
        report.mappings.push(ElementMapping {
            element: b.name.clone(),
            kind: ElementKind::PreventiveBarrier,
            nodes: vec![ids.barrier(&b.name)],
        });
    }
    for e in &bowtie.escalation_events {
        dag.add_node(RiskNode::new(ids.event(e), e, NodeKind::Event, BOOLEAN_STATES))?;
        report.mappings.push(ElementMapping {
            element: e.clone(),
            kind: ElementKind::EscalationEvent,
            nodes: vec![ids.event(e)],
        });
    }
    for b in &bowtie.mitigative_barriers {
        dag.add_node(
            RiskNode::new(ids.barrier(&b.name), &b.name, NodeKind::Barrier, BARRIER_STATES)
                .with_activation(true),
        )?;
        report.mappings.push(ElementMapping {
            element: b.name.clone(),
            kind: ElementKind::MitigativeBarrier,
            nodes: vec![ids.barrier(&b.name)],
        });
        if b.guards.len() > 1 {
            report.warnings.push(format!(
                "mitigative barrier `{}` guards {} elements: {}",
                b.name,
                b.guards.len(),
                b.guards.join(", ")
            ));
        }
    }
    let consequence_states: Vec<String> = std::iter::once(SAFE_STATE.to_owned())
        .chain(bowtie.consequences.iter().cloned())
        .collect();
    dag.add_node(RiskNode::new(
        ids.consequence(),
        bowtie.consequence_name(),
        NodeKind::Consequence,
        consequence_states,
    ))?;
    for c in &bowtie.consequences {
        report.mappings.push(ElementMapping {
            element: c.clone(),
            kind: ElementKind::Consequence,
            nodes: vec![ids.consequence()],
        });
    }
    for c in &bowtie.contexts {
        dag.add_node(RiskNode::new(
            ids.context(&c.name),
            &c.name,
            NodeKind::Context,
            c.states.clone(),
        ))?;
        report.mappings.push(ElementMapping {
            element: c.name.clone(),
            kind: ElementKind::Context,
            nodes: vec![ids.context(&c.name)],
        });
    }

    // Left side: gate inputs, then remaining threats and top-level gates.
    let gated: BTreeSet<&str> = bowtie
        .gates
        .iter()
        .flat_map(|g| g.inputs.iter().map(String::as_str))
        .collect();
    let gate_names: BTreeSet<&str> = bowtie.gates.iter().map(|g| g.name.as_str()).collect();
    for g in &bowtie.gates {
        for i in &g.inputs {
            let from = if gate_names.contains(i.as_str()) {
                ids.gate(i)
            } else {
                ids.threat(i)
            };
            dag.add_edge(from.as_str(), ids.gate(&g.name).as_str())?;
        }
    }
    let top = ids.top();
    for t in &bowtie.threats {
        if !gated.contains(t.as_str()) {
            dag.add_edge(ids.threat(t).as_str(), top.as_str())?;
        }
    }
    for g in &bowtie.gates {
        if !gated.contains(g.name.as_str()) {
            dag.add_edge(ids.gate(&g.name).as_str(), top.as_str())?;
        }
    }
    for b in &bowtie.preventive_barriers {
        dag.add_edge(ids.barrier(&b.name).as_str(), top.as_str())?;
    }

    // Right side: escalation chain into the consequence node.
    let consequence = ids.consequence();
    let mut prev = top.clone();
    for e in &bowtie.escalation_events {
        let id = ids.event(e);
        dag.add_edge(prev.as_str(), id.as_str())?;
        prev = id;
    }
    dag.add_edge(prev.as_str(), consequence.as_str())?;
    for b in &bowtie.mitigative_barriers {
        let barrier = ids.barrier(&b.name);
        if b.guards.is_empty() {
            dag.add_edge(barrier.as_str(), consequence.as_str())?;
        }
        for target in &b.guards {
            let to = if target == bowtie.consequence_name() {
                consequence.clone()
            } else {
                ids.event(target)
            };
            dag.add_edge(barrier.as_str(), to.as_str())?;
        }
    }
    for c in &bowtie.contexts {
        for target in &c.influences {
            dag.add_edge(ids.context(&c.name).as_str(), ids.resolve(target).as_str())?;
        }
    }

    let mut cpts = CptSet::new();
    for node in dag.nodes() {
        let cpt = if node.kind.is_gate() {
            synthesize_gate_cpt(&dag, node.id.as_str())?
        } else {
            Cpt::uniform(&dag, node.id.as_str())?
        };
        cpts.insert(cpt);
    }

    report.node_count = dag.len();
    report.edge_count = dag.edge_count();
    Ok(TransformOutput { dag, cpts, report })
}

/// Deterministic gate rows over `n` binary parents, in enumeration order:
/// each row is `[P(false), P(true)]`.
pub fn gate_rows(kind: GateKind, n: usize) -> Result<Vec<Vec<f64>>, BowtieError> {
    if n == 0 {
        return Err(BowtieError::EmptyGate);
    }
    Ok(configurations(&vec![2; n])
        .into_iter()
        .map(|config| {
            let fires = match kind {
                GateKind::And => config.iter().all(|&s| s == 1),
                GateKind::Or => config.contains(&1),
            };
            if fires {
                vec![0.0, 1.0]
            } else {
                vec![1.0, 0.0]
            }
        })
        .collect())
}

fn is_boolean(node: &RiskNode) -> bool {
    node.states.len() == 2 && node.states[0] == "false" && node.states[1] == "true"
}

/// Deterministic CPT for a gate node whose parents are all `[false, true]`.
pub fn synthesize_gate_cpt(dag: &RiskDag, node: &str) -> Result<Cpt, BowtieError> {
    let gate = dag.node(node)?;
    let kind = match gate.kind {
        NodeKind::GateAnd => GateKind::And,
        NodeKind::GateOr => GateKind::Or,
        _ => return Err(malformed(format!("`{node}` is not a gate node"))),
    };
    if !is_boolean(gate) {
        return Err(malformed(format!("gate `{node}` must have states [false, true]")));
    }
    for p in dag.parents(node)? {
        if !is_boolean(dag.node(p.as_str())?) {
            return Err(BowtieError::NonBinaryParent {
                gate: gate.id.clone(),
                input: p.clone(),
            });
        }
    }
    let parents = dag.parents(node)?.to_vec();
    let rows = gate_rows(kind, parents.len())?
        .into_iter()
        .map(|probs| CptRow {
            probs,
            status: RowStatus::Complete,
        })
        .collect();
    let cards = vec![2; parents.len()];
    Ok(Cpt::from_raw_parts(gate.id.clone(), parents, cards, 2, rows))
}

/// Sets the activation flag. Returns a warning for kinds that are unusual
/// intervention targets.
pub fn mark_activation(
    dag: &mut RiskDag,
    id: &str,
    flag: bool,
) -> Result<Option<String>, GraphError> {
    dag.set_activation(id, flag)?;
    let kind = dag.node(id)?.kind;
    let unusual = flag && !matches!(kind, NodeKind::Barrier | NodeKind::Event);
    Ok(unusual.then(|| format!("activation flag on {kind} node `{id}` is unusual")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpt::validate_cpts;

    fn minimal() -> BowtieModel {
        BowtieModel {
            top_event: "Outage".into(),
            threats: vec!["Bad Deploy".into()],
            gates: vec![],
            preventive_barriers: vec![],
            escalation_events: vec![],
            mitigative_barriers: vec![],
            consequences: vec!["data loss".into()],
            contexts: vec![],
            consequence_name: None,
        }
    }

    #[test]
    fn minimal_bowtie() {
        let out = transform(&minimal()).unwrap();
        assert_eq!(out.dag.len(), 3);
        assert_eq!(out.dag.edge_count(), 2);
        let c = out.dag.node("consequence:consequence").unwrap();
        assert_eq!(c.states, vec!["safe", "data loss"]);
        assert!(out.dag.validate().findings.is_empty());
        assert!(validate_cpts(&out.dag, &out.cpts).is_clean());
        assert_eq!(
            out.cpts.get("top:outage").unwrap().rows()[0].status,
            RowStatus::Unelicited
        );
    }

    #[test]
    fn and_gate_over_two_threats() {
        let mut b = minimal();
        b.threats.push("Load Spike".into());
        b.gates.push(Gate {
            name: "Both".into(),
            kind: GateKind::And,
            inputs: vec!["Bad Deploy".into(), "Load Spike".into()],
        });
        let out = transform(&b).unwrap();
        assert_eq!(out.dag.node("gate:both").unwrap().kind, NodeKind::GateAnd);
        assert_eq!(out.dag.parents("top:outage").unwrap(), &[NodeId::from("gate:both")]);
        let cpt = out.cpts.get("gate:both").unwrap();
        assert_eq!(cpt.rows()[3].probs, vec![0.0, 1.0]);
        assert_eq!(cpt.rows()[1].probs, vec![1.0, 0.0]);
        assert!(validate_cpts(&out.dag, &out.cpts).is_clean());
    }

    #[test]
    fn gate_definitions() {
        let and = gate_rows(GateKind::And, 2).unwrap();
        assert_eq!(and[3][1], 1.0);
        let or = gate_rows(GateKind::Or, 2).unwrap();
        assert_eq!(or[0][1], 0.0);
        let and3 = gate_rows(GateKind::And, 3).unwrap();
        assert_eq!(and3.len(), 8);
        assert_eq!(and3.iter().filter(|r| r[1] == 1.0).count(), 1);
        assert_eq!(gate_rows(GateKind::Or, 0), Err(BowtieError::EmptyGate));
    }

    #[test]
    fn gate_rejects_non_binary_parent() {
        let mut dag = RiskDag::new();
        dag.add_node(RiskNode::new("q", "Q", NodeKind::Event, ["lo", "mid", "hi"]))
            .unwrap();
        dag.add_node(RiskNode::boolean("g", "G", NodeKind::GateOr)).unwrap();
        dag.add_edge("q", "g").unwrap();
        assert!(matches!(
            synthesize_gate_cpt(&dag, "g"),
            Err(BowtieError::NonBinaryParent { .. })
        ));
    }

    #[test]
    fn malformed_inputs() {
        let mut b = minimal();
        b.gates.push(Gate {
            name: "G".into(),
            kind: GateKind::Or,
            inputs: vec!["Nobody".into()],
        });
        assert!(matches!(transform(&b), Err(BowtieError::Malformed(_))));

        let mut b = minimal();
        b.consequences.push("data loss".into());
        assert!(matches!(transform(&b), Err(BowtieError::Malformed(_))));

        let mut b = minimal();
        b.top_event = " ".into();
        assert!(matches!(transform(&b), Err(BowtieError::Malformed(_))));

        let mut b = minimal();
        b.gates = vec![
            Gate { name: "G1".into(), kind: GateKind::Or, inputs: vec!["G2".into()] },
            Gate { name: "G2".into(), kind: GateKind::Or, inputs: vec!["G1".into()] },
        ];
        assert!(matches!(transform(&b), Err(BowtieError::Malformed(_))));
    }

    #[test]
    fn barriers_wire_to_guarded_transitions() {
        let mut b = minimal();
        b.escalation_events = vec!["Latency".into(), "Retries".into()];
        b.preventive_barriers.push(PreventiveBarrier {
            name: "Review".into(),
            guards: vec!["Bad Deploy".into()],
        });
        b.mitigative_barriers.push(MitigativeBarrier {
            name: "Shedding".into(),
            guards: vec!["Retries".into(), "Consequence".into()],
        });
        b.mitigative_barriers.push(MitigativeBarrier {
            name: "Failover".into(),
            guards: vec![],
        });
        let out = transform(&b).unwrap();
        let dag = &out.dag;
        assert!(dag.has_edge("barrier:review", "top:outage"));
        assert!(dag.has_edge("top:outage", "event:latency"));
        assert!(dag.has_edge("event:latency", "event:retries"));
        assert!(dag.has_edge("event:retries", "consequence:consequence"));
        assert!(dag.has_edge("barrier:shedding", "event:retries"));
        assert!(dag.has_edge("barrier:shedding", "consequence:consequence"));
        assert!(dag.has_edge("barrier:failover", "consequence:consequence"));
        let shedding = dag.node("barrier:shedding").unwrap();
        assert!(shedding.activation);
        assert_eq!(shedding.states, vec!["works", "fails"]);
        assert_eq!(out.report.warnings.len(), 1);
    }

    #[test]
    fn activation_marking() {
        let mut out = transform(&minimal()).unwrap();
        let warn = mark_activation(&mut out.dag, "threat:bad-deploy", true).unwrap();
        assert!(warn.is_some());
        assert!(out.dag.node("threat:bad-deploy").unwrap().activation);
        assert!(mark_activation(&mut out.dag, "top:outage", false).unwrap().is_none());
        assert!(mark_activation(&mut out.dag, "missing", true).is_err());
    }

    #[test]
    fn slugs() {
        assert_eq!(slug("Config/Routing Validation"), "config-routing-validation");
        assert_eq!(slug("  Peak  Load "), "peak-load");
    }
}
