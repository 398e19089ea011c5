//! XML persistence for complete model documents.
//!
//! See `docs/model-format.md` for the element reference.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use chrono::{DateTime, SecondsFormat, Utc};
use quick_xml::events::{BytesStart, Event};
use quick_xml::{Reader, XmlVersion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bowtie::{BowtieModel, ContextFactor, Gate, GateKind, MitigativeBarrier, PreventiveBarrier};
use crate::capture::{
    Answer, CaptureError, CaptureState, Estimator, EstimatorConfig, Origin, Prior, QuestionId,
    QuestionOverride,
};
use crate::cpt::{Cpt, CptRow, CptSet, RowStatus};
use crate::graph::{EndpointDescriptor, EndpointMode, NodeId, NodeKind, RiskDag, RiskNode};

pub const SCHEMA_VERSION: &str = "1";
pub const MEDIA_TYPE: &str = "application/vnd.riskdag+xml";
pub const FILE_EXTENSION: &str = "rdx";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

/// Editor layout stored alongside the model; ignored by the engine.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UiMetadata {
    #[serde(default)]
    pub positions: BTreeMap<NodeId, Position>,
}

impl UiMetadata {
    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bowtie: Option<BowtieModel>,
    #[serde(default)]
    pub dag: RiskDag,
    #[serde(default)]
    pub cpts: CptSet,
    #[serde(default)]
    pub capture: CaptureState,
    #[serde(default)]
    pub ui: UiMetadata,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum XmlError {
    #[error("line {line}: malformed XML: {message}")]
    Malformed { line: u64, message: String },
    #[error("line {line}: unsupported schema version `{found}`")]
    UnsupportedVersion { line: u64, found: String },
    #[error("line {line}: expected root element <risk-model>, found <{found}>")]
    WrongRoot { line: u64, found: String },
    #[error("line {line}: <{element}> is missing attribute `{attribute}`")]
    MissingAttribute {
        line: u64,
        element: String,
        attribute: String,
    },
    #[error("line {line}: <{element}> attribute `{attribute}`: {message}")]
    InvalidValue {
        line: u64,
        element: String,
        attribute: String,
        message: String,
    },
    #[error("line {line}: <{element}> probability {value} is outside [0, 1]")]
    ProbabilityOutOfRange {
        line: u64,
        element: String,
        value: String,
    },
    #[error("line {line}: unexpected <{element}> inside <{parent}>")]
    UnexpectedElement {
        line: u64,
        element: String,
        parent: String,
    },
}

impl XmlError {
    pub fn line(&self) -> u64 {
        match self {
            XmlError::Malformed { line, .. }
            | XmlError::UnsupportedVersion { line, .. }
            | XmlError::WrongRoot { line, .. }
            | XmlError::MissingAttribute { line, .. }
            | XmlError::InvalidValue { line, .. }
            | XmlError::ProbabilityOutOfRange { line, .. }
            | XmlError::UnexpectedElement { line, .. } => *line,
        }
    }
}

/// Shortest decimal rendering with 17 significant digits: positional for
/// magnitudes in `[1e-7, 1e1)`, scientific otherwise.
pub fn format_prob(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific form");
    let exp: i32 = exp.parse().expect("exponent");
    let (sign, mantissa) = match mantissa.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mantissa),
    };
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };
    if (-7..=0).contains(&exp) {
        let mut out = String::from(sign);
        if exp == 0 {
            out.push_str(&digits[..1]);
            if digits.len() > 1 {
                out.push('.');
                out.push_str(&digits[1..]);
            }
        } else {
            out.push_str("0.");
            for _ in 0..(-exp - 1) {
                out.push('0');
            }
            out.push_str(digits);
        }
        out
    } else {
        let mut out = format!("{sign}{}", &digits[..1]);
        if digits.len() > 1 {
            out.push('.');
            out.push_str(&digits[1..]);
        }
        let _ = write!(out, "e{exp}");
        out
    }
}

fn escape_attr(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
    out
}

struct XmlOut {
    buf: String,
    depth: usize,
}

impl XmlOut {
    fn tag(&mut self, name: &str, attrs: &[(&str, String)], close: &str) {
        for _ in 0..self.depth {
            self.buf.push_str("  ");
        }
        self.buf.push('<');
        self.buf.push_str(name);
        for (k, v) in attrs {
            let _ = write!(self.buf, " {k}=\"{}\"", escape_attr(v));
        }
        self.buf.push_str(close);
    }

    fn empty(&mut self, name: &str, attrs: &[(&str, String)]) {
        self.tag(name, attrs, "/>\n");
    }

    fn open(&mut self, name: &str, attrs: &[(&str, String)]) {
        self.tag(name, attrs, ">\n");
        self.depth += 1;
    }

    fn close(&mut self, name: &str) {
        self.depth -= 1;
        for _ in 0..self.depth {
            self.buf.push_str("  ");
        }
        let _ = writeln!(self.buf, "</{name}>");
    }

    fn text(&mut self, name: &str, attrs: &[(&str, String)], text: &str) {
        self.tag(name, attrs, ">");
        self.buf.push_str(&escape_attr(text));
        let _ = writeln!(self.buf, "</{name}>");
    }
}

fn join_indices(v: &[usize]) -> String {
    v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ")
}

/// Node ids in topological order, then any nodes on cycles by id.
fn export_order(dag: &RiskDag) -> Vec<NodeId> {
    let (mut order, complete) = dag.partial_topological_order();
    if !complete {
        let seen: BTreeSet<NodeId> = order.iter().cloned().collect();
        order.extend(dag.node_ids().filter(|id| !seen.contains(*id)).cloned());
    }
    order
}

fn export_bowtie(out: &mut XmlOut, b: &BowtieModel) {
    let mut attrs = Vec::new();
    if let Some(name) = &b.consequence_name {
        attrs.push(("consequence-name", name.clone()));
    }
    out.open("bowtie", &attrs);
    out.empty("top-event", &[("name", b.top_event.clone())]);
    for t in &b.threats {
        out.empty("threat", &[("name", t.clone())]);
    }
    for g in &b.gates {
        out.open("gate", &[("name", g.name.clone()), ("kind", g.kind.as_str().into())]);
        for i in &g.inputs {
            out.empty("input", &[("ref", i.clone())]);
        }
        out.close("gate");
    }
    for p in &b.preventive_barriers {
        out.open("preventive-barrier", &[("name", p.name.clone())]);
        for g in &p.guards {
            out.empty("guards", &[("ref", g.clone())]);
        }
        out.close("preventive-barrier");
    }
    for e in &b.escalation_events {
        out.empty("escalation-event", &[("name", e.clone())]);
    }
    for m in &b.mitigative_barriers {
        out.open("mitigative-barrier", &[("name", m.name.clone())]);
        for g in &m.guards {
            out.empty("guards", &[("ref", g.clone())]);
        }
        out.close("mitigative-barrier");
    }
    for c in &b.consequences {
        out.empty("consequence", &[("name", c.clone())]);
    }
    for c in &b.contexts {
        out.open("context", &[("name", c.name.clone())]);
        for s in &c.states {
            out.empty("state", &[("label", s.clone())]);
        }
        for i in &c.influences {
            out.empty("influences", &[("ref", i.clone())]);
        }
        out.close("context");
    }
    out.close("bowtie");
}

fn endpoint_attrs(e: &EndpointDescriptor) -> Vec<(&'static str, String)> {
    let mut attrs = vec![("url", e.url.clone()), ("mode", e.mode.as_str().to_owned())];
    if let Some(t) = e.threshold {
        attrs.push(("threshold", format_prob(t)));
    }
    attrs
}

/// Deterministic serialization of a document.
pub fn export_xml(doc: &ModelDocument) -> String {
    let mut out = XmlOut {
        buf: String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"),
        depth: 0,
    };
    let mut root = vec![("schema-version", SCHEMA_VERSION.to_owned())];
    if let Some(name) = &doc.name {
        root.push(("name", name.clone()));
    }
    out.open("risk-model", &root);
    if let Some(b) = &doc.bowtie {
        export_bowtie(&mut out, b);
    }

    let order = export_order(&doc.dag);
    out.open("dag", &[]);
    for id in &order {
        let node = doc.dag.node(id.as_str()).expect("ordered node exists");
        out.open(
            "node",
            &[
                ("id", node.id.to_string()),
                ("name", node.name.clone()),
                ("kind", node.kind.as_str().into()),
                ("activation", node.activation.to_string()),
            ],
        );
        for s in &node.states {
            out.empty("state", &[("label", s.clone())]);
        }
        if let Some(src) = &node.evidence_source {
            out.empty("evidence-source", &endpoint_attrs(src));
        }
        for t in &node.notify_targets {
            out.empty("notify-target", &endpoint_attrs(t));
        }
        out.close("node");
    }
    let mut by_child: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
    let edges = doc.dag.edges();
    for (p, c) in &edges {
        by_child.entry(c).or_default().push(p);
    }
    let mut children: Vec<&NodeId> = order.iter().filter(|id| by_child.contains_key(id)).collect();
    children.extend(by_child.keys().filter(|c| !doc.dag.contains(c.as_str())).copied());
    for child in children {
        for (i, p) in by_child[child].iter().enumerate() {
            out.empty(
                "edge",
                &[("parent", p.to_string()), ("child", child.to_string()), ("order", i.to_string())],
            );
        }
    }
    out.close("dag");

    out.open("cpts", &[]);
    let mut cpt_order: Vec<&Cpt> = order.iter().filter_map(|id| doc.cpts.get(id.as_str())).collect();
    cpt_order.extend(doc.cpts.iter().filter(|c| !doc.dag.contains(c.node().as_str())));
    for cpt in cpt_order {
        out.open(
            "cpt",
            &[("node", cpt.node().to_string()), ("states", cpt.cardinality().to_string())],
        );
        for (p, k) in cpt.parents().iter().zip(cpt.parent_cards()) {
            out.empty("parent", &[("ref", p.to_string()), ("states", k.to_string())]);
        }
        for (i, row) in cpt.rows().iter().enumerate() {
            let text = row.probs.iter().map(|p| format_prob(*p)).collect::<Vec<_>>().join(" ");
            out.text(
                "row",
                &[("config", join_indices(&cpt.config_at(i))), ("status", row.status.as_str().into())],
                &text,
            );
        }
        out.close("cpt");
    }
    out.close("cpts");

    let cap = &doc.capture;
    out.open("capture", &[]);
    let mut cfg = vec![
        ("p0", format_prob(cap.config.p0)),
        ("k-prior", format_prob(cap.config.k_prior)),
        ("kappa", format_prob(cap.config.kappa)),
        ("estimator", cap.config.estimator.as_str().into()),
    ];
    if let Some(h) = cap.config.half_life {
        cfg.push(("half-life", format_prob(h)));
    }
    out.empty("config", &cfg);
    for (q, o) in &cap.overrides {
        let mut attrs = vec![("question", q.to_string())];
        if let Some(p) = o.prior {
            attrs.push(("p0", format_prob(p.p0)));
            attrs.push(("k-prior", format_prob(p.k_prior)));
        }
        if let Some(k) = o.kappa {
            attrs.push(("kappa", format_prob(k)));
        }
        if let Some(h) = o.half_life {
            attrs.push(("half-life", format_prob(h)));
        }
        out.empty("override", &attrs);
    }
    for a in cap.ledger.answers() {
        out.empty(
            "answer",
            &[
                ("question", a.question.to_string()),
                ("value", format_prob(a.value)),
                ("timestamp", a.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true)),
                ("respondent", a.respondent.clone()),
                ("origin", a.origin.as_str().into()),
            ],
        );
    }
    out.close("capture");

    if !doc.ui.is_empty() {
        out.open("ui-metadata", &[]);
        for (id, p) in &doc.ui.positions {
            out.empty(
                "position",
                &[("node", id.to_string()), ("x", format_prob(p.x)), ("y", format_prob(p.y))],
            );
        }
        out.close("ui-metadata");
    }
    out.close("risk-model");
    out.buf
}

/// Minimal element tree with source lines.
#[derive(Debug, Clone)]
pub(crate) struct El {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<El>,
    pub text: String,
    pub line: u64,
}

impl El {
    fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    fn req(&self, key: &str) -> Result<&str, XmlError> {
        self.attr(key).ok_or_else(|| XmlError::MissingAttribute {
            line: self.line,
            element: self.name.clone(),
            attribute: key.to_owned(),
        })
    }

    fn invalid(&self, key: &str, message: impl Into<String>) -> XmlError {
        XmlError::InvalidValue {
            line: self.line,
            element: self.name.clone(),
            attribute: key.to_owned(),
            message: message.into(),
        }
    }

    fn unexpected(&self, child: &El) -> XmlError {
        XmlError::UnexpectedElement {
            line: child.line,
            element: child.name.clone(),
            parent: self.name.clone(),
        }
    }

    fn num(&self, key: &str) -> Result<f64, XmlError> {
        let raw = self.req(key)?;
        raw.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| self.invalid(key, format!("`{raw}` is not a number")))
    }

    fn opt_num(&self, key: &str) -> Result<Option<f64>, XmlError> {
        match self.attr(key) {
            Some(_) => self.num(key).map(Some),
            None => Ok(None),
        }
    }

    fn prob(&self, key: &str) -> Result<f64, XmlError> {
        let v = self.num(key)?;
        if !(0.0..=1.0).contains(&v) {
            return Err(XmlError::ProbabilityOutOfRange {
                line: self.line,
                element: self.name.clone(),
                value: self.req(key)?.to_owned(),
            });
        }
        Ok(v)
    }

    fn count(&self, key: &str) -> Result<usize, XmlError> {
        let raw = self.req(key)?;
        raw.trim()
            .parse::<usize>()
            .map_err(|_| self.invalid(key, format!("`{raw}` is not a count")))
    }
}

fn line_of(starts: &[usize], offset: usize) -> u64 {
    starts.partition_point(|s| *s <= offset) as u64
}

fn attrs_of(e: &BytesStart<'_>, line: u64) -> Result<Vec<(String, String)>, XmlError> {
    let mut out = Vec::new();
    for a in e.attributes() {
        let a = a.map_err(|err| XmlError::Malformed {
            line,
            message: err.to_string(),
        })?;
        let value = a
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| XmlError::Malformed {
                line,
                message: err.to_string(),
            })?;
        out.push((AsRef::<str>::as_ref(&a.key).to_owned(), value.into_owned()));
    }
    Ok(out)
}

pub(crate) fn parse_tree(src: &str) -> Result<El, XmlError> {
    let mut starts = vec![0usize];
    starts.extend(src.match_indices('\n').map(|(i, _)| i + 1));
    let mut reader = Reader::from_str(src);
    reader.config_mut().trim_text(true);
    let mut stack: Vec<El> = Vec::new();
    let mut root: Option<El> = None;
    loop {
        let before = reader.buffer_position() as usize;
        let tag_at = src[before..].find('<').map(|i| before + i).unwrap_or(before);
        let line = line_of(&starts, tag_at);
        let event = reader.read_event().map_err(|e| XmlError::Malformed {
            line: line_of(&starts, reader.error_position() as usize),
            message: e.to_string(),
        })?;
        match event {
            Event::Start(e) | Event::Empty(e) if root.is_some() => {
                return Err(XmlError::Malformed {
                    line,
                    message: format!(
                        "element <{}> after the root element",
                        AsRef::<str>::as_ref(&e.name()).to_owned()
                    ),
                })
            }
            Event::Start(e) => {
                stack.push(El {
                    name: AsRef::<str>::as_ref(&e.name()).to_owned(),
                    attrs: attrs_of(&e, line)?,
                    children: Vec::new(),
                    text: String::new(),
                    line,
                });
            }
            Event::Empty(e) => {
                let el = El {
                    name: AsRef::<str>::as_ref(&e.name()).to_owned(),
                    attrs: attrs_of(&e, line)?,
                    children: Vec::new(),
                    text: String::new(),
                    line,
                };
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::End(_) => {
                let el = stack.pop().expect("reader checks nesting");
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&t.xml_content(XmlVersion::Implicit1_0));
                }
            }
            Event::GeneralRef(r) => {
                let Some(top) = stack.last_mut() else { continue };
                let resolved = match r.resolve_char_ref() {
                    Ok(Some(c)) => c.to_string(),
                    _ => match r.xml_content(XmlVersion::Implicit1_0).as_ref() {
                        "amp" => "&".into(),
                        "lt" => "<".into(),
                        "gt" => ">".into(),
                        "quot" => "\"".into(),
                        "apos" => "'".into(),
                        other => {
                            return Err(XmlError::Malformed {
                                line,
                                message: format!("unknown entity `&{other};`"),
                            })
                        }
                    },
                };
                top.text.push_str(&resolved);
            }
            Event::CData(c) => {
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&c.into_inner());
                }
            }
            Event::Eof => break,
            _ => {}
        }
    }
    if !stack.is_empty() {
        return Err(XmlError::Malformed {
            line: line_of(&starts, src.len()),
            message: format!("unclosed element <{}>", stack.last().expect("non-empty").name),
        });
    }
    root.ok_or(XmlError::Malformed {
        line: 1,
        message: "document has no root element".into(),
    })
}

fn import_bowtie(el: &El) -> Result<BowtieModel, XmlError> {
    let mut b = BowtieModel {
        top_event: String::new(),
        threats: Vec::new(),
        gates: Vec::new(),
        preventive_barriers: Vec::new(),
        escalation_events: Vec::new(),
        mitigative_barriers: Vec::new(),
        consequences: Vec::new(),
        contexts: Vec::new(),
        consequence_name: el.attr("consequence-name").map(str::to_owned),
    };
    let mut top = None;
    let refs = |e: &El, tag: &str| -> Result<Vec<String>, XmlError> {
        e.children
            .iter()
            .map(|c| {
                if c.name == tag {
                    c.req("ref").map(str::to_owned)
                } else {
                    Err(e.unexpected(c))
                }
            })
            .collect()
    };
    for c in &el.children {
        match c.name.as_str() {
            "top-event" => top = Some(c.req("name")?.to_owned()),
            "threat" => b.threats.push(c.req("name")?.to_owned()),
            "gate" => {
                let kind = c.req("kind")?;
                b.gates.push(Gate {
                    name: c.req("name")?.to_owned(),
                    kind: GateKind::parse(kind).ok_or_else(|| c.invalid("kind", format!("unknown gate kind `{kind}`")))?,
                    inputs: refs(c, "input")?,
                });
            }
            "preventive-barrier" => b.preventive_barriers.push(PreventiveBarrier {
                name: c.req("name")?.to_owned(),
                guards: refs(c, "guards")?,
            }),
            "escalation-event" => b.escalation_events.push(c.req("name")?.to_owned()),
            "mitigative-barrier" => b.mitigative_barriers.push(MitigativeBarrier {
                name: c.req("name")?.to_owned(),
                guards: refs(c, "guards")?,
            }),
            "consequence" => b.consequences.push(c.req("name")?.to_owned()),
            "context" => {
                let mut states = Vec::new();
                let mut influences = Vec::new();
                for s in &c.children {
                    match s.name.as_str() {
                        "state" => states.push(s.req("label")?.to_owned()),
                        "influences" => influences.push(s.req("ref")?.to_owned()),
                        _ => return Err(c.unexpected(s)),
                    }
                }
                b.contexts.push(ContextFactor {
                    name: c.req("name")?.to_owned(),
                    states,
                    influences,
                });
            }
            _ => return Err(el.unexpected(c)),
        }
    }
    b.top_event = top.ok_or_else(|| XmlError::MissingAttribute {
        line: el.line,
        element: "bowtie".into(),
        attribute: "top-event".into(),
    })?;
    Ok(b)
}

fn endpoint(el: &El) -> Result<EndpointDescriptor, XmlError> {
    let mode_raw = el.req("mode")?;
    let mode: EndpointMode = mode_raw
        .parse()
        .map_err(|_| el.invalid("mode", format!("unknown mode `{mode_raw}`")))?;
    Ok(EndpointDescriptor {
        url: el.req("url")?.to_owned(),
        mode,
        threshold: match el.attr("threshold") {
            Some(_) => Some(el.prob("threshold")?),
            None => None,
        },
    })
}

fn import_dag(el: &El) -> Result<RiskDag, XmlError> {
    let mut nodes = Vec::new();
    let mut edges: Vec<(NodeId, NodeId, usize, &El)> = Vec::new();
    for c in &el.children {
        match c.name.as_str() {
            "node" => {
                let kind_raw = c.req("kind")?;
                let kind: NodeKind = kind_raw
                    .parse()
                    .map_err(|_| c.invalid("kind", format!("unknown node kind `{kind_raw}`")))?;
                let activation = match c.attr("activation") {
                    None | Some("false") => false,
                    Some("true") => true,
                    Some(other) => return Err(c.invalid("activation", format!("`{other}` is not a boolean"))),
                };
                let mut node = RiskNode::new(c.req("id")?, c.req("name")?, kind, Vec::<String>::new());
                node.activation = activation;
                for s in &c.children {
                    match s.name.as_str() {
                        "state" => node.states.push(s.req("label")?.to_owned()),
                        "evidence-source" => node.evidence_source = Some(endpoint(s)?),
                        "notify-target" => node.notify_targets.push(endpoint(s)?),
                        _ => return Err(c.unexpected(s)),
                    }
                }
                nodes.push(node);
            }
            "edge" => edges.push((
                NodeId::from(c.req("parent")?),
                NodeId::from(c.req("child")?),
                c.count("order")?,
                c,
            )),
            _ => return Err(el.unexpected(c)),
        }
    }
    let mut by_child: BTreeMap<NodeId, Vec<(usize, NodeId, &El)>> = BTreeMap::new();
    for (p, ch, order, e) in edges {
        by_child.entry(ch).or_default().push((order, p, e));
    }
    let mut ordered = Vec::new();
    for (child, mut list) in by_child {
        list.sort_by_key(|(o, _, _)| *o);
        for (i, (o, p, e)) in list.into_iter().enumerate() {
            if o != i {
                return Err(e.invalid("order", format!("parent order of `{child}` is not 0..n")));
            }
            ordered.push((p, child.clone()));
        }
    }
    Ok(RiskDag::from_unchecked_parts(nodes, ordered))
}

fn parse_indices(el: &El, raw: &str) -> Result<Vec<usize>, XmlError> {
    raw.split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| el.invalid("config", format!("`{t}` is not a state index"))))
        .collect()
}

fn import_cpts(el: &El) -> Result<CptSet, XmlError> {
    let mut set = CptSet::new();
    for c in &el.children {
        if c.name != "cpt" {
            return Err(el.unexpected(c));
        }
        let node = NodeId::from(c.req("node")?);
        let card = c.count("states")?;
        let mut parents = Vec::new();
        let mut cards = Vec::new();
        let mut rows = Vec::new();
        for r in &c.children {
            match r.name.as_str() {
                "parent" => {
                    parents.push(NodeId::from(r.req("ref")?));
                    cards.push(r.count("states")?);
                }
                "row" => {
                    let status_raw = r.req("status")?;
                    let status = RowStatus::parse(status_raw)
                        .ok_or_else(|| r.invalid("status", format!("unknown status `{status_raw}`")))?;
                    let config = parse_indices(r, r.req("config")?)?;
                    let mut probs = Vec::new();
                    for tok in r.text.split_whitespace() {
                        let v: f64 = tok.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                            XmlError::InvalidValue {
                                line: r.line,
                                element: "row".into(),
                                attribute: "(text)".into(),
                                message: format!("`{tok}` is not a number"),
                            }
                        })?;
                        if !(0.0..=1.0).contains(&v) {
                            return Err(XmlError::ProbabilityOutOfRange {
                                line: r.line,
                                element: "row".into(),
                                value: tok.to_owned(),
                            });
                        }
                        probs.push(v);
                    }
                    rows.push((config, CptRow { probs, status }, r));
                }
                _ => return Err(c.unexpected(r)),
            }
        }
        let cpt = Cpt::from_raw_parts(
            node,
            parents,
            cards.clone(),
            card,
            rows.iter().map(|(_, row, _)| row.clone()).collect(),
        );
        if cards.iter().all(|k| *k > 0) {
            for (i, (config, _, r)) in rows.iter().enumerate() {
                if *config != cpt.config_at(i) {
                    return Err(r.invalid("config", format!("row {i} should have config `{}`", join_indices(&cpt.config_at(i)))));
                }
            }
        }
        set.insert(cpt);
    }
    Ok(set)
}

fn import_capture(el: &El) -> Result<CaptureState, XmlError> {
    let mut cap = CaptureState::default();
    for c in &el.children {
        match c.name.as_str() {
            "config" => {
                let est_raw = c.req("estimator")?;
                let estimator: Estimator = est_raw
                    .parse()
                    .map_err(|_| c.invalid("estimator", format!("unknown estimator `{est_raw}`")))?;
                cap.config = EstimatorConfig {
                    p0: c.prob("p0")?,
                    k_prior: c.num("k-prior")?,
                    kappa: c.num("kappa")?,
                    half_life: c.opt_num("half-life")?,
                    estimator,
                };
            }
            "override" => {
                let prior = match (c.attr("p0"), c.attr("k-prior")) {
                    (None, None) => None,
                    _ => Some(Prior {
                        p0: c.prob("p0")?,
                        k_prior: c.num("k-prior")?,
                    }),
                };
                cap.overrides.insert(
                    QuestionId::new(c.req("question")?),
                    QuestionOverride {
                        prior,
                        kappa: c.opt_num("kappa")?,
                        half_life: c.opt_num("half-life")?,
                    },
                );
            }
            "answer" => {
                let ts_raw = c.req("timestamp")?;
                let timestamp = DateTime::parse_from_rfc3339(ts_raw)
                    .map_err(|_| c.invalid("timestamp", format!("`{ts_raw}` is not an RFC 3339 timestamp")))?
                    .with_timezone(&Utc);
                let origin_raw = c.req("origin")?;
                let origin = Origin::parse(origin_raw)
                    .ok_or_else(|| c.invalid("origin", format!("unknown origin `{origin_raw}`")))?;
                let answer = Answer {
                    question: QuestionId::new(c.req("question")?),
                    value: c.prob("value")?,
                    timestamp,
                    respondent: c.req("respondent")?.to_owned(),
                    origin,
                };
                cap.ledger.append(answer).map_err(|e| match e {
                    CaptureError::NonMonotonicTimestamp { .. } => c.invalid("timestamp", e.to_string()),
                    other => c.invalid("value", other.to_string()),
                })?;
            }
            _ => return Err(el.unexpected(c)),
        }
    }
    Ok(cap)
}

fn import_ui(el: &El) -> Result<UiMetadata, XmlError> {
    let mut ui = UiMetadata::default();
    for c in &el.children {
        if c.name != "position" {
            return Err(el.unexpected(c));
        }
        ui.positions.insert(
            NodeId::from(c.req("node")?),
            Position {
                x: c.num("x")?,
                y: c.num("y")?,
            },
        );
    }
    Ok(ui)
}

pub fn import_xml(src: &str) -> Result<ModelDocument, XmlError> {
    let root = parse_tree(src)?;
    if root.name != "risk-model" {
        return Err(XmlError::WrongRoot {
            line: root.line,
            found: root.name,
        });
    }
    let version = root.req("schema-version")?;
    if version != SCHEMA_VERSION {
        return Err(XmlError::UnsupportedVersion {
            line: root.line,
            found: version.to_owned(),
        });
    }
    let mut doc = ModelDocument {
        name: root.attr("name").map(str::to_owned),
        ..Default::default()
    };
    let mut seen = BTreeSet::new();
    for c in &root.children {
        if !seen.insert(c.name.as_str()) {
            return Err(XmlError::UnexpectedElement {
                line: c.line,
                element: c.name.clone(),
                parent: format!("{} (duplicate section)", root.name),
            });
        }
        match c.name.as_str() {
            "bowtie" => doc.bowtie = Some(import_bowtie(c)?),
            "dag" => doc.dag = import_dag(c)?,
            "cpts" => doc.cpts = import_cpts(c)?,
            "capture" => doc.capture = import_capture(c)?,
            "ui-metadata" => doc.ui = import_ui(c)?,
            _ => return Err(root.unexpected(c)),
        }
    }
    Ok(doc)
}
