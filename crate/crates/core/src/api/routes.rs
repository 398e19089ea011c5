use std::collections::{BTreeMap, BTreeSet};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::error::ApiError;
use super::notify::{plan_notifications, DispatchRecord};
use super::store::Entry;
use super::tokens::{CaptureToken, TokenCheck};
use super::AppState;
use crate::bowtie::{transform, BowtieModel};
use crate::capture::{
    estimate_model, generate_questions, materialize_cpts, quick_set, Answer, EstimatorConfig,
    Estimator, MaterializeReport, Origin, Question, QuestionEstimate, QuestionId, QuestionOverride,
};
use crate::causal::{
    backdoor_sets, d_connected_trails, d_separated, frontdoor_check, interventional_posterior,
    local_independencies, rank_interventions, BackdoorMode, Intervention, InterventionRanking,
    LocalIndependence,
};
use crate::cpt::{validate_cpts, Cpt, CptReport, ROW_SUM_TOLERANCE};
use crate::graph::{EndpointDescriptor, NodeId, RiskDag, RiskNode, ValidationReport};
use crate::inference::{check_ready, evidence_probability, posterior, Evidence, InferenceError};
use crate::model_io::{export_xml, import_xml, ModelDocument, UiMetadata, MEDIA_TYPE};

type ApiResult<T> = Result<T, ApiError>;

fn node_set(list: Option<&str>) -> BTreeSet<NodeId> {
    list.map(|s| {
        s.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(NodeId::new)
            .collect()
    })
    .unwrap_or_default()
}

fn ids(v: &[String]) -> BTreeSet<NodeId> {
    v.iter().map(NodeId::new).collect()
}

fn parse_time(at: Option<&str>) -> ApiResult<Option<DateTime<Utc>>> {
    at.map(|s| {
        DateTime::parse_from_rfc3339(s)
            .map(|t| t.with_timezone(&Utc))
            .map_err(|_| ApiError::invalid(format!("bad timestamp `{s}`")))
    })
    .transpose()
}

fn state_index(dag: &RiskDag, node: &str, label: &str) -> ApiResult<usize> {
    let n = dag.node(node)?;
    n.state_index(label).ok_or_else(|| {
        ApiError::invalid(format!("`{node}` has no state `{label}`"))
            .with_details(json!({ "node": node, "states": n.states }))
    })
}

/// Drops observations that no longer fit the structure.
fn sanitize_evidence(entry: &mut Entry) {
    let dag = &entry.doc.dag;
    let stale: Vec<NodeId> = entry
        .evidence
        .iter()
        .filter(|(id, s)| dag.node(id.as_str()).map_or(true, |n| *s >= n.cardinality()))
        .map(|(id, _)| id.clone())
        .collect();
    for id in stale {
        entry.evidence.remove(id.as_str());
    }
}

/// Recomputes watched posteriors and queues notifications for moves.
fn after_change(state: &AppState, id: &str, entry: &mut Entry) {
    let new = entry.watched_posteriors();
    if let (Some(old), Some(new)) = (&entry.watched, &new) {
        let plan = plan_notifications(
            id,
            &entry.doc.dag,
            old,
            new,
            state.config.notify_threshold,
            Utc::now(),
        );
        state.dispatcher.spawn(plan, entry.log.clone());
    }
    entry.watched = new;
}

/// Persists the document and runs change hooks.
fn commit(state: &AppState, id: &str, entry: &mut Entry) -> ApiResult<()> {
    sanitize_evidence(entry);
    state.store.persist(id, &entry.doc)?;
    after_change(state, id, entry);
    Ok(())
}

pub async fn health() -> Json<Value> {
    Json(json!({ "status": "ok", "version": env!("CARGO_PKG_VERSION") }))
}

// ---- models ----

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateModel {
    pub id: Option<String>,
    pub name: Option<String>,
    pub bowtie: Option<BowtieModel>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub id: String,
    pub name: Option<String>,
    pub nodes: usize,
    pub edges: usize,
    pub answers: usize,
}

fn summary(id: &str, doc: &ModelDocument) -> ModelSummary {
    ModelSummary {
        id: id.to_owned(),
        name: doc.name.clone(),
        nodes: doc.dag.len(),
        edges: doc.dag.edge_count(),
        answers: doc.capture.ledger.len(),
    }
}

fn fresh_id() -> String {
    let bytes: [u8; 6] = rand::rng().random();
    format!("m-{}", hex::encode(bytes))
}

fn insert(state: &AppState, id: Option<String>, doc: ModelDocument) -> ApiResult<Response> {
    let id = id.unwrap_or_else(fresh_id);
    let shared = state.store.insert(&id, doc)?;
    let mut entry = shared.try_write().map_err(|_| ApiError::internal("fresh entry locked"))?;
    after_change(state, &id, &mut entry);
    Ok((StatusCode::CREATED, Json(summary(&id, &entry.doc))).into_response())
}

pub async fn list_models(State(state): State<AppState>) -> ApiResult<Json<Vec<ModelSummary>>> {
    let mut out = Vec::new();
    for id in state.store.ids() {
        if let Ok(shared) = state.store.get(&id) {
            out.push(summary(&id, &shared.read().await.doc));
        }
    }
    Ok(Json(out))
}

pub async fn create_model(
    State(state): State<AppState>,
    Json(req): Json<CreateModel>,
) -> ApiResult<Response> {
    let mut doc = ModelDocument {
        name: req.name,
        ..ModelDocument::default()
    };
    if let Some(b) = req.bowtie {
        let out = transform(&b)?;
        doc.dag = out.dag;
        doc.cpts = out.cpts;
        doc.bowtie = Some(b);
    }
    insert(&state, req.id, doc)
}

#[derive(Debug, Deserialize)]
pub struct ImportQuery {
    pub id: Option<String>,
}

pub async fn import_model(
    State(state): State<AppState>,
    Query(q): Query<ImportQuery>,
    body: String,
) -> ApiResult<Response> {
    let doc = import_xml(&body)?;
    insert(&state, q.id, doc)
}

#[derive(Debug, Serialize)]
pub struct EdgeView {
    pub parent: NodeId,
    pub child: NodeId,
}

#[derive(Debug, Serialize)]
pub struct ModelView<'a> {
    pub id: &'a str,
    pub name: &'a Option<String>,
    pub nodes: Vec<&'a RiskNode>,
    pub edges: Vec<EdgeView>,
    pub cpts: Vec<&'a Cpt>,
    pub capture: &'a EstimatorConfig,
    pub overrides: &'a BTreeMap<QuestionId, QuestionOverride>,
    pub answers: usize,
    pub ui: &'a UiMetadata,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bowtie: Option<&'a BowtieModel>,
}

pub async fn get_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let doc = &entry.doc;
    let view = ModelView {
        id: &id,
        name: &doc.name,
        nodes: doc.dag.nodes().collect(),
        edges: doc
            .dag
            .edges()
            .into_iter()
            .map(|(parent, child)| EdgeView { parent, child })
            .collect(),
        cpts: doc.cpts.iter().collect(),
        capture: &doc.capture.config,
        overrides: &doc.capture.overrides,
        answers: doc.capture.ledger.len(),
        ui: &doc.ui,
        bowtie: doc.bowtie.as_ref(),
    };
    Ok(Json(view).into_response())
}

/// Replaces the whole document with the XML body.
pub async fn replace_model(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: String,
) -> ApiResult<Json<ModelSummary>> {
    let doc = import_xml(&body)?;
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc = doc;
    commit(&state, &id, &mut entry)?;
    Ok(Json(summary(&id, &entry.doc)))
}

pub async fn delete_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<StatusCode> {
    state.store.remove(&id)?;
    state.tokens.revoke_model(&id);
    Ok(StatusCode::NO_CONTENT)
}

pub async fn export_model(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let shared = state.store.get(&id)?;
    let xml = export_xml(&shared.read().await.doc);
    Ok(([(header::CONTENT_TYPE, MEDIA_TYPE)], xml).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ValidateResponse {
    pub runtime_ready: bool,
    pub structure: ValidationReport,
    pub cpts: CptReport,
}

impl ValidateResponse {
    /// Ready means no structural or table findings and every row complete.
    pub fn of(doc: &ModelDocument) -> Self {
        let structure = doc.dag.validate();
        let cpts = validate_cpts(&doc.dag, &doc.cpts);
        Self {
            runtime_ready: structure.is_runtime_ready()
                && cpts.is_clean()
                && check_ready(&doc.dag, &doc.cpts).is_ok(),
            structure,
            cpts,
        }
    }
}

pub async fn validate(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ValidateResponse>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    Ok(Json(ValidateResponse::of(&entry.doc)))
}

// ---- structure editing ----

#[derive(Debug, Serialize)]
pub struct EditResponse {
    /// Tables reset to uniform because their parent snapshot changed.
    pub refreshed: Vec<NodeId>,
    pub validation: ValidationReport,
}

fn finish_edit(state: &AppState, id: &str, entry: &mut Entry) -> ApiResult<Json<EditResponse>> {
    let Entry { doc, .. } = entry;
    let refreshed = doc.cpts.refresh_stale(&doc.dag)?;
    let validation = doc.dag.validate();
    commit(state, id, entry)?;
    Ok(Json(EditResponse {
        refreshed,
        validation,
    }))
}

pub async fn add_node(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(node): Json<RiskNode>,
) -> ApiResult<Response> {
    node.check_states()?;
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let nid = node.id.clone();
    entry.doc.dag.add_node(node)?;
    let cpt = Cpt::uniform(&entry.doc.dag, nid.as_str())?;
    entry.doc.cpts.insert(cpt);
    let resp = finish_edit(&state, &id, &mut entry)?;
    Ok((StatusCode::CREATED, resp).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodePatch {
    pub name: Option<String>,
    pub states: Option<Vec<String>>,
    pub activation: Option<bool>,
    pub evidence_source: Option<EndpointDescriptor>,
    pub notify_targets: Option<Vec<EndpointDescriptor>>,
    pub parent_order: Option<Vec<NodeId>>,
}

pub async fn patch_node(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
    Json(patch): Json<NodePatch>,
) -> ApiResult<Json<EditResponse>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let dag = &mut entry.doc.dag;
    dag.node(&nid)?;
    if let Some(states) = patch.states {
        dag.set_states(&nid, states)?;
    }
    if let Some(order) = patch.parent_order {
        dag.reorder_parents(&nid, &order)?;
    }
    if let Some(name) = patch.name {
        dag.rename_node(&nid, name)?;
    }
    if let Some(flag) = patch.activation {
        dag.set_activation(&nid, flag)?;
    }
    let node = dag.node_mut(&nid)?;
    if let Some(src) = patch.evidence_source {
        node.evidence_source = Some(src);
    }
    if let Some(targets) = patch.notify_targets {
        node.notify_targets = targets;
    }
    finish_edit(&state, &id, &mut entry)
}

pub async fn delete_node(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<EditResponse>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.dag.remove_node(&nid)?;
    entry.doc.cpts.remove(&nid);
    entry.doc.ui.positions.remove(&NodeId::new(nid.as_str()));
    finish_edit(&state, &id, &mut entry)
}

#[derive(Debug, Deserialize)]
pub struct EdgeRequest {
    pub parent: String,
    pub child: String,
}

pub async fn add_edge(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<EdgeRequest>,
) -> ApiResult<Response> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.dag.add_edge(&req.parent, &req.child)?;
    let resp = finish_edit(&state, &id, &mut entry)?;
    Ok((StatusCode::CREATED, resp).into_response())
}

pub async fn delete_edge(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(req): Query<EdgeRequest>,
) -> ApiResult<Json<EditResponse>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.dag.remove_edge(&req.parent, &req.child)?;
    finish_edit(&state, &id, &mut entry)
}

#[derive(Debug, Deserialize)]
pub struct CptRequest {
    /// Full rows in parent-configuration order, first parent most
    /// significant.
    pub rows: Vec<Vec<f64>>,
}

pub async fn put_cpt(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
    Json(req): Json<CptRequest>,
) -> ApiResult<Json<Cpt>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let dag = &entry.doc.dag;
    let card = dag.node(&nid)?.cardinality();
    for (i, row) in req.rows.iter().enumerate() {
        if row.len() != card {
            return Err(ApiError::invalid(format!("row {i} has {} entries, expected {card}", row.len()))
                .with_details(json!({ "finding": "row-length", "node": nid, "row": i })));
        }
        if let Some(v) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(ApiError::invalid(format!("row {i} value {v} is outside [0, 1]"))
                .with_details(json!({ "finding": "value-out-of-range", "node": nid, "row": i })));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(ApiError::invalid(format!("row {i} sums to {sum}, not 1"))
                .with_details(json!({ "finding": "row-sum", "node": nid, "row": i, "sum": sum })));
        }
    }
    let cpt = Cpt::from_complete_rows(dag, &nid, req.rows)?;
    entry.doc.cpts.insert(cpt.clone());
    commit(&state, &id, &mut entry)?;
    Ok(Json(cpt))
}

pub async fn put_ui_metadata(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(ui): Json<UiMetadata>,
) -> ApiResult<Json<UiMetadata>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    for n in ui.positions.keys() {
        entry.doc.dag.node(n.as_str())?;
    }
    entry.doc.ui = ui.clone();
    commit(&state, &id, &mut entry)?;
    Ok(Json(ui))
}

// ---- capture ----

#[derive(Debug, Deserialize)]
pub struct ScopeQuery {
    pub scope: Option<String>,
}

fn scoped_questions(doc: &ModelDocument, scope: &BTreeSet<NodeId>) -> ApiResult<Vec<Question>> {
    let scope = (!scope.is_empty()).then_some(scope);
    Ok(generate_questions(&doc.dag, &doc.cpts, scope, Some(&doc.capture))?)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct QuestionList {
    pub questions: Vec<Question>,
}

pub async fn questions(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ScopeQuery>,
) -> ApiResult<Json<QuestionList>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let questions = scoped_questions(&entry.doc, &node_set(q.scope.as_deref()))?;
    Ok(Json(QuestionList { questions }))
}

pub async fn put_capture_config(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(cfg): Json<EstimatorConfig>,
) -> ApiResult<Json<EstimatorConfig>> {
    cfg.check()?;
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.capture.config = cfg.clone();
    commit(&state, &id, &mut entry)?;
    Ok(Json(cfg))
}

pub async fn put_override(
    State(state): State<AppState>,
    Path((id, qid)): Path<(String, String)>,
    Json(o): Json<QuestionOverride>,
) -> ApiResult<Json<QuestionOverride>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.capture.config.with_override(&o).check()?;
    let qid = QuestionId::new(qid);
    if o.is_empty() {
        entry.doc.capture.overrides.remove(&qid);
    } else {
        entry.doc.capture.overrides.insert(qid, o.clone());
    }
    commit(&state, &id, &mut entry)?;
    Ok(Json(o))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRequest {
    pub scope: Vec<String>,
    pub issued_to: String,
    pub ttl_secs: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenResponse {
    #[serde(flatten)]
    pub token: CaptureToken,
    pub path: String,
}

pub async fn issue_token(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<TokenRequest>,
) -> ApiResult<Response> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    if req.scope.is_empty() {
        return Err(ApiError::invalid("token scope must name at least one node"));
    }
    let scope = ids(&req.scope);
    for n in &scope {
        entry.doc.dag.node(n.as_str())?;
    }
    let ttl = req.ttl_secs.unwrap_or(state.config.token_ttl_secs);
    let token = state.tokens.issue(&id, scope, &req.issued_to, ttl, Utc::now());
    let path = format!("/capture/{}", token.token);
    Ok((StatusCode::CREATED, Json(TokenResponse { token, path })).into_response())
}

fn check_token(state: &AppState, token: &str) -> ApiResult<CaptureToken> {
    state.tokens.check(token, Utc::now()).map_err(|e| match e {
        TokenCheck::Unknown => ApiError::unauthorized("unknown capture token"),
        TokenCheck::Expired => ApiError::unauthorized("capture token expired"),
    })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CaptureView {
    pub model_id: String,
    pub issued_to: String,
    pub expires_at: DateTime<Utc>,
    pub scope: BTreeSet<NodeId>,
    pub questions: Vec<Question>,
}

pub async fn capture_questions(
    State(state): State<AppState>,
    Path(token): Path<String>,
) -> ApiResult<Json<CaptureView>> {
    let t = check_token(&state, &token)?;
    let shared = state.store.get(&t.model_id)?;
    let entry = shared.read().await;
    let questions = scoped_questions(&entry.doc, &t.scope)?;
    Ok(Json(CaptureView {
        model_id: t.model_id,
        issued_to: t.issued_to,
        expires_at: t.expires_at,
        scope: t.scope,
        questions,
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    pub question: String,
    pub value: Option<f64>,
    /// Verbal scale label used instead of `value`.
    pub quick_set: Option<String>,
    pub respondent: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub answer: Answer,
    pub ledger_len: usize,
}

pub async fn capture_answer(
    State(state): State<AppState>,
    Path(token): Path<String>,
    Json(req): Json<AnswerRequest>,
) -> ApiResult<Response> {
    let t = check_token(&state, &token)?;
    let shared = state.store.get(&t.model_id)?;
    let mut entry = shared.write().await;
    let qid = QuestionId::new(req.question.as_str());
    let all = scoped_questions(&entry.doc, &BTreeSet::new())?;
    let q = all
        .iter()
        .find(|q| q.id == qid)
        .ok_or_else(|| ApiError::not_found(format!("unknown question `{qid}`")))?;
    if !t.covers(&q.node) {
        return Err(ApiError::forbidden(format!(
            "question `{qid}` on node `{}` is outside the token scope",
            q.node
        ))
        .with_details(json!({ "node": q.node, "scope": t.scope })));
    }
    let (value, origin) = match (req.value, req.quick_set.as_deref()) {
        (Some(v), None) => (v, Origin::Manual),
        (None, Some(label)) => (quick_set(label)?, Origin::QuickSet),
        _ => return Err(ApiError::invalid("give exactly one of `value` or `quick_set`")),
    };
    let answer = Answer {
        question: qid,
        value,
        timestamp: Utc::now(),
        respondent: req.respondent.unwrap_or_else(|| t.issued_to.clone()),
        origin,
    };
    entry.doc.capture.ledger.append(answer)?;
    let stored = entry
        .doc
        .capture
        .ledger
        .answers()
        .last()
        .cloned()
        .expect("just appended");
    commit(&state, &t.model_id, &mut entry)?;
    let resp = AnswerResponse {
        answer: stored,
        ledger_len: entry.doc.capture.ledger.len(),
    };
    Ok((StatusCode::CREATED, Json(resp)).into_response())
}

pub async fn list_answers(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<Answer>>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    Ok(Json(entry.doc.capture.ledger.answers().to_vec()))
}

#[derive(Debug, Deserialize)]
pub struct EstimateQuery {
    pub estimator: Option<String>,
    pub scope: Option<String>,
    /// Evaluation time for recency weights (RFC 3339).
    pub at: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateList {
    pub estimates: Vec<QuestionEstimate>,
}

pub async fn estimates(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<EstimateQuery>,
) -> ApiResult<Json<EstimateList>> {
    let estimator = q
        .estimator
        .as_deref()
        .map(|s| s.parse::<Estimator>())
        .transpose()
        .map_err(|_| ApiError::invalid(format!("unknown estimator `{}`", q.estimator.as_deref().unwrap_or(""))))?;
    let at = parse_time(q.at.as_deref())?;
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let doc = &entry.doc;
    let scope = node_set(q.scope.as_deref());
    let scope = (!scope.is_empty()).then_some(&scope);
    let estimates = estimate_model(&doc.dag, &doc.cpts, &doc.capture, scope, estimator, at)?;
    Ok(Json(EstimateList { estimates }))
}

#[derive(Debug, Deserialize)]
pub struct AtQuery {
    pub at: Option<String>,
}

pub async fn materialize(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<AtQuery>,
) -> ApiResult<Json<MaterializeReport>> {
    let at = parse_time(q.at.as_deref())?;
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let doc = &entry.doc;
    let (cpts, report) = materialize_cpts(&doc.dag, &doc.cpts, &doc.capture, at)?;
    entry.doc.cpts = cpts;
    commit(&state, &id, &mut entry)?;
    Ok(Json(report))
}

// ---- evidence and posteriors ----

#[derive(Debug, Serialize, Deserialize)]
pub struct EvidenceView {
    pub evidence: BTreeMap<NodeId, String>,
}

fn apply_evidence(state: &AppState, id: &str, entry: &mut Entry, ev: Evidence) -> ApiResult<EvidenceView> {
    ev.check(&entry.doc.dag)?;
    if check_ready(&entry.doc.dag, &entry.doc.cpts).is_ok()
        && evidence_probability(&entry.doc.dag, &entry.doc.cpts, &ev)? <= 0.0
    {
        return Err(InferenceError::Contradiction {
            evidence: ev.labels(&entry.doc.dag),
        }
        .into());
    }
    entry.evidence = ev;
    after_change(state, id, entry);
    Ok(EvidenceView {
        evidence: entry.evidence.labels(&entry.doc.dag),
    })
}

fn parse_labels(dag: &RiskDag, base: Evidence, labels: &BTreeMap<String, String>) -> ApiResult<Evidence> {
    let mut ev = base;
    for (node, label) in labels {
        let s = state_index(dag, node, label)?;
        ev.insert(node.as_str(), s);
    }
    Ok(ev)
}

pub async fn get_evidence(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EvidenceView>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    Ok(Json(EvidenceView {
        evidence: entry.evidence.labels(&entry.doc.dag),
    }))
}

/// Replaces the observation set.
pub async fn put_evidence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(labels): Json<BTreeMap<String, String>>,
) -> ApiResult<Json<EvidenceView>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let ev = parse_labels(&entry.doc.dag, Evidence::new(), &labels)?;
    Ok(Json(apply_evidence(&state, &id, &mut entry, ev)?))
}

/// Merges observations into the current set.
pub async fn post_evidence(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(labels): Json<BTreeMap<String, String>>,
) -> ApiResult<Json<EvidenceView>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    let ev = parse_labels(&entry.doc.dag, entry.evidence.clone(), &labels)?;
    Ok(Json(apply_evidence(&state, &id, &mut entry, ev)?))
}

pub async fn clear_evidence(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<EvidenceView>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    Ok(Json(apply_evidence(&state, &id, &mut entry, Evidence::new())?))
}

pub async fn clear_node_evidence(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<EvidenceView>> {
    let shared = state.store.get(&id)?;
    let mut entry = shared.write().await;
    entry.doc.dag.node(&nid)?;
    let mut ev = entry.evidence.clone();
    ev.remove(&nid);
    Ok(Json(apply_evidence(&state, &id, &mut entry, ev)?))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodePosterior {
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PosteriorView {
    pub evidence: BTreeMap<NodeId, String>,
    pub nodes: BTreeMap<NodeId, NodePosterior>,
}

#[derive(Debug, Deserialize)]
pub struct NodesQuery {
    pub nodes: Option<String>,
}

pub async fn get_posterior(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodesQuery>,
) -> ApiResult<Json<PosteriorView>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let dag = &entry.doc.dag;
    let wanted: Vec<NodeId> = node_set(q.nodes.as_deref()).into_iter().collect();
    let query = (!wanted.is_empty()).then_some(wanted.as_slice());
    let table = posterior(dag, &entry.doc.cpts, &entry.evidence, query)?;
    let mut nodes = BTreeMap::new();
    for (nid, probs) in table {
        nodes.insert(
            nid.clone(),
            NodePosterior {
                states: dag.node(nid.as_str())?.states.clone(),
                probabilities: probs,
            },
        );
    }
    Ok(Json(PosteriorView {
        evidence: entry.evidence.labels(dag),
        nodes,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NodeStatus {
    pub node: NodeId,
    pub states: Vec<String>,
    pub probabilities: Vec<f64>,
    pub most_probable: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observed: Option<String>,
}

pub async fn node_status(
    State(state): State<AppState>,
    Path((id, nid)): Path<(String, String)>,
) -> ApiResult<Json<NodeStatus>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let dag = &entry.doc.dag;
    let node = dag.node(&nid)?;
    let table = posterior(dag, &entry.doc.cpts, &entry.evidence, Some(std::slice::from_ref(&node.id)))?;
    let probs = table[&node.id].clone();
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok(Json(NodeStatus {
        node: node.id.clone(),
        states: node.states.clone(),
        most_probable: node.states[best].clone(),
        observed: entry.evidence.get(&nid).map(|s| node.states[s].clone()),
        probabilities: probs,
    }))
}

pub async fn notifications(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<DispatchRecord>>> {
    let shared = state.store.get(&id)?;
    let log = shared.read().await.log.clone();
    let records = log.lock().expect("dispatch log").clone();
    Ok(Json(records))
}

// ---- causal ----

#[derive(Debug, Deserialize)]
pub struct SetsRequest {
    pub x: Vec<String>,
    pub y: Vec<String>,
    #[serde(default)]
    pub z: Vec<String>,
}

pub async fn dsep(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SetsRequest>,
) -> ApiResult<Json<Value>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let sep = d_separated(&entry.doc.dag, &ids(&req.x), &ids(&req.y), &ids(&req.z))?;
    Ok(Json(json!({ "separated": sep })))
}

pub async fn trails(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<SetsRequest>,
) -> ApiResult<Json<Value>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let t = d_connected_trails(&entry.doc.dag, &ids(&req.x), &ids(&req.y), &ids(&req.z))?;
    Ok(Json(json!({ "trails": t })))
}

#[derive(Debug, Deserialize)]
pub struct BackdoorRequest {
    pub x: String,
    pub y: String,
    #[serde(default)]
    pub mode: Option<String>,
}

pub async fn backdoor(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<BackdoorRequest>,
) -> ApiResult<Json<Value>> {
    let mode: BackdoorMode = match req.mode.as_deref() {
        None => BackdoorMode::Minimal,
        Some(m) => m
            .parse()
            .map_err(|_| ApiError::invalid(format!("unknown backdoor mode `{m}`")))?,
    };
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let sets = backdoor_sets(&entry.doc.dag, &NodeId::new(req.x), &NodeId::new(req.y), mode)?;
    Ok(Json(json!({ "sets": sets })))
}

#[derive(Debug, Deserialize)]
pub struct FrontdoorRequest {
    pub x: String,
    pub y: String,
    pub m: Vec<String>,
}

pub async fn frontdoor(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<FrontdoorRequest>,
) -> ApiResult<Json<Value>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let ok = frontdoor_check(&entry.doc.dag, &NodeId::new(req.x), &NodeId::new(req.y), &ids(&req.m))?;
    Ok(Json(json!({ "satisfied": ok })))
}

pub async fn independencies(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<NodesQuery>,
) -> ApiResult<Json<Vec<LocalIndependence>>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let dag = &entry.doc.dag;
    let mut wanted = node_set(q.nodes.as_deref());
    if wanted.is_empty() {
        wanted = dag.node_ids().cloned().collect();
    }
    let out = wanted
        .iter()
        .map(|n| local_independencies(dag, n))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Json(out))
}

#[derive(Debug, Deserialize)]
pub struct InterventionRequest {
    #[serde(default)]
    pub intervention: BTreeMap<String, String>,
    pub target: String,
    pub state: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct InterventionResult {
    pub probability: f64,
    pub baseline: f64,
}

pub async fn intervention_query(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<InterventionRequest>,
) -> ApiResult<Json<InterventionResult>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let doc = &entry.doc;
    let mut iv = Intervention::new();
    for (n, label) in &req.intervention {
        iv.insert(NodeId::new(n.as_str()), state_index(&doc.dag, n, label)?);
    }
    let target = NodeId::new(req.target.as_str());
    let s = state_index(&doc.dag, &req.target, &req.state)?;
    let none = Intervention::new();
    let baseline = interventional_posterior(&doc.dag, &doc.cpts, &entry.evidence, &none, &target, s)?;
    let probability = interventional_posterior(&doc.dag, &doc.cpts, &entry.evidence, &iv, &target, s)?;
    Ok(Json(InterventionResult {
        probability,
        baseline,
    }))
}

#[derive(Debug, Deserialize)]
pub struct RankQuery {
    pub target: String,
    pub state: String,
    pub candidates: Option<String>,
}

pub async fn rank(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RankQuery>,
) -> ApiResult<Json<InterventionRanking>> {
    let shared = state.store.get(&id)?;
    let entry = shared.read().await;
    let doc = &entry.doc;
    let s = state_index(&doc.dag, &q.target, &q.state)?;
    let candidates = q.candidates.as_deref().map(|c| node_set(Some(c)));
    let r = rank_interventions(
        &doc.dag,
        &doc.cpts,
        &entry.evidence,
        &NodeId::new(q.target.as_str()),
        s,
        candidates.as_ref(),
    )?;
    Ok(Json(r))
}
