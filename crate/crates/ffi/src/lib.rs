//! C ABI over the riskdag engine.
//!
//! Models are opaque handles created by `rd_model_*` constructors and
//! released with `rd_model_free`. Every fallible call returns an
//! [`RdStatus`]; on failure a message is available from
//! `rd_last_error_message` on the same thread. Strings returned through
//! `char **` out-parameters are owned by the caller and must be released
//! with `rd_string_free`.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use riskdag::causal::{d_separated, interventional_posterior, rank_interventions, CausalError, Intervention};
use riskdag::cpt::validate_cpts;
use riskdag::inference::{check_ready, InferenceError};
use riskdag::{case_study, export_xml, import_xml, posterior, Evidence, ModelDocument, NodeId};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    UnknownNode = 4,
    UnknownState = 5,
    Contradiction = 6,
    NotReady = 7,
    Invalid = 8,
    BufferTooSmall = 9,
    Io = 10,
    Panic = 11,
}

/// Opaque model handle: a document plus the current observations.
pub struct RdModel {
    doc: ModelDocument,
    evidence: Evidence,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(RdStatus, String);

type R<T> = Result<T, Failure>;

fn fail(status: RdStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn inference_status(e: &InferenceError) -> RdStatus {
    match e {
        InferenceError::Graph(_) => RdStatus::UnknownNode,
        InferenceError::Contradiction { .. } => RdStatus::Contradiction,
        InferenceError::UnknownState { .. } | InferenceError::StateOutOfRange { .. } => RdStatus::UnknownState,
        InferenceError::IncompleteCpt { .. } | InferenceError::StaleCpt(_) | InferenceError::Cpt(_) => {
            RdStatus::NotReady
        }
        InferenceError::StateSpaceTooLarge { .. } => RdStatus::Invalid,
    }
}

impl From<InferenceError> for Failure {
    fn from(e: InferenceError) -> Self {
        Failure(inference_status(&e), e.to_string())
    }
}

impl From<CausalError> for Failure {
    fn from(e: CausalError) -> Self {
        let status = match &e {
            CausalError::Inference(i) => inference_status(i),
            CausalError::Graph(_) => RdStatus::UnknownNode,
            _ => RdStatus::Invalid,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, converting failures and panics into a status code.
fn guard(f: impl FnOnce() -> R<()>) -> RdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RdStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            RdStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> R<&'a str> {
    if p.is_null() {
        return Err(fail(RdStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(RdStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn model<'a>(p: *const RdModel) -> R<&'a RdModel> {
    p.as_ref().ok_or_else(|| fail(RdStatus::NullArgument, "model handle is null"))
}

unsafe fn model_mut<'a>(p: *mut RdModel) -> R<&'a mut RdModel> {
    p.as_mut().ok_or_else(|| fail(RdStatus::NullArgument, "model handle is null"))
}

unsafe fn out<'a, T>(p: *mut T, what: &str) -> R<&'a mut T> {
    p.as_mut()
        .ok_or_else(|| fail(RdStatus::NullArgument, format!("{what} is null")))
}

fn owned_string(s: String) -> R<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| fail(RdStatus::Invalid, "output contains a NUL byte"))
}

fn json<T: serde::Serialize>(v: &T) -> R<*mut c_char> {
    let s = serde_json::to_string(v).map_err(|e| fail(RdStatus::Invalid, e.to_string()))?;
    owned_string(s)
}

fn state_index(m: &RdModel, node: &str, label: &str) -> R<usize> {
    let n = m
        .doc
        .dag
        .node(node)
        .map_err(|e| fail(RdStatus::UnknownNode, e.to_string()))?;
    n.state_index(label)
        .ok_or_else(|| fail(RdStatus::UnknownState, format!("`{node}` has no state `{label}`")))
}

fn id_set(csv: &str) -> BTreeSet<NodeId> {
    csv.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(NodeId::new)
        .collect()
}

fn boxed(doc: ModelDocument) -> *mut RdModel {
    Box::into_raw(Box::new(RdModel {
        doc,
        evidence: Evidence::new(),
    }))
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses a model document.
///
/// # Safety
/// `xml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_from_xml(xml: *const c_char, out_model: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let src = text(xml, "xml")?;
        let doc = import_xml(src).map_err(|e| fail(RdStatus::Parse, e.to_string()))?;
        *slot = boxed(doc);
        Ok(())
    })
}

/// Reads and parses a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_open(path: *const c_char, out_model: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let p = text(path, "path")?;
        let src = std::fs::read_to_string(p).map_err(|e| fail(RdStatus::Io, format!("{p}: {e}")))?;
        let doc = import_xml(&src).map_err(|e| fail(RdStatus::Parse, e.to_string()))?;
        *slot = boxed(doc);
        Ok(())
    })
}

/// The bundled instant-payments model.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_case_study(out_model: *mut *mut RdModel) -> RdStatus {
    guard(|| {
        *out(out_model, "out_model")? = boxed(case_study::document());
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `model` must come from an `rd_model_*` constructor and not be used
/// afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_model_free(model: *mut RdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Serializes the model document.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_to_xml(model: *const RdModel, out_xml: *mut *mut c_char) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        *out(out_xml, "out_xml")? = owned_string(export_xml(&m.doc))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_node_count(model: *const RdModel, out_count: *mut usize) -> RdStatus {
    guard(|| {
        *out(out_count, "out_count")? = self::model(model)?.doc.dag.len();
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle, `node` a NUL-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_model_state_count(
    model: *const RdModel,
    node: *const c_char,
    out_count: *mut usize,
) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let id = text(node, "node")?;
        let n = m
            .doc
            .dag
            .node(id)
            .map_err(|e| fail(RdStatus::UnknownNode, e.to_string()))?;
        *out(out_count, "out_count")? = n.cardinality();
        Ok(())
    })
}

/// Structural and CPT findings as JSON.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_validate_json(model: *const RdModel, out_json: *mut *mut c_char) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let structure = m.doc.dag.validate();
        let cpts = validate_cpts(&m.doc.dag, &m.doc.cpts);
        *out(out_json, "out_json")? = json(&serde_json::json!({
            "runtime_ready": structure.is_runtime_ready()
                && cpts.is_clean()
                && check_ready(&m.doc.dag, &m.doc.cpts).is_ok(),
            "structure": structure,
            "cpts": cpts,
        }))?;
        Ok(())
    })
}

/// Observes `node = state` (state by label). Rejected observations leave
/// the evidence unchanged.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rd_evidence_set(model: *mut RdModel, node: *const c_char, state: *const c_char) -> RdStatus {
    guard(|| {
        let m = model_mut(model)?;
        let (id, label) = (text(node, "node")?, text(state, "state")?);
        let s = state_index(m, id, label)?;
        m.evidence.insert(id, s);
        Ok(())
    })
}

/// Removes the observation on `node`, or all observations when `node` is
/// NULL.
///
/// # Safety
/// `model` must be a live handle; `node` NULL or NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn rd_evidence_clear(model: *mut RdModel, node: *const c_char) -> RdStatus {
    guard(|| {
        let m = model_mut(model)?;
        if node.is_null() {
            m.evidence = Evidence::new();
        } else {
            let id = text(node, "node")?;
            m.evidence.remove(id);
        }
        Ok(())
    })
}

/// Writes the posterior of `node` into `out[0..len)`. `written` receives
/// the state count; with a short buffer nothing is written and
/// `RD_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `model` must be a live handle, `node` NUL-terminated, `out` valid for
/// `len` doubles and `written` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_posterior(
    model: *const RdModel,
    node: *const c_char,
    out_probs: *mut f64,
    len: usize,
    written: *mut usize,
) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let id = NodeId::new(text(node, "node")?);
        let count = out(written, "written")?;
        let table = posterior(&m.doc.dag, &m.doc.cpts, &m.evidence, Some(std::slice::from_ref(&id)))?;
        let probs = &table[&id];
        *count = probs.len();
        if len < probs.len() {
            return Err(fail(
                RdStatus::BufferTooSmall,
                format!("need {} slots, got {len}", probs.len()),
            ));
        }
        if out_probs.is_null() {
            return Err(fail(RdStatus::NullArgument, "out_probs is null"));
        }
        std::slice::from_raw_parts_mut(out_probs, probs.len()).copy_from_slice(probs);
        Ok(())
    })
}

/// All posterior marginals under the current evidence as a JSON object
/// `{node: [p...]}`.
///
/// # Safety
/// `model` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rd_posterior_json(model: *const RdModel, out_json: *mut *mut c_char) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let table = posterior(&m.doc.dag, &m.doc.cpts, &m.evidence, None)?;
        *out(out_json, "out_json")? = json(&table)?;
        Ok(())
    })
}

/// `P(target = target_state | do(node = state), evidence)`.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rd_do_query(
    model: *const RdModel,
    node: *const c_char,
    state: *const c_char,
    target: *const c_char,
    target_state: *const c_char,
    out_prob: *mut f64,
) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let (n, s) = (text(node, "node")?, text(state, "state")?);
        let (t, ts) = (text(target, "target")?, text(target_state, "target_state")?);
        let iv: Intervention = [(NodeId::new(n), state_index(m, n, s)?)].into();
        let ti = state_index(m, t, ts)?;
        let p = interventional_posterior(&m.doc.dag, &m.doc.cpts, &m.evidence, &iv, &NodeId::new(t), ti)?;
        *out(out_prob, "out_prob")? = p;
        Ok(())
    })
}

/// d-separation of comma-separated node sets; `out` receives 1 or 0.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rd_d_separated(
    model: *const RdModel,
    x: *const c_char,
    y: *const c_char,
    z: *const c_char,
    out_flag: *mut c_int,
) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let (x, y) = (id_set(text(x, "x")?), id_set(text(y, "y")?));
        let z = if z.is_null() { BTreeSet::new() } else { id_set(text(z, "z")?) };
        let sep = d_separated(&m.doc.dag, &x, &y, &z)?;
        *out(out_flag, "out_flag")? = c_int::from(sep);
        Ok(())
    })
}

/// Intervention ranking over activation nodes as JSON.
///
/// # Safety
/// `model` must be a live handle; strings NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn rd_rank_json(
    model: *const RdModel,
    target: *const c_char,
    state: *const c_char,
    out_json: *mut *mut c_char,
) -> RdStatus {
    guard(|| {
        let m = self::model(model)?;
        let (t, s) = (text(target, "target")?, text(state, "state")?);
        let si = state_index(m, t, s)?;
        let r = rank_interventions(&m.doc.dag, &m.doc.cpts, &m.evidence, &NodeId::new(t), si, None)?;
        *out(out_json, "out_json")? = json(&r)?;
        Ok(())
    })
}
