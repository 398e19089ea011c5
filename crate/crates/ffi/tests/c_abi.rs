use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use riskdag::case_study::{self, CONSEQUENCE, REGIONAL_ISOLATION, TRANSACTION_LOSS};
use riskdag::causal::{interventional_posterior, Intervention};
use riskdag::graph::NodeKind;
use riskdag::{export_xml, posterior, Cpt, CptSet, Evidence, ModelDocument, NodeId, RiskDag, RiskNode};
use riskdag_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = rd_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn take_string(p: *mut c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { rd_string_free(p) };
    s
}

struct Handle(*mut RdModel);

impl Drop for Handle {
    fn drop(&mut self) {
        unsafe { rd_model_free(self.0) };
    }
}

fn case_handle() -> Handle {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rd_model_case_study(&mut m) }, RdStatus::Ok);
    Handle(m)
}

fn from_xml(xml: &str) -> Result<Handle, RdStatus> {
    let mut m = ptr::null_mut();
    let src = c(xml);
    match unsafe { rd_model_from_xml(src.as_ptr(), &mut m) } {
        RdStatus::Ok => Ok(Handle(m)),
        s => Err(s),
    }
}

fn posterior_of(h: &Handle, node: &str) -> Result<Vec<f64>, RdStatus> {
    let id = c(node);
    let mut buf = [0.0f64; 8];
    let mut n = 0usize;
    match unsafe { rd_posterior(h.0, id.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut n) } {
        RdStatus::Ok => Ok(buf[..n].to_vec()),
        s => Err(s),
    }
}

fn observe(h: &Handle, node: &str, state: &str) -> RdStatus {
    let (n, s) = (c(node), c(state));
    unsafe { rd_evidence_set(h.0, n.as_ptr(), s.as_ptr()) }
}

/// a -> b with b copying a exactly.
fn deterministic_doc() -> ModelDocument {
    let mut dag = RiskDag::new();
    dag.add_node(RiskNode::boolean("a", "A", NodeKind::Cause)).unwrap();
    dag.add_node(RiskNode::boolean("b", "B", NodeKind::Event)).unwrap();
    dag.add_edge("a", "b").unwrap();
    let mut cpts = CptSet::new();
    cpts.insert(Cpt::from_complete_rows(&dag, "a", vec![vec![0.3, 0.7]]).unwrap());
    cpts.insert(Cpt::from_complete_rows(&dag, "b", vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    ModelDocument {
        dag,
        cpts,
        ..Default::default()
    }
}

#[test]
fn xml_round_trip_through_the_handle() {
    let h = case_handle();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rd_model_to_xml(h.0, &mut out) }, RdStatus::Ok);
    let xml = take_string(out);
    assert_eq!(xml, export_xml(&case_study::document()));

    let again = from_xml(&xml).unwrap();
    let mut count = 0usize;
    assert_eq!(unsafe { rd_model_node_count(again.0, &mut count) }, RdStatus::Ok);
    assert_eq!(count, case_study::dag().len());
    let node = c(CONSEQUENCE);
    assert_eq!(unsafe { rd_model_state_count(again.0, node.as_ptr(), &mut count) }, RdStatus::Ok);
    assert_eq!(count, 4);
}

#[test]
fn posterior_matches_the_engine() {
    let doc = case_study::document();
    let h = case_handle();
    let mut ev = Evidence::new();
    for (node, state) in case_study::cut_labels(2) {
        assert_eq!(observe(&h, node, state), RdStatus::Ok);
        ev.observe_label(&doc.dag, node, state).unwrap();
    }
    let table = posterior(&doc.dag, &doc.cpts, &ev, None).unwrap();
    for id in doc.dag.node_ids() {
        let got = posterior_of(&h, id.as_str()).unwrap();
        assert_eq!(got, table[id], "{id}");
    }

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rd_posterior_json(h.0, &mut out) }, RdStatus::Ok);
    let parsed: std::collections::BTreeMap<String, Vec<f64>> = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(parsed.len(), doc.dag.len());
    for (id, probs) in &parsed {
        assert_eq!(probs, &table[&NodeId::new(id.as_str())], "{id}");
    }
}

#[test]
fn clearing_evidence_restores_priors() {
    let h = case_handle();
    let prior = posterior_of(&h, CONSEQUENCE).unwrap();
    for (node, state) in case_study::cut_labels(3) {
        assert_eq!(observe(&h, node, state), RdStatus::Ok);
    }
    assert_ne!(posterior_of(&h, CONSEQUENCE).unwrap(), prior);
    assert_eq!(unsafe { rd_evidence_clear(h.0, ptr::null()) }, RdStatus::Ok);
    let back = posterior_of(&h, CONSEQUENCE).unwrap();
    for (a, b) in back.iter().zip(&prior) {
        assert!((a - b).abs() < 1e-12);
    }

    assert_eq!(observe(&h, REGIONAL_ISOLATION, "fails"), RdStatus::Ok);
    let ri = c(REGIONAL_ISOLATION);
    assert_eq!(unsafe { rd_evidence_clear(h.0, ri.as_ptr()) }, RdStatus::Ok);
    assert_eq!(posterior_of(&h, CONSEQUENCE).unwrap(), back);
}

#[test]
fn do_query_and_ranking() {
    let doc = case_study::document();
    let h = case_handle();
    let (node, state, target, loss) = (c(REGIONAL_ISOLATION), c("works"), c(CONSEQUENCE), c(TRANSACTION_LOSS));
    let mut p = 0.0;
    let status = unsafe { rd_do_query(h.0, node.as_ptr(), state.as_ptr(), target.as_ptr(), loss.as_ptr(), &mut p) };
    assert_eq!(status, RdStatus::Ok);
    let iv: Intervention = [(NodeId::new(REGIONAL_ISOLATION), 0)].into();
    let expect =
        interventional_posterior(&doc.dag, &doc.cpts, &Evidence::new(), &iv, &NodeId::new(CONSEQUENCE), 3).unwrap();
    assert_eq!(p, expect);

    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rd_rank_json(h.0, target.as_ptr(), loss.as_ptr(), &mut out) }, RdStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    let entries = v["entries"].as_array().unwrap();
    assert!(!entries.is_empty());
    let probs: Vec<f64> = entries.iter().map(|e| e["probability"].as_f64().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn d_separation_flag() {
    let h = case_handle();
    let mut flag: c_int = -1;
    let (x, y) = (c("validation_gate"), c("observability_degraded"));
    assert_eq!(unsafe { rd_d_separated(h.0, x.as_ptr(), y.as_ptr(), ptr::null(), &mut flag) }, RdStatus::Ok);
    assert_eq!(flag, 1);
    let z = c("service_degradation");
    assert_eq!(unsafe { rd_d_separated(h.0, x.as_ptr(), y.as_ptr(), z.as_ptr(), &mut flag) }, RdStatus::Ok);
    assert_eq!(flag, 0);
}

#[test]
fn validation_report_is_json() {
    let h = case_handle();
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { rd_validate_json(h.0, &mut out) }, RdStatus::Ok);
    let v: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert!(v.is_object());
}

#[test]
fn error_codes() {
    assert_eq!(from_xml("<not-a-model").err(), Some(RdStatus::Parse));
    assert!(!last_error().is_empty());

    let h = case_handle();
    assert_eq!(observe(&h, "no_such_node", "works"), RdStatus::UnknownNode);
    assert!(last_error().contains("no_such_node"));
    assert_eq!(observe(&h, REGIONAL_ISOLATION, "maybe"), RdStatus::UnknownState);
    assert_eq!(posterior_of(&h, "no_such_node").err(), Some(RdStatus::UnknownNode));

    let bad = [0xffu8, 0xfe, 0];
    let mut m = ptr::null_mut();
    let status = unsafe { rd_model_from_xml(bad.as_ptr().cast(), &mut m) };
    assert_eq!(status, RdStatus::InvalidUtf8);
    assert!(m.is_null());

    let path = c("/nonexistent/model.rdx");
    assert_eq!(unsafe { rd_model_open(path.as_ptr(), &mut m) }, RdStatus::Io);
}

#[test]
fn contradiction_is_reported() {
    let h = from_xml(&export_xml(&deterministic_doc())).unwrap();
    assert_eq!(observe(&h, "a", "false"), RdStatus::Ok);
    assert_eq!(observe(&h, "b", "true"), RdStatus::Ok);
    assert_eq!(posterior_of(&h, "a").err(), Some(RdStatus::Contradiction));
    let b = c("b");
    assert_eq!(unsafe { rd_evidence_clear(h.0, b.as_ptr()) }, RdStatus::Ok);
    assert_eq!(posterior_of(&h, "b").unwrap(), vec![1.0, 0.0]);
}

#[test]
fn incomplete_model_is_not_ready() {
    let mut doc = deterministic_doc();
    doc.cpts.remove("b");
    let h = from_xml(&export_xml(&doc)).unwrap();
    assert_eq!(posterior_of(&h, "a").err(), Some(RdStatus::NotReady));
}

#[test]
fn small_buffer_reports_required_length() {
    let h = case_handle();
    let id = c(CONSEQUENCE);
    let mut buf = [0.0f64; 2];
    let mut n = 0usize;
    let status = unsafe { rd_posterior(h.0, id.as_ptr(), buf.as_mut_ptr(), buf.len(), &mut n) };
    assert_eq!(status, RdStatus::BufferTooSmall);
    assert_eq!(n, 4);
    assert_eq!(buf, [0.0, 0.0]);
    let status = unsafe { rd_posterior(h.0, id.as_ptr(), ptr::null_mut(), 0, &mut n) };
    assert_eq!(status, RdStatus::BufferTooSmall);
    assert_eq!(n, 4);
}

#[test]
fn null_arguments_are_rejected() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { rd_model_from_xml(ptr::null(), &mut m) }, RdStatus::NullArgument);
    assert_eq!(unsafe { rd_model_case_study(ptr::null_mut()) }, RdStatus::NullArgument);
    let mut count = 0usize;
    assert_eq!(unsafe { rd_model_node_count(ptr::null(), &mut count) }, RdStatus::NullArgument);
    let h = case_handle();
    assert_eq!(unsafe { rd_model_node_count(h.0, ptr::null_mut()) }, RdStatus::NullArgument);
    assert_eq!(unsafe { rd_evidence_set(h.0, ptr::null(), ptr::null()) }, RdStatus::NullArgument);
    unsafe {
        rd_model_free(ptr::null_mut());
        rd_string_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/riskdag.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "rd_last_error_message",
        "rd_model_from_xml",
        "rd_model_open",
        "rd_model_case_study",
        "rd_model_free",
        "rd_string_free",
        "rd_model_to_xml",
        "rd_model_node_count",
        "rd_model_state_count",
        "rd_validate_json",
        "rd_evidence_set",
        "rd_evidence_clear",
        "rd_posterior",
        "rd_posterior_json",
        "rd_do_query",
        "rd_d_separated",
        "rd_rank_json",
        "RD_STATUS_OK = 0",
        "RD_STATUS_BUFFER_TOO_SMALL",
        "typedef struct rd_model rd_model;",
    ] {
        assert!(text.contains(name), "missing {name}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|cc| Command::new(cc).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{}\"\nint main(void) {{ rd_model *m = 0; enum rd_status s = rd_model_case_study(&m); rd_model_free(m); return (int)s; }}\n",
            header().display()
        ),
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"])
        .arg(&src)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
