//! Seeded generators and reference implementations shared by the
//! integration targets. Nothing here calls the engine's own algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use riskdag::bowtie::{ContextFactor, Gate, GateKind, MitigativeBarrier, PreventiveBarrier};
use riskdag::capture::{
    Answer, AnswerLedger, CaptureState, Estimator, EstimatorConfig, Origin, Prior, QuestionId, QuestionOverride,
};
use riskdag::cpt::{CptRow, RowStatus};
use riskdag::graph::{EndpointDescriptor, EndpointMode, NodeKind};
use riskdag::model_io::{Position, UiMetadata};
use riskdag::{BowtieModel, Cpt, CptSet, Evidence, ModelDocument, NodeId, RiskDag, RiskNode};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn id(s: &str) -> NodeId {
    NodeId::new(s)
}

pub fn set(ids: &[&str]) -> BTreeSet<NodeId> {
    ids.iter().map(|s| NodeId::new(*s)).collect()
}

/// Random DAG over `n` nodes. Edges follow a shuffled order so that id
/// order and topological order disagree; each node keeps at most
/// `max_parents` parents.
pub fn random_dag(rng: &mut impl Rng, n: usize, max_states: usize, density: f64, max_parents: usize) -> RiskDag {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut dag = RiskDag::new();
    for i in 0..n {
        let k = rng.random_range(2..=max_states.max(2));
        let states: Vec<String> = (0..k).map(|s| format!("s{s}")).collect();
        dag.add_node(RiskNode::new(format!("n{i}"), format!("Node {i}"), NodeKind::Event, states))
            .unwrap();
    }
    for (pos, &child) in order.iter().enumerate() {
        let mut earlier: Vec<usize> = order[..pos].to_vec();
        earlier.shuffle(rng);
        let mut added = 0;
        for parent in earlier {
            if added < max_parents && rng.random_bool(density) {
                dag.add_edge(&format!("n{parent}"), &format!("n{child}")).unwrap();
                added += 1;
            }
        }
    }
    dag
}

/// Random normalized row; some entries are forced to zero.
pub fn random_row(rng: &mut impl Rng, k: usize) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..k)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let total: f64 = raw.iter().sum();
        if total > 1e-3 {
            return raw.iter().map(|v| v / total).collect();
        }
    }
}

pub fn random_cpts(rng: &mut impl Rng, dag: &RiskDag) -> CptSet {
    let mut set = CptSet::new();
    for node in dag.nodes() {
        let rows: usize = dag
            .parents(node.id.as_str())
            .unwrap()
            .iter()
            .map(|p| dag.node(p.as_str()).unwrap().cardinality())
            .product();
        let data = (0..rows).map(|_| random_row(rng, node.cardinality())).collect();
        set.insert(Cpt::from_complete_rows(dag, node.id.as_str(), data).unwrap());
    }
    set
}

/// Kahn order computed here, independent of the crate.
pub fn topo(dag: &RiskDag) -> Option<Vec<NodeId>> {
    let mut indeg: BTreeMap<NodeId, usize> =
        dag.node_ids().map(|n| (n.clone(), dag.parents(n.as_str()).unwrap().len())).collect();
    let mut ready: Vec<NodeId> = indeg.iter().filter(|(_, d)| **d == 0).map(|(n, _)| n.clone()).collect();
    let mut out = Vec::new();
    while let Some(n) = ready.pop() {
        for (p, c) in dag.edges() {
            if p == n {
                let d = indeg.get_mut(&c).unwrap();
                *d -= 1;
                if *d == 0 {
                    ready.push(c.clone());
                }
            }
        }
        out.push(n);
    }
    (out.len() == dag.len()).then_some(out)
}

/// Row index with the first parent most significant.
pub fn row_of(dag: &RiskDag, node: &str, assignment: &BTreeMap<NodeId, usize>) -> usize {
    let mut index = 0;
    for p in dag.parents(node).unwrap() {
        index = index * dag.node(p.as_str()).unwrap().cardinality() + assignment[p];
    }
    index
}

/// Ancestral sample; evidence built from it always has positive probability.
pub fn sample(rng: &mut impl Rng, dag: &RiskDag, cpts: &CptSet) -> BTreeMap<NodeId, usize> {
    let mut out = BTreeMap::new();
    for n in topo(dag).unwrap() {
        let row = &cpts.get(n.as_str()).unwrap().rows()[row_of(dag, n.as_str(), &out)].probs;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = row.iter().rposition(|p| *p > 0.0).unwrap();
        for (s, p) in row.iter().enumerate() {
            acc += p;
            if u < acc && *p > 0.0 {
                pick = s;
                break;
            }
        }
        out.insert(n, pick);
    }
    out
}

pub fn random_evidence(rng: &mut impl Rng, dag: &RiskDag, cpts: &CptSet, p: f64) -> Evidence {
    let world = sample(rng, dag, cpts);
    let mut ev = Evidence::new();
    for (n, s) in world {
        if rng.random_bool(p) {
            ev.insert(n, s);
        }
    }
    ev
}

/// Marginals by summing the full joint, written against the raw rows.
pub fn enumerate_marginals(dag: &RiskDag, cpts: &CptSet, evidence: &Evidence) -> BTreeMap<NodeId, Vec<f64>> {
    let order = topo(dag).unwrap();
    let cards: Vec<usize> = order.iter().map(|n| dag.node(n.as_str()).unwrap().cardinality()).collect();
    let mut acc: BTreeMap<NodeId, Vec<f64>> = order.iter().zip(&cards).map(|(n, k)| (n.clone(), vec![0.0; *k])).collect();
    let mut digits = vec![0usize; order.len()];
    let mut z = 0.0;
    'outer: loop {
        let assignment: BTreeMap<NodeId, usize> = order.iter().cloned().zip(digits.iter().copied()).collect();
        let consistent = evidence.iter().all(|(n, s)| assignment[n] == s);
        if consistent {
            let mut w = 1.0;
            for n in &order {
                let row = row_of(dag, n.as_str(), &assignment);
                w *= cpts.get(n.as_str()).unwrap().rows()[row].probs[assignment[n]];
            }
            z += w;
            for n in &order {
                acc.get_mut(n).unwrap()[assignment[n]] += w;
            }
        }
        for i in (0..digits.len()).rev() {
            digits[i] += 1;
            if digits[i] < cards[i] {
                continue 'outer;
            }
            digits[i] = 0;
        }
        break;
    }
    for v in acc.values_mut() {
        for p in v.iter_mut() {
            *p /= z;
        }
    }
    acc
}

fn descendants_of(dag: &RiskDag, n: &NodeId) -> BTreeSet<NodeId> {
    let mut out = BTreeSet::new();
    let mut stack = vec![n.clone()];
    while let Some(cur) = stack.pop() {
        for (p, c) in dag.edges() {
            if p == cur && out.insert(c.clone()) {
                stack.push(c);
            }
        }
    }
    out
}

/// d-separation by listing every simple path of the skeleton and testing
/// each one for an open trail.
pub fn brute_dsep(dag: &RiskDag, x: &BTreeSet<NodeId>, y: &BTreeSet<NodeId>, z: &BTreeSet<NodeId>) -> bool {
    let edges: BTreeSet<(NodeId, NodeId)> = dag.edges().into_iter().collect();
    let mut nbrs: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for (p, c) in &edges {
        nbrs.entry(p.clone()).or_default().push(c.clone());
        nbrs.entry(c.clone()).or_default().push(p.clone());
    }
    let desc: BTreeMap<NodeId, BTreeSet<NodeId>> = dag.node_ids().map(|n| (n.clone(), descendants_of(dag, n))).collect();
    let open = |path: &[NodeId]| {
        path.windows(3).all(|w| {
            let collider = edges.contains(&(w[0].clone(), w[1].clone())) && edges.contains(&(w[2].clone(), w[1].clone()));
            if collider {
                z.contains(&w[1]) || desc[&w[1]].iter().any(|d| z.contains(d))
            } else {
                !z.contains(&w[1])
            }
        })
    };
    fn walk(
        path: &mut Vec<NodeId>,
        y: &BTreeSet<NodeId>,
        nbrs: &BTreeMap<NodeId, Vec<NodeId>>,
        open: &dyn Fn(&[NodeId]) -> bool,
    ) -> bool {
        let last = path.last().unwrap().clone();
        if path.len() > 1 && y.contains(&last) {
            return open(path);
        }
        // Prune as soon as the prefix has a blocked interior node.
        if path.len() >= 3 && !open(&path[path.len() - 3..]) {
            return false;
        }
        for nb in nbrs.get(&last).into_iter().flatten() {
            if path.contains(nb) {
                continue;
            }
            path.push(nb.clone());
            let hit = walk(path, y, nbrs, open);
            path.pop();
            if hit {
                return true;
            }
        }
        false
    }
    for s in x {
        let mut path = vec![s.clone()];
        if walk(&mut path, y, &nbrs, &open) {
            return false;
        }
    }
    true
}

/// Backdoor criterion checked with [`brute_dsep`] on the graph without the
/// out-edges of `x`.
pub fn brute_backdoor(dag: &RiskDag, x: &NodeId, y: &NodeId, z: &BTreeSet<NodeId>) -> bool {
    let desc = descendants_of(dag, x);
    if z.iter().any(|n| desc.contains(n)) || z.contains(x) || z.contains(y) {
        return false;
    }
    let nodes: Vec<RiskNode> = dag.nodes().cloned().collect();
    let edges: Vec<(NodeId, NodeId)> = dag.edges().into_iter().filter(|(p, _)| p != x).collect();
    let cut = RiskDag::from_unchecked_parts(nodes, edges);
    brute_dsep(&cut, &[x.clone()].into(), &[y.clone()].into(), z)
}

pub fn non_descendants(dag: &RiskDag, x: &NodeId) -> BTreeSet<NodeId> {
    let desc = descendants_of(dag, x);
    dag.node_ids().filter(|n| *n != x && !desc.contains(*n)).cloned().collect()
}

pub fn subsets<T: Clone + Ord>(items: &[T]) -> Vec<BTreeSet<T>> {
    (0..1u32 << items.len())
        .map(|mask| {
            items
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, v)| v.clone())
                .collect()
        })
        .collect()
}

/// Random valid Bowtie with nested gates, contexts and guarded barriers.
pub fn random_bowtie(rng: &mut impl Rng) -> BowtieModel {
    let threats: Vec<String> = (0..rng.random_range(1..=5)).map(|i| format!("Threat {i}")).collect();
    let mut gates: Vec<Gate> = Vec::new();
    for g in 0..rng.random_range(0..=2) {
        let mut pool: Vec<String> = threats.clone();
        pool.extend(gates.iter().map(|x| x.name.clone()));
        pool.shuffle(rng);
        let take = rng.random_range(1..=pool.len().min(3));
        gates.push(Gate {
            name: format!("Gate {g}"),
            kind: if rng.random_bool(0.5) { GateKind::And } else { GateKind::Or },
            inputs: pool[..take].to_vec(),
        });
    }
    let preventive: Vec<PreventiveBarrier> = (0..rng.random_range(0..=3))
        .map(|i| PreventiveBarrier {
            name: format!("Prevent {i}"),
            guards: threats.iter().filter(|_| rng.random_bool(0.5)).cloned().collect(),
        })
        .collect();
    let events: Vec<String> = (0..rng.random_range(0..=3)).map(|i| format!("Escalation {i}")).collect();
    let consequence_name = "Outcome".to_string();
    let mitigative: Vec<MitigativeBarrier> = (0..rng.random_range(0..=3))
        .map(|i| {
            let mut targets: Vec<String> = events.clone();
            targets.push(consequence_name.clone());
            MitigativeBarrier {
                name: format!("Mitigate {i}"),
                guards: targets.into_iter().filter(|_| rng.random_bool(0.4)).collect(),
            }
        })
        .collect();
    let consequences: Vec<String> = (0..rng.random_range(1..=4)).map(|i| format!("loss level {i}")).collect();
    let mut targets: Vec<String> = threats.clone();
    targets.extend(events.iter().cloned());
    targets.push("Top".into());
    targets.push(consequence_name.clone());
    targets.extend(preventive.iter().map(|b| b.name.clone()));
    targets.extend(mitigative.iter().map(|b| b.name.clone()));
    let contexts = (0..rng.random_range(0..=2))
        .map(|i| ContextFactor {
            name: format!("Context {i}"),
            states: if rng.random_bool(0.5) {
                vec!["low".into(), "mid".into(), "high".into()]
            } else {
                vec!["false".into(), "true".into()]
            },
            influences: targets.iter().filter(|_| rng.random_bool(0.25)).cloned().collect(),
        })
        .collect();
    BowtieModel {
        top_event: "Top".into(),
        threats,
        gates,
        preventive_barriers: preventive,
        escalation_events: events,
        mitigative_barriers: mitigative,
        consequences,
        contexts,
        consequence_name: Some(consequence_name),
    }
}

const AWKWARD: [&str; 8] = ["plain", "a<b", "x & y", "quote\"d", "it's", "tab\there", "line\nbreak", "ünï©ødé"];

fn awkward(rng: &mut impl Rng, tag: usize) -> String {
    format!("{} {tag}", AWKWARD[rng.random_range(0..AWKWARD.len())])
}

/// Probability with a mix of round, long, tiny and boundary values.
fn awkward_prob(rng: &mut impl Rng) -> f64 {
    match rng.random_range(0..6) {
        0 => 0.0,
        1 => 1.0,
        2 => 0.1 + 0.2 - 0.3 + rng.random::<f64>() * 1e-300,
        3 => f64::MIN_POSITIVE * rng.random::<f64>(),
        4 => (rng.random_range(0..=100) as f64) / 100.0,
        _ => rng.random::<f64>(),
    }
}

/// Random model exercising every persisted field, including rows that are
/// partial, invalid or unelicited.
pub fn random_document(rng: &mut impl Rng) -> ModelDocument {
    let n = rng.random_range(1..=7);
    let mut dag = random_dag(rng, n, 3, 0.4, 3);
    let ids: Vec<NodeId> = dag.node_ids().cloned().collect();
    for (i, nid) in ids.iter().enumerate() {
        let node = dag.node_mut(nid.as_str()).unwrap();
        node.name = awkward(rng, i);
        node.kind = NodeKind::ALL[rng.random_range(0..NodeKind::ALL.len())];
        node.states = (0..node.states.len()).map(|s| awkward(rng, s)).collect();
        node.activation = rng.random_bool(0.3);
        if rng.random_bool(0.3) {
            let mode = if rng.random_bool(0.5) { EndpointMode::Poll } else { EndpointMode::Push };
            node.evidence_source = Some(EndpointDescriptor::new(format!("http://src.invalid/{i}?a=1&b=2"), mode));
        }
        for t in 0..rng.random_range(0..=2) {
            let mut target = EndpointDescriptor::new(format!("http://hook.invalid/{i}/{t}"), EndpointMode::Push);
            target.threshold = rng.random_bool(0.5).then(|| rng.random::<f64>());
            node.notify_targets.push(target);
        }
    }
    let mut cpts = CptSet::new();
    for node in dag.nodes() {
        let parents = dag.parents(node.id.as_str()).unwrap().to_vec();
        let cards: Vec<usize> = parents.iter().map(|p| dag.node(p.as_str()).unwrap().cardinality()).collect();
        let count: usize = cards.iter().product();
        let rows = (0..count)
            .map(|_| match rng.random_range(0..4) {
                0 => CptRow {
                    probs: random_row(rng, node.cardinality()),
                    status: RowStatus::Complete,
                },
                1 => CptRow {
                    probs: (0..node.cardinality()).map(|_| awkward_prob(rng)).collect(),
                    status: RowStatus::Invalid,
                },
                2 => CptRow {
                    probs: (0..node.cardinality()).map(|_| awkward_prob(rng)).collect(),
                    status: RowStatus::Partial,
                },
                _ => CptRow {
                    probs: vec![1.0 / node.cardinality() as f64; node.cardinality()],
                    status: RowStatus::Unelicited,
                },
            })
            .collect();
        if rng.random_bool(0.9) {
            cpts.insert(Cpt::from_raw_parts(node.id.clone(), parents, cards, node.cardinality(), rows));
        }
    }
    let mut capture = CaptureState {
        config: EstimatorConfig {
            p0: rng.random_range(0.01..0.99),
            k_prior: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.1..20.0) },
            kappa: rng.random_range(0.5..60.0),
            half_life: rng.random_bool(0.5).then(|| rng.random_range(60.0..1e7)),
            estimator: Estimator::ALL[rng.random_range(0..Estimator::ALL.len())],
        },
        overrides: BTreeMap::new(),
        ledger: AnswerLedger::new(),
    };
    for q in 0..rng.random_range(0..=3) {
        capture.overrides.insert(
            QuestionId::new(format!("q-{q}")),
            QuestionOverride {
                prior: rng.random_bool(0.5).then(|| Prior::new(rng.random_range(0.05..0.95), rng.random_range(0.0..10.0)).unwrap()),
                kappa: rng.random_bool(0.5).then(|| rng.random_range(1.0..30.0)),
                half_life: rng.random_bool(0.5).then(|| rng.random_range(1.0..1e6)),
            },
        );
    }
    let start = Utc.with_ymd_and_hms(2026, 1, 1, 0, 0, 0).unwrap();
    let mut clock: DateTime<Utc> = start;
    for a in 0..rng.random_range(0..=12) {
        clock += Duration::seconds(rng.random_range(0..=5000));
        capture
            .ledger
            .append(Answer {
                question: QuestionId::new(format!("q-{}", rng.random_range(0..4))),
                value: awkward_prob(rng),
                timestamp: clock,
                respondent: awkward(rng, a),
                origin: if rng.random_bool(0.5) { Origin::Manual } else { Origin::QuickSet },
            })
            .unwrap();
    }
    let mut ui = UiMetadata::default();
    for nid in &ids {
        if rng.random_bool(0.5) {
            ui.positions.insert(
                nid.clone(),
                Position {
                    x: rng.random_range(-1e4..1e4),
                    y: rng.random_range(-1e4..1e4),
                },
            );
        }
    }
    ModelDocument {
        name: rng.random_bool(0.8).then(|| awkward(rng, 99)),
        bowtie: rng.random_bool(0.3).then(|| random_bowtie(rng)),
        dag,
        cpts,
        capture,
        ui,
    }
}
