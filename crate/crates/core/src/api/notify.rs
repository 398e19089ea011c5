//! Outbound posterior-change notifications.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::graph::{NodeId, RiskDag};
use crate::inference::PosteriorTable;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NotificationPayload {
    pub model_id: String,
    pub node: NodeId,
    pub states: Vec<String>,
    pub old: Vec<f64>,
    pub new: Vec<f64>,
    pub timestamp: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dispatch {
    pub url: String,
    pub payload: NotificationPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchRecord {
    pub node: NodeId,
    pub url: String,
    pub attempts: u32,
    pub delivered: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub finished_at: DateTime<Utc>,
}

pub type DispatchLog = Arc<Mutex<Vec<DispatchRecord>>>;

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// True when the largest per-state move reaches `threshold` or the most
/// probable state changes.
pub fn triggers(old: &[f64], new: &[f64], threshold: f64) -> bool {
    let moved = old
        .iter()
        .zip(new)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    moved >= threshold || argmax(old) != argmax(new)
}

/// Nodes carrying notify targets.
pub fn watched_nodes(dag: &RiskDag) -> Vec<NodeId> {
    dag.nodes()
        .filter(|n| !n.notify_targets.is_empty())
        .map(|n| n.id.clone())
        .collect()
}

/// Dispatches ordered by node id, then target URL. Duplicate URLs on one
/// node collapse to one target using the smallest threshold.
pub fn plan_notifications(
    model_id: &str,
    dag: &RiskDag,
    old: &PosteriorTable,
    new: &PosteriorTable,
    default_threshold: f64,
    now: DateTime<Utc>,
) -> Vec<Dispatch> {
    let mut out = Vec::new();
    for node in dag.nodes() {
        if node.notify_targets.is_empty() {
            continue;
        }
        let (Some(o), Some(n)) = (old.get(&node.id), new.get(&node.id)) else {
            continue;
        };
        let mut targets: BTreeMap<&str, f64> = BTreeMap::new();
        for t in &node.notify_targets {
            let th = t.threshold.unwrap_or(default_threshold);
            targets
                .entry(t.url.as_str())
                .and_modify(|x| *x = x.min(th))
                .or_insert(th);
        }
        for (url, th) in targets {
            if triggers(o, n, th) {
                out.push(Dispatch {
                    url: url.to_owned(),
                    payload: NotificationPayload {
                        model_id: model_id.to_owned(),
                        node: node.id.clone(),
                        states: node.states.clone(),
                        old: o.clone(),
                        new: n.clone(),
                        timestamp: now,
                    },
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct Dispatcher {
    client: reqwest::Client,
    attempts: u32,
    backoff: Duration,
}

impl Dispatcher {
    pub fn new(attempts: u32, backoff_ms: u64) -> Self {
        let client = reqwest::Client::builder()
            .timeout(Duration::from_secs(5))
            .build()
            .expect("http client");
        Self {
            client,
            attempts: attempts.max(1),
            backoff: Duration::from_millis(backoff_ms),
        }
    }

    async fn deliver(&self, d: &Dispatch) -> DispatchRecord {
        let mut record = DispatchRecord {
            node: d.payload.node.clone(),
            url: d.url.clone(),
            attempts: 0,
            delivered: false,
            status: None,
            error: None,
            finished_at: Utc::now(),
        };
        for attempt in 0..self.attempts {
            if attempt > 0 {
                tokio::time::sleep(self.backoff * 2u32.pow(attempt - 1)).await;
            }
            record.attempts = attempt + 1;
            match self.client.post(&d.url).json(&d.payload).send().await {
                Ok(resp) => {
                    record.status = Some(resp.status().as_u16());
                    if resp.status().is_success() {
                        record.delivered = true;
                        record.error = None;
                        break;
                    }
                    record.error = Some(format!("HTTP {}", resp.status()));
                }
                Err(e) => record.error = Some(e.to_string()),
            }
        }
        if !record.delivered {
            tracing::warn!(url = %d.url, node = %d.payload.node, error = ?record.error, "notification failed");
        }
        record.finished_at = Utc::now();
        record
    }

    /// Sends in order on a background task; never blocks the caller.
    pub fn spawn(&self, dispatches: Vec<Dispatch>, log: DispatchLog) {
        if dispatches.is_empty() {
            return;
        }
        let me = self.clone();
        tokio::spawn(async move {
            for d in &dispatches {
                let rec = me.deliver(d).await;
                log.lock().expect("dispatch log").push(rec);
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EndpointDescriptor, EndpointMode, NodeKind, RiskNode};

    fn table(v: &[f64]) -> PosteriorTable {
        [(NodeId::new("a"), v.to_vec())].into()
    }

    fn dag(urls: &[(&str, Option<f64>)]) -> RiskDag {
        let mut n = RiskNode::boolean("a", "A", NodeKind::Event);
        for (u, th) in urls {
            n = n.with_notify_target(EndpointDescriptor {
                threshold: *th,
                ..EndpointDescriptor::new(*u, EndpointMode::Push)
            });
        }
        let mut d = RiskDag::new();
        d.add_node(n).unwrap();
        d
    }

    #[test]
    fn trigger_rules() {
        assert!(triggers(&[0.6, 0.4], &[0.45, 0.55], 0.5));
        assert!(!triggers(&[0.9, 0.1], &[0.85, 0.15], 0.1));
        assert!(triggers(&[0.9, 0.1], &[0.8, 0.2], 0.1));
    }

    #[test]
    fn ordering_and_dedup() {
        let d = dag(&[("http://z", None), ("http://b", None), ("http://z", Some(0.5))]);
        let plan = plan_notifications("m", &d, &table(&[0.3, 0.7]), &table(&[0.8, 0.2]), 0.1, Utc::now());
        let urls: Vec<&str> = plan.iter().map(|p| p.url.as_str()).collect();
        assert_eq!(urls, ["http://b", "http://z"]);
        let quiet = plan_notifications("m", &d, &table(&[0.3, 0.7]), &table(&[0.35, 0.65]), 0.1, Utc::now());
        assert!(quiet.is_empty());
    }
}
