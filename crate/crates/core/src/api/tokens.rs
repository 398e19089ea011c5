use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::NodeId;

/// Random bytes per token; rendered as lowercase hex.
pub const TOKEN_BYTES: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptureToken {
    pub token: String,
    pub model_id: String,
    pub scope: BTreeSet<NodeId>,
    pub expires_at: DateTime<Utc>,
    pub issued_to: String,
}

impl CaptureToken {
    pub fn covers(&self, node: &NodeId) -> bool {
        self.scope.contains(node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenCheck {
    Unknown,
    Expired,
}

#[derive(Debug, Default)]
pub struct TokenStore {
    tokens: Mutex<BTreeMap<String, CaptureToken>>,
}

impl TokenStore {
    pub fn issue(
        &self,
        model_id: &str,
        scope: BTreeSet<NodeId>,
        issued_to: &str,
        ttl_secs: u64,
        now: DateTime<Utc>,
    ) -> CaptureToken {
        let bytes: [u8; TOKEN_BYTES] = rand::rng().random();
        let ttl = Duration::seconds(i64::try_from(ttl_secs).unwrap_or(i64::MAX / 1000));
        let token = CaptureToken {
            token: hex::encode(bytes),
            model_id: model_id.to_owned(),
            scope,
            expires_at: now.checked_add_signed(ttl).unwrap_or(DateTime::<Utc>::MAX_UTC),
            issued_to: issued_to.to_owned(),
        };
        self.tokens
            .lock()
            .expect("token lock")
            .insert(token.token.clone(), token.clone());
        token
    }

    pub fn check(&self, token: &str, now: DateTime<Utc>) -> Result<CaptureToken, TokenCheck> {
        let map = self.tokens.lock().expect("token lock");
        let t = map.get(token).ok_or(TokenCheck::Unknown)?;
        if now >= t.expires_at {
            return Err(TokenCheck::Expired);
        }
        Ok(t.clone())
    }

    /// Drops every token of a deleted model.
    pub fn revoke_model(&self, model_id: &str) {
        self.tokens
            .lock()
            .expect("token lock")
            .retain(|_, t| t.model_id != model_id);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn issue_and_expire() {
        let store = TokenStore::default();
        let now = Utc::now();
        let t = store.issue("m", [NodeId::new("a")].into(), "ops", 60, now);
        assert_eq!(t.token.len(), TOKEN_BYTES * 2);
        assert!(store.check(&t.token, now).is_ok());
        assert_eq!(
            store.check(&t.token, now + Duration::seconds(60)),
            Err(TokenCheck::Expired)
        );
        assert_eq!(store.check("nope", now), Err(TokenCheck::Unknown));
        let u = store.issue("m", BTreeSet::new(), "ops", 60, now);
        assert_ne!(t.token, u.token);
        store.revoke_model("m");
        assert_eq!(store.check(&t.token, now), Err(TokenCheck::Unknown));
    }
}
