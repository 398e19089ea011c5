//! In-memory model registry with optional XML persistence, one file per
//! model id.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock as SyncRwLock};

use tokio::sync::RwLock;

use super::error::ApiError;
use super::notify::{watched_nodes, DispatchLog};
use crate::inference::{posterior, Evidence, PosteriorTable};
use crate::model_io::{export_xml, import_xml, ModelDocument, FILE_EXTENSION};

pub struct Entry {
    pub doc: ModelDocument,
    pub evidence: Evidence,
    /// Posteriors of watched nodes at the last change, when computable.
    pub watched: Option<PosteriorTable>,
    pub log: DispatchLog,
}

impl Entry {
    /// Starts with the prior posteriors of watched nodes as the baseline
    /// for notifications.
    pub fn new(doc: ModelDocument) -> Self {
        let mut entry = Self {
            doc,
            evidence: Evidence::new(),
            watched: None,
            log: DispatchLog::default(),
        };
        entry.watched = entry.watched_posteriors();
        entry
    }

    pub fn watched_posteriors(&self) -> Option<PosteriorTable> {
        let watched = watched_nodes(&self.doc.dag);
        if watched.is_empty() {
            return None;
        }
        posterior(&self.doc.dag, &self.doc.cpts, &self.evidence, Some(&watched)).ok()
    }
}

pub type Shared = Arc<RwLock<Entry>>;

pub struct ModelStore {
    dir: Option<PathBuf>,
    models: SyncRwLock<BTreeMap<String, Shared>>,
}

pub fn valid_id(id: &str) -> bool {
    !id.is_empty()
        && id.len() <= 64
        && id
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '-' || c == '_')
}

impl ModelStore {
    pub fn in_memory() -> Self {
        Self {
            dir: None,
            models: SyncRwLock::new(BTreeMap::new()),
        }
    }

    /// Opens a persistence directory and loads every model file in it.
    pub fn open(dir: &Path) -> Result<Self, String> {
        std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        let mut models = BTreeMap::new();
        let entries = std::fs::read_dir(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        for item in entries {
            let path = item.map_err(|e| e.to_string())?.path();
            if path.extension().and_then(|e| e.to_str()) != Some(FILE_EXTENSION) {
                continue;
            }
            let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            if !valid_id(id) {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let doc = import_xml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            models.insert(id.to_owned(), Arc::new(RwLock::new(Entry::new(doc))));
        }
        Ok(Self {
            dir: Some(dir.to_owned()),
            models: SyncRwLock::new(models),
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.models.read().expect("store lock").keys().cloned().collect()
    }

    pub fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.models
            .read()
            .expect("store lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown model `{id}`")))
    }

    pub fn insert(&self, id: &str, doc: ModelDocument) -> Result<Shared, ApiError> {
        if !valid_id(id) {
            return Err(ApiError::invalid(format!(
                "model id `{id}` must be 1-64 chars of [a-z0-9_-]"
            )));
        }
        let mut map = self.models.write().expect("store lock");
        if map.contains_key(id) {
            return Err(ApiError::conflict(format!("model `{id}` already exists")));
        }
        self.persist(id, &doc)?;
        let entry = Arc::new(RwLock::new(Entry::new(doc)));
        map.insert(id.to_owned(), entry.clone());
        Ok(entry)
    }

    pub fn remove(&self, id: &str) -> Result<(), ApiError> {
        let mut map = self.models.write().expect("store lock");
        if map.remove(id).is_none() {
            return Err(ApiError::not_found(format!("unknown model `{id}`")));
        }
        if let Some(path) = self.path(id) {
            if path.exists() {
                std::fs::remove_file(&path)
                    .map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(())
    }

    fn path(&self, id: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{id}.{FILE_EXTENSION}")))
    }

    /// Writes the model file through a temporary sibling and a rename.
    pub fn persist(&self, id: &str, doc: &ModelDocument) -> Result<(), ApiError> {
        let Some(path) = self.path(id) else {
            return Ok(());
        };
        let tmp = path.with_extension(format!("{FILE_EXTENSION}.tmp"));
        let io = |e: std::io::Error| ApiError::internal(format!("{}: {e}", path.display()));
        std::fs::write(&tmp, export_xml(doc)).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }
}
