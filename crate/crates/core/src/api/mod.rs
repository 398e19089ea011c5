//! HTTP service: model CRUD and XML exchange, scoped capture tokens,
//! estimates, evidence, posteriors, causal queries and outbound
//! notifications. All bodies are JSON except the XML exchange endpoints,
//! which carry the model document verbatim.

pub mod config;
pub mod error;
pub mod notify;
pub mod routes;
pub mod store;
pub mod tokens;

use std::sync::Arc;

use axum::routing::{delete, get, post, put};
use axum::Router;

pub use config::{ConfigError, ServerConfig};
pub use error::ApiError;
use notify::Dispatcher;
use store::ModelStore;
use tokens::TokenStore;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ModelStore>,
    pub tokens: Arc<TokenStore>,
    pub config: Arc<ServerConfig>,
    pub dispatcher: Dispatcher,
}

impl AppState {
    /// Opens the persistence directory when configured.
    pub fn new(config: ServerConfig) -> Result<Self, String> {
        let store = match &config.data_dir {
            Some(dir) => ModelStore::open(dir)?,
            None => ModelStore::in_memory(),
        };
        Ok(Self {
            store: Arc::new(store),
            tokens: Arc::new(TokenStore::default()),
            dispatcher: Dispatcher::new(config.notify_attempts, config.notify_backoff_ms),
            config: Arc::new(config),
        })
    }
}

pub fn router(state: AppState) -> Router {
    use routes::*;
    Router::new()
        .route("/health", get(health))
        .route("/models", get(list_models).post(create_model))
        .route("/models/import", post(import_model))
        .route(
            "/models/{id}",
            get(get_model).put(replace_model).delete(delete_model),
        )
        .route("/models/{id}/export", get(export_model))
        .route("/models/{id}/validate", get(validate))
        .route("/models/{id}/nodes", post(add_node))
        .route(
            "/models/{id}/nodes/{nid}",
            axum::routing::patch(patch_node).delete(delete_node),
        )
        .route("/models/{id}/nodes/{nid}/status", get(node_status))
        .route("/models/{id}/edges", post(add_edge).delete(delete_edge))
        .route("/models/{id}/cpts/{nid}", put(put_cpt))
        .route("/models/{id}/ui-metadata", put(put_ui_metadata))
        .route("/models/{id}/questions", get(questions))
        .route("/models/{id}/capture-config", put(put_capture_config))
        .route("/models/{id}/overrides/{qid}", put(put_override))
        .route("/models/{id}/tokens", post(issue_token))
        .route("/models/{id}/answers", get(list_answers))
        .route("/models/{id}/estimates", get(estimates))
        .route("/models/{id}/materialize", post(materialize))
        .route(
            "/models/{id}/evidence",
            get(get_evidence)
                .put(put_evidence)
                .post(post_evidence)
                .delete(clear_evidence),
        )
        .route("/models/{id}/evidence/{nid}", delete(clear_node_evidence))
        .route("/models/{id}/posterior", get(get_posterior))
        .route("/models/{id}/notifications", get(notifications))
        .route("/models/{id}/causal/dsep", post(dsep))
        .route("/models/{id}/causal/trails", post(trails))
        .route("/models/{id}/causal/backdoor", post(backdoor))
        .route("/models/{id}/causal/frontdoor", post(frontdoor))
        .route("/models/{id}/causal/independencies", get(independencies))
        .route("/models/{id}/interventions/query", post(intervention_query))
        .route("/models/{id}/interventions/rank", get(rank))
        .route(
            "/capture/{token}",
            get(capture_questions).post(capture_answer),
        )
        .route("/capture/{token}/answers", post(capture_answer))
        .with_state(state)
}

/// Binds and serves until the process is stopped.
pub async fn serve(config: ServerConfig) -> Result<(), String> {
    let bind = config.bind;
    let state = AppState::new(config)?;
    let listener = tokio::net::TcpListener::bind(bind)
        .await
        .map_err(|e| format!("bind {bind}: {e}"))?;
    tracing::info!(%bind, "listening");
    axum::serve(listener, router(state))
        .await
        .map_err(|e| e.to_string())
}
