use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde_json::{json, Value};

use crate::bowtie::BowtieError;
use crate::capture::CaptureError;
use crate::causal::CausalError;
use crate::cpt::CptError;
use crate::graph::GraphError;
use crate::inference::InferenceError;
use crate::model_io::XmlError;

/// Error body: `{"error": code, "message": text, "details": ...}`.
#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not-found", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid", message)
    }

    pub fn unauthorized(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNAUTHORIZED, "unauthorized", message)
    }

    pub fn forbidden(message: impl Into<String>) -> Self {
        Self::new(StatusCode::FORBIDDEN, "out-of-scope", message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.code, "message": self.message });
        if let Some(d) = self.details {
            body["details"] = d;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<GraphError> for ApiError {
    fn from(e: GraphError) -> Self {
        match e {
            GraphError::UnknownNode(_) => ApiError::not_found(e.to_string()),
            GraphError::Cycle { ref path } => {
                let path = json!(path);
                ApiError::invalid(e.to_string()).with_details(json!({ "cycle": path }))
            }
            _ => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<CptError> for ApiError {
    fn from(e: CptError) -> Self {
        match e {
            CptError::Graph(g) => g.into(),
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl From<CaptureError> for ApiError {
    fn from(e: CaptureError) -> Self {
        match e {
            CaptureError::Graph(g) => g.into(),
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl From<InferenceError> for ApiError {
    fn from(e: InferenceError) -> Self {
        match e {
            InferenceError::Graph(g) => g.into(),
            InferenceError::Cpt(c) => c.into(),
            InferenceError::Contradiction { ref evidence } => {
                let ev = json!({ "evidence": evidence });
                ApiError::conflict(e.to_string()).with_details(ev)
            }
            InferenceError::IncompleteCpt { ref node, ref rows } => {
                let d = json!({ "node": node, "rows": rows });
                ApiError::invalid(e.to_string()).with_details(d)
            }
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl From<CausalError> for ApiError {
    fn from(e: CausalError) -> Self {
        match e {
            CausalError::Graph(g) => g.into(),
            CausalError::Inference(i) => i.into(),
            CausalError::Cpt(c) => c.into(),
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl From<XmlError> for ApiError {
    fn from(e: XmlError) -> Self {
        let line = e.line();
        ApiError::invalid(e.to_string()).with_details(json!({ "line": line }))
    }
}

impl From<BowtieError> for ApiError {
    fn from(e: BowtieError) -> Self {
        match e {
            BowtieError::Graph(g) => g.into(),
            BowtieError::Cpt(c) => c.into(),
            other => ApiError::invalid(other.to_string()),
        }
    }
}
