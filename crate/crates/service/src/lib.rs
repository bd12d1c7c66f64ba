//! HTTP API over a flat artifact store: registered cohorts, trained models,
//! latent analyses, the procedure registry and interactive planning sessions.

pub mod api;
pub mod config;
pub mod glb;
pub mod store;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;

pub use api::{router, serve, AppState};
pub use config::ServiceConfig;
pub use store::{
    AnalysisArtifact, AnalysisEntry, AnalysisSubject, ArtifactHash, DatasetEntry, Index, ModelEntry, ModelMetrics,
    SessionEntry, Store,
};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("mesh topology does not match the model")]
    TopologyMismatch,
    #[error("{0}")]
    Unprocessable(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("invalid artifact: {0}")]
    Invalid(String),
    #[error("artifact {0} is missing from the store")]
    MissingArtifact(String),
    #[error("artifact {0} does not match its hash")]
    CorruptArtifact(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Internal(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

impl ServiceError {
    pub fn status(&self) -> StatusCode {
        match self {
            Self::NotFound(_) => StatusCode::NOT_FOUND,
            Self::TopologyMismatch => StatusCode::CONFLICT,
            Self::Unprocessable(_) => StatusCode::UNPROCESSABLE_ENTITY,
            Self::BadRequest(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.to_string() });
        (self.status(), Json(body)).into_response()
    }
}
