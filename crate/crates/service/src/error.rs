//! The uniform error envelope `{code, message, detail}` shared by the CLI
//! (printed to stderr) and the HTTP API (response body).

use std::fmt;
use std::path::Path;

use hvd_core::annotate::AnnotateError;
use hvd_core::corpus::{CorpusError, DataFileError};
use hvd_core::eval::EvalError;
use hvd_core::features::EmbedError;
use hvd_core::models::{ArtifactError, ModelError};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

/// Coarse error class; decides the HTTP status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    BadInput,
    NotFound,
    Conflict,
    TooLarge,
    Upstream,
    Unavailable,
    Internal,
}

impl Kind {
    pub fn status(self) -> u16 {
        match self {
            Kind::BadInput => 400,
            Kind::NotFound => 404,
            Kind::Conflict => 409,
            Kind::TooLarge => 413,
            Kind::Upstream => 502,
            Kind::Unavailable => 503,
            Kind::Internal => 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceError {
    pub kind: Kind,
    pub code: String,
    pub message: String,
    pub detail: Map<String, Value>,
}

/// Wire form of [`ServiceError`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ServiceError {
    pub fn new(kind: Kind, code: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError {
            kind,
            code: code.into(),
            message: message.into(),
            detail: Map::new(),
        }
    }

    pub fn bad_input(code: &str, message: impl Into<String>) -> Self {
        ServiceError::new(Kind::BadInput, code, message)
    }

    pub fn not_found(code: &str, message: impl Into<String>) -> Self {
        ServiceError::new(Kind::NotFound, code, message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        ServiceError::new(Kind::Internal, "internal", message)
    }

    pub fn io(path: &Path, err: &std::io::Error) -> Self {
        let (kind, code) = if err.kind() == std::io::ErrorKind::NotFound {
            (Kind::NotFound, "file_not_found")
        } else {
            (Kind::Internal, "io_error")
        };
        ServiceError::new(kind, code, format!("{}: {err}", path.display())).with_detail("path", path.display().to_string())
    }

    pub fn with_detail(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.detail.insert(key.to_string(), value.into());
        self
    }

    pub fn status(&self) -> u16 {
        self.kind.status()
    }

    pub fn envelope(&self) -> Envelope {
        Envelope {
            code: self.code.clone(),
            message: self.message.clone(),
            detail: Value::Object(self.detail.clone()),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.envelope()).expect("envelope serializes")
    }
}

impl fmt::Display for ServiceError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for ServiceError {}

impl From<DataFileError> for ServiceError {
    fn from(e: DataFileError) -> Self {
        match &e {
            DataFileError::Io { path, source } => ServiceError::io(path, source),
            DataFileError::Invalid { path, line, .. } => ServiceError::bad_input("invalid_file", e.to_string())
                .with_detail("path", path.display().to_string())
                .with_detail("line", *line),
        }
    }
}

impl From<CorpusError> for ServiceError {
    fn from(e: CorpusError) -> Self {
        match &e {
            CorpusError::Io(_) => ServiceError::internal(e.to_string()),
            CorpusError::EmptyDictionary => ServiceError::bad_input("empty_dictionary", e.to_string()),
            CorpusError::PoolTooSmall { required, available } => ServiceError::bad_input("pool_too_small", e.to_string())
                .with_detail("required", *required)
                .with_detail("available", *available),
            CorpusError::Mislabeled { id, .. } => ServiceError::bad_input("mislabeled", e.to_string()).with_detail("review_id", id.clone()),
        }
    }
}

impl From<EmbedError> for ServiceError {
    fn from(e: EmbedError) -> Self {
        let message = e.to_string();
        match e {
            EmbedError::EmptyToken => ServiceError::bad_input("empty_token", message),
            EmbedError::Transport { url, attempts, .. } => ServiceError::new(Kind::Unavailable, "embedding_unreachable", message)
                .with_detail("url", url)
                .with_detail("attempts", attempts),
            EmbedError::Protocol(_) => ServiceError::new(Kind::Upstream, "embedding_protocol", message),
            EmbedError::Partial { completed, total, .. } => ServiceError::new(Kind::Unavailable, "embedding_partial", message)
                .with_detail("completed", completed)
                .with_detail("total", total),
            EmbedError::Cache(_) => ServiceError::bad_input("embedding_cache", message),
        }
    }
}

impl From<ModelError> for ServiceError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Diverged { epoch, loss, hyperparameters } => ServiceError::bad_input("diverged", message)
                .with_detail("epoch", epoch)
                .with_detail("loss", if loss.is_finite() { json!(loss) } else { Value::Null })
                .with_detail("hyperparameters", hyperparameters),
            ModelError::WidthMismatch { expected, found } => ServiceError::bad_input("width_mismatch", message)
                .with_detail("expected", expected)
                .with_detail("found", found),
            ModelError::InvalidHyperparameter { key, .. } => ServiceError::bad_input("invalid_hyperparameter", message).with_detail("key", key),
            _ => ServiceError::bad_input("invalid_training_data", message),
        }
    }
}

impl From<ArtifactError> for ServiceError {
    fn from(e: ArtifactError) -> Self {
        match &e {
            ArtifactError::Io(io) if io.kind() == std::io::ErrorKind::NotFound => ServiceError::not_found("model_not_found", e.to_string()),
            ArtifactError::Io(_) => ServiceError::internal(e.to_string()),
            ArtifactError::Truncated { offset, .. } | ArtifactError::TrailingBytes { offset } => {
                ServiceError::bad_input("invalid_artifact", e.to_string()).with_detail("offset", *offset)
            }
            _ => ServiceError::bad_input("invalid_artifact", e.to_string()),
        }
    }
}

impl From<EvalError> for ServiceError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Fold { fold, source } => ServiceError::from(source).with_detail("fold", fold),
            other => ServiceError::bad_input("evaluation", other.to_string()),
        }
    }
}

impl From<AnnotateError> for ServiceError {
    fn from(e: AnnotateError) -> Self {
        let message = e.to_string();
        let stage = e.current_stage();
        let err = match &e {
            AnnotateError::UnknownReview(id) => ServiceError::not_found("unknown_review", message).with_detail("review_id", id.clone()),
            AnnotateError::Duplicate(id) => ServiceError::new(Kind::Conflict, "duplicate_review", message).with_detail("review_id", id.clone()),
            AnnotateError::Stage { review_id, action, .. } => ServiceError::new(Kind::Conflict, "stage_conflict", message)
                .with_detail("review_id", review_id.clone())
                .with_detail("action", *action),
            AnnotateError::SelfValidation { review_id, annotator } => ServiceError::new(Kind::Conflict, "self_validation", message)
                .with_detail("review_id", review_id.clone())
                .with_detail("annotator", annotator.clone()),
            AnnotateError::NoteRequired => ServiceError::bad_input("note_required", message),
            AnnotateError::EmptyAnnotator => ServiceError::bad_input("annotator_required", message),
            AnnotateError::MissingScorer => ServiceError::bad_input("model_required", message),
            AnnotateError::Inconsistent(_) | AnnotateError::Log { .. } => ServiceError::internal(message),
        };
        match stage {
            Some(s) => err.with_detail("stage", s.code()),
            None => err,
        }
    }
}

impl From<std::io::Error> for ServiceError {
    fn from(e: std::io::Error) -> Self {
        ServiceError::internal(e.to_string())
    }
}
