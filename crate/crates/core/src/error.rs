use std::path::PathBuf;

use thiserror::Error;

use crate::model::Subtask;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{path}: parse error at line {line}, column {column} (field `{field}`): {message}")]
    Parse {
        path: String,
        line: usize,
        column: usize,
        field: String,
        message: String,
    },
    #[error("validation error in case {case_id}: {reason}")]
    Validation { case_id: String, reason: String },
    #[error("case {case_id} has no gold annotations")]
    MissingGold { case_id: String },
    #[error("case {case_id}: bundle has no prediction for {subtask}")]
    MissingField { case_id: String, subtask: Subtask },
    #[error("duplicate case id {case_id}")]
    DuplicateCase { case_id: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("script underrun for stage `{stage}`")]
    ScriptUnderrun { stage: String },
    #[error("cache miss for key {key} (cache-only backend)")]
    CacheMiss { key: String },
    #[error("http status {status}: {detail}")]
    Status { status: u16, detail: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response body: {0}")]
    Decode(String),
    #[error("cache i/o error: {0}")]
    Cache(String),
    #[error("{} of {total} requests failed (indices {failed:?}): {first}", failed.len())]
    Batch {
        total: usize,
        failed: Vec<usize>,
        first: Box<GatewayError>,
    },
    #[error("backend error: {0}")]
    Backend(String),
}

impl GatewayError {
    /// Transport errors, 429 and 5xx are worth retrying.
    pub fn is_transient(&self) -> bool {
        match self {
            GatewayError::Transport(_) => true,
            GatewayError::Status { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RenderError {
    #[error("missing input field `{0}`")]
    MissingInput(String),
    #[error("invalid program `{program}`: {reason}")]
    InvalidProgram { program: String, reason: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no parseable lines in model output ({malformed} malformed): {raw:?}")]
    NothingParsed { raw: String, malformed: usize },
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("case {case_id}: {reason}")]
    Case { case_id: String, reason: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl PipelineError {
    pub(crate) fn case(case_id: &str, reason: impl Into<String>) -> Self {
        PipelineError::Case {
            case_id: case_id.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("no gold annotations for case {0}")]
    MissingGold(String),
    #[error("case {case_id}: {reason}")]
    Incomplete { case_id: String, reason: String },
}
