use thiserror::Error;

/// Errors produced by the labeling engine.
///
/// Every variant maps to a stable machine-readable code (see [`Error::code`])
/// which the HTTP layer and the CLI surface unchanged.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("already exists: {0}")]
    AlreadyExists(String),

    #[error("failed precondition: {0}")]
    FailedPrecondition(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("stale model: trained with feature set version {model}, current version is {current}")]
    StaleModel { model: u64, current: u64 },

    #[error("infeasible fixed constraints at nodes {nodes:?}")]
    InfeasibleConstraints { nodes: Vec<String> },

    #[error("duplicate object id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("taxonomy error at node {node:?}: {message}")]
    Taxonomy { node: String, message: String },

    #[error("training diverged at epoch {epoch}")]
    TrainingFailure { epoch: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NotFound(_) => "not_found",
            Error::AlreadyExists(_) => "already_exists",
            Error::FailedPrecondition(_) => "failed_precondition",
            Error::DegenerateLabels(_) => "degenerate_labels",
            Error::StaleModel { .. } => "stale_model",
            Error::InfeasibleConstraints { .. } => "infeasible_constraints",
            Error::DuplicateId(_) => "duplicate_id",
            Error::Parse { .. } => "parse_error",
            Error::Taxonomy { .. } => "taxonomy_error",
            Error::TrainingFailure { .. } => "training_failure",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Io(_) => "io_error",
            Error::Json(_) => "json_error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
