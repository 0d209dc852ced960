use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: String, right: String },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("shape contradiction at node `{node}`: {detail}")]
    ShapeContradiction { node: String, detail: String },

    #[error("unknown op_kind `{0}`")]
    UnknownOp(String),

    #[error("unsupported topology at node `{node}`: {detail}")]
    UnsupportedTopology { node: String, detail: String },

    #[error("unresolved weight reference `{tensor}` (node `{node}`, role `{role}`)")]
    UnresolvedWeightRef {
        node: String,
        role: String,
        tensor: String,
    },

    #[error("missing weights for node `{node}`: tensor `{tensor}`")]
    MissingWeights { node: String, tensor: String },

    #[error("bad magic: expected \"PFPW\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("truncated weight blob: {0}")]
    Truncated(String),

    #[error("trailing bytes in weight blob: {0} unread")]
    TrailingBytes(usize),

    #[error("unsupported blob: {0}")]
    UnsupportedBlob(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("active method `{0}` requires input samples; passive methods are data-free")]
    ActiveMethodNeedsData(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error(
        "flatten_order is required to prune channels feeding dense node `{0}` through a flatten"
    )]
    MissingFlattenOrder(String),

    #[error("baseline mismatch: {0}")]
    BaselineMismatch(String),

    #[error("model hash mismatch: plan was built for {expected}, model is {actual}")]
    HashMismatch { expected: String, actual: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable machine-readable code used in CLI error documents.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidTensor(_) => "invalid_tensor",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidGraph(_) => "invalid_graph",
            Error::ShapeContradiction { .. } => "shape_contradiction",
            Error::UnknownOp(_) => "unknown_op",
            Error::UnsupportedTopology { .. } => "unsupported_topology",
            Error::UnresolvedWeightRef { .. } => "unresolved_weight_reference",
            Error::MissingWeights { .. } => "missing_weights",
            Error::BadMagic(_) => "bad_magic",
            Error::Truncated(_) => "truncated_payload",
            Error::TrailingBytes(_) => "trailing_bytes",
            Error::UnsupportedBlob(_) => "unsupported_blob",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::ActiveMethodNeedsData(_) => "active_method_needs_data",
            Error::InvalidPlan(_) => "invalid_plan",
            Error::MissingFlattenOrder(_) => "missing_flatten_order",
            Error::BaselineMismatch(_) => "baseline_mismatch",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
