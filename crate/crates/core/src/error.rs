//! Crate-wide error type.

use thiserror::Error;

/// A single schema-conformance problem found by [`crate::schema::validate_graph`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Where the problem is, e.g. `node_sets.users.age` or `edge_sets.purchased`.
    pub location: String,
    /// What is wrong.
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    DimMismatch {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{context}: index {index} out of range for size {size}")]
    IndexOutOfRange {
        context: String,
        index: i64,
        size: usize,
    },

    #[error("invalid argument to {op}: {message}")]
    InvalidArgument { op: String, message: String },

    #[error("schema parse error: {0}")]
    SchemaParse(String),

    #[error("invalid schema: {0}")]
    SchemaInvalid(String),

    #[error("graph construction: {0}")]
    GraphBuild(String),

    #[error("graph does not conform to schema ({} violations): {}", .0.len(), format_violations(.0))]
    SchemaViolations(Vec<Violation>),

    #[error("corrupt record{}: {message}", .offset.map(|o| format!(" at byte {o}")).unwrap_or_default())]
    CorruptRecord {
        message: String,
        offset: Option<u64>,
    },

    #[error("schema fingerprint mismatch: record has {found:#018x}, expected {expected:#018x}")]
    FingerprintMismatch { found: u64, expected: u64 },

    #[error("graph does not fit padding targets: {0}")]
    PaddingFit(String),

    #[error("invalid sampling spec: {0}")]
    SamplingSpec(String),

    #[error("graph store: {0}")]
    GraphStore(String),

    #[error("training aborted at step {step}: {message}")]
    Training { step: usize, message: String },

    #[error("model artifact: {0}")]
    Artifact(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
