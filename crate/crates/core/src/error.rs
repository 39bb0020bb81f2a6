use thiserror::Error;

/// Errors reported by tree construction, compression and the operator gallery.
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("no basis provided for box {0}")]
    MissingBasis(usize),

    #[error("representation is incomplete for level {requested} (deepest available level is {available})")]
    IncompleteRep { requested: usize, available: usize },

    #[error("fallback test patterns need a fully populated uniform grid tree")]
    NonUniformTree,

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("operator failure: {0}")]
    Operator(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable snake_case name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DegenerateGeometry(_) => "degenerate_geometry",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InvalidConfig(_) => "invalid_config",
            Error::MissingBasis(_) => "missing_basis",
            Error::IncompleteRep { .. } => "incomplete_rep",
            Error::NonUniformTree => "non_uniform_tree",
            Error::Factorization(_) => "factorization",
            Error::Operator(_) => "operator",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
        }
    }

    pub(crate) fn dims(expected: impl ToString, got: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
