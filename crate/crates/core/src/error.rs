use thiserror::Error;

/// Broad failure classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
    NoSolution,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        found: String,
    },

    #[error("graph is not a DAG: cycle through node {0}")]
    NotADag(usize),

    #[error("degenerate SCM: (I - A) is not invertible")]
    DegenerateScm,

    #[error("invalid entanglement matrix: row {row} has norm {norm}")]
    InvalidEntanglement { row: usize, norm: f64 },

    #[error("rank-deficient input: eigenvalue {index} is {value:e} (largest {largest:e})")]
    RankDeficient {
        index: usize,
        value: f64,
        largest: f64,
    },

    #[error("degenerate residual: all stacked rows vanish")]
    DegenerateResidual,

    #[error("ill-posed triangular fit: shared unmixing rows are linearly dependent")]
    IllPosedFit,

    #[error("domain {domain}: M M^T is singular")]
    SingularDomain { domain: usize },

    #[error("degenerate MIC: row {row} of J for domain {domain} is zero")]
    DegenerateMic { domain: usize, row: usize },

    #[error("no permutation tuple produced a valid solution")]
    NoValidSolution,

    #[error("domain {domain}: node {node} has a zero diagonal weight")]
    NonInvertibleNode { domain: usize, node: usize },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid regex: {0}")]
    Regex(#[from] regex::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidInput(_)
            | Error::DimensionMismatch { .. }
            | Error::NotADag(_)
            | Error::InvalidEntanglement { .. }
            | Error::InsufficientData(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Regex(_) => ErrorClass::Input,
            Error::NoValidSolution => ErrorClass::NoSolution,
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn mismatch(
        context: &'static str,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
