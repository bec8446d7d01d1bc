use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {message}")]
    MalformedRow { line: u64, message: String },

    #[error("record {id:?}: probability {p} outside [0, 1]")]
    ProbabilityOutOfRange { id: String, p: f64 },

    #[error("duplicate id {0:?}")]
    DuplicateId(String),

    #[error("input contains no records")]
    EmptyInput,

    #[error("undefined AUC: slice has {n_pos} positives and {n_neg} negatives")]
    UndefinedAuc { n_pos: usize, n_neg: usize },

    #[error("slice {0:?} is empty")]
    EmptySlice(String),

    #[error("{0} not reported (n/a)")]
    NotReported(String),

    #[error("identity {identity:?} has {n} records, below the floor of {min_n}")]
    BelowFloor { identity: String, n: usize, min_n: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("method {method:?} does not pair with {reference:?} at position {position} (id {id:?})")]
    PairingMismatch { method: String, reference: String, position: usize, id: String },

    #[error("unknown method {0:?}")]
    UnknownMethod(String),

    #[error("non-finite loss at step {step}")]
    Divergence { step: usize },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from user input rather than an internal fault.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Divergence { .. })
    }
}
