use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index} out of range (valid: 0..={max})")]
    IndexOutOfRange { index: usize, max: usize },

    /// A link whose spectral efficiency underflows to zero can never finish a transfer.
    #[error("infeasible link {transmitter} -> {receiver}: zero achievable rate")]
    Infeasible { transmitter: usize, receiver: usize },

    #[error("incomplete aggregation: chunk {chunk} is missing contributions from devices {missing:?}")]
    IncompleteAggregation { chunk: usize, missing: Vec<usize> },

    #[error("aggregation error {error:e} exceeds tolerance {tolerance:e}")]
    ToleranceExceeded { error: f64, tolerance: f64 },

    #[error("scenario (value #{value_index}, replication {replication}): {source}")]
    Scenario {
        value_index: usize,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Innermost error, looking through scenario wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Scenario { source, .. } => source.root(),
            other => other,
        }
    }
}
