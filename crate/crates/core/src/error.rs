use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("input contains no interactions")]
    EmptyInput,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("cannot relocate {requested} entries: {reason}")]
    CannotRelocate { requested: usize, reason: String },

    #[error("non-finite value in numeric input: {0}")]
    NumericInput(String),

    #[error("RMSE_SC undefined: baseline SVD error is zero (raw RMSE = {rmse})")]
    RatioUndefined { rmse: f64 },

    #[error("infeasible selection rate: {0}")]
    InfeasibleRate(String),

    #[error("subsampling produced an empty dataset: {0}")]
    EmptyResult(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("undefined baseline: metric at full data is {0}, must be positive")]
    UndefinedBaseline(f64),

    #[error("malformed cache file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Argument,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidArgument(_) => ErrorClass::Argument,
            Error::NumericInput(_)
            | Error::RatioUndefined { .. }
            | Error::DegenerateInput(_)
            | Error::UndefinedBaseline(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err.position().map(|p| p.line()).unwrap_or(0);
        match err.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            kind => Error::Parse { line, message: format!("{kind:?}") },
        }
    }
}
