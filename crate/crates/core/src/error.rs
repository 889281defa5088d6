use thiserror::Error;

/// Errors raised anywhere in the modelling pipeline.
///
/// Each variant is one error class; [`Error::category`] gives the short tag
/// the command-line front end prints next to a failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: {what} needs at least {needed}, got {got}")]
    InsufficientData {
        what: String,
        needed: usize,
        got: usize,
    },

    #[error("optimiser did not converge after {iterations} iterations (last iterate {last:?})")]
    Convergence { iterations: usize, last: Vec<f64> },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("inconsistent labels: {0}")]
    InconsistentLabels(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialisation error: {0}")]
    Serialisation(String),
}

impl Error {
    pub fn category(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::InsufficientData { .. } => "insufficient-data",
            Error::Convergence { .. } => "convergence",
            Error::Conditioning(_) => "conditioning",
            Error::Input(_) => "input",
            Error::DegenerateLabels(_) => "degenerate-labels",
            Error::InconsistentLabels(_) => "inconsistent-labels",
            Error::Schema(_) => "schema",
            Error::Parse { .. } => "parse",
            Error::Io(_) => "io",
            Error::Serialisation(_) => "serialisation",
        }
    }

    pub(crate) fn insufficient(what: impl Into<String>, needed: usize, got: usize) -> Self {
        Error::InsufficientData {
            what: what.into(),
            needed,
            got,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        if err.is_io_error() {
            if let csv::ErrorKind::Io(e) = err.into_kind() {
                return Error::Io(e);
            }
            unreachable!("is_io_error implies an Io kind");
        }
        let line = err.position().map(|p| p.line() as usize).unwrap_or(0);
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Serialisation(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
