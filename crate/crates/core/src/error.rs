use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("integration failure at {}: non-finite value in component {component}", describe_time(*.time, *.step))]
    Integration {
        time: Option<f64>,
        step: Option<usize>,
        component: usize,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid solver grid: {0}")]
    InvalidGrid(String),

    #[error("configuration error: {0}")]
    Config(String),

    /// Observation covariance could not be factorized.
    #[error("observation model error: {0}")]
    Model(String),

    #[error("filter collapse at observation time t = {time} (node {node}): all particle weights are zero; consider widening the prior")]
    FilterCollapse { node: usize, time: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("search failure: every candidate has log-likelihood -inf")]
    SearchFailure,

    #[error("empty particle cloud")]
    EmptyCloud,

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

fn describe_time(time: Option<f64>, step: Option<usize>) -> String {
    match (time, step) {
        (Some(t), Some(s)) => format!("t = {t} (step {s})"),
        (Some(t), None) => format!("t = {t}"),
        (None, Some(s)) => format!("step {s}"),
        (None, None) => "unknown time".to_string(),
    }
}

impl Error {
    /// Attach the time and fine-step index to an integration failure.
    pub fn at(self, time: f64, step: usize) -> Self {
        match self {
            Error::Integration { component, .. } => Error::Integration {
                time: Some(time),
                step: Some(step),
                component,
            },
            other => other,
        }
    }

    /// Whether the error came from the numerics (collapse, integration, factorization).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Integration { .. } | Error::FilterCollapse { .. } | Error::Model(_)
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
