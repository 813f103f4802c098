use thiserror::Error;

/// Errors raised across the fitting and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file; `row` is 1-based and counts the header as row 1.
    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The optimizer could not settle; carries the best point seen.
    #[error("fit failed: {message} (best = {best:?}, gradient norm = {grad_norm:.3e})")]
    Fit {
        message: String,
        best: Vec<f64>,
        grad_norm: f64,
    },

    #[error("value {value} lies outside the support: {message}")]
    Domain { value: f64, message: String },

    #[error("peak window of order {k} around index {i_star} runs past the available rows")]
    CensoredPeak { k: usize, i_star: usize },

    #[error("reparameterization undefined: dependence coefficient at (lag {lag}, column {column}) is zero")]
    ReparamUndefined { lag: usize, column: usize },

    #[error("simulation gave up after {rejections} rejections (rejection rate {rate:.3})")]
    Simulation { rejections: usize, rate: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }

    /// Short machine-readable tag, used by the CLI error report.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Invalid(_) => "invalid",
            Error::InsufficientData(_) => "insufficient_data",
            Error::Fit { .. } => "fit",
            Error::Domain { .. } => "domain",
            Error::CensoredPeak { .. } => "censored_peak",
            Error::ReparamUndefined { .. } => "reparam_undefined",
            Error::Simulation { .. } => "simulation",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
