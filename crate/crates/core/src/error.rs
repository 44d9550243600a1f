use thiserror::Error;

pub type Result<T> = std::result::Result<T, FhError>;

#[derive(Error, Debug)]
pub enum FhError {
    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("optimizer failed to converge: {context} (bracket [{lo}, {hi}], last iterate {last})")]
    NonConvergence {
        context: String,
        lo: f64,
        hi: f64,
        last: f64,
    },

    #[error("numeric integration failed on [{lo}, {hi}]: {reason}")]
    Integration { lo: f64, hi: f64, reason: String },

    #[error("variance estimate truncated at zero: {0}")]
    TruncatedAtZero(String),

    #[error("posterior grid error: {0}")]
    Grid(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
