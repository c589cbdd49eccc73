use thiserror::Error;

/// Errors raised across the rating pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knot configuration: {0}")]
    Knots(String),

    #[error("invalid transform parameters: {0}")]
    Transform(String),

    #[error("invalid input data: {0}")]
    Data(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("covariance is not positive definite in rating period {period}")]
    NotPositiveDefinite { period: usize },

    #[error("objective is not finite at the starting point")]
    NonFiniteStart,

    #[error("inverse Yeo-Johnson undefined for value {value} with lambda {lambda}")]
    InverseDomain { value: f64, lambda: f64 },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("mode mismatch: model is {model}, data is {data}")]
    ModeMismatch { model: String, data: String },

    #[error("period {got} is not after the model's last period {last}")]
    OutOfOrder { got: usize, last: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
