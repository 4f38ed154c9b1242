use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error("baseline has {baseline} parameters against a budget of {budget} (off by {ratio:.3}, limit 0.25)")]
    Budget { baseline: usize, budget: usize, ratio: f64 },
    #[error("empty test set")]
    EmptyTestSet,
    #[error("shape: {0}")]
    Shape(String),
    #[error(transparent)]
    Core(#[from] ccnet_core::CoreError),
    #[error(transparent)]
    Fed(#[from] ccnet_fed::FedError),
    #[error(transparent)]
    Data(#[from] ccnet_data::DataError),
    #[error(transparent)]
    Tensor(#[from] ccnet_tensor::TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;
