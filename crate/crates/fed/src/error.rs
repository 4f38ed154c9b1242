use ccnet_core::CoreError;
use ccnet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federated config: {0}")]
    Config(String),
    #[error("shape: {0}")]
    Shape(String),
    #[error("exchange frame: {0}")]
    Frame(String),
    #[error("round {round}: every client failed ({reasons})")]
    AllClientsFailed { round: usize, reasons: String },
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FedError>;
