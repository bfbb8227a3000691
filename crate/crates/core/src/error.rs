use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no free space: {0} rejection samples all landed in obstacles")]
    NoFreeSpace(usize),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("trajectory {index} fails replay at step {step}: deviation {deviation:e}")]
    Replay { index: usize, step: usize, deviation: f64 },
    #[error(transparent)]
    Net(#[from] netcore::NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for problems with user-supplied configuration or inputs, as
    /// opposed to failures while running.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
