use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    Graph(String),

    #[error("graph not connected")]
    Disconnected,

    #[error("worker index {index} out of range for {n} workers")]
    WorkerOutOfRange { index: usize, n: usize },

    #[error("inconsistent active sets: {0}")]
    ActiveSets(String),

    #[error("iteration mismatch: expected {expected}, got {got}")]
    IterationMismatch { expected: usize, got: usize },

    #[error("chain has no positive entries (beta undefined)")]
    BetaUndefined,

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { path: String, expected: u32, found: u32 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid delay model: {0}")]
    DelayModel(String),

    #[error("invalid strategy: {0}")]
    Strategy(String),

    #[error("divergence at iteration {iteration}: worker {worker} has non-finite parameters")]
    Divergence { iteration: usize, worker: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Validation errors map to exit code 1, everything else to 2.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Graph(_)
                | Error::Disconnected
                | Error::Dataset(_)
                | Error::EmptyDataset
                | Error::BadMagic { .. }
                | Error::DelayModel(_)
                | Error::Strategy(_)
                | Error::Config(_)
                | Error::Json(_)
        )
    }
}
