use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates a hard constraint.
    #[error("validation failed: {0}")]
    Validation(String),

    /// The requested quantity does not exist for these inputs.
    #[error("domain error: {0}")]
    Domain(String),

    /// A state became non-finite or left its admissible bounds during a run.
    #[error("divergence at t = {time}: {reason}")]
    Divergence { time: f64, reason: String },

    /// The flow has no isolated critical points to classify.
    #[error("degenerate flow: {0}")]
    DegenerateFlow(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("snapshot format: {0}")]
    Snapshot(#[from] crate::snapshot::SnapshotError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
