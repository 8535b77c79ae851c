use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: usize, actual: usize },

    #[error("goal {goal:?} is unreachable in maze {maze_id}")]
    Unreachable { maze_id: usize, goal: (usize, usize) },

    #[error("teacher for task {task_id} did not reach optimality within {episodes} episodes")]
    TeacherNotOptimal { task_id: usize, episodes: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("missing artifact: {0}")]
    MissingArtifact(String),

    #[error("unsupported artifact version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },

    #[error("unsupported F-table lookup: p={p}, df=({df1}, {df2})")]
    FTable { p: f64, df1: usize, df2: usize },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
