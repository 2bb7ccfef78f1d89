use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration: unreadable file, unknown field, out-of-range value.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] irand_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit statuses.
pub mod exit {
    pub const PASS: i32 = 0;
    pub const FAIL: i32 = 1;
    pub const CONFIG: i32 = 2;
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            _ => exit::FAIL,
        }
    }
}
