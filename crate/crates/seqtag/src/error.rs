use thiserror::Error;

/// Library-wide error type. Contract violations (shape mismatches, bad tag
/// indices) panic instead; these variants cover recoverable conditions that
/// depend on user input or runtime state.
#[derive(Debug, Error)]
pub enum Error {
    /// Bad configuration: invalid hyperparameters, unknown schemes,
    /// inconsistent flag combinations.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data: parse failures, label-scheme violations,
    /// vocabulary mismatches. Messages carry line numbers where available.
    #[error("data error: {0}")]
    Data(String),

    /// Numerical failure during training (NaN/Inf loss or gradient).
    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 1 usage/config, 2 data/parse, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) | Error::Io(_) => 2,
            Error::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
