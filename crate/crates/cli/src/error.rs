//! Error type shared by all subcommands, with the process exit-code mapping:
//! 0 success, 2 configuration/usage error, 3 runtime (numerical or IO)
//! failure, 4 partial sweep failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, bad usage, unknown names: exit 2. These are always
    /// raised before any compute starts.
    #[error("config error: {0}")]
    Config(String),
    /// Numerical or IO failure during a run: exit 3.
    #[error("runtime error: {0}")]
    Runtime(String),
    /// Some sweep points failed, others completed: exit 4. The payload lists
    /// one line per failed point.
    #[error("partial sweep failure:\n{}", .0.join("\n"))]
    PartialSweep(Vec<String>),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn runtime(err: impl std::fmt::Display) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(err: std::io::Error) -> Self {
        CliError::Runtime(err.to_string())
    }
}

pub fn exit_code(err: &CliError) -> i32 {
    match err {
        CliError::Config(_) => 2,
        CliError::Runtime(_) => 3,
        CliError::PartialSweep(_) => 4,
    }
}
