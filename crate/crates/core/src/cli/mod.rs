//! Command-line surface, corpus and trace file formats, state dumps, and
//! the statistical validation harness.

pub mod bow;
mod commands;
pub mod state_dump;
pub mod trace;
pub mod validate;

pub use bow::{parse_uci_bow, write_uci_bow};
pub use commands::run;
pub use state_dump::{read_state, SavedState};
pub use trace::{read_trace, write_trace};

/// Errors surfaced by the command-line layer.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{0}")]
    Usage(String),
    #[error("{failed} of {total} validation checks failed")]
    ValidationFailed { failed: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Fit(#[from] crate::vi::FitError),
    #[error(transparent)]
    Chain(#[from] crate::mcmc::ChainError),
}

impl CliError {
    /// Exit status for the binary: 2 for usage and input-parse problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
