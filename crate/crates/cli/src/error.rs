use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Failures surfaced to the shell, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
    /// The admissibility search found no witness.
    #[error("{0}")]
    NotAdmissible(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) => 2,
            CliError::NotAdmissible(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(single_line(msg.into()))
    }

    /// Wraps a library error raised while running `stage`.
    pub fn from_core(stage: &str, e: robustfolio::Error) -> Self {
        let msg = single_line(format!("{stage}: {e}"));
        match e {
            robustfolio::Error::InvalidParameter(_) => CliError::Config(msg),
            _ => CliError::Numerical(msg),
        }
    }

    pub fn io(what: &str, e: impl std::fmt::Display) -> Self {
        CliError::Config(single_line(format!("{what}: {e}")))
    }
}

fn single_line(s: String) -> String {
    if s.contains('\n') {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        s
    }
}
