use std::io;
use std::path::PathBuf;

/// Exit status for input that failed validation.
pub const EXIT_INVALID: i32 = 3;
/// Exit status for filesystem and stream failures.
pub const EXIT_IO: i32 = 4;
/// Exit status for saturated calibration when it is treated as an error.
pub const EXIT_SATURATED: i32 = 5;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{context}: {source}")]
    Core {
        context: String,
        source: bernoulli_sets::Error,
    },
    #[error("calibration saturated: {required} covered labels required but only {n} records")]
    Saturated { required: usize, n: usize },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => EXIT_INVALID,
            CliError::Io { .. } => EXIT_IO,
            CliError::Core {
                source: bernoulli_sets::Error::Io(_),
                ..
            } => EXIT_IO,
            CliError::Core { .. } => EXIT_INVALID,
            CliError::Saturated { .. } => EXIT_SATURATED,
        }
    }

    pub(crate) fn core(context: impl Into<String>) -> impl FnOnce(bernoulli_sets::Error) -> CliError {
        let context = context.into();
        move |source| CliError::Core { context, source }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
