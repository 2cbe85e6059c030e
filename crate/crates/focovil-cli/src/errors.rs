//! Process-level error classes and their exit codes.
//!
//! Every command maps failures onto four classes so shell harnesses can
//! branch on the exit code alone: 2 for configuration problems, 3 for
//! file-level problems (unreadable, unwritable, or malformed artifacts),
//! 4 for a numeric abort (NaN or infinity mid-pipeline), and 5 for a
//! tensor-shape disagreement such as a checkpoint that does not fit the
//! data it is evaluated on.

use focovil_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("numeric abort: {0}")]
    NonFinite(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::NonFinite(_) => 4,
            CliError::Shape(_) => 5,
        }
    }

    /// Wraps a filesystem error with the path it concerns.
    pub fn io(path: &std::path::Path, err: impl std::fmt::Display) -> CliError {
        CliError::Io(format!("{}: {err}", path.display()))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> CliError {
        match e {
            CoreError::NonFiniteValue { .. } => CliError::NonFinite(e.to_string()),
            CoreError::ShapeMismatch { .. } => CliError::Shape(e.to_string()),
            // Data-content failures: the file parsed but its payload cannot
            // form a valid corpus or sequence.
            CoreError::ZeroExtentSequence
            | CoreError::SequenceTooShort { .. }
            | CoreError::DegenerateFrame { .. }
            | CoreError::MissingClassLabel { .. } => CliError::Io(e.to_string()),
            // Everything else reflects a config/data combination outside the
            // documented domain.
            _ => CliError::Config(e.to_string()),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
