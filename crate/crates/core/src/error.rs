use std::io;

/// Errors surfaced by the simulation, learning and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or configuration value is outside its documented range.
    #[error("validation error: {0}")]
    Validation(String),
    /// Two arrays that must agree in shape do not.
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    /// A caller-side precondition was violated (unsorted stream, waypoint behind, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// World generation could not place every tree.
    #[error("world generation failed: {0}")]
    Generation(String),
    /// Training produced a non-finite loss.
    #[error("training diverged: {0}")]
    Divergence(String),
    /// A binary or text file did not match its expected layout.
    #[error("malformed file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        if e.is_io() {
            Error::Io(e.into())
        } else {
            Error::Format(e.to_string())
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
