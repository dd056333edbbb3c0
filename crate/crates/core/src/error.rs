//! Error type shared by every module in the crate.

use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
///
/// The variants map onto the CLI exit-code taxonomy: `Shape` and
/// `Validation` are caller mistakes (exit 1), `Parse` and `Io` are file
/// problems (exit 2), `Numeric` is a linear-algebra failure (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Operands with incompatible dimensions.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Invalid argument or inconsistent input data.
    #[error("validation error: {0}")]
    Validation(String),

    /// Malformed container or sidecar file. `offset` is the byte position
    /// of the offending region in the file.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: u64, msg: String },

    /// A numerical routine failed to produce a usable result.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Underlying filesystem failure.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
