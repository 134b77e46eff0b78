use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter violates a documented precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// Matrix or spectrogram dimensions do not match.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A matrix failed a structural invariant (Hermiticity, trace, PSD).
    #[error("invalid matrix: {0}")]
    Matrix(String),

    /// Dense assembly requested beyond the size guard.
    #[error("size {n} exceeds the dense guard {guard}; pass allow_large to override")]
    SizeGuard { n: usize, guard: usize },

    /// Estimated allocation exceeds the configured memory cap.
    #[error("experiment needs about {required} bytes but the cap is {cap}; raise the cap to proceed")]
    MemoryCap { required: u64, cap: u64 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A data file did not parse.
    #[error("parse error in {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
