use std::io;
use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate label range: raw_min {min} must be below raw_max {max}")]
    DegenerateRange { min: f64, max: f64 },

    #[error("need at least {need} {what}, got {got}")]
    TooFew {
        what: &'static str,
        need: usize,
        got: usize,
    },

    #[error("no support: no samples within the vicinity of label {label}")]
    NoSupport { label: f64 },

    #[error("soft weights underflow to zero around label {label}")]
    WeightUnderflow { label: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced in {0}")]
    NonFinite(String),

    #[error("stale tape: recorded against parameter version {recorded}, store is at {current}")]
    StaleTape { recorded: u64, current: u64 },

    #[error("no computable SFID windows ({skipped} skipped)")]
    NoWindows { skipped: usize },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("training diverged at iteration {iter}: {what}")]
    Diverged { iter: usize, what: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
