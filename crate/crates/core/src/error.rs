use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: gave up after {attempts} consecutive rejections")]
    Sampling { what: &'static str, attempts: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trajectory {index} has {len} samples; at least 2 are required")]
    TooShort { index: usize, len: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("matrix is entirely zero")]
    ZeroMatrix,

    #[error("X·Xᵀ is singular to working precision (condition estimate {cond:.3e}); use the SVD route")]
    IllConditioned { cond: f64 },

    #[error("rank {rank} outside [1, {r_max}]")]
    RankOutOfRange { rank: usize, r_max: usize },

    #[error("aspect ratio β = {0} outside (0, 1]")]
    InvalidBeta(f64),

    #[error("rollout diverged at step {step} (|entry| > 1e12)")]
    Diverged { step: usize },

    #[error("no full-rank reference model for basis `{0}`")]
    MissingReference(String),

    #[error("config parse error in {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },

    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("acceptance invariants failed:\n  - {}", .0.join("\n  - "))]
    Invariant(Vec<String>),

    #[error("malformed input {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Process exit code: 1 invariant failure, 2 config error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::ConfigParse { .. } | Error::Validation(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            _ => 1,
        }
    }
}
