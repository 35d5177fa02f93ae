//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// A configuration-constraint violation, with the offending field path.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintViolation {
    /// Dotted path of the violated field, e.g. `kernel.delta`.
    pub field: String,
    /// Human-readable description of the constraint that failed.
    pub message: String,
}

impl std::fmt::Display for ConstraintViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("kernel domain error: {0}")]
    KernelDomain(String),

    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("sampler failed after {attempts} attempts: {reason}")]
    SamplerExhausted { attempts: usize, reason: String },

    #[error("geometry mismatch: {0}")]
    GeometryMismatch(String),

    #[error("query point {point:?} outside padded density box {lo:?}..{hi:?}")]
    OutsideSupport {
        point: Vec<f64>,
        lo: Vec<f64>,
        hi: Vec<f64>,
    },

    #[error(
        "non-finite state at step {step} (t = {t}), particle {particle}, |force| = {force_norm}"
    )]
    BlowUp {
        step: usize,
        t: f64,
        particle: usize,
        force_norm: f64,
    },

    #[error("CFL violation: {quantity} = {value} exceeds limit {limit}; try dt <= {suggested_dt}")]
    CflViolation {
        quantity: &'static str,
        value: f64,
        limit: f64,
        suggested_dt: f64,
    },

    #[error("config violates {} constraint(s): {}", .0.len(),
            .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    ConfigViolations(Vec<ConstraintViolation>),

    #[error("snapshot format error: {0}")]
    SnapshotFormat(String),

    #[error("unsupported snapshot version: found {found}, expected {expected}")]
    SnapshotVersion { found: u32, expected: u32 },

    #[error("snapshot CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    SnapshotCrc { stored: u32, computed: u32 },

    #[error("malformed CSV row at {path}:{line}: {message}")]
    CsvRow {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("metric input error: {0}")]
    MetricInput(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
