use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad or corrupt input data (parse, QC, checksum).
    Data,
    /// Failure while computing (non-finite loss, I/O while writing, ...).
    Runtime,
}

#[derive(Debug, Error)]
pub enum Error {
    // recording ingest
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("count mismatch: {what} ({expected} expected, {found} found)")]
    CountMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("timestamps not strictly increasing at row {row} ({prev} then {next})")]
    NonMonotonicTimestamps { row: usize, prev: f64, next: f64 },
    #[error("quaternion at row {row} has norm {norm}, outside renormalization tolerance")]
    MalformedQuaternion { row: usize, norm: f64 },
    #[error("malformed meta: {0}")]
    MalformedMeta(String),
    #[error("malformed csv {}: {msg}", path.display())]
    MalformedCsv { path: PathBuf, msg: String },
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("corrupt image {}: {msg}", path.display())]
    CorruptImage { path: PathBuf, msg: String },

    // trajectory processing
    #[error("record rate {record_hz} Hz is not an integer multiple of control rate {control_hz} Hz")]
    NonIntegerStride { record_hz: f64, control_hz: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("no aperture estimator available (need an annotation or a model)")]
    NoEstimatorAvailable,
    #[error("too few samples: {found} (need at least {min})")]
    TooFewSamples { found: usize, min: usize },
    #[error("too few actions: {found} (need at least {min})")]
    TooFewActions { found: usize, min: usize },

    // dataset store
    #[error("checksum mismatch in {}: manifest {expected:016x}, file {actual:016x}", path.display())]
    ChecksumMismatch {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("unsupported format version {0}")]
    VersionUnsupported(u32),
    #[error("missing shard {}", .0.display())]
    MissingShard(PathBuf),
    #[error("corrupt dataset: {0}")]
    CorruptDataset(String),
    #[error("no input records")]
    EmptyInput,

    // policy
    #[error("external features must have {expected} values, got {found}")]
    BadExternalFeatureDim { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("non-finite action at step {step}: {detail}")]
    NonFiniteAction { step: usize, detail: String },
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("dataset handle is closed")]
    HandleClosed,

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFiniteLoss { .. }
            | Error::NonFiniteAction { .. }
            | Error::InvalidConfig(_)
            | Error::HandleClosed
            | Error::Io { .. } => ErrorClass::Runtime,
            _ => ErrorClass::Data,
        }
    }
}

/// Attach a path to an `io::Error`.
pub(crate) trait IoContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| Error::io(path, e))
    }
}
