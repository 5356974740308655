//! Crate-wide error type.
//!
//! One enum covers every failure mode so call sites compose with `?` across
//! module boundaries. The CLI maps variants onto exit codes: configuration
//! problems exit 2, artifact integrity problems exit 3, everything else
//! (stage failures) exits 4.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched tensor or vector dimensions.
    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    /// Argument outside its mathematical domain (p < 1, sigma < 0, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Input that makes the requested statistic undefined (constant series,
    /// single-label calibration set, empty selection, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// NaN or infinity where a finite value is required.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Requested an operation the scheme cannot support (e.g. gradients of a
    /// discrete patch anchor).
    #[error("capability error: {0}")]
    Capability(String),

    /// Bad on-disk structure: wrong magic, malformed header, unknown dtype.
    #[error("format error in {what}: {detail}")]
    Format { what: String, detail: String },

    /// Artifact written by an unsupported format version.
    #[error("version mismatch in {what}: found {found}, supported {supported}")]
    VersionMismatch {
        what: String,
        found: u32,
        supported: u32,
    },

    /// Payload shorter (or longer) than its header declares.
    #[error("truncated blob {what}: expected {expected} bytes, got {actual}")]
    Truncated {
        what: String,
        expected: usize,
        actual: usize,
    },

    /// Stored checksum does not match recomputed bytes.
    #[error("checksum mismatch for {0}")]
    ChecksumMismatch(String),

    /// Invalid run configuration (CLI flags or TOML contents).
    #[error("config error: {0}")]
    Config(String),

    /// Threshold calibration cannot proceed (e.g. validation labels all equal).
    #[error("calibration error: {0}")]
    Calibration(String),

    /// Zoo members below the clean-accuracy floor; lists offenders.
    #[error("zoo quality error: {0}")]
    ZooQuality(String),

    /// Cardinality window cannot be satisfied by the candidate pool.
    #[error("infeasible selection: {0}")]
    Infeasible(String),

    /// A pipeline stage failed; message names the stage.
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),
}

impl Error {
    /// Wraps an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &str) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for artifact integrity failures (CLI exit code 3).
    pub fn is_integrity(&self) -> bool {
        match self {
            Error::Format { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::ChecksumMismatch(_) => true,
            Error::Stage { source, .. } => source.is_integrity(),
            Error::Io { .. } => false,
            _ => false,
        }
    }

    /// True for configuration failures (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) | Error::Toml(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}
