use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing input: {0}")]
    MissingInput(PathBuf),

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate class id {0}")]
    DuplicateClassId(u16),

    #[error("taxonomy must declare at least one thing and one stuff class")]
    IncompleteTaxonomy,

    #[error("unknown class id {0}")]
    UnknownClass(u16),

    #[error("pose is not a rigid transform (orthonormality error {0:e})")]
    NonRigidPose(f64),

    #[error("truncated record in {path}: {len} bytes is not a multiple of {record}")]
    TruncatedRecord {
        path: PathBuf,
        len: u64,
        record: usize,
    },

    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch {
        what: &'static str,
        left: usize,
        right: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("position ({x:.3}, {y:.3}) outside the grid")]
    OutOfRange { x: f64, y: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing parameter `{param}` for strategy `{strategy}`")]
    MissingParameter {
        strategy: &'static str,
        param: &'static str,
    },

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("forward cache is stale or missing")]
    StaleCache,

    #[error("instance id space exhausted (more than {0} ids)")]
    IdOverflow(u32),

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingInput(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    /// True when the error means the input data itself breaks a domain
    /// invariant (as opposed to being absent or unreadable).
    pub fn is_data_violation(&self) -> bool {
        matches!(
            self,
            Error::DuplicateClassId(_)
                | Error::IncompleteTaxonomy
                | Error::UnknownClass(_)
                | Error::NonRigidPose(_)
                | Error::TruncatedRecord { .. }
                | Error::LengthMismatch { .. }
                | Error::Invariant(_)
                | Error::NonFinite(_)
                | Error::IdOverflow(_)
                | Error::Checkpoint(_)
                | Error::Parse { .. }
        )
    }
}
