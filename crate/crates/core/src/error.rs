use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("shape {shape:?} does not match data length {len}")]
    ShapeData { shape: Vec<usize>, len: usize },

    #[error("empty reduction in {0}")]
    EmptyReduction(&'static str),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tape already consumed by a previous backward pass")]
    TapeReused,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {kind} at byte offset {offset}")]
    Format {
        path: PathBuf,
        kind: FormatErrorKind,
        offset: u64,
    },

    #[error("checkpoint mismatch at layer `{layer}`: {detail}")]
    Checkpoint { layer: String, detail: String },

    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FormatErrorKind {
    BadMagic,
    UnsupportedVersion(u16),
    Truncated { expected: u64, found: u64 },
    LabelTauMismatch,
    ObjectCountOverflow { count: u8, max: u32 },
    TauOutOfRange(u32),
    NonFinite,
    TrailingBytes,
    InvalidHeader(String),
}

impl std::fmt::Display for FormatErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::BadMagic => write!(f, "bad magic"),
            Self::UnsupportedVersion(v) => write!(f, "unsupported format version {v}"),
            Self::Truncated { expected, found } => {
                write!(f, "truncated: expected {expected} bytes, found {found}")
            }
            Self::LabelTauMismatch => write!(f, "label and tau sentinel disagree"),
            Self::ObjectCountOverflow { count, max } => {
                write!(f, "object count {count} exceeds N = {max}")
            }
            Self::TauOutOfRange(t) => write!(f, "tau {t} outside [1, S]"),
            Self::NonFinite => write!(f, "non-finite feature value"),
            Self::TrailingBytes => write!(f, "trailing bytes after payload"),
            Self::InvalidHeader(m) => write!(f, "invalid header: {m}"),
        }
    }
}

impl Error {
    pub(crate) fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Self::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
