use std::fmt;

/// Everything that can go wrong inside the library.
#[derive(Debug)]
pub enum Error {
    /// Two operands have incompatible shapes.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// A dimension is not divisible by a group count.
    Divisibility {
        context: String,
        dim: usize,
        groups: usize,
    },
    /// An index fell outside `[0, bound)`.
    Index {
        context: &'static str,
        index: usize,
        bound: usize,
    },
    /// A caller broke an API contract (non-scalar loss, empty parts, ...).
    Contract(String),
    /// One entry per violated configuration constraint.
    InvalidConfig(Vec<String>),
    /// A binary file could not be decoded.
    Format { offset: usize, reason: String },
    /// Text ingestion and batching problems.
    Corpus(String),
    /// Training produced a NaN or infinite loss.
    NonFinite { step: usize, lr: f64 },
    Io(std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Divisibility {
                context,
                dim,
                groups,
            } => write!(
                f,
                "{context}: dimension {dim} is not divisible by {groups} groups"
            ),
            Error::Index {
                context,
                index,
                bound,
            } => write!(f, "{context}: index {index} out of range [0, {bound})"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::InvalidConfig(problems) => {
                write!(f, "invalid configuration: {}", problems.join("; "))
            }
            Error::Format { offset, reason } => {
                write!(f, "format error at byte {offset}: {reason}")
            }
            Error::Corpus(msg) => write!(f, "corpus error: {msg}"),
            Error::NonFinite { step, lr } => {
                write!(f, "non-finite loss at step {step} (lr = {lr})")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err)
    }
}
