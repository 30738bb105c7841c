use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    /// Tensor shapes do not line up; names the operation and offending axis.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    ShapeMismatch {
        op: &'static str,
        axis: &'static str,
        expected: String,
        got: String,
    },

    /// Misuse of an API contract (usage error, exit code 1).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Bad or missing input data (exit code 2).
    #[error("data error: {0}")]
    Data(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },

    /// A non-finite value surfaced during training or sampling (exit code 3).
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(
        op: &'static str,
        axis: &'static str,
        expected: impl ToString,
        got: impl ToString,
    ) -> Error {
        Error::ShapeMismatch {
            op,
            axis,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::ShapeMismatch { .. } => 1,
            Error::Data(_) | Error::Io { .. } => 2,
            Error::NonFinite { .. } => 3,
        }
    }
}
