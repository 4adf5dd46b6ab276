use thiserror::Error;

/// Errors surfaced by the library. User-facing commands map `user_facing`
/// variants to exit code 1 and everything else to exit code 2.
#[derive(Error, Debug)]
pub enum Error {
    #[error("family {family:?} appears under sites {first:?} and {second:?}")]
    CrossSiteFamily {
        family: String,
        first: String,
        second: String,
    },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("column {column} of {location} is constant; cannot standardize")]
    ConstantColumn { location: String, column: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("length mismatch: {left} vs {right} ({context})")]
    LengthMismatch {
        left: usize,
        right: usize,
        context: String,
    },

    #[error("linear system is singular or not positive definite: {0}")]
    SingularSystem(String),

    #[error("site {0:?} was not present in the training data")]
    UnknownSite(String),

    #[error("model registry is empty")]
    EmptyModel,

    #[error("undefined rate: {0}")]
    UndefinedRate(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub fn parse(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }

    /// Whether the error is caused by user input (bad config, bad files,
    /// inconsistent data) rather than an internal failure.
    pub fn user_facing(&self) -> bool {
        !matches!(self, Error::SingularSystem(_))
    }
}
