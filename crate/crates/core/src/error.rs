use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{what} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        what: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("integrating channel: 1 + sum(a) = 0 ({0})")]
    IntegratingChannel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("configuration validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("snapshot belongs to model {found}, expected {expected}")]
    ConfigMismatch { expected: String, found: String },

    #[error("infeasible hard constraint: {0}")]
    Infeasible(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("command rejected: {0}")]
    Rejected(String),

    #[error("session shut down")]
    ShutDown,

    #[error("incomplete trace: {0}")]
    IncompleteTrace(String),

    #[error("io: {0}")]
    Io(String),

    #[error("json: {0}")]
    Json(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
