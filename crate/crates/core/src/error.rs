use thiserror::Error;

/// Errors raised by every module of the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HicaError {
    #[error("character {0:?} is not in the alphabet")]
    UnknownChar(char),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{unit} diverged at learning rate {lr}: {reason}")]
    Divergence {
        unit: String,
        lr: f64,
        reason: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph error: {0}")]
    Graph(String),

    #[error("graph validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error("worker for node {node} failed while handling {last_message}: {reason}")]
    Worker {
        node: String,
        last_message: String,
        reason: String,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(String),
}

impl HicaError {
    pub(crate) fn dim(context: impl Into<String>, expected: usize, got: usize) -> Self {
        HicaError::DimMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// Rewrites the unit name carried by a divergence error, so layers and
    /// graphs can report which node blew up.
    pub fn in_unit(self, name: &str) -> Self {
        match self {
            HicaError::Divergence { unit, lr, reason } => HicaError::Divergence {
                unit: format!("{name}/{unit}"),
                lr,
                reason,
            },
            other => other,
        }
    }
}

impl From<std::io::Error> for HicaError {
    fn from(e: std::io::Error) -> Self {
        HicaError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HicaError>;
