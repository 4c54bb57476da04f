use thiserror::Error;

use crate::model::FactorModel;
use crate::trace::TraceRecord;

pub type Result<T, E = CpdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CpdError {
    #[error("index error: {0}")]
    Index(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("format error at byte offset {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("resource limit: tensor needs {required} bytes, limit is {limit} bytes")]
    Resource { required: u128, limit: u128 },

    #[error("config error (line {line}, field `{field}`): {message}")]
    Config {
        line: usize,
        field: String,
        message: String,
    },

    #[error("solver diverged at iteration {}: {}", .0.iteration, .0.reason)]
    Diverged(Box<Divergence>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// State captured when a run produces non-finite or exploding factors.
#[derive(Debug, Clone)]
pub struct Divergence {
    pub iteration: u64,
    pub reason: String,
    /// The last model whose entries were all finite.
    pub last_finite: FactorModel,
    pub trace: Vec<TraceRecord>,
}

impl CpdError {
    pub(crate) fn index(msg: impl Into<String>) -> Self {
        CpdError::Index(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        CpdError::Dimension(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        CpdError::Argument(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        CpdError::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, CpdError::Diverged(_))
    }
}
