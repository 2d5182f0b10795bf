//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SbaError {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid view graph: {0}")]
    Graph(String),

    #[error("graph numerically disconnected: {0}")]
    Disconnected(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SbaError>;
