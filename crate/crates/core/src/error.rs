use thiserror::Error;

/// Errors produced by the twin's numerical and workflow layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid plant description: {0}")]
    Plant(String),

    #[error("DLM profile does not align with span lengths: {0}")]
    Alignment(String),

    #[error("calibration dataset is not identifiable: {0}")]
    Identifiability(String),

    #[error("merge failed, missing spans: {0:?}")]
    Merge(Vec<String>),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("illegal transition {from:?} -> {to:?}")]
    Transition { from: crate::provisioner::RunState, to: crate::provisioner::RunState },

    #[error("device {device}: {msg}")]
    Device { device: String, msg: String },

    #[error("store: {0}")]
    Store(String),

    #[error("cancelled")]
    Cancelled,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
