use thiserror::Error;

use crate::envelope::codes;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed locator `{0}` (expected mem:<name> or tcp:<host>:<port>)")]
    MalformedLocator(String),
    #[error("address already in use: {0}")]
    AddressInUse(String),
    #[error("no server reachable at {0}")]
    Unreachable(String),
    #[error("manifest and handler set disagree: {0}")]
    ManifestMismatch(String),
    #[error("tool `{0}` is already registered")]
    ToolCollision(String),
    #[error("initialize rejected: {0}")]
    InitializeRejected(String),
    #[error("connection closed")]
    ConnectionClosed,
    #[error("request timed out")]
    Timeout,
    #[error("protocol error {code}: {message}")]
    Protocol { code: i64, message: String },
    #[error("tool error: {0}")]
    Tool(String),
    #[error("codec error: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl WireError {
    pub fn is_method_not_found(&self) -> bool {
        matches!(self, WireError::Protocol { code, .. } if *code == codes::METHOD_NOT_FOUND)
    }
}

pub type Result<T, E = WireError> = std::result::Result<T, E>;
