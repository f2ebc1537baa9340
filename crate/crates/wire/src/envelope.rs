//! JSON-RPC 2.0 envelopes and their single-line text encoding.
//!
//! Every frame is one JSON object on one line. Field order on output is
//! `jsonrpc`, `id`, `method`, `params` for requests and `jsonrpc`, `id`,
//! `result`/`error` for replies. Nested objects are emitted with sorted keys.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::WireError;

pub const JSONRPC_VERSION: &str = "2.0";

/// Standard JSON-RPC error codes used by this crate.
pub mod codes {
    pub const PARSE_ERROR: i64 = -32700;
    pub const INVALID_REQUEST: i64 = -32600;
    pub const METHOD_NOT_FOUND: i64 = -32601;
    pub const INVALID_PARAMS: i64 = -32602;
    pub const INTERNAL_ERROR: i64 = -32603;
}

/// Protocol methods understood by servers in this crate.
pub mod methods {
    pub const INITIALIZE: &str = "initialize";
    pub const TOOLS_LIST: &str = "tools/list";
    pub const TOOLS_CALL: &str = "tools/call";
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Request,
    Response,
    Error,
}

/// One framed protocol message.
///
/// A request without an id is a notification and never receives a reply.
/// `params: Value::Null` is encoded by omitting the field.
#[derive(Debug, Clone, PartialEq)]
pub enum Envelope {
    Request {
        id: Option<u64>,
        method: String,
        params: Value,
    },
    Response {
        id: u64,
        result: Value,
    },
    Error {
        id: u64,
        error: RpcError,
    },
}

#[derive(Serialize)]
struct OutFrame<'a> {
    jsonrpc: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    id: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<&'a Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a RpcError>,
}

impl Envelope {
    pub fn request(id: u64, method: impl Into<String>, params: Value) -> Self {
        Envelope::Request {
            id: Some(id),
            method: method.into(),
            params,
        }
    }

    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Envelope::Request { .. } => EnvelopeKind::Request,
            Envelope::Response { .. } => EnvelopeKind::Response,
            Envelope::Error { .. } => EnvelopeKind::Error,
        }
    }

    pub fn id(&self) -> Option<u64> {
        match self {
            Envelope::Request { id, .. } => *id,
            Envelope::Response { id, .. } | Envelope::Error { id, .. } => Some(*id),
        }
    }

    pub fn method(&self) -> Option<&str> {
        match self {
            Envelope::Request { method, .. } => Some(method),
            _ => None,
        }
    }

    /// Encodes to a single line of text without the trailing newline.
    pub fn encode(&self) -> String {
        let frame = match self {
            Envelope::Request { id, method, params } => OutFrame {
                jsonrpc: JSONRPC_VERSION,
                id: *id,
                method: Some(method),
                params: (!params.is_null()).then_some(params),
                result: None,
                error: None,
            },
            Envelope::Response { id, result } => OutFrame {
                jsonrpc: JSONRPC_VERSION,
                id: Some(*id),
                method: None,
                params: None,
                result: Some(result),
                error: None,
            },
            Envelope::Error { id, error } => OutFrame {
                jsonrpc: JSONRPC_VERSION,
                id: Some(*id),
                method: None,
                params: None,
                result: None,
                error: Some(error),
            },
        };
        // serde_json escapes control characters inside strings, so the
        // output never contains a raw newline.
        serde_json::to_string(&frame).expect("envelope serialization is infallible")
    }

    pub fn decode(text: &str) -> Result<Envelope, WireError> {
        let value: Value = serde_json::from_str(text.trim_end_matches(['\r', '\n']))
            .map_err(|e| WireError::Codec(format!("invalid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(WireError::Codec("frame is not an object".into()));
        };
        match obj.remove("jsonrpc") {
            Some(Value::String(v)) if v == JSONRPC_VERSION => {}
            other => {
                return Err(WireError::Codec(format!(
                    "missing or unsupported jsonrpc version: {other:?}"
                )))
            }
        }
        let id = match obj.remove("id") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                v.as_u64()
                    .ok_or_else(|| WireError::Codec(format!("id must be an unsigned integer, got {v}")))?,
            ),
        };
        let method = obj.remove("method");
        let params = obj.remove("params");
        let result = obj.remove("result");
        let error = obj.remove("error");
        if let Some(key) = obj.keys().next() {
            return Err(WireError::Codec(format!("unexpected field `{key}`")));
        }

        match (method, result, error) {
            (Some(method), None, None) => {
                let Value::String(method) = method else {
                    return Err(WireError::Codec("method must be a string".into()));
                };
                Ok(Envelope::Request {
                    id,
                    method,
                    params: params.unwrap_or(Value::Null),
                })
            }
            (None, Some(result), None) if params.is_none() => Ok(Envelope::Response {
                id: id.ok_or_else(|| WireError::Codec("response without id".into()))?,
                result,
            }),
            (None, None, Some(error)) if params.is_none() => {
                let error: RpcError = serde_json::from_value(error)
                    .map_err(|e| WireError::Codec(format!("malformed error object: {e}")))?;
                Ok(Envelope::Error {
                    id: id.ok_or_else(|| WireError::Codec("error without id".into()))?,
                    error,
                })
            }
            _ => Err(WireError::Codec(
                "frame must be exactly one of request, response, or error".into(),
            )),
        }
    }
}

/// Extracts a best-effort id from a frame that failed to decode, so the
/// server can still answer with an error.
pub(crate) fn salvage_id(text: &str) -> Option<u64> {
    let value: Value = serde_json::from_str(text).ok()?;
    value.get("id")?.as_u64()
}
