//! A small, transport-agnostic subset of the Model Context Protocol.
//!
//! Servers advertise a [`ToolManifest`] and answer `initialize`,
//! `tools/list` and `tools/call`. Clients open a [`Connection`] to a
//! [`Locator`] (`mem:<name>` or `tcp:<host>:<port>`), discover tools and
//! invoke them; replies are correlated by per-connection request ids so any
//! number of calls may be in flight at once.
//!
//! ```
//! use std::collections::HashMap;
//! use serde_json::json;
//! use taas_wire::{handler, Locator, Network, ToolManifest, ToolSpec};
//!
//! let net = Network::new();
//! let manifest = ToolManifest::new("echo")
//!     .with_tool(ToolSpec::new("echo", "Returns its arguments", json!({"type": "object"})));
//! let mut handlers = HashMap::new();
//! handlers.insert("echo".to_string(), handler(|args| Ok(args)));
//! let server = net.serve(&Locator::mem("echo"), manifest, handlers).unwrap();
//!
//! let conn = net.connect(server.locator()).unwrap();
//! assert_eq!(conn.list_tools().unwrap().names(), vec!["echo"]);
//! assert_eq!(conn.call_tool("echo", json!({"x": 1})).unwrap(), json!({"x": 1}));
//! conn.close();
//! ```

mod client;
mod envelope;
mod error;
mod locator;
mod manifest;
mod network;
mod server;
mod transport;

pub use client::{Connection, EndpointState};
pub use envelope::{codes, methods, Envelope, EnvelopeKind, RpcError, JSONRPC_VERSION};
pub use error::{Result, WireError};
pub use locator::Locator;
pub use manifest::{ToolManifest, ToolSpec};
pub use network::{CapturedFrame, CensusEntry, Direction, Network, WireTap};
pub use server::{handler, ServerHandle, ToolError, ToolHandler};

/// Protocol revision exchanged during `initialize`.
pub const PROTOCOL_VERSION: &str = "2025-06-18";
