//! Client connections with id-based request correlation.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex, OnceLock};
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use serde_json::{json, Value};

use crate::envelope::{methods, Envelope};
use crate::error::{Result, WireError};
use crate::locator::Locator;
use crate::manifest::{ToolManifest, ToolSpec};
use crate::network::{CapturedFrame, CensusEntry, Direction, Network, NetworkInner, WireTap};
use crate::transport::{tcp_dial, Duplex, FrameSink};
use crate::PROTOCOL_VERSION;

const INITIALIZE_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EndpointState {
    Idle,
    Connected,
    Closed,
}

type Reply = Result<Value>;

struct Shared {
    census_id: u64,
    peer: Locator,
    net: Arc<NetworkInner>,
    tap: Option<Arc<WireTap>>,
    sink: Mutex<Option<Box<dyn FrameSink>>>,
    pending: Mutex<HashMap<u64, Sender<Reply>>>,
    next_id: AtomicU64,
    closed: AtomicBool,
    server_name: OnceLock<String>,
}

impl Shared {
    fn capture(&self, direction: Direction, text: &str) {
        if let Some(tap) = &self.tap {
            tap.record(CapturedFrame {
                connection: self.census_id,
                peer: self.peer.clone(),
                direction,
                text: text.to_string(),
            });
        }
    }

    fn close(&self) {
        if self.closed.swap(true, Ordering::SeqCst) {
            return;
        }
        if let Some(mut sink) = self.sink.lock().unwrap().take() {
            sink.close();
        }
        for (_, waiter) in self.pending.lock().unwrap().drain() {
            let _ = waiter.send(Err(WireError::ConnectionClosed));
        }
        self.net.close_connection(self.census_id);
    }

    fn deliver(&self, text: &str) {
        if self.closed.load(Ordering::SeqCst) {
            return;
        }
        self.capture(Direction::FromServer, text);
        let env = match Envelope::decode(text) {
            Ok(env) => env,
            Err(e) => {
                warn!("client dropping undecodable frame from {}: {e}", self.peer);
                return;
            }
        };
        let (id, reply) = match env {
            Envelope::Response { id, result } => (id, Ok(result)),
            Envelope::Error { id, error } => (
                id,
                Err(WireError::Protocol {
                    code: error.code,
                    message: error.message,
                }),
            ),
            Envelope::Request { .. } => {
                debug!("client ignoring server-initiated request");
                return;
            }
        };
        match self.pending.lock().unwrap().remove(&id) {
            Some(waiter) => {
                let _ = waiter.send(reply);
            }
            None => debug!("reply for unknown or abandoned request {id}"),
        }
    }
}

struct Handle {
    shared: Arc<Shared>,
}

impl Drop for Handle {
    fn drop(&mut self) {
        self.shared.close();
    }
}

/// An open session with one server. Cloning shares the session; the
/// connection closes when [`Connection::close`] is called or the last clone
/// is dropped.
#[derive(Clone)]
pub struct Connection {
    handle: Arc<Handle>,
}

impl std::fmt::Debug for Connection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Connection")
            .field("peer", &self.handle.shared.peer)
            .field("state", &self.state())
            .finish()
    }
}

impl Connection {
    pub(crate) fn open(net: &Network, locator: &Locator, tag: Option<String>) -> Result<Self> {
        let Duplex { mut source, sink } = match locator {
            Locator::Mem(name) => net.inner.hub.dial(name)?,
            Locator::Tcp { host, port } => tcp_dial(host, *port)?,
        };
        let census_id = net.inner.open_connection(CensusEntry {
            peer: locator.clone(),
            tag,
        });
        let shared = Arc::new(Shared {
            census_id,
            peer: locator.clone(),
            net: net.inner.clone(),
            tap: net.tap(),
            sink: Mutex::new(Some(sink)),
            pending: Mutex::default(),
            next_id: AtomicU64::new(0),
            closed: AtomicBool::new(false),
            server_name: OnceLock::new(),
        });
        let conn = Connection {
            handle: Arc::new(Handle {
                shared: shared.clone(),
            }),
        };

        let reader = shared.clone();
        thread::Builder::new()
            .name(format!("conn-{locator}"))
            .spawn(move || {
                loop {
                    match source.next_frame() {
                        Ok(Some(text)) => reader.deliver(&text),
                        Ok(None) => break,
                        Err(e) => {
                            debug!("connection read error: {e}");
                            break;
                        }
                    }
                }
                reader.close();
            })?;

        let init = conn.request_with_timeout(
            methods::INITIALIZE,
            json!({
                "protocolVersion": PROTOCOL_VERSION,
                "clientInfo": {"name": "taas-wire"},
            }),
            Some(INITIALIZE_TIMEOUT),
        );
        match init {
            Ok(result) => {
                let name = result
                    .pointer("/serverInfo/name")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                let _ = shared.server_name.set(name);
                Ok(conn)
            }
            Err(WireError::Protocol { message, .. }) => {
                conn.close();
                Err(WireError::InitializeRejected(message))
            }
            Err(e) => {
                conn.close();
                Err(e)
            }
        }
    }

    pub fn peer(&self) -> &Locator {
        &self.handle.shared.peer
    }

    pub fn server_name(&self) -> &str {
        self.handle
            .shared
            .server_name
            .get()
            .map(String::as_str)
            .unwrap_or_default()
    }

    pub fn state(&self) -> EndpointState {
        if self.handle.shared.closed.load(Ordering::SeqCst) {
            EndpointState::Closed
        } else {
            EndpointState::Connected
        }
    }

    /// Sends one request and waits for its correlated reply.
    pub fn request(&self, method: &str, params: Value) -> Result<Value> {
        self.request_with_timeout(method, params, None)
    }

    pub fn request_with_timeout(
        &self,
        method: &str,
        params: Value,
        timeout: Option<Duration>,
    ) -> Result<Value> {
        let shared = &self.handle.shared;
        let id = shared.next_id.fetch_add(1, Ordering::SeqCst) + 1;
        let (tx, rx) = mpsc::channel();
        shared.pending.lock().unwrap().insert(id, tx);
        if shared.closed.load(Ordering::SeqCst) {
            shared.pending.lock().unwrap().remove(&id);
            return Err(WireError::ConnectionClosed);
        }

        let text = Envelope::request(id, method, params).encode();
        {
            let mut sink = shared.sink.lock().unwrap();
            let Some(s) = sink.as_mut() else {
                shared.pending.lock().unwrap().remove(&id);
                return Err(WireError::ConnectionClosed);
            };
            shared.capture(Direction::ToServer, &text);
            if let Err(e) = s.send_frame(&text) {
                debug!("send to {} failed: {e}", shared.peer);
                drop(sink);
                shared.close();
                return Err(WireError::ConnectionClosed);
            }
        }

        let reply = match timeout {
            None => rx.recv().map_err(|_| WireError::ConnectionClosed)?,
            Some(t) => match rx.recv_timeout(t) {
                Ok(reply) => reply,
                Err(RecvTimeoutError::Timeout) => {
                    shared.pending.lock().unwrap().remove(&id);
                    return Err(WireError::Timeout);
                }
                Err(RecvTimeoutError::Disconnected) => return Err(WireError::ConnectionClosed),
            },
        };
        reply
    }

    pub fn list_tools(&self) -> Result<ToolManifest> {
        let result = self.request(methods::TOOLS_LIST, json!({}))?;
        let tools: Vec<ToolSpec> = serde_json::from_value(result.get("tools").cloned().unwrap_or(Value::Null))
            .map_err(|e| WireError::Codec(format!("malformed tools/list result: {e}")))?;
        Ok(ToolManifest {
            server_name: self.server_name().to_string(),
            tools,
        })
    }

    pub fn call_tool(&self, name: &str, args: Value) -> Result<Value> {
        self.call_tool_with_timeout(name, args, None)
    }

    pub fn call_tool_with_timeout(&self, name: &str, args: Value, timeout: Option<Duration>) -> Result<Value> {
        let result = self.request_with_timeout(
            methods::TOOLS_CALL,
            json!({"name": name, "arguments": args}),
            timeout,
        )?;
        if result.get("isError").and_then(Value::as_bool).unwrap_or(false) {
            let message = result
                .pointer("/content/0/text")
                .and_then(Value::as_str)
                .unwrap_or("tool failed without a message")
                .to_string();
            return Err(WireError::Tool(message));
        }
        Ok(result.get("structuredContent").cloned().unwrap_or(Value::Null))
    }

    /// Closes the session. In-flight calls fail with
    /// [`WireError::ConnectionClosed`]. Idempotent.
    pub fn close(&self) {
        self.handle.shared.close();
    }
}
