//! Tool servers. The advertised manifest is always derived from the live
//! handler table, so `tools/list` cannot drift from what `tools/call` accepts.

use std::collections::{HashMap, HashSet};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::thread;

use log::{debug, warn};
use serde_json::{json, Value};
use thiserror::Error;

use crate::envelope::{codes, methods, salvage_id, Envelope, RpcError};
use crate::error::{Result, WireError};
use crate::locator::Locator;
use crate::manifest::{ToolManifest, ToolSpec};
use crate::network::Network;
use crate::transport::{tcp_bind, tcp_duplex, Duplex, FrameSink};
use crate::PROTOCOL_VERSION;

/// Failure reported by a tool handler; delivered to the caller as a tool
/// result with `isError: true` rather than a protocol error.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct ToolError(pub String);

impl ToolError {
    pub fn new(msg: impl Into<String>) -> Self {
        ToolError(msg.into())
    }
}

pub type ToolHandler = Arc<dyn Fn(Value) -> std::result::Result<Value, ToolError> + Send + Sync>;

pub fn handler<F>(f: F) -> ToolHandler
where
    F: Fn(Value) -> std::result::Result<Value, ToolError> + Send + Sync + 'static,
{
    Arc::new(f)
}

struct ToolTable {
    server_name: String,
    tools: RwLock<Vec<(ToolSpec, ToolHandler)>>,
}

impl ToolTable {
    fn manifest(&self) -> ToolManifest {
        ToolManifest {
            server_name: self.server_name.clone(),
            tools: self.tools.read().unwrap().iter().map(|(s, _)| s.clone()).collect(),
        }
    }

    fn lookup(&self, name: &str) -> Option<ToolHandler> {
        self.tools
            .read()
            .unwrap()
            .iter()
            .find(|(s, _)| s.name == name)
            .map(|(_, h)| h.clone())
    }

    fn register(&self, spec: ToolSpec, handler: ToolHandler) -> Result<()> {
        let mut tools = self.tools.write().unwrap();
        if tools.iter().any(|(s, _)| s.name == spec.name) {
            return Err(WireError::ToolCollision(spec.name));
        }
        tools.push((spec, handler));
        Ok(())
    }
}

struct Session {
    sink: Mutex<Option<Box<dyn FrameSink>>>,
    initialized: AtomicBool,
}

impl Session {
    fn send(&self, env: &Envelope) {
        let mut sink = self.sink.lock().unwrap();
        if let Some(s) = sink.as_mut() {
            if let Err(e) = s.send_frame(&env.encode()) {
                debug!("dropping reply on dead session: {e}");
                if let Some(mut s) = sink.take() {
                    s.close();
                }
            }
        }
    }

    fn close(&self) {
        if let Some(mut s) = self.sink.lock().unwrap().take() {
            s.close();
        }
    }

    fn is_open(&self) -> bool {
        self.sink.lock().unwrap().is_some()
    }
}

struct ServerInner {
    locator: Locator,
    table: Arc<ToolTable>,
    sessions: Arc<Mutex<Vec<Arc<Session>>>>,
    stopped: AtomicBool,
    stopper: Box<dyn Fn() + Send + Sync>,
}

impl ServerInner {
    fn shutdown(&self) {
        if self.stopped.swap(true, Ordering::SeqCst) {
            return;
        }
        (self.stopper)();
        for s in self.sessions.lock().unwrap().drain(..) {
            s.close();
        }
    }
}

impl Drop for ServerInner {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// A running server. Dropping the last clone shuts it down.
#[derive(Clone)]
pub struct ServerHandle {
    inner: Arc<ServerInner>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle")
            .field("locator", &self.inner.locator)
            .finish()
    }
}

impl ServerHandle {
    pub(crate) fn start(
        net: &Network,
        locator: &Locator,
        manifest: ToolManifest,
        mut handlers: HashMap<String, ToolHandler>,
    ) -> Result<Self> {
        let mut seen = HashSet::new();
        for tool in &manifest.tools {
            if !seen.insert(tool.name.as_str()) {
                return Err(WireError::ManifestMismatch(format!(
                    "tool `{}` listed twice",
                    tool.name
                )));
            }
            if !handlers.contains_key(&tool.name) {
                return Err(WireError::ManifestMismatch(format!(
                    "no handler for tool `{}`",
                    tool.name
                )));
            }
        }
        if let Some(extra) = handlers.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(WireError::ManifestMismatch(format!(
                "handler `{extra}` has no manifest entry"
            )));
        }
        let tools = manifest
            .tools
            .into_iter()
            .map(|spec| {
                let h = handlers.remove(&spec.name).expect("checked above");
                (spec, h)
            })
            .collect();
        let table = Arc::new(ToolTable {
            server_name: manifest.server_name,
            tools: RwLock::new(tools),
        });
        let sessions: Arc<Mutex<Vec<Arc<Session>>>> = Arc::default();

        let (bound, stopper): (Locator, Box<dyn Fn() + Send + Sync>) = match locator {
            Locator::Mem(name) => {
                let incoming = net.inner.hub.bind(name)?;
                let (table, sessions) = (table.clone(), sessions.clone());
                thread::Builder::new()
                    .name(format!("accept-{name}"))
                    .spawn(move || {
                        while let Ok(duplex) = incoming.recv() {
                            spawn_session(duplex, &table, &sessions);
                        }
                    })?;
                let inner = net.inner.clone();
                let name = name.clone();
                (locator.clone(), Box::new(move || inner.hub.unbind(&name)))
            }
            Locator::Tcp { host, port } => {
                let listener = tcp_bind(host, *port)?;
                let local = listener.local_addr()?;
                let bound = Locator::Tcp {
                    host: host.clone(),
                    port: local.port(),
                };
                let stop = Arc::new(AtomicBool::new(false));
                let (table, sessions, flag) = (table.clone(), sessions.clone(), stop.clone());
                thread::Builder::new()
                    .name(format!("accept-{bound}"))
                    .spawn(move || {
                        for stream in listener.incoming() {
                            if flag.load(Ordering::SeqCst) {
                                break;
                            }
                            match stream.and_then(tcp_duplex) {
                                Ok(duplex) => spawn_session(duplex, &table, &sessions),
                                Err(e) => warn!("accept failed: {e}"),
                            }
                        }
                    })?;
                (
                    bound,
                    Box::new(move || {
                        stop.store(true, Ordering::SeqCst);
                        // Wake the blocking accept.
                        let _ = TcpStream::connect(local);
                    }),
                )
            }
        };

        Ok(ServerHandle {
            inner: Arc::new(ServerInner {
                locator: bound,
                table,
                sessions,
                stopped: AtomicBool::new(false),
                stopper,
            }),
        })
    }

    /// The bound address; for `tcp:host:0` this carries the assigned port.
    pub fn locator(&self) -> &Locator {
        &self.inner.locator
    }

    pub fn manifest(&self) -> ToolManifest {
        self.inner.table.manifest()
    }

    /// Adds a tool to the live server; later `tools/list` calls include it.
    pub fn register_tool(&self, spec: ToolSpec, handler: ToolHandler) -> Result<()> {
        self.inner.table.register(spec, handler)
    }

    pub fn live_sessions(&self) -> usize {
        let mut sessions = self.inner.sessions.lock().unwrap();
        sessions.retain(|s| s.is_open());
        sessions.len()
    }

    pub fn is_running(&self) -> bool {
        !self.inner.stopped.load(Ordering::SeqCst)
    }

    /// Unbinds the address and closes every live session. Idempotent.
    pub fn shutdown(&self) {
        self.inner.shutdown();
    }
}

fn spawn_session(duplex: Duplex, table: &Arc<ToolTable>, sessions: &Arc<Mutex<Vec<Arc<Session>>>>) {
    let Duplex { mut source, sink } = duplex;
    let session = Arc::new(Session {
        sink: Mutex::new(Some(sink)),
        initialized: AtomicBool::new(false),
    });
    {
        let mut all = sessions.lock().unwrap();
        all.retain(|s| s.is_open());
        all.push(session.clone());
    }
    let table = table.clone();
    let spawned = thread::Builder::new().name("session".into()).spawn(move || {
        loop {
            match source.next_frame() {
                Ok(Some(text)) => {
                    if !session.is_open() {
                        break;
                    }
                    handle_frame(&session, &table, &text);
                }
                Ok(None) => break,
                Err(e) => {
                    debug!("session read error: {e}");
                    break;
                }
            }
        }
        session.close();
    });
    if let Err(e) = spawned {
        warn!("could not spawn session thread: {e}");
    }
}

fn reply_error(session: &Session, id: u64, code: i64, message: impl Into<String>) {
    session.send(&Envelope::Error {
        id,
        error: RpcError::new(code, message),
    });
}

fn handle_frame(session: &Arc<Session>, table: &Arc<ToolTable>, text: &str) {
    let env = match Envelope::decode(text) {
        Ok(env) => env,
        Err(e) => {
            match salvage_id(text) {
                Some(id) => reply_error(session, id, codes::INVALID_REQUEST, e.to_string()),
                None => warn!("dropping undecodable frame: {e}"),
            }
            return;
        }
    };
    let Envelope::Request { id, method, params } = env else {
        debug!("server ignoring non-request frame");
        return;
    };
    // Notifications get no reply.
    let Some(id) = id else {
        return;
    };

    match method.as_str() {
        methods::INITIALIZE => {
            let version = params.get("protocolVersion").and_then(Value::as_str);
            if version != Some(PROTOCOL_VERSION) {
                reply_error(
                    session,
                    id,
                    codes::INVALID_PARAMS,
                    format!("unsupported protocol version {version:?}; server speaks {PROTOCOL_VERSION}"),
                );
                return;
            }
            session.initialized.store(true, Ordering::SeqCst);
            session.send(&Envelope::Response {
                id,
                result: json!({
                    "protocolVersion": PROTOCOL_VERSION,
                    "serverInfo": {"name": table.server_name},
                    "capabilities": {"tools": {"listChanged": true}},
                }),
            });
        }
        methods::TOOLS_LIST | methods::TOOLS_CALL if !session.initialized.load(Ordering::SeqCst) => {
            reply_error(session, id, codes::INVALID_REQUEST, "session not initialized");
        }
        methods::TOOLS_LIST => {
            let tools = serde_json::to_value(table.manifest().tools).expect("tool specs serialize");
            session.send(&Envelope::Response {
                id,
                result: json!({ "tools": tools }),
            });
        }
        methods::TOOLS_CALL => {
            let Some(name) = params.get("name").and_then(Value::as_str) else {
                reply_error(session, id, codes::INVALID_PARAMS, "tools/call requires a string `name`");
                return;
            };
            let Some(h) = table.lookup(name) else {
                reply_error(session, id, codes::METHOD_NOT_FOUND, format!("unknown tool: {name}"));
                return;
            };
            let args = params.get("arguments").cloned().unwrap_or_else(|| json!({}));
            let session = session.clone();
            let name = name.to_string();
            // Calls run concurrently so a slow handler cannot stall others on
            // the same connection.
            let spawned = thread::Builder::new().name(format!("tool-{name}")).spawn(move || {
                let outcome = catch_unwind(AssertUnwindSafe(|| h(args)))
                    .unwrap_or_else(|_| Err(ToolError::new(format!("tool `{name}` panicked"))));
                let result = match outcome {
                    Ok(value) => json!({"isError": false, "structuredContent": value}),
                    Err(e) => json!({
                        "isError": true,
                        "content": [{"type": "text", "text": e.0}],
                    }),
                };
                session.send(&Envelope::Response { id, result });
            });
            if let Err(e) = spawned {
                warn!("could not spawn tool thread: {e}");
            }
        }
        other => reply_error(session, id, codes::METHOD_NOT_FOUND, format!("unknown method: {other}")),
    }
}
