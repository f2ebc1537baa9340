//! Process-wide view of one deployment: the `mem:` name table, an optional
//! wire tap, and a census of open client connections.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::client::Connection;
use crate::error::Result;
use crate::locator::Locator;
use crate::manifest::ToolManifest;
use crate::server::{ServerHandle, ToolHandler};
use crate::transport::MemHub;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToServer,
    FromServer,
}

#[derive(Debug, Clone)]
pub struct CapturedFrame {
    pub connection: u64,
    pub peer: Locator,
    pub direction: Direction,
    pub text: String,
}

/// Records every frame sent or received by client connections.
#[derive(Debug, Default)]
pub struct WireTap {
    frames: Mutex<Vec<CapturedFrame>>,
}

impl WireTap {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub(crate) fn record(&self, frame: CapturedFrame) {
        self.frames.lock().unwrap().push(frame);
    }

    pub fn frames(&self) -> Vec<CapturedFrame> {
        self.frames.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.frames.lock().unwrap().clear();
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensusEntry {
    pub peer: Locator,
    pub tag: Option<String>,
}

#[derive(Default)]
pub(crate) struct NetworkInner {
    pub(crate) hub: MemHub,
    tap: Mutex<Option<Arc<WireTap>>>,
    census: Mutex<BTreeMap<u64, CensusEntry>>,
    next_connection: AtomicU64,
}

impl NetworkInner {
    pub(crate) fn tap(&self) -> Option<Arc<WireTap>> {
        self.tap.lock().unwrap().clone()
    }

    pub(crate) fn open_connection(&self, entry: CensusEntry) -> u64 {
        let id = self.next_connection.fetch_add(1, Ordering::Relaxed) + 1;
        self.census.lock().unwrap().insert(id, entry);
        id
    }

    pub(crate) fn close_connection(&self, id: u64) {
        self.census.lock().unwrap().remove(&id);
    }
}

#[derive(Clone, Default)]
pub struct Network {
    pub(crate) inner: Arc<NetworkInner>,
}

impl Network {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_tap(&self, tap: Option<Arc<WireTap>>) {
        *self.inner.tap.lock().unwrap() = tap;
    }

    pub fn tap(&self) -> Option<Arc<WireTap>> {
        self.inner.tap()
    }

    /// Starts a server at `locator` exposing exactly the tools in `manifest`.
    pub fn serve(
        &self,
        locator: &Locator,
        manifest: ToolManifest,
        handlers: HashMap<String, ToolHandler>,
    ) -> Result<ServerHandle> {
        ServerHandle::start(self, locator, manifest, handlers)
    }

    pub fn connect(&self, locator: &Locator) -> Result<Connection> {
        Connection::open(self, locator, None)
    }

    /// Like [`Network::connect`], attributing the connection to `tag` in the census.
    pub fn connect_tagged(&self, locator: &Locator, tag: &str) -> Result<Connection> {
        Connection::open(self, locator, Some(tag.to_string()))
    }

    pub fn live_connections(&self) -> usize {
        self.inner.census.lock().unwrap().len()
    }

    pub fn live_connections_tagged(&self, tag: &str) -> usize {
        self.inner
            .census
            .lock()
            .unwrap()
            .values()
            .filter(|e| e.tag.as_deref() == Some(tag))
            .count()
    }

    pub fn open_connections(&self) -> Vec<CensusEntry> {
        self.inner.census.lock().unwrap().values().cloned().collect()
    }
}
