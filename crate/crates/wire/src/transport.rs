//! Frame transports. Both carry one encoded envelope per frame; the TCP
//! transport terminates each frame with `\n`.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Mutex;

use crate::error::WireError;

pub trait FrameSink: Send {
    fn send_frame(&mut self, frame: &str) -> io::Result<()>;
    fn close(&mut self);
}

pub trait FrameSource: Send {
    /// Blocks for the next frame; `Ok(None)` once the peer has gone away.
    fn next_frame(&mut self) -> io::Result<Option<String>>;
}

pub struct Duplex {
    pub source: Box<dyn FrameSource>,
    pub sink: Box<dyn FrameSink>,
}

// ---------------------------------------------------------------------------
// In-process channels
// ---------------------------------------------------------------------------

struct MemSink(Option<Sender<String>>);

impl FrameSink for MemSink {
    fn send_frame(&mut self, frame: &str) -> io::Result<()> {
        let tx = self
            .0
            .as_ref()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotConnected, "sink closed"))?;
        tx.send(frame.to_string())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer gone"))
    }

    fn close(&mut self) {
        self.0 = None;
    }
}

struct MemSource(Receiver<String>);

impl FrameSource for MemSource {
    fn next_frame(&mut self) -> io::Result<Option<String>> {
        Ok(self.0.recv().ok())
    }
}

fn mem_pair() -> (Duplex, Duplex) {
    let (a_tx, a_rx) = mpsc::channel();
    let (b_tx, b_rx) = mpsc::channel();
    (
        Duplex {
            source: Box::new(MemSource(a_rx)),
            sink: Box::new(MemSink(Some(b_tx))),
        },
        Duplex {
            source: Box::new(MemSource(b_rx)),
            sink: Box::new(MemSink(Some(a_tx))),
        },
    )
}

/// Name table for `mem:` listeners.
#[derive(Default)]
pub(crate) struct MemHub {
    listeners: Mutex<HashMap<String, Sender<Duplex>>>,
}

impl MemHub {
    pub(crate) fn bind(&self, name: &str) -> Result<Receiver<Duplex>, WireError> {
        let mut listeners = self.listeners.lock().unwrap();
        if listeners.contains_key(name) {
            return Err(WireError::AddressInUse(format!("mem:{name}")));
        }
        let (tx, rx) = mpsc::channel();
        listeners.insert(name.to_string(), tx);
        Ok(rx)
    }

    pub(crate) fn unbind(&self, name: &str) {
        self.listeners.lock().unwrap().remove(name);
    }

    pub(crate) fn dial(&self, name: &str) -> Result<Duplex, WireError> {
        let listeners = self.listeners.lock().unwrap();
        let unreachable = || WireError::Unreachable(format!("mem:{name}"));
        let tx = listeners.get(name).ok_or_else(unreachable)?;
        let (client, server) = mem_pair();
        tx.send(server).map_err(|_| unreachable())?;
        Ok(client)
    }
}

// ---------------------------------------------------------------------------
// Stream sockets
// ---------------------------------------------------------------------------

struct TcpSink(TcpStream);

impl FrameSink for TcpSink {
    fn send_frame(&mut self, frame: &str) -> io::Result<()> {
        let mut line = String::with_capacity(frame.len() + 1);
        line.push_str(frame);
        line.push('\n');
        self.0.write_all(line.as_bytes())?;
        self.0.flush()
    }

    fn close(&mut self) {
        let _ = self.0.shutdown(Shutdown::Both);
    }
}

struct TcpSource(BufReader<TcpStream>);

impl FrameSource for TcpSource {
    fn next_frame(&mut self) -> io::Result<Option<String>> {
        let mut line = String::new();
        match self.0.read_line(&mut line) {
            Ok(0) => Ok(None),
            Ok(_) => {
                while line.ends_with('\n') || line.ends_with('\r') {
                    line.pop();
                }
                Ok(Some(line))
            }
            // A locally shut-down socket surfaces as an error on some
            // platforms; treat it as end of stream.
            Err(e) if matches!(e.kind(), io::ErrorKind::ConnectionReset | io::ErrorKind::ConnectionAborted) => {
                Ok(None)
            }
            Err(e) => Err(e),
        }
    }
}

pub(crate) fn tcp_duplex(stream: TcpStream) -> io::Result<Duplex> {
    stream.set_nodelay(true)?;
    let read_half = stream.try_clone()?;
    Ok(Duplex {
        source: Box::new(TcpSource(BufReader::new(read_half))),
        sink: Box::new(TcpSink(stream)),
    })
}

pub(crate) fn tcp_dial(host: &str, port: u16) -> Result<Duplex, WireError> {
    let stream = TcpStream::connect((host, port))
        .map_err(|_| WireError::Unreachable(format!("tcp:{host}:{port}")))?;
    Ok(tcp_duplex(stream)?)
}

pub(crate) fn tcp_bind(host: &str, port: u16) -> Result<TcpListener, WireError> {
    TcpListener::bind((host, port)).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => WireError::AddressInUse(format!("tcp:{host}:{port}")),
        _ => WireError::Io(e),
    })
}
