//! Client connections to the hub, in-process or over TCP, optionally shaped
//! by a [`NetworkProfile`] in both directions.
//!
//! Requests are fire-and-forget: failures come back as `Error` frames on the
//! event stream, in order with everything else.

use std::io::{BufReader, BufWriter};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use crate::hub::{EventSink, Hub};
use crate::netem::{NetworkProfile, ShapedLink};
use crate::wire::{read_frame, write_frame, Frame, FrameType, RoomId, WireError};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl EventSink for ShapedLink<Frame> {
    fn push(&self, frame: Frame) {
        let size = frame.encoded_len() + 4;
        self.send(frame, size);
    }
}

/// One client's view of the hub.
pub struct ClientLink {
    identity: String,
    uplink: Arc<dyn EventSink>,
    events: Receiver<Frame>,
    stream: Option<TcpStream>,
}

impl Drop for ClientLink {
    fn drop(&mut self) {
        if let Some(s) = &self.stream {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl ClientLink {
    pub fn identity(&self) -> &str {
        &self.identity
    }

    pub fn send(&self, frame: Frame) {
        self.uplink.push(frame);
    }

    pub fn open(&self, room: RoomId) {
        self.send(Frame::new(FrameType::Open, room, Vec::new()));
    }

    pub fn join(&self, room: RoomId) {
        self.send(Frame::new(FrameType::Join, room, Vec::new()));
    }

    pub fn publish(&self, room: RoomId, body: Vec<u8>) {
        self.send(Frame::new(FrameType::Publish, room, body));
    }

    pub fn leave(&self, room: RoomId) {
        self.send(Frame::new(FrameType::Leave, room, Vec::new()));
    }

    pub fn fetch(&self, room: RoomId, position: usize) {
        self.send(Frame::new(FrameType::Fetch, room, (position as u32).to_be_bytes().to_vec()));
    }

    pub fn close(&self, room: RoomId) {
        self.send(Frame::new(FrameType::Close, room, Vec::new()));
    }

    pub fn recv_deadline(&self, deadline: Instant) -> Result<Frame, RecvTimeoutError> {
        self.events.recv_deadline(deadline)
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Result<Frame, RecvTimeoutError> {
        self.events.recv_timeout(timeout)
    }
}

pub trait Connector: Send + Sync {
    fn connect(&self, identity: &str) -> Result<ClientLink, TransportError>;
}

/// Wraps `sink` in a shaped link when a profile is given.
fn shape(profile: Option<NetworkProfile>, sink: Arc<dyn EventSink>) -> Arc<dyn EventSink> {
    match profile {
        None => sink,
        Some(p) => Arc::new(ShapedLink::<Frame>::new(p, move |f| sink.push(f))),
    }
}

struct HubSide {
    hub: Arc<Hub>,
    identity: String,
    downlink: Arc<dyn EventSink>,
}

impl EventSink for HubSide {
    fn push(&self, frame: Frame) {
        let room = frame.room;
        if let Err(e) = self.hub.handle(&self.identity, frame, &self.downlink) {
            self.downlink.push(Frame::error(room, e));
        }
    }
}

/// Direct connections to a hub in the same process.
#[derive(Clone)]
pub struct InProcessConnector {
    pub hub: Arc<Hub>,
    pub profile: Option<NetworkProfile>,
}

impl InProcessConnector {
    pub fn new(hub: Arc<Hub>, profile: Option<NetworkProfile>) -> Self {
        InProcessConnector { hub, profile }
    }
}

impl Connector for InProcessConnector {
    fn connect(&self, identity: &str) -> Result<ClientLink, TransportError> {
        let (tx, rx) = unbounded::<Frame>();
        let downlink = shape(self.profile, Arc::new(tx));
        let hub_side = Arc::new(HubSide {
            hub: self.hub.clone(),
            identity: identity.to_owned(),
            downlink,
        });
        Ok(ClientLink {
            identity: identity.to_owned(),
            uplink: shape(self.profile, hub_side),
            events: rx,
            stream: None,
        })
    }
}

struct StreamSink(Mutex<BufWriter<TcpStream>>);

impl EventSink for StreamSink {
    fn push(&self, frame: Frame) {
        let mut w = self.0.lock().unwrap();
        if write_frame(&mut *w, &frame).is_err() {
            let _ = w.get_ref().shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Connections to a hub served by [`serve_tcp`].
#[derive(Clone)]
pub struct TcpConnector {
    pub addr: String,
    pub profile: Option<NetworkProfile>,
}

impl Connector for TcpConnector {
    fn connect(&self, identity: &str) -> Result<ClientLink, TransportError> {
        let stream = connect_stream(&self.addr)?;
        let reader = stream
            .try_clone()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let closer = stream
            .try_clone()
            .map_err(|e| TransportError::Connect(e.to_string()))?;
        let writer = Arc::new(StreamSink(Mutex::new(BufWriter::new(stream))));
        let mut hello = Frame::new(FrameType::Hello, RoomId::default(), Vec::new());
        hello.sender = identity.to_owned();
        writer.push(hello);

        let (tx, rx) = unbounded::<Frame>();
        let downlink = shape(self.profile, Arc::new(tx));
        thread::spawn(move || {
            let mut r = BufReader::new(reader);
            loop {
                match read_frame(&mut r) {
                    Ok(Some(f)) => downlink.push(f),
                    _ => {
                        downlink.push(Frame::error(RoomId::default(), TransportError::Closed));
                        break;
                    }
                }
            }
        });
        Ok(ClientLink {
            identity: identity.to_owned(),
            uplink: shape(self.profile, writer),
            events: rx,
            stream: Some(closer),
        })
    }
}

pub fn connect_stream(addr: &str) -> Result<TcpStream, TransportError> {
    let addrs: Vec<_> = addr
        .to_socket_addrs()
        .map_err(|e| TransportError::Connect(format!("{addr}: {e}")))?
        .collect();
    let mut last = format!("{addr}: no address");
    for a in addrs {
        match TcpStream::connect_timeout(&a, Duration::from_secs(5)) {
            Ok(s) => {
                let _ = s.set_nodelay(true);
                return Ok(s);
            }
            Err(e) => last = format!("{addr}: {e}"),
        }
    }
    Err(TransportError::Connect(last))
}

/// Serves `hub` on `listener` until the listener fails. Each connection
/// starts with a `Hello` frame naming the client.
pub fn serve_tcp(hub: Arc<Hub>, listener: TcpListener) {
    for stream in listener.incoming() {
        let Ok(stream) = stream else { continue };
        let hub = hub.clone();
        thread::spawn(move || {
            let _ = stream.set_nodelay(true);
            if let Err(e) = serve_connection(&hub, stream) {
                log::debug!("hub connection ended: {e}");
            }
        });
    }
}

fn serve_connection(hub: &Arc<Hub>, stream: TcpStream) -> Result<(), TransportError> {
    let writer = stream
        .try_clone()
        .map_err(|e| TransportError::Connect(e.to_string()))?;
    let sink: Arc<dyn EventSink> = Arc::new(StreamSink(Mutex::new(BufWriter::new(writer))));
    let mut r = BufReader::new(stream);
    let hello = read_frame(&mut r)?.ok_or(TransportError::Closed)?;
    if hello.kind != FrameType::Hello || hello.sender.is_empty() {
        sink.push(Frame::error(hello.room, "expected hello"));
        return Err(TransportError::Closed);
    }
    let identity = hello.sender;
    let mut joined = Vec::new();
    let result = loop {
        let frame = match read_frame(&mut r) {
            Ok(Some(f)) => f,
            Ok(None) => break Ok(()),
            Err(e) => break Err(e.into()),
        };
        let room = frame.room;
        if frame.kind == FrameType::Join {
            joined.push(room);
        }
        if let Err(e) = hub.handle(&identity, frame, &sink) {
            sink.push(Frame::error(room, e));
        }
    };
    for room in joined {
        hub.leave(room, &identity);
    }
    result
}

/// A sink that forwards into a channel, for callers that want raw frames.
pub fn channel_sink() -> (Arc<dyn EventSink>, Receiver<Frame>) {
    let (tx, rx): (Sender<Frame>, _) = unbounded();
    (Arc::new(tx), rx)
}
