//! Message hub: rooms keyed by request id, broadcast to every member, history
//! replay for late joiners, erasure on close.
//!
//! The hub stamps each published frame with the publisher's identity, so a
//! member cannot forge another sender. It is trusted for liveness only:
//! integrity of broadcasts rests on the echo layer and P2P payloads are
//! sealed end to end.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use crossbeam_channel::{unbounded, Receiver, Sender};
use thiserror::Error;

use crate::wire::{Frame, FrameType, RoomId};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HubError {
    #[error("unknown room")]
    UnknownRoom,
    #[error("room was closed")]
    RoomClosed,
    #[error("{0} is not a member of the room")]
    NotMember(String),
    #[error("no frame at position {0}")]
    NoSuchFrame(usize),
    #[error("fault injection is disabled")]
    FaultsDisabled,
    #[error("unexpected {0:?} frame")]
    UnexpectedFrame(FrameType),
}

/// Where the hub pushes frames for one member connection.
pub trait EventSink: Send + Sync {
    fn push(&self, frame: Frame);
}

impl EventSink for Sender<Frame> {
    fn push(&self, frame: Frame) {
        let _ = self.send(frame);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultAction {
    /// Flip the lowest bit of the last body byte.
    Corrupt,
    Drop,
}

/// Tampers with the copy of one published frame sent to one member.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fault {
    /// Restrict to one room; `None` matches any room.
    pub room: Option<RoomId>,
    /// Index of the frame in the room's history.
    pub position: usize,
    pub target: String,
    pub action: FaultAction,
}

#[derive(Clone, Debug, Default)]
pub struct HubConfig {
    pub faults_enabled: bool,
}

impl HubConfig {
    /// Fault injection is only available when `TDH_FAULTS=1`.
    pub fn from_env() -> Self {
        HubConfig {
            faults_enabled: std::env::var("TDH_FAULTS").map(|v| v == "1").unwrap_or(false),
        }
    }
}

struct Member {
    identity: String,
    sink: Arc<dyn EventSink>,
}

#[derive(Default)]
struct Room {
    history: Vec<Frame>,
    members: Vec<Member>,
}

#[derive(Default)]
pub struct Hub {
    rooms: Mutex<HashMap<RoomId, Arc<Mutex<Room>>>>,
    closed: Mutex<HashSet<RoomId>>,
    faults: Mutex<Vec<Fault>>,
    taps: Mutex<Vec<Sender<Frame>>>,
    config: HubConfig,
}

impl Hub {
    pub fn new(config: HubConfig) -> Arc<Hub> {
        Arc::new(Hub {
            config,
            ..Hub::default()
        })
    }

    fn room(&self, id: RoomId) -> Result<Arc<Mutex<Room>>, HubError> {
        if let Some(r) = self.rooms.lock().unwrap().get(&id) {
            return Ok(r.clone());
        }
        if self.closed.lock().unwrap().contains(&id) {
            Err(HubError::RoomClosed)
        } else {
            Err(HubError::UnknownRoom)
        }
    }

    /// Idempotent. A closed room cannot be reopened.
    pub fn open(&self, id: RoomId) -> Result<(), HubError> {
        if self.closed.lock().unwrap().contains(&id) {
            return Err(HubError::RoomClosed);
        }
        self.rooms.lock().unwrap().entry(id).or_default();
        Ok(())
    }

    /// Replays the full history to `sink`, then adds it as a live member.
    /// Joining again under the same identity replaces the previous sink.
    pub fn join(&self, id: RoomId, identity: &str, sink: Arc<dyn EventSink>) -> Result<(), HubError> {
        let room = self.room(id)?;
        let mut room = room.lock().unwrap();
        for f in &room.history {
            sink.push(f.clone());
        }
        room.members.retain(|m| m.identity != identity);
        room.members.push(Member {
            identity: identity.to_owned(),
            sink,
        });
        Ok(())
    }

    pub fn leave(&self, id: RoomId, identity: &str) {
        if let Ok(room) = self.room(id) {
            room.lock().unwrap().members.retain(|m| m.identity != identity);
        }
    }

    /// Appends to history and delivers to every member, the sender included.
    pub fn publish(&self, id: RoomId, identity: &str, body: Vec<u8>) -> Result<(), HubError> {
        let room = self.room(id)?;
        let mut room = room.lock().unwrap();
        if !room.members.iter().any(|m| m.identity == identity) {
            return Err(HubError::NotMember(identity.to_owned()));
        }
        let frame = Frame {
            kind: FrameType::Deliver,
            room: id,
            sender: identity.to_owned(),
            body,
        };
        let position = room.history.len();
        room.history.push(frame.clone());
        let faults: Vec<Fault> = if self.config.faults_enabled {
            self.faults
                .lock()
                .unwrap()
                .iter()
                .filter(|f| f.position == position && f.room.is_none_or(|r| r == id))
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        for m in &room.members {
            match faults.iter().find(|f| f.target == m.identity) {
                None => m.sink.push(frame.clone()),
                Some(f) if f.action == FaultAction::Drop => {}
                Some(_) => {
                    let mut bad = frame.clone();
                    if let Some(b) = bad.body.last_mut() {
                        *b ^= 1;
                    }
                    m.sink.push(bad);
                }
            }
        }
        self.taps.lock().unwrap().retain(|t| t.send(frame.clone()).is_ok());
        Ok(())
    }

    /// Erases the room's history and notifies its members.
    pub fn close(&self, id: RoomId) -> Result<(), HubError> {
        let room = self.rooms.lock().unwrap().remove(&id);
        self.closed.lock().unwrap().insert(id);
        let room = room.ok_or(HubError::UnknownRoom)?;
        let mut room = room.lock().unwrap();
        room.history.clear();
        room.history.shrink_to_fit();
        for m in room.members.drain(..) {
            m.sink.push(Frame::new(FrameType::Closed, id, Vec::new()));
        }
        Ok(())
    }

    /// Sends the stored copy of history frame `position` to `sink`.
    pub fn fetch(&self, id: RoomId, identity: &str, position: usize, sink: &Arc<dyn EventSink>) -> Result<(), HubError> {
        let room = self.room(id)?;
        let room = room.lock().unwrap();
        if !room.members.iter().any(|m| m.identity == identity) {
            return Err(HubError::NotMember(identity.to_owned()));
        }
        let frame = room.history.get(position).ok_or(HubError::NoSuchFrame(position))?;
        let mut body = (position as u32).to_be_bytes().to_vec();
        body.extend_from_slice(&frame.to_bytes());
        sink.push(Frame::new(FrameType::Replay, id, body));
        Ok(())
    }

    /// Current history of an open room.
    pub fn history(&self, id: RoomId) -> Result<Vec<Frame>, HubError> {
        Ok(self.room(id)?.lock().unwrap().history.clone())
    }

    pub fn open_rooms(&self) -> usize {
        self.rooms.lock().unwrap().len()
    }

    pub fn inject(&self, fault: Fault) -> Result<(), HubError> {
        if !self.config.faults_enabled {
            return Err(HubError::FaultsDisabled);
        }
        self.faults.lock().unwrap().push(fault);
        Ok(())
    }

    pub fn clear_faults(&self) {
        self.faults.lock().unwrap().clear();
    }

    /// Observer receiving every published frame as stored in history.
    pub fn tap(&self) -> Receiver<Frame> {
        let (tx, rx) = unbounded();
        self.taps.lock().unwrap().push(tx);
        rx
    }

    /// Dispatches a client request frame on behalf of `identity`.
    pub fn handle(&self, identity: &str, frame: Frame, sink: &Arc<dyn EventSink>) -> Result<(), HubError> {
        let ack = |kind: FrameType| sink.push(Frame::new(FrameType::Ack, frame.room, vec![kind as u8]));
        match frame.kind {
            FrameType::Open => self.open(frame.room).map(|_| ack(FrameType::Open)),
            FrameType::Join => self.join(frame.room, identity, sink.clone()),
            FrameType::Publish => self.publish(frame.room, identity, frame.body),
            FrameType::Close => self.close(frame.room).map(|_| ack(FrameType::Close)),
            FrameType::Fetch => {
                let pos = frame
                    .body
                    .get(..4)
                    .map(|b| u32::from_be_bytes(b.try_into().unwrap()) as usize)
                    .ok_or(HubError::UnexpectedFrame(FrameType::Fetch))?;
                self.fetch(frame.room, identity, pos, sink)
            }
            FrameType::Leave => {
                self.leave(frame.room, identity);
                Ok(())
            }
            other => Err(HubError::UnexpectedFrame(other)),
        }
    }
}
