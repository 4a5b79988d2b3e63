//! One agent's membership in one room: echo broadcast, sealed direct
//! messages and abort signalling on top of a [`ClientLink`].

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::time::Instant;

use crossbeam_channel::RecvTimeoutError;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::echo::{Echo, EchoError, EchoOutput, RoomMessage};
use crate::p2p::{P2pError, P2pKeys};
use crate::transport::ClientLink;
use crate::wire::{Frame, FrameType, RoomId};

const DATA_APP: u8 = 1;
const DATA_KEY: u8 = 2;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoomError {
    #[error(transparent)]
    Echo(#[from] EchoError),
    #[error(transparent)]
    P2p(#[from] P2pError),
    #[error("hub: {0}")]
    Hub(String),
    #[error("{from} aborted: {reason}")]
    PeerAbort { from: String, reason: String },
    #[error("room closed")]
    Closed,
    #[error("deadline passed with nothing outstanding")]
    Timeout,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoomEvent {
    Broadcast { from: String, data: Vec<u8> },
    Direct { from: String, to_party: u32, data: Vec<u8> },
}

enum Refetch {
    /// Disputed by the echo layer.
    Echo,
    /// Unreadable or unauthenticated live copy; process the stored one.
    Reprocess,
}

pub struct RoomSession {
    link: ClientLink,
    room: RoomId,
    me: String,
    echo: Echo,
    p2p: Option<P2pKeys>,
    rng: ChaCha20Rng,
    /// History position of the next live frame.
    position: usize,
    ready: VecDeque<RoomEvent>,
    parked: Vec<(usize, String, u32, Vec<u8>)>,
    refetch: HashMap<usize, Refetch>,
}

impl RoomSession {
    /// Joins `room`. With `p2p`, also exchanges channel keys with every
    /// other member before returning.
    pub fn join(
        link: ClientLink,
        room: RoomId,
        members: BTreeSet<String>,
        mut rng: ChaCha20Rng,
        p2p: bool,
        deadline: Instant,
    ) -> Result<Self, RoomError> {
        let me = link.identity().to_owned();
        let keys = p2p.then(|| P2pKeys::generate(&me, room, &mut rng));
        let mut s = RoomSession {
            echo: Echo::new(&me, members),
            link,
            room,
            me,
            p2p: keys,
            rng,
            position: 0,
            ready: VecDeque::new(),
            parked: Vec::new(),
            refetch: HashMap::new(),
        };
        s.link.join(room);
        if let Some(k) = &s.p2p {
            let mut data = vec![DATA_KEY];
            data.extend_from_slice(&k.announcement());
            let out = s.echo.broadcast(data);
            s.apply(out)?;
            let peers = s.echo.members().len() - 1;
            while s.p2p.as_ref().map_or(0, P2pKeys::peer_count) < peers {
                s.pump(deadline)?;
            }
        }
        Ok(s)
    }

    pub fn me(&self) -> &str {
        &self.me
    }

    pub fn broadcast(&mut self, data: &[u8]) -> Result<(), RoomError> {
        let mut payload = Vec::with_capacity(data.len() + 1);
        payload.push(DATA_APP);
        payload.extend_from_slice(data);
        let out = self.echo.broadcast(payload);
        self.apply(out)
    }

    /// Seals `data` for `to_party` hosted by agent `to`. Messages to
    /// ourselves never leave the process.
    pub fn send_direct(&mut self, to: &str, to_party: u32, data: &[u8]) -> Result<(), RoomError> {
        if to == self.me {
            self.ready.push_back(RoomEvent::Direct {
                from: self.me.clone(),
                to_party,
                data: data.to_vec(),
            });
            return Ok(());
        }
        let keys = self
            .p2p
            .as_ref()
            .ok_or_else(|| P2pError::UnknownRecipient(to.to_owned()))?;
        let sealed = keys.seal(to, to_party, data, &mut self.rng)?;
        self.link.publish(
            self.room,
            RoomMessage::Direct {
                to_agent: to.to_owned(),
                to_party,
                sealed,
            }
            .to_bytes(),
        );
        Ok(())
    }

    /// Next delivered event. At the deadline, outstanding echo messages
    /// surface as `MissingConfirmation`.
    pub fn next_event(&mut self, deadline: Instant) -> Result<RoomEvent, RoomError> {
        loop {
            if let Some(e) = self.ready.pop_front() {
                return Ok(e);
            }
            self.pump(deadline)?;
        }
    }

    /// Echo messages, ours included, still waiting for confirmations.
    pub fn outstanding(&self) -> usize {
        self.echo.outstanding()
    }

    /// Processes frames until every echo message we know of has been
    /// confirmed by all members. A party must not report success before
    /// this: its own last broadcast may still be disputed by someone else.
    pub fn settle(&mut self, deadline: Instant) -> Result<(), RoomError> {
        while self.echo.outstanding() > 0 {
            self.pump(deadline)?;
        }
        Ok(())
    }

    /// Tells the other members we are giving up.
    pub fn abort(&mut self, reason: &str) {
        self.link.publish(
            self.room,
            RoomMessage::Abort {
                reason: reason.to_owned(),
            }
            .to_bytes(),
        );
    }

    pub fn leave(self) {
        self.link.leave(self.room);
    }

    fn pump(&mut self, deadline: Instant) -> Result<(), RoomError> {
        let frame = match self.link.recv_deadline(deadline) {
            Ok(f) => f,
            Err(RecvTimeoutError::Timeout) => {
                return Err(match self.echo.outstanding() {
                    0 => RoomError::Timeout,
                    n => EchoError::MissingConfirmation(n).into(),
                })
            }
            Err(RecvTimeoutError::Disconnected) => return Err(RoomError::Closed),
        };
        self.on_frame(frame)
    }

    fn on_frame(&mut self, frame: Frame) -> Result<(), RoomError> {
        if frame.room != self.room && frame.kind != FrameType::Error {
            return Ok(());
        }
        match frame.kind {
            FrameType::Deliver => {
                let pos = self.position;
                self.position += 1;
                self.on_message(pos, &frame.sender, &frame.body, false)
            }
            FrameType::Replay => {
                if frame.body.len() < 4 {
                    return Err(RoomError::Hub("short replay".into()));
                }
                let pos = u32::from_be_bytes(frame.body[..4].try_into().unwrap()) as usize;
                let stored = Frame::from_bytes(&frame.body[4..])
                    .map_err(|e| RoomError::Hub(e.to_string()))?;
                match self.refetch.remove(&pos) {
                    Some(Refetch::Echo) => {
                        let msg = RoomMessage::from_bytes(&stored.body)
                            .ok_or_else(|| EchoError::Malformed(stored.sender.clone()))?;
                        let out = self.echo.on_refetched(pos, &stored.sender, &msg)?;
                        self.apply(out)
                    }
                    Some(Refetch::Reprocess) => self.on_message(pos, &stored.sender, &stored.body, true),
                    None => Ok(()),
                }
            }
            FrameType::Error => Err(RoomError::Hub(String::from_utf8_lossy(&frame.body).into_owned())),
            FrameType::Closed => Err(RoomError::Closed),
            _ => Ok(()),
        }
    }

    fn request(&mut self, pos: usize, why: Refetch) {
        self.refetch.insert(pos, why);
        self.link.fetch(self.room, pos);
    }

    fn on_message(&mut self, pos: usize, sender: &str, body: &[u8], stored: bool) -> Result<(), RoomError> {
        let Some(msg) = RoomMessage::from_bytes(body) else {
            if stored {
                return Err(EchoError::Malformed(sender.to_owned()).into());
            }
            self.request(pos, Refetch::Reprocess);
            return Ok(());
        };
        match &msg {
            RoomMessage::Payload { .. } | RoomMessage::Confirm { .. } => {
                let out = self.echo.on_message(sender, &msg, pos, stored)?;
                self.apply(out)
            }
            RoomMessage::Direct {
                to_agent,
                to_party,
                sealed,
            } => {
                if *to_agent != self.me || sender == self.me {
                    return Ok(());
                }
                self.open_direct(pos, sender, *to_party, sealed.clone(), stored)
            }
            RoomMessage::Abort { reason } => {
                if sender == self.me {
                    return Ok(());
                }
                Err(RoomError::PeerAbort {
                    from: sender.to_owned(),
                    reason: reason.clone(),
                })
            }
        }
    }

    fn open_direct(
        &mut self,
        pos: usize,
        sender: &str,
        to_party: u32,
        sealed: Vec<u8>,
        stored: bool,
    ) -> Result<(), RoomError> {
        let keys = self
            .p2p
            .as_ref()
            .ok_or_else(|| P2pError::UnknownRecipient(sender.to_owned()))?;
        if !keys.knows(sender) {
            // The sender's key announcement is still in echo.
            self.parked.push((pos, sender.to_owned(), to_party, sealed));
            return Ok(());
        }
        match keys.open(sender, to_party, &sealed) {
            Ok(data) => {
                self.ready.push_back(RoomEvent::Direct {
                    from: sender.to_owned(),
                    to_party,
                    data,
                });
                Ok(())
            }
            Err(e) if stored => Err(e.into()),
            Err(_) => {
                self.request(pos, Refetch::Reprocess);
                Ok(())
            }
        }
    }

    fn apply(&mut self, out: EchoOutput) -> Result<(), RoomError> {
        for body in out.publish {
            self.link.publish(self.room, body);
        }
        for pos in out.fetch {
            self.request(pos, Refetch::Echo);
        }
        for (from, data) in out.delivered {
            match data.split_first() {
                Some((&DATA_APP, rest)) => self.ready.push_back(RoomEvent::Broadcast {
                    from,
                    data: rest.to_vec(),
                }),
                Some((&DATA_KEY, rest)) if rest.len() == 32 => {
                    if from == self.me {
                        continue;
                    }
                    let Some(keys) = self.p2p.as_mut() else {
                        continue;
                    };
                    keys.add_peer(&from, rest.try_into().unwrap())?;
                    let parked: Vec<_> = std::mem::take(&mut self.parked);
                    for (pos, sender, to_party, sealed) in parked {
                        if sender == from {
                            self.open_direct(pos, &sender, to_party, sealed, false)?;
                        } else {
                            self.parked.push((pos, sender, to_party, sealed));
                        }
                    }
                }
                _ => return Err(EchoError::Malformed(from).into()),
            }
        }
        Ok(())
    }
}
