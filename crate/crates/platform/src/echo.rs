//! Echo broadcast over the hub, plus the codec for everything agents publish
//! into a room.
//!
//! On receiving a payload every member publishes a confirmation carrying the
//! SHA-256 digest of what it saw. A payload is delivered only once
//! confirmations from all members are in and all digests agree. A
//! disagreement is first checked against the hub's stored copy of the
//! disputed frames, since a damaged live copy is not a dishonest peer; if it
//! persists, the member aborts. This gives agreement (all honest parties
//! deliver the same bytes or none do) but no way to tell who cheated.
//!
//! Agreement covers a party's own messages only once they are settled: a
//! party that stops before its last broadcast is confirmed by everyone may
//! finish while another member aborts. See `RoomSession::settle`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EchoError {
    #[error("digest mismatch on message {seq} from {originator} (reported by {reporter})")]
    DigestMismatch {
        originator: String,
        seq: u32,
        reporter: String,
    },
    #[error("missing confirmations for {0} message(s)")]
    MissingConfirmation(usize),
    #[error("{0} is not a member of the room")]
    NotMember(String),
    #[error("malformed room message from {0}")]
    Malformed(String),
}

const TAG_PAYLOAD: u8 = 1;
const TAG_CONFIRM: u8 = 2;
const TAG_DIRECT: u8 = 3;
const TAG_ABORT: u8 = 4;

/// Body of a published frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RoomMessage {
    Payload {
        seq: u32,
        data: Vec<u8>,
    },
    Confirm {
        originator: String,
        seq: u32,
        digest: [u8; 32],
    },
    /// Sealed point-to-point message; `sealed` is opaque to everyone but the
    /// recipient agent.
    Direct {
        to_agent: String,
        to_party: u32,
        sealed: Vec<u8>,
    },
    Abort {
        reason: String,
    },
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u16).to_be_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a>(&'a [u8]);

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.0.len() < n {
            return None;
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Some(a)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_be_bytes(b.try_into().unwrap()))
    }

    fn string(&mut self) -> Option<String> {
        let len = self.take(2).map(|b| u16::from_be_bytes([b[0], b[1]]))? as usize;
        String::from_utf8(self.take(len)?.to_vec()).ok()
    }
}

impl RoomMessage {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            RoomMessage::Payload { seq, data } => {
                out.push(TAG_PAYLOAD);
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(data);
            }
            RoomMessage::Confirm {
                originator,
                seq,
                digest,
            } => {
                out.push(TAG_CONFIRM);
                put_str(&mut out, originator);
                out.extend_from_slice(&seq.to_be_bytes());
                out.extend_from_slice(digest);
            }
            RoomMessage::Direct {
                to_agent,
                to_party,
                sealed,
            } => {
                out.push(TAG_DIRECT);
                put_str(&mut out, to_agent);
                out.extend_from_slice(&to_party.to_be_bytes());
                out.extend_from_slice(sealed);
            }
            RoomMessage::Abort { reason } => {
                out.push(TAG_ABORT);
                out.extend_from_slice(reason.as_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Option<Self> {
        let (&tag, rest) = bytes.split_first()?;
        let mut r = Reader(rest);
        let msg = match tag {
            TAG_PAYLOAD => RoomMessage::Payload {
                seq: r.u32()?,
                data: r.take(r.0.len())?.to_vec(),
            },
            TAG_CONFIRM => {
                let originator = r.string()?;
                let seq = r.u32()?;
                let digest = r.take(32)?.try_into().unwrap();
                if !r.0.is_empty() {
                    return None;
                }
                RoomMessage::Confirm {
                    originator,
                    seq,
                    digest,
                }
            }
            TAG_DIRECT => RoomMessage::Direct {
                to_agent: r.string()?,
                to_party: r.u32()?,
                sealed: r.take(r.0.len())?.to_vec(),
            },
            TAG_ABORT => RoomMessage::Abort {
                reason: String::from_utf8_lossy(rest).into_owned(),
            },
            _ => return None,
        };
        Some(msg)
    }
}

pub fn payload_digest(originator: &str, seq: u32, data: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((originator.len() as u16).to_be_bytes());
    h.update(originator.as_bytes());
    h.update(seq.to_be_bytes());
    h.update(data);
    h.finalize().into()
}

struct Confirmation {
    digest: [u8; 32],
    position: Option<usize>,
    verified: bool,
}

#[derive(Default)]
struct Pending {
    data: Option<Vec<u8>>,
    data_position: Option<usize>,
    data_verified: bool,
    /// Digest of the payload as we currently hold it.
    own: Option<[u8; 32]>,
    /// Digest we put in our own confirmation.
    published: Option<[u8; 32]>,
    confirms: BTreeMap<String, Confirmation>,
    awaiting: BTreeSet<usize>,
}

/// What handling a frame produced.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct EchoOutput {
    /// Bodies to publish into the room.
    pub publish: Vec<Vec<u8>>,
    /// Payloads that completed echo, as `(originator, data)`.
    pub delivered: Vec<(String, Vec<u8>)>,
    /// History positions whose stored copy must be re-read from the hub.
    pub fetch: Vec<usize>,
}

impl EchoOutput {
    pub fn merge(&mut self, other: EchoOutput) {
        self.publish.extend(other.publish);
        self.delivered.extend(other.delivered);
        self.fetch.extend(other.fetch);
    }
}

/// Per-room echo state of one member.
///
/// When a confirmation disagrees with our digest we cannot tell whether the
/// confirmer saw other bytes or its confirmation was damaged on the way to
/// us. Before aborting we therefore re-read the disputed frames (and the
/// payload) from the hub's stored history. A disagreement that survives the
/// re-read, or a re-read payload that differs from the one we already
/// confirmed, aborts.
pub struct Echo {
    me: String,
    members: BTreeSet<String>,
    next_seq: u32,
    pending: BTreeMap<(String, u32), Pending>,
    delivered: HashSet<(String, u32)>,
    fetching: BTreeMap<usize, (String, u32)>,
}

impl Echo {
    pub fn new(me: &str, members: impl IntoIterator<Item = String>) -> Self {
        let mut members: BTreeSet<String> = members.into_iter().collect();
        members.insert(me.to_owned());
        Echo {
            me: me.to_owned(),
            members,
            next_seq: 0,
            pending: BTreeMap::new(),
            delivered: HashSet::new(),
            fetching: BTreeMap::new(),
        }
    }

    pub fn members(&self) -> &BTreeSet<String> {
        &self.members
    }

    /// Messages still waiting for confirmations.
    pub fn outstanding(&self) -> usize {
        self.pending.len()
    }

    /// Starts a broadcast; the returned output carries the frames to publish
    /// and, in a single-member room, the immediate delivery.
    pub fn broadcast(&mut self, data: Vec<u8>) -> EchoOutput {
        let seq = self.next_seq;
        self.next_seq += 1;
        let digest = payload_digest(&self.me, seq, &data);
        let mut out = EchoOutput::default();
        out.publish.push(RoomMessage::Payload { seq, data: data.clone() }.to_bytes());
        out.publish.push(
            RoomMessage::Confirm {
                originator: self.me.clone(),
                seq,
                digest,
            }
            .to_bytes(),
        );
        let key = (self.me.clone(), seq);
        let me = self.me.clone();
        let p = self.pending.entry(key.clone()).or_default();
        p.data = Some(data);
        p.data_verified = true;
        p.own = Some(digest);
        p.published = Some(digest);
        p.confirms.insert(
            me,
            Confirmation {
                digest,
                position: None,
                verified: true,
            },
        );
        // Cannot fail: nothing else is known about this message yet.
        let _ = self.evaluate(&key, &mut out);
        out
    }

    /// Handles a published room message stamped with `sender`, found at
    /// `position` in the room history. `authoritative` marks a copy re-read
    /// from the hub rather than a live delivery. Our own frames echoed back
    /// by the hub are ignored.
    pub fn on_message(
        &mut self,
        sender: &str,
        msg: &RoomMessage,
        position: usize,
        authoritative: bool,
    ) -> Result<EchoOutput, EchoError> {
        let mut out = EchoOutput::default();
        if sender == self.me {
            return Ok(out);
        }
        if !self.members.contains(sender) {
            return Err(EchoError::NotMember(sender.to_owned()));
        }
        let me = self.me.clone();
        match msg {
            RoomMessage::Payload { seq, data } => {
                let key = (sender.to_owned(), *seq);
                if self.delivered.contains(&key) {
                    return Err(EchoError::Malformed(sender.to_owned()));
                }
                let p = self.pending.entry(key.clone()).or_default();
                if p.data.is_some() {
                    return Err(EchoError::Malformed(sender.to_owned()));
                }
                let digest = payload_digest(sender, *seq, data);
                p.data = Some(data.clone());
                p.data_position = Some(position);
                p.data_verified = authoritative;
                p.own = Some(digest);
                p.published = Some(digest);
                p.confirms.insert(
                    me,
                    Confirmation {
                        digest,
                        position: None,
                        verified: true,
                    },
                );
                out.publish.push(
                    RoomMessage::Confirm {
                        originator: sender.to_owned(),
                        seq: *seq,
                        digest,
                    }
                    .to_bytes(),
                );
                self.evaluate(&key, &mut out)?;
            }
            RoomMessage::Confirm {
                originator,
                seq,
                digest,
            } => {
                if !self.members.contains(originator) {
                    return Err(EchoError::NotMember(originator.clone()));
                }
                let key = (originator.clone(), *seq);
                if self.delivered.contains(&key) {
                    return Err(EchoError::Malformed(sender.to_owned()));
                }
                let p = self.pending.entry(key.clone()).or_default();
                let c = Confirmation {
                    digest: *digest,
                    position: Some(position),
                    verified: authoritative,
                };
                if p.confirms.insert(sender.to_owned(), c).is_some() {
                    return Err(EchoError::Malformed(sender.to_owned()));
                }
                self.evaluate(&key, &mut out)?;
            }
            RoomMessage::Direct { .. } | RoomMessage::Abort { .. } => {}
        }
        Ok(out)
    }

    /// Feeds the stored copy of a frame we asked to re-read.
    pub fn on_refetched(
        &mut self,
        position: usize,
        sender: &str,
        msg: &RoomMessage,
    ) -> Result<EchoOutput, EchoError> {
        let mut out = EchoOutput::default();
        let Some(key) = self.fetching.remove(&position) else {
            return Ok(out);
        };
        let Some(p) = self.pending.get_mut(&key) else {
            return Ok(out);
        };
        p.awaiting.remove(&position);
        match msg {
            RoomMessage::Payload { seq, data } if sender == key.0 && *seq == key.1 => {
                p.own = Some(payload_digest(sender, *seq, data));
                p.data = Some(data.clone());
                p.data_verified = true;
            }
            RoomMessage::Confirm {
                originator,
                seq,
                digest,
            } if *originator == key.0 && *seq == key.1 => {
                p.confirms.insert(
                    sender.to_owned(),
                    Confirmation {
                        digest: *digest,
                        position: Some(position),
                        verified: true,
                    },
                );
            }
            _ => return Err(EchoError::Malformed(sender.to_owned())),
        }
        self.evaluate(&key, &mut out)?;
        Ok(out)
    }

    fn evaluate(&mut self, key: &(String, u32), out: &mut EchoOutput) -> Result<(), EchoError> {
        let p = self.pending.get_mut(key).expect("pending entry");
        if !p.awaiting.is_empty() {
            return Ok(());
        }
        let Some(own) = p.own else { return Ok(()) };
        let mismatch = |reporter: &str| EchoError::DigestMismatch {
            originator: key.0.clone(),
            seq: key.1,
            reporter: reporter.to_owned(),
        };
        if p.published.is_some_and(|d| d != own) {
            return Err(mismatch(&self.me));
        }
        let bad: Vec<(&String, &Confirmation)> =
            p.confirms.iter().filter(|(_, c)| c.digest != own).collect();
        if !bad.is_empty() {
            let mut refetch: Vec<usize> = bad
                .iter()
                .filter(|(_, c)| !c.verified)
                .filter_map(|(_, c)| c.position)
                .collect();
            if !p.data_verified {
                refetch.extend(p.data_position);
            }
            if refetch.is_empty() {
                return Err(mismatch(bad[0].0));
            }
            for pos in &refetch {
                p.awaiting.insert(*pos);
                self.fetching.insert(*pos, key.clone());
            }
            out.fetch.extend(refetch);
            return Ok(());
        }
        if self.members.iter().all(|m| p.confirms.contains_key(m)) {
            let p = self.pending.remove(key).unwrap();
            self.delivered.insert(key.clone());
            out.delivered.push((key.0.clone(), p.data.unwrap()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (1..=n).map(|i| format!("a{i}")).collect()
    }

    type Outcome = Result<Vec<(String, Vec<u8>)>, EchoError>;

    /// Fully connected in-memory run over a shared history; `tamper` may
    /// alter the live copy of a frame for one recipient, re-reads see the
    /// stored original.
    fn run(n: usize, tamper: impl Fn(usize, &str, &mut Vec<u8>)) -> Vec<Outcome> {
        let ids = names(n);
        let mut echoes: Vec<Echo> = ids.iter().map(|m| Echo::new(m, ids.clone())).collect();
        let mut history: Vec<(String, Vec<u8>)> = Vec::new();
        let mut results: Vec<Outcome> = (0..n).map(|_| Ok(Vec::new())).collect();
        let mut fetches: Vec<(usize, usize)> = Vec::new();
        let absorb = |i: usize,
                      r: Result<EchoOutput, EchoError>,
                      results: &mut Vec<Outcome>,
                      history: &mut Vec<(String, Vec<u8>)>,
                      fetches: &mut Vec<(usize, usize)>| match r {
            Ok(out) => {
                if let Ok(d) = &mut results[i] {
                    d.extend(out.delivered);
                }
                history.extend(out.publish.into_iter().map(|b| (ids[i].clone(), b)));
                fetches.extend(out.fetch.into_iter().map(|p| (i, p)));
            }
            Err(e) => results[i] = Err(e),
        };
        for (i, echo) in echoes.iter_mut().enumerate() {
            let out = echo.broadcast(format!("hello from {i}").into_bytes());
            absorb(i, Ok(out), &mut results, &mut history, &mut fetches);
        }
        let mut pos = 0;
        while pos < history.len() || !fetches.is_empty() {
            for (i, p) in std::mem::take(&mut fetches) {
                if results[i].is_err() {
                    continue;
                }
                let (sender, body) = history[p].clone();
                let msg = RoomMessage::from_bytes(&body).unwrap();
                let r = echoes[i].on_refetched(p, &sender, &msg);
                absorb(i, r, &mut results, &mut history, &mut fetches);
            }
            if pos == history.len() {
                continue;
            }
            let (sender, body) = history[pos].clone();
            for i in 0..n {
                if results[i].is_err() {
                    continue;
                }
                let mut b = body.clone();
                tamper(pos, &ids[i], &mut b);
                let r = RoomMessage::from_bytes(&b)
                    .ok_or_else(|| EchoError::Malformed(sender.clone()))
                    .and_then(|m| echoes[i].on_message(&sender, &m, pos, false));
                absorb(i, r, &mut results, &mut history, &mut fetches);
            }
            pos += 1;
        }
        for (i, e) in echoes.iter().enumerate() {
            if results[i].is_ok() && e.outstanding() > 0 {
                results[i] = Err(EchoError::MissingConfirmation(e.outstanding()));
            }
        }
        results
    }

    #[test]
    fn honest_members_deliver_everything() {
        for r in run(3, |_, _, _| {}) {
            assert_eq!(r.unwrap().len(), 3);
        }
    }

    #[test]
    fn single_member_delivers_immediately() {
        let mut e = Echo::new("solo", Vec::new());
        let out = e.broadcast(b"x".to_vec());
        assert_eq!(out.delivered, vec![("solo".to_string(), b"x".to_vec())]);
        assert_eq!(e.outstanding(), 0);
    }

    #[test]
    fn corrupted_payload_aborts_everyone() {
        // Positions 0, 2 and 4 hold the three payloads.
        for pos in [0, 2, 4] {
            for target in names(3) {
                let results = run(3, |p, to, b| {
                    if p == pos && to == target {
                        *b.last_mut().unwrap() ^= 1;
                    }
                });
                let owner = format!("a{}", pos / 2 + 1);
                if owner == target {
                    // Our own payload echoed back is ignored.
                    assert!(results.iter().all(|r| r.is_ok()));
                } else {
                    assert!(
                        results
                            .iter()
                            .all(|r| matches!(r, Err(EchoError::DigestMismatch { .. }))),
                        "{pos} {target}: {results:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn every_position_is_all_or_none() {
        let total = run(3, |_, _, _| {}).len();
        assert_eq!(total, 3);
        for pos in 0..30 {
            for target in names(3) {
                let results = run(3, |p, to, b| {
                    if p == pos && to == target {
                        *b.last_mut().unwrap() ^= 1;
                    }
                });
                let ok = results.iter().filter(|r| r.is_ok()).count();
                assert!(ok == 0 || ok == 3, "{pos} {target}: {results:?}");
                if ok == 3 {
                    for r in &results {
                        assert_eq!(r.as_ref().unwrap().len(), 3);
                    }
                }
            }
        }
    }

    #[test]
    fn codec_roundtrip() {
        let msgs = [
            RoomMessage::Payload {
                seq: 3,
                data: vec![1, 2],
            },
            RoomMessage::Confirm {
                originator: "x".into(),
                seq: 9,
                digest: [5; 32],
            },
            RoomMessage::Direct {
                to_agent: "y".into(),
                to_party: 0x8000_0002,
                sealed: vec![9; 40],
            },
            RoomMessage::Abort {
                reason: "bye".into(),
            },
        ];
        for m in msgs {
            assert_eq!(RoomMessage::from_bytes(&m.to_bytes()), Some(m));
        }
        assert_eq!(RoomMessage::from_bytes(&[]), None);
        assert_eq!(RoomMessage::from_bytes(&[9]), None);
    }
}
