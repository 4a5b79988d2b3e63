//! Wire unit shared by all protocol engines.
//!
//! Layout: `session_id (16) || protocol_id (1) || round (1) || sender (4, be)
//! || kind (1) || body length (4, be) || body`.

use std::fmt;

use super::ProtocolError;

pub const SESSION_ID_LEN: usize = 16;
pub const HEADER_LEN: usize = SESSION_ID_LEN + 1 + 1 + 4 + 1 + 4;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SessionId(pub [u8; SESSION_ID_LEN]);

impl fmt::Debug for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionId(")?;
        for b in &self.0[..4] {
            write!(f, "{b:02x}")?;
        }
        write!(f, "..)")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum ProtocolId {
    NaiveKeygen = 1,
    NaiveExchange = 2,
    NaiveReshare = 3,
    ThresholdKeygen = 4,
    ThresholdExchange = 5,
    ThresholdReshare = 6,
}

impl ProtocolId {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => ProtocolId::NaiveKeygen,
            2 => ProtocolId::NaiveExchange,
            3 => ProtocolId::NaiveReshare,
            4 => ProtocolId::ThresholdKeygen,
            5 => ProtocolId::ThresholdExchange,
            6 => ProtocolId::ThresholdReshare,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MessageKind {
    Commit = 1,
    Decommit = 2,
    VssShare = 3,
    Ack = 4,
    PubKey = 5,
}

impl MessageKind {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            1 => MessageKind::Commit,
            2 => MessageKind::Decommit,
            3 => MessageKind::VssShare,
            4 => MessageKind::Ack,
            5 => MessageKind::PubKey,
            _ => return None,
        })
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Envelope {
    pub session: SessionId,
    pub protocol: ProtocolId,
    pub round: u8,
    pub sender: u32,
    pub kind: MessageKind,
    pub body: Vec<u8>,
}

impl fmt::Debug for Envelope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Envelope")
            .field("protocol", &self.protocol)
            .field("round", &self.round)
            .field("sender", &self.sender)
            .field("kind", &self.kind)
            .field("body_len", &self.body.len())
            .finish()
    }
}

impl Envelope {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.body.len());
        out.extend_from_slice(&self.session.0);
        out.push(self.protocol as u8);
        out.push(self.round);
        out.extend_from_slice(&self.sender.to_be_bytes());
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.body.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ProtocolError> {
        let bad = |what: &'static str| ProtocolError::Malformed { sender: None, what };
        if bytes.len() < HEADER_LEN {
            return Err(bad("short envelope"));
        }
        let session = SessionId(bytes[..16].try_into().unwrap());
        let protocol = ProtocolId::from_code(bytes[16]).ok_or_else(|| bad("protocol id"))?;
        let round = bytes[17];
        let sender = u32::from_be_bytes(bytes[18..22].try_into().unwrap());
        let kind = MessageKind::from_code(bytes[22]).ok_or_else(|| bad("message kind"))?;
        let len = u32::from_be_bytes(bytes[23..27].try_into().unwrap()) as usize;
        let body = &bytes[HEADER_LEN..];
        if body.len() != len {
            return Err(bad("body length"));
        }
        Ok(Envelope {
            session,
            protocol,
            round,
            sender,
            kind,
            body: body.to_vec(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Destination {
    /// Every session participant, over the reliable broadcast channel.
    Broadcast,
    /// One participant, over an encrypted point-to-point channel.
    Party(u32),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outgoing {
    pub to: Destination,
    pub envelope: Envelope,
}
