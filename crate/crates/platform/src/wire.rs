//! Hub frames and stream framing.
//!
//! Frame layout: `type (1) || room_id (16) || sender_len (2, be) || sender ||
//! body`. On a byte stream every frame (and every broker message) is
//! preceded by its length as a big-endian `u32`.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

pub const ROOM_ID_LEN: usize = 16;
/// Upper bound on a single framed message.
pub const MAX_MESSAGE_LEN: usize = 16 << 20;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed frame: {0}")]
    Malformed(&'static str),
    #[error("message of {0} bytes exceeds the limit")]
    TooLarge(usize),
}

#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RoomId(pub [u8; ROOM_ID_LEN]);

impl fmt::Debug for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "RoomId({})", hex::encode(&self.0[..4]))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum FrameType {
    /// First frame of a stream connection; `sender` names the client.
    Hello = 0x01,
    Open = 0x02,
    Join = 0x03,
    Publish = 0x04,
    Close = 0x05,
    Leave = 0x06,
    /// Asks for the history frame at the big-endian `u32` position in the body.
    Fetch = 0x07,
    /// Hub to client: a published frame, stamped with its sender.
    Deliver = 0x10,
    /// Hub to client: a request failed; the body is a UTF-8 reason.
    Error = 0x11,
    /// Hub to client: the room was closed and erased.
    Closed = 0x12,
    /// Hub to client: answer to `Fetch`; the body is the position followed
    /// by the stored frame.
    Replay = 0x13,
    /// Hub to client: an `Open` or `Close` took effect; the body is the
    /// request type.
    Ack = 0x14,
}

impl FrameType {
    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0x01 => FrameType::Hello,
            0x02 => FrameType::Open,
            0x03 => FrameType::Join,
            0x04 => FrameType::Publish,
            0x05 => FrameType::Close,
            0x06 => FrameType::Leave,
            0x07 => FrameType::Fetch,
            0x10 => FrameType::Deliver,
            0x11 => FrameType::Error,
            0x12 => FrameType::Closed,
            0x13 => FrameType::Replay,
            0x14 => FrameType::Ack,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Frame {
    pub kind: FrameType,
    pub room: RoomId,
    pub sender: String,
    pub body: Vec<u8>,
}

impl Frame {
    pub fn new(kind: FrameType, room: RoomId, body: Vec<u8>) -> Self {
        Frame {
            kind,
            room,
            sender: String::new(),
            body,
        }
    }

    pub fn error(room: RoomId, reason: impl fmt::Display) -> Self {
        Frame::new(FrameType::Error, room, reason.to_string().into_bytes())
    }

    pub fn encoded_len(&self) -> usize {
        1 + ROOM_ID_LEN + 2 + self.sender.len() + self.body.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.push(self.kind as u8);
        out.extend_from_slice(&self.room.0);
        out.extend_from_slice(&(self.sender.len() as u16).to_be_bytes());
        out.extend_from_slice(self.sender.as_bytes());
        out.extend_from_slice(&self.body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WireError> {
        if bytes.len() < 1 + ROOM_ID_LEN + 2 {
            return Err(WireError::Malformed("short header"));
        }
        let kind = FrameType::from_code(bytes[0]).ok_or(WireError::Malformed("frame type"))?;
        let mut room = [0u8; ROOM_ID_LEN];
        room.copy_from_slice(&bytes[1..1 + ROOM_ID_LEN]);
        let pos = 1 + ROOM_ID_LEN;
        let len = u16::from_be_bytes([bytes[pos], bytes[pos + 1]]) as usize;
        let rest = &bytes[pos + 2..];
        if rest.len() < len {
            return Err(WireError::Malformed("sender length"));
        }
        let sender = std::str::from_utf8(&rest[..len])
            .map_err(|_| WireError::Malformed("sender is not UTF-8"))?
            .to_owned();
        Ok(Frame {
            kind,
            room: RoomId(room),
            sender,
            body: rest[len..].to_vec(),
        })
    }
}

pub fn write_message<W: Write + ?Sized>(w: &mut W, bytes: &[u8]) -> Result<(), WireError> {
    if bytes.len() > MAX_MESSAGE_LEN {
        return Err(WireError::TooLarge(bytes.len()));
    }
    let mut buf = Vec::with_capacity(4 + bytes.len());
    buf.extend_from_slice(&(bytes.len() as u32).to_be_bytes());
    buf.extend_from_slice(bytes);
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

/// Reads one length-prefixed message; `None` on a clean end of stream.
pub fn read_message<R: Read + ?Sized>(r: &mut R) -> Result<Option<Vec<u8>>, WireError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_MESSAGE_LEN {
        return Err(WireError::TooLarge(len));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(Some(buf))
}

pub fn write_frame<W: Write + ?Sized>(w: &mut W, frame: &Frame) -> Result<(), WireError> {
    write_message(w, &frame.to_bytes())
}

pub fn read_frame<R: Read + ?Sized>(r: &mut R) -> Result<Option<Frame>, WireError> {
    match read_message(r)? {
        Some(bytes) => Frame::from_bytes(&bytes).map(Some),
        None => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_fixed() {
        let f = Frame {
            kind: FrameType::Deliver,
            room: RoomId([7; ROOM_ID_LEN]),
            sender: "ab".into(),
            body: vec![1, 2, 3],
        };
        let b = f.to_bytes();
        assert_eq!(b.len(), f.encoded_len());
        assert_eq!(b[0], 0x10);
        assert_eq!(&b[1..17], &[7; 16]);
        assert_eq!(&b[17..19], &[0, 2]);
        assert_eq!(&b[19..21], b"ab");
        assert_eq!(&b[21..], &[1, 2, 3]);
        assert_eq!(Frame::from_bytes(&b).unwrap(), f);
    }

    #[test]
    fn stream_roundtrip() {
        let frames: Vec<Frame> = (0..5u8)
            .map(|i| Frame {
                kind: FrameType::Publish,
                room: RoomId([i; ROOM_ID_LEN]),
                sender: format!("agent-{i}"),
                body: vec![i; i as usize * 10],
            })
            .collect();
        let mut buf = Vec::new();
        for f in &frames {
            write_frame(&mut buf, f).unwrap();
        }
        let mut r = &buf[..];
        for f in &frames {
            assert_eq!(read_frame(&mut r).unwrap().as_ref(), Some(f));
        }
        assert!(read_frame(&mut r).unwrap().is_none());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Frame::from_bytes(&[0x10; 5]).is_err());
        let mut b = Frame::new(FrameType::Open, RoomId::default(), vec![]).to_bytes();
        b[0] = 0x77;
        assert!(Frame::from_bytes(&b).is_err());
        let mut b = Frame::new(FrameType::Open, RoomId::default(), vec![]).to_bytes();
        b[18] = 9;
        assert!(Frame::from_bytes(&b).is_err());
        let huge = (MAX_MESSAGE_LEN as u32 + 1).to_be_bytes();
        assert!(matches!(
            read_message(&mut &huge[..]),
            Err(WireError::TooLarge(_))
        ));
    }
}
