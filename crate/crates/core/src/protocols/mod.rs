//! Round-based threshold Diffie-Hellman protocols.
//!
//! Two schemes share one driver:
//!
//! * **naive**: `n`-of-`n` additive sharing, the key is `X = sum X_i`;
//! * **threshold**: `(t, n)` Shamir sharing dealt by every party through
//!   Feldman VSS, any `t + 1` parties combine Lagrange-weighted shares.
//!
//! Each scheme has key generation, exchange (`S = x * Y` without ever
//! assembling `x`) and re-sharing to a new committee. The engines are pure:
//! they consume [`Envelope`]s and produce [`Outgoing`] messages, leaving all
//! I/O to the caller.

mod engine;
mod envelope;
mod exchange;
mod keygen;
pub mod local;
mod record;
mod reshare;

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::commitment::CommitmentError;
use crate::group::{CurveId, EncodedPoint, GroupError, GroupPoint, ENCODED_POINT_LEN};
use crate::sharing::{PartyId, SharingError};

pub use engine::{Advance, Draft, Inbox, RoundLogic, Session, Step};
pub use envelope::{
    Destination, Envelope, MessageKind, Outgoing, ProtocolId, SessionId, HEADER_LEN,
    SESSION_ID_LEN,
};
pub use exchange::{Exchange, ExchangeOutput};
pub use keygen::{NaiveKeygen, ThresholdKeygen};
pub use record::KeyShareRecord;
pub use reshare::{new_member, Reshare, ReshareConfig, ReshareOutput, ReshareRole, NEW_MEMBER_FLAG};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("envelope belongs to another session")]
    WrongSession,
    #[error("envelope belongs to another protocol")]
    WrongProtocol,
    #[error("unknown sender {0}")]
    UnknownSender(u32),
    #[error("unexpected message from {sender} in round {round}")]
    UnexpectedMessage { sender: u32, round: u8 },
    #[error("duplicate message from {sender} in round {round}")]
    DuplicateMessage { sender: u32, round: u8 },
    #[error("malformed {what} from {sender:?}")]
    Malformed {
        sender: Option<u32>,
        what: &'static str,
    },
    #[error("decommitment from {sender} does not match its commitment")]
    CommitmentMismatch { sender: u32 },
    #[error("share from {sender} failed Feldman verification")]
    FeldmanReject { sender: u32 },
    #[error("public key announced by {sender} is inconsistent")]
    PublicKeyMismatch { sender: u32 },
    #[error("result is the identity point")]
    IdentityPoint,
    #[error("round {round} timed out")]
    RoundTimeout { round: u8 },
    #[error("session aborted by peer: {0}")]
    PeerAbort(String),
    #[error("randomness source failed: {0}")]
    Rng(String),
    #[error(transparent)]
    Group(#[from] GroupError),
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error("internal error: {0}")]
    Internal(&'static str),
}

impl From<CommitmentError> for ProtocolError {
    fn from(e: CommitmentError) -> Self {
        match e {
            CommitmentError::Rng(s) => ProtocolError::Rng(s),
            _ => ProtocolError::Internal("commitment failure"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Naive,
    Threshold,
}

impl Scheme {
    pub fn code(self) -> u8 {
        match self {
            Scheme::Naive => 1,
            Scheme::Threshold => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Scheme::Naive),
            2 => Some(Scheme::Threshold),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Naive => "naive",
            Scheme::Threshold => "threshold",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "naive" => Ok(Scheme::Naive),
            "threshold" => Ok(Scheme::Threshold),
            other => Err(format!("unknown scheme `{other}`")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SchemeParams {
    pub curve: CurveId,
    pub scheme: Scheme,
    pub t: u16,
    pub n: u16,
}

impl SchemeParams {
    pub fn naive(curve: CurveId, n: u16) -> Self {
        SchemeParams {
            curve,
            scheme: Scheme::Naive,
            t: n.saturating_sub(1),
            n,
        }
    }

    pub fn threshold(curve: CurveId, t: u16, n: u16) -> Self {
        SchemeParams {
            curve,
            scheme: Scheme::Threshold,
            t,
            n,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        if self.n == 0 {
            return Err(ProtocolError::InvalidParams("n must be at least 1".into()));
        }
        if u32::from(self.n) >= NEW_MEMBER_FLAG {
            return Err(ProtocolError::InvalidParams("n too large".into()));
        }
        match self.scheme {
            Scheme::Naive if self.t != self.n - 1 => Err(ProtocolError::InvalidParams(format!(
                "naive scheme requires t = n - 1, got t = {} n = {}",
                self.t, self.n
            ))),
            Scheme::Threshold if self.t >= self.n => Err(ProtocolError::InvalidParams(format!(
                "threshold scheme requires t < n, got t = {} n = {}",
                self.t, self.n
            ))),
            _ => Ok(()),
        }
    }

    /// Number of parties that must cooperate in an exchange.
    pub fn quorum(&self) -> usize {
        self.t as usize + 1
    }

    pub fn party_ids(&self) -> Vec<PartyId> {
        (1..=u32::from(self.n)).map(PartyId).collect()
    }
}

const PSK_TAG: &[u8] = b"TDH-PSK-v1";

/// `SHA-256("TDH-PSK-v1" || dh_bytes(sanitize(S)))`, where `dh_bytes` is what
/// a classic single-key peer computes for the same shared point.
pub fn derive_psk(shared: &GroupPoint) -> Result<[u8; 32], ProtocolError> {
    let s = shared.sanitize();
    if s.is_identity() {
        return Err(ProtocolError::IdentityPoint);
    }
    Ok(psk_from_dh_bytes(&s.dh_bytes()?))
}

/// The classic peer's side of [`derive_psk`].
pub fn psk_from_dh_bytes(dh: &[u8; 32]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(PSK_TAG);
    h.update(dh);
    h.finalize().into()
}

pub(crate) fn encode_points<'a>(points: impl IntoIterator<Item = &'a GroupPoint>) -> Vec<u8> {
    let pts: Vec<EncodedPoint> = points.into_iter().map(GroupPoint::encode).collect();
    let mut out = Vec::with_capacity(2 + pts.len() * ENCODED_POINT_LEN);
    out.extend_from_slice(&(pts.len() as u16).to_be_bytes());
    for p in pts {
        out.extend_from_slice(p.as_bytes());
    }
    out
}

/// Decodes a u16-counted list of points, sanitizing each one.
pub(crate) fn decode_points(
    curve: CurveId,
    bytes: &[u8],
    sender: u32,
    what: &'static str,
) -> Result<Vec<GroupPoint>, ProtocolError> {
    let bad = ProtocolError::Malformed {
        sender: Some(sender),
        what,
    };
    if bytes.len() < 2 {
        return Err(bad);
    }
    let count = u16::from_be_bytes([bytes[0], bytes[1]]) as usize;
    let rest = &bytes[2..];
    if rest.len() != count * ENCODED_POINT_LEN {
        return Err(bad);
    }
    rest.chunks_exact(ENCODED_POINT_LEN)
        .map(|c| GroupPoint::decode_sanitized(c, curve).map_err(|_| bad.clone()))
        .collect()
}

pub(crate) fn decode_point(
    curve: CurveId,
    bytes: &[u8],
    sender: u32,
    what: &'static str,
) -> Result<GroupPoint, ProtocolError> {
    GroupPoint::decode_sanitized(bytes, curve).map_err(|_| ProtocolError::Malformed {
        sender: Some(sender),
        what,
    })
}

/// Output of any of the six protocols, for callers driving them uniformly.
#[derive(Clone, Debug)]
pub enum ProtocolOutput {
    Key(KeyShareRecord),
    Exchange(ExchangeOutput),
    Reshare(ReshareOutput),
}

impl From<KeyShareRecord> for ProtocolOutput {
    fn from(r: KeyShareRecord) -> Self {
        ProtocolOutput::Key(r)
    }
}

impl From<ExchangeOutput> for ProtocolOutput {
    fn from(o: ExchangeOutput) -> Self {
        ProtocolOutput::Exchange(o)
    }
}

impl From<ReshareOutput> for ProtocolOutput {
    fn from(o: ReshareOutput) -> Self {
        ProtocolOutput::Reshare(o)
    }
}

/// Object-safe view of a [`Session`] with a unified output type.
pub trait Driver: Send {
    fn session_id(&self) -> SessionId;
    fn me(&self) -> u32;
    fn protocol(&self) -> ProtocolId;
    fn participants(&self) -> Vec<u32>;
    fn round(&self) -> u8;
    fn step(&mut self, incoming: Vec<Envelope>) -> Result<Step<ProtocolOutput>, ProtocolError>;
    fn timeout(&mut self) -> ProtocolError;
    fn abort(&mut self, reason: ProtocolError);
}

impl<L> Driver for Session<L>
where
    L: RoundLogic + Send,
    L::Output: Into<ProtocolOutput>,
{
    fn session_id(&self) -> SessionId {
        self.id()
    }

    fn me(&self) -> u32 {
        Session::me(self)
    }

    fn protocol(&self) -> ProtocolId {
        Session::protocol(self)
    }

    fn participants(&self) -> Vec<u32> {
        Session::participants(self).to_vec()
    }

    fn round(&self) -> u8 {
        Session::round(self)
    }

    fn step(&mut self, incoming: Vec<Envelope>) -> Result<Step<ProtocolOutput>, ProtocolError> {
        Session::step(self, incoming).map(|s| s.map(Into::into))
    }

    fn timeout(&mut self) -> ProtocolError {
        Session::timeout(self)
    }

    fn abort(&mut self, reason: ProtocolError) {
        Session::abort(self, reason)
    }
}

/// Starts `logic` and boxes it as a [`Driver`].
pub fn start_driver<L, R>(
    id: SessionId,
    logic: L,
    rng: &mut R,
) -> Result<(Box<dyn Driver>, Step<ProtocolOutput>), ProtocolError>
where
    L: RoundLogic + Send + 'static,
    L::Output: Into<ProtocolOutput>,
    R: rand_core::RngCore + rand_core::CryptoRng + ?Sized,
{
    let (session, step) = Session::start(id, logic, rng)?;
    Ok((Box::new(session), step.map(Into::into)))
}
