//! Customer, broker and agent messages. Encoded as CBOR and carried in the
//! same length-prefixed framing as hub frames.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

use tdh_core::group::CurveId;
use tdh_core::protocols::{Scheme, SchemeParams};

#[derive(Debug, Error)]
#[error("message codec: {0}")]
pub struct CodecError(pub String);

pub fn encode<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    ciborium::into_writer(value, &mut out).expect("serializing to memory cannot fail");
    out
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, CodecError> {
    ciborium::from_reader(bytes).map_err(|e| CodecError(e.to_string()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Operation {
    Keygen,
    Exchange,
    Reshare,
    /// Exchange against a classic peer key given in its native format: a
    /// 32-byte X25519 `u` or a SEC1 P-256 point.
    PskExchange,
}

/// Scheme parameters as they travel on the wire.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireParams {
    pub curve: u8,
    pub scheme: u8,
    pub t: u16,
    pub n: u16,
}

impl From<SchemeParams> for WireParams {
    fn from(p: SchemeParams) -> Self {
        WireParams {
            curve: p.curve.code(),
            scheme: p.scheme.code(),
            t: p.t,
            n: p.n,
        }
    }
}

impl TryFrom<WireParams> for SchemeParams {
    type Error = String;

    fn try_from(w: WireParams) -> Result<Self, Self::Error> {
        let p = SchemeParams {
            curve: CurveId::from_code(w.curve).ok_or("unknown curve")?,
            scheme: Scheme::from_code(w.scheme).ok_or("unknown scheme")?,
            t: w.t,
            n: w.n,
        };
        p.validate().map_err(|e| e.to_string())?;
        Ok(p)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationRequest {
    pub op: Operation,
    /// Required for keygen; for other operations, checked against the key
    /// when present.
    pub params: Option<WireParams>,
    pub key_id: String,
    /// Exchange and PSK exchange only.
    pub remote_pubkey: Option<Vec<u8>>,
    /// Reshare only: `(t, n)` of the new committee.
    pub new_committee: Option<(u16, u16)>,
    pub credential: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailureKind {
    AuthFailure,
    InvalidRequest,
    UnknownKey,
    KeyExists,
    InsufficientAgents,
    AgentsDisagree,
    SessionAbort,
    Storage,
    Internal,
}

impl fmt::Display for FailureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Error)]
#[error("{kind}: {message}")]
pub struct Failure {
    pub kind: FailureKind,
    pub message: String,
}

impl Failure {
    pub fn new(kind: FailureKind, message: impl Into<String>) -> Self {
        Failure {
            kind,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperationResult {
    Keygen {
        key_id: String,
        public_key: Vec<u8>,
        agents: Vec<String>,
    },
    Exchange {
        /// Encoded sanitized shared point.
        shared_point: Vec<u8>,
        psk: [u8; 32],
        agents: Vec<String>,
        attempts: u8,
    },
    Reshare {
        public_key: Vec<u8>,
        version: u32,
        agents: Vec<String>,
    },
    Failure(Failure),
}

impl OperationResult {
    pub fn failure(kind: FailureKind, message: impl Into<String>) -> Self {
        OperationResult::Failure(Failure::new(kind, message))
    }

    pub fn into_result(self) -> Result<OperationResult, Failure> {
        match self {
            OperationResult::Failure(f) => Err(f),
            ok => Ok(ok),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    Keygen {
        params: WireParams,
    },
    Exchange {
        params: WireParams,
        subset: Vec<u32>,
        /// Encoded remote point.
        remote: Vec<u8>,
    },
    Reshare {
        old_params: WireParams,
        old_parties: Vec<u32>,
        new_params: WireParams,
        public_key: Vec<u8>,
        version: u32,
    },
    /// Makes the staged version current; agents without one drop the key.
    Commit {
        version: u32,
    },
    Discard {
        version: u32,
    },
    Ping,
}

/// A unit of work for one agent. `committee` maps protocol party ids to
/// agent names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentTask {
    pub task_id: u64,
    pub request_id: [u8; 16],
    pub key_id: String,
    pub kind: TaskKind,
    pub committee: Vec<(u32, String)>,
    pub round_timeout_ms: u64,
    /// Derives every random choice of the agent for this task when set.
    pub seed: Option<[u8; 32]>,
}

/// A task with the broker's HMAC over its encoding.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedTask {
    pub body: Vec<u8>,
    pub mac: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskOutcome {
    /// A new share was staged under `version`.
    Staged { public_key: Vec<u8>, version: u32 },
    Shared { shared_point: Vec<u8>, psk: [u8; 32] },
    /// Old member of a reshare without a new share.
    Relinquished { public_key: Vec<u8> },
    Committed,
    Discarded,
    Pong,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentReply {
    pub task_id: u64,
    pub agent: String,
    pub outcome: Result<TaskOutcome, Failure>,
}

/// First message on a broker connection.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrokerHello {
    Customer,
    /// `proof` is the HMAC of the name under the agent token.
    Agent { name: String, proof: Vec<u8> },
}
