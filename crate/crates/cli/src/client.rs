//! Customer-side operations against a remote broker or a stack started in
//! this process.

use std::time::Duration;

use p256::elliptic_curve::sec1::ToEncodedPoint;
use rand_chacha::ChaCha20Rng;
use rand_core::RngCore;
use sha2::{Digest, Sha256};
use thiserror::Error;

use tdh_core::group::{CurveId, GroupPoint};
use tdh_core::protocols::{psk_from_dh_bytes, SchemeParams};
use tdh_platform::messages::{Failure, Operation, OperationRequest, OperationResult};
use tdh_platform::net::{BrokerClient, NetError};
use tdh_platform::netem::Profile;
use tdh_platform::stack::{InProcessStack, StackConfig, CUSTOMER_TOKEN};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Failure(#[from] Failure),
    #[error("broker connection: {0}")]
    Net(#[from] NetError),
    #[error("in-process stack: {0}")]
    Stack(String),
    #[error("unexpected result: {0:?}")]
    Unexpected(Box<OperationResult>),
}

pub enum Backend {
    InProcess(Box<InProcessStack>),
    Remote { client: BrokerClient, token: String },
}

impl Backend {
    pub fn in_process(agents: usize, profile: Profile, seed: Option<[u8; 32]>) -> Result<Self, CliError> {
        let stack = InProcessStack::start(StackConfig {
            agents,
            profile: profile.params(),
            round_timeout: Duration::from_secs(30),
            seed,
            ..StackConfig::default()
        })
        .map_err(|e| CliError::Stack(e.to_string()))?;
        Ok(Backend::InProcess(Box::new(stack)))
    }

    pub fn remote(addr: &str, token: &str) -> Result<Self, CliError> {
        Ok(Backend::Remote {
            client: BrokerClient::connect(addr)?,
            token: token.to_owned(),
        })
    }

    fn request(&mut self, op: Operation, key_id: &str) -> OperationRequest {
        let credential = match self {
            Backend::InProcess(_) => CUSTOMER_TOKEN.to_owned(),
            Backend::Remote { token, .. } => token.clone(),
        };
        OperationRequest {
            op,
            params: None,
            key_id: key_id.to_owned(),
            remote_pubkey: None,
            new_committee: None,
            credential,
        }
    }

    fn send(&mut self, req: &OperationRequest) -> Result<OperationResult, CliError> {
        let res = match self {
            Backend::InProcess(stack) => stack.request(req.clone()),
            Backend::Remote { client, .. } => client.request(req)?,
        };
        Ok(res.into_result()?)
    }

    /// Returns the encoded public key.
    pub fn keygen(&mut self, key_id: &str, params: SchemeParams) -> Result<Vec<u8>, CliError> {
        let mut req = self.request(Operation::Keygen, key_id);
        req.params = Some(params.into());
        match self.send(&req)? {
            OperationResult::Keygen { public_key, .. } => Ok(public_key),
            other => Err(CliError::Unexpected(Box::new(other))),
        }
    }

    /// `peer` is a 33-byte encoded point, a 32-byte X25519 key or a 65-byte
    /// SEC1 point. Returns `(shared point, psk)`.
    pub fn exchange(&mut self, key_id: &str, peer: &[u8]) -> Result<(Vec<u8>, [u8; 32]), CliError> {
        let op = match peer.len() {
            33 => Operation::Exchange,
            32 | 65 => Operation::PskExchange,
            n => return Err(CliError::Input(format!("peer public key has {n} bytes; expected 32, 33 or 65"))),
        };
        let mut req = self.request(op, key_id);
        req.remote_pubkey = Some(peer.to_vec());
        match self.send(&req)? {
            OperationResult::Exchange { shared_point, psk, .. } => Ok((shared_point, psk)),
            other => Err(CliError::Unexpected(Box::new(other))),
        }
    }

    /// Returns `(public key, version)`.
    pub fn reshare(&mut self, key_id: &str, t: u16, n: u16) -> Result<(Vec<u8>, u32), CliError> {
        let mut req = self.request(Operation::Reshare, key_id);
        req.new_committee = Some((t, n));
        match self.send(&req)? {
            OperationResult::Reshare { public_key, version, .. } => Ok((public_key, version)),
            other => Err(CliError::Unexpected(Box::new(other))),
        }
    }
}

pub fn parse_hex(label: &str, s: &str) -> Result<Vec<u8>, CliError> {
    hex::decode(s.trim().trim_start_matches("0x")).map_err(|e| CliError::Input(format!("{label}: {e}")))
}

/// Seed derived from an arbitrary string, as read from `TDH_SEED`.
pub fn seed_from(s: &str) -> [u8; 32] {
    Sha256::digest(s.as_bytes()).into()
}

/// One classic peer against the virtual party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PskTrial {
    pub peer_public: Vec<u8>,
    pub virtual_psk: [u8; 32],
    pub peer_psk: [u8; 32],
}

impl PskTrial {
    pub fn matches(&self) -> bool {
        self.virtual_psk == self.peer_psk
    }
}

/// The virtual party's public key in the classic peer's format.
pub fn classic_public(curve: CurveId, encoded: &[u8]) -> Result<Vec<u8>, CliError> {
    let point = GroupPoint::decode(encoded, curve).map_err(|e| CliError::Input(format!("public key: {e}")))?;
    match curve {
        CurveId::Curve25519 => Ok(point
            .to_x25519_u()
            .map_err(|e| CliError::Input(e.to_string()))?
            .to_vec()),
        CurveId::P256 => Ok(encoded.to_vec()),
    }
}

/// A classic single-key peer: a fresh key pair and its DH with `virtual_pk`
/// (classic format). Returns `(peer public key, dh bytes)`.
pub fn classic_peer(curve: CurveId, virtual_pk: &[u8], rng: &mut ChaCha20Rng) -> Result<(Vec<u8>, [u8; 32]), CliError> {
    match curve {
        CurveId::Curve25519 => {
            let mut sk = [0u8; 32];
            rng.fill_bytes(&mut sk);
            let secret = x25519_dalek::StaticSecret::from(sk);
            let public = x25519_dalek::PublicKey::from(&secret);
            let u: [u8; 32] = virtual_pk
                .try_into()
                .map_err(|_| CliError::Input("X25519 key must have 32 bytes".into()))?;
            let dh = secret.diffie_hellman(&x25519_dalek::PublicKey::from(u));
            Ok((public.as_bytes().to_vec(), *dh.as_bytes()))
        }
        CurveId::P256 => {
            let secret = p256::SecretKey::random(rng);
            let public = secret.public_key().to_encoded_point(false).as_bytes().to_vec();
            let theirs = p256::PublicKey::from_sec1_bytes(virtual_pk)
                .map_err(|_| CliError::Input("invalid SEC1 key".into()))?;
            let shared = p256::ecdh::diffie_hellman(secret.to_nonzero_scalar(), theirs.as_affine());
            let mut dh = [0u8; 32];
            dh.copy_from_slice(shared.raw_secret_bytes());
            Ok((public, dh))
        }
    }
}

/// Creates a threshold key under `key_id` and runs one PSK exchange per
/// classic peer, each side computing the PSK on its own.
pub fn psk_demo(
    backend: &mut Backend,
    key_id: &str,
    params: SchemeParams,
    peers: usize,
    rng: &mut ChaCha20Rng,
) -> Result<(Vec<u8>, Vec<PskTrial>), CliError> {
    let public_key = backend.keygen(key_id, params)?;
    let virtual_pk = classic_public(params.curve, &public_key)?;
    let mut trials = Vec::with_capacity(peers);
    for _ in 0..peers {
        let (peer_public, dh) = classic_peer(params.curve, &virtual_pk, rng)?;
        let (_, virtual_psk) = backend.exchange(key_id, &peer_public)?;
        trials.push(PskTrial {
            peer_public,
            virtual_psk,
            peer_psk: psk_from_dh_bytes(&dh),
        });
    }
    Ok((public_key, trials))
}
