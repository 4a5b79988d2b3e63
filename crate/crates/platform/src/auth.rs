//! Customer authentication and broker-to-agent task signing.

use std::collections::{HashMap, HashSet};

use hmac::{Hmac, Mac};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::messages::Operation;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AuthError {
    #[error("unknown credential")]
    UnknownCredential,
    #[error("{principal} may not {op:?} key {key_id}")]
    Forbidden {
        principal: String,
        op: Operation,
        key_id: String,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Principal {
    pub name: String,
    /// `None` allows every operation.
    pub allowed: Option<HashSet<Operation>>,
}

impl Principal {
    pub fn unrestricted(name: &str) -> Self {
        Principal {
            name: name.to_owned(),
            allowed: None,
        }
    }
}

/// Pluggable identity check. A certificate-backed implementation would map
/// a verified peer identity to a [`Principal`] the same way.
pub trait Authenticator: Send + Sync {
    fn authenticate(&self, credential: &str) -> Result<Principal, AuthError>;

    fn authorize(&self, who: &Principal, op: Operation, key_id: &str) -> Result<(), AuthError> {
        match &who.allowed {
            Some(ops) if !ops.contains(&op) => Err(AuthError::Forbidden {
                principal: who.name.clone(),
                op,
                key_id: key_id.to_owned(),
            }),
            _ => Ok(()),
        }
    }
}

/// Static bearer tokens. Tokens are kept only as SHA-256 digests so lookups
/// do not compare secrets byte by byte.
#[derive(Default)]
pub struct StaticTokens {
    by_digest: HashMap<[u8; 32], Principal>,
}

impl StaticTokens {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, token: &str, principal: Principal) -> Self {
        self.by_digest.insert(Sha256::digest(token.as_bytes()).into(), principal);
        self
    }
}

impl Authenticator for StaticTokens {
    fn authenticate(&self, credential: &str) -> Result<Principal, AuthError> {
        self.by_digest
            .get(&<[u8; 32]>::from(Sha256::digest(credential.as_bytes())))
            .cloned()
            .ok_or(AuthError::UnknownCredential)
    }
}

/// HMAC-SHA-256 under the shared agent token.
#[derive(Clone)]
pub struct TaskSigner {
    key: Vec<u8>,
}

impl TaskSigner {
    pub fn new(token: &[u8]) -> Self {
        TaskSigner { key: token.to_vec() }
    }

    fn mac(&self) -> Hmac<Sha256> {
        Hmac::<Sha256>::new_from_slice(&self.key).expect("HMAC accepts any key length")
    }

    pub fn sign(&self, msg: &[u8]) -> Vec<u8> {
        let mut m = self.mac();
        m.update(msg);
        m.finalize().into_bytes().to_vec()
    }

    pub fn verify(&self, msg: &[u8], tag: &[u8]) -> bool {
        let mut m = self.mac();
        m.update(msg);
        m.verify_slice(tag).is_ok()
    }
}
