//! Hash commitments: `c = SHA-256(tag || nonce || message)` with a fresh
//! 32-byte nonce per commitment.

use rand_core::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use thiserror::Error;
use zeroize::Zeroize;

pub const COMMITMENT_LEN: usize = 32;
pub const NONCE_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CommitmentError {
    #[error("decommitment does not open the commitment")]
    Mismatch,
    #[error("malformed commitment encoding")]
    Malformed,
    #[error("message too long")]
    TooLong,
    #[error("randomness source failed: {0}")]
    Rng(String),
}

/// Domain-separation tag. Keeps commitments made in one protocol from being
/// replayed in another.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Keygen,
    Exchange,
    Reshare,
}

impl Domain {
    pub fn tag(self) -> &'static [u8; 3] {
        match self {
            Domain::Keygen => b"KGC",
            Domain::Exchange => b"EXC",
            Domain::Reshare => b"RSC",
        }
    }
}

#[derive(Clone, Copy, Debug, Eq)]
pub struct Commitment(pub [u8; COMMITMENT_LEN]);

impl PartialEq for Commitment {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct Decommitment {
    pub message: Vec<u8>,
    pub nonce: [u8; NONCE_LEN],
}

impl std::fmt::Debug for Decommitment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Decommitment")
            .field("message_len", &self.message.len())
            .finish_non_exhaustive()
    }
}

impl Drop for Decommitment {
    fn drop(&mut self) {
        self.nonce.zeroize();
    }
}

impl Decommitment {
    /// `nonce || u32-be length || message`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + 4 + self.message.len());
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&(self.message.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.message);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CommitmentError> {
        if bytes.len() < NONCE_LEN + 4 {
            return Err(CommitmentError::Malformed);
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let len = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
        let message = &rest[4..];
        if message.len() != len {
            return Err(CommitmentError::Malformed);
        }
        Ok(Decommitment {
            message: message.to_vec(),
            nonce: nonce.try_into().unwrap(),
        })
    }
}

fn digest(domain: Domain, nonce: &[u8; NONCE_LEN], message: &[u8]) -> [u8; COMMITMENT_LEN] {
    let mut h = Sha256::new();
    h.update(domain.tag());
    h.update(nonce);
    h.update(message);
    h.finalize().into()
}

pub fn commit<R: RngCore + CryptoRng + ?Sized>(
    domain: Domain,
    message: &[u8],
    rng: &mut R,
) -> Result<(Commitment, Decommitment), CommitmentError> {
    if message.len() > u32::MAX as usize {
        return Err(CommitmentError::TooLong);
    }
    let mut nonce = [0u8; NONCE_LEN];
    rng.try_fill_bytes(&mut nonce)
        .map_err(|e| CommitmentError::Rng(e.to_string()))?;
    let c = Commitment(digest(domain, &nonce, message));
    Ok((
        c,
        Decommitment {
            message: message.to_vec(),
            nonce,
        },
    ))
}

/// Returns the committed message iff `d` opens `c` under `domain`.
pub fn open<'d>(
    domain: Domain,
    c: &Commitment,
    d: &'d Decommitment,
) -> Result<&'d [u8], CommitmentError> {
    let recomputed = Commitment(digest(domain, &d.nonce, &d.message));
    if recomputed == *c {
        Ok(&d.message)
    } else {
        Err(CommitmentError::Mismatch)
    }
}

/// Fixed layout `c (32) || nonce (32) || u32-be length || message`.
pub fn to_bytes(c: &Commitment, d: &Decommitment) -> Vec<u8> {
    let mut out = c.0.to_vec();
    out.extend_from_slice(&d.to_bytes());
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(Commitment, Decommitment), CommitmentError> {
    if bytes.len() < COMMITMENT_LEN {
        return Err(CommitmentError::Malformed);
    }
    let (c, rest) = bytes.split_at(COMMITMENT_LEN);
    Ok((Commitment(c.try_into().unwrap()), Decommitment::from_bytes(rest)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn roundtrip_and_empty() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (c, d) = commit(Domain::Keygen, b"hello", &mut rng).unwrap();
        assert_eq!(open(Domain::Keygen, &c, &d).unwrap(), b"hello");
        let (c, d) = commit(Domain::Keygen, b"", &mut rng).unwrap();
        assert_eq!(open(Domain::Keygen, &c, &d).unwrap(), b"");
    }

    #[test]
    fn domains_are_separated() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (c, d) = commit(Domain::Keygen, b"x", &mut rng).unwrap();
        assert_eq!(open(Domain::Exchange, &c, &d), Err(CommitmentError::Mismatch));
        assert_eq!(open(Domain::Reshare, &c, &d), Err(CommitmentError::Mismatch));
    }

    #[test]
    fn every_single_bit_flip_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let msg = b"the quick brown fox".to_vec();
        let (c, d) = commit(Domain::Exchange, &msg, &mut rng).unwrap();
        for i in 0..NONCE_LEN * 8 {
            let mut bad = d.clone();
            bad.nonce[i / 8] ^= 1 << (i % 8);
            assert_eq!(open(Domain::Exchange, &c, &bad), Err(CommitmentError::Mismatch));
        }
        for i in 0..msg.len() * 8 {
            let mut bad = d.clone();
            bad.message[i / 8] ^= 1 << (i % 8);
            assert_eq!(open(Domain::Exchange, &c, &bad), Err(CommitmentError::Mismatch));
        }
    }

    #[test]
    fn serialization_layout() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (c, d) = commit(Domain::Reshare, b"abc", &mut rng).unwrap();
        let bytes = to_bytes(&c, &d);
        assert_eq!(bytes.len(), 32 + 32 + 4 + 3);
        assert_eq!(&bytes[64..68], &[0, 0, 0, 3]);
        let (c2, d2) = from_bytes(&bytes).unwrap();
        assert_eq!(c2, c);
        assert_eq!(d2, d);
        assert_eq!(from_bytes(&bytes[..70]), Err(CommitmentError::Malformed));
    }
}
