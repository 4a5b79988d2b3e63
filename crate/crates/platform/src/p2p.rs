//! Point-to-point channels emulated over the room.
//!
//! On joining, every agent announces an ephemeral X25519 key through echo
//! broadcast. Each pair derives a symmetric key from the DH output, and
//! direct messages are sealed with ChaCha20-Poly1305 under a random nonce.
//! The associated data binds room, sender, recipient and target party, so a
//! ciphertext cannot be replayed toward anyone else.

use std::collections::BTreeMap;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use rand_core::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey, StaticSecret};
use zeroize::Zeroizing;

use crate::wire::RoomId;

pub const NONCE_LEN: usize = 12;
const KEY_TAG: &[u8] = b"TDH-P2P-v1";
const AAD_TAG: &[u8] = b"TDH-P2P-AAD-v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum P2pError {
    #[error("no channel key for {0}")]
    UnknownRecipient(String),
    #[error("authentication failed on message from {0}")]
    AuthFailure(String),
    #[error("peer {0} announced a low-order key")]
    WeakKey(String),
    #[error("peer {0} announced two different keys")]
    ConflictingKey(String),
}

pub struct P2pKeys {
    me: String,
    room: RoomId,
    secret: StaticSecret,
    public: PublicKey,
    peers: BTreeMap<String, Zeroizing<[u8; 32]>>,
    announced: BTreeMap<String, [u8; 32]>,
}

impl P2pKeys {
    pub fn generate<R: RngCore + CryptoRng>(me: &str, room: RoomId, rng: &mut R) -> Self {
        let mut raw = Zeroizing::new([0u8; 32]);
        rng.fill_bytes(raw.as_mut());
        let secret = StaticSecret::from(*raw);
        let public = PublicKey::from(&secret);
        P2pKeys {
            me: me.to_owned(),
            room,
            secret,
            public,
            peers: BTreeMap::new(),
            announced: BTreeMap::new(),
        }
    }

    pub fn announcement(&self) -> [u8; 32] {
        self.public.to_bytes()
    }

    pub fn knows(&self, peer: &str) -> bool {
        self.peers.contains_key(peer)
    }

    pub fn peer_count(&self) -> usize {
        self.peers.len()
    }

    pub fn add_peer(&mut self, peer: &str, public: [u8; 32]) -> Result<(), P2pError> {
        if let Some(prev) = self.announced.get(peer) {
            return if *prev == public {
                Ok(())
            } else {
                Err(P2pError::ConflictingKey(peer.to_owned()))
            };
        }
        let shared = self.secret.diffie_hellman(&PublicKey::from(public));
        if !shared.was_contributory() {
            return Err(P2pError::WeakKey(peer.to_owned()));
        }
        let (a, b) = if self.me.as_str() <= peer {
            (self.me.as_str(), peer)
        } else {
            (peer, self.me.as_str())
        };
        let mut h = Sha256::new();
        h.update(KEY_TAG);
        h.update(self.room.0);
        for name in [a, b] {
            h.update((name.len() as u16).to_be_bytes());
            h.update(name.as_bytes());
        }
        h.update(shared.as_bytes());
        self.peers.insert(peer.to_owned(), Zeroizing::new(h.finalize().into()));
        self.announced.insert(peer.to_owned(), public);
        Ok(())
    }

    fn aad(&self, from: &str, to: &str, to_party: u32) -> Vec<u8> {
        let mut aad = AAD_TAG.to_vec();
        aad.extend_from_slice(&self.room.0);
        for name in [from, to] {
            aad.extend_from_slice(&(name.len() as u16).to_be_bytes());
            aad.extend_from_slice(name.as_bytes());
        }
        aad.extend_from_slice(&to_party.to_be_bytes());
        aad
    }

    /// Returns `nonce || ciphertext`.
    pub fn seal<R: RngCore + CryptoRng>(
        &self,
        to: &str,
        to_party: u32,
        plaintext: &[u8],
        rng: &mut R,
    ) -> Result<Vec<u8>, P2pError> {
        let key = self
            .peers
            .get(to)
            .ok_or_else(|| P2pError::UnknownRecipient(to.to_owned()))?;
        let cipher = ChaCha20Poly1305::new(&Key::from(**key));
        let mut nonce = [0u8; NONCE_LEN];
        rng.fill_bytes(&mut nonce);
        let aad = self.aad(&self.me, to, to_party);
        let ct = cipher
            .encrypt(
                &Nonce::from(nonce),
                Payload {
                    msg: plaintext,
                    aad: &aad,
                },
            )
            .expect("in-memory encryption cannot fail");
        let mut out = nonce.to_vec();
        out.extend_from_slice(&ct);
        Ok(out)
    }

    pub fn open(&self, from: &str, to_party: u32, sealed: &[u8]) -> Result<Vec<u8>, P2pError> {
        let key = self
            .peers
            .get(from)
            .ok_or_else(|| P2pError::UnknownRecipient(from.to_owned()))?;
        if sealed.len() < NONCE_LEN {
            return Err(P2pError::AuthFailure(from.to_owned()));
        }
        let (nonce, ct) = sealed.split_at(NONCE_LEN);
        let nonce: [u8; NONCE_LEN] = nonce.try_into().unwrap();
        let cipher = ChaCha20Poly1305::new(&Key::from(**key));
        let aad = self.aad(from, &self.me, to_party);
        cipher
            .decrypt(&Nonce::from(nonce), Payload { msg: ct, aad: &aad })
            .map_err(|_| P2pError::AuthFailure(from.to_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha20Rng;
    use rand_core::SeedableRng;

    fn trio() -> Vec<P2pKeys> {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let room = RoomId([3; 16]);
        let mut ks: Vec<P2pKeys> = ["a", "b", "c"]
            .iter()
            .map(|n| P2pKeys::generate(n, room, &mut rng))
            .collect();
        let pubs: Vec<(String, [u8; 32])> =
            ks.iter().map(|k| (k.me.clone(), k.announcement())).collect();
        for k in &mut ks {
            for (n, p) in &pubs {
                if *n != k.me {
                    k.add_peer(n, *p).unwrap();
                }
            }
        }
        ks
    }

    #[test]
    fn recipient_opens_others_cannot() {
        let ks = trio();
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let sealed = ks[0].seal("b", 2, b"share", &mut rng).unwrap();
        assert_eq!(ks[1].open("a", 2, &sealed).unwrap(), b"share");
        assert_eq!(
            ks[2].open("a", 2, &sealed),
            Err(P2pError::AuthFailure("a".into()))
        );
        assert!(ks[1].open("a", 3, &sealed).is_err());
        assert!(ks[1].open("c", 2, &sealed).is_err());
        assert_eq!(
            ks[0].seal("z", 1, b"x", &mut rng),
            Err(P2pError::UnknownRecipient("z".into()))
        );
    }

    #[test]
    fn low_order_and_conflicting_keys_rejected() {
        let mut ks = trio();
        assert_eq!(
            ks[0].add_peer("d", [0u8; 32]),
            Err(P2pError::WeakKey("d".into()))
        );
        let b = ks[1].announcement();
        assert!(ks[0].add_peer("b", b).is_ok());
        assert_eq!(
            ks[0].add_peer("b", [9; 32]),
            Err(P2pError::ConflictingKey("b".into()))
        );
    }
}
