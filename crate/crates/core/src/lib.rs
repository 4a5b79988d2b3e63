//! Threshold Diffie-Hellman over P-256 and Curve25519.
//!
//! * [`group`]: prime-order group arithmetic and point encodings;
//! * [`commitment`]: hash commitments for commit-then-reveal rounds;
//! * [`sharing`]: additive and Shamir sharing with Feldman verification;
//! * [`protocols`]: key generation, exchange and re-sharing engines.

pub mod commitment;
pub mod group;
pub mod protocols;
pub mod sharing;
