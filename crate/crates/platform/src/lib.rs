//! Networked side of threshold Diffie-Hellman.
//!
//! * [`wire`], [`hub`], [`transport`]: rooms and frames, in process or over TCP;
//! * [`echo`], [`p2p`], [`session`]: echo broadcast and sealed direct
//!   messages between the agents of one room;
//! * [`netem`]: latency, bandwidth and MTU emulation for links;
//! * [`broker`], [`agent`], [`store`], [`auth`], [`messages`]: request
//!   handling, committees and share persistence;
//! * [`net`]: the broker served over TCP, with remote agents and customers;
//! * [`stack`]: everything wired together in one process.

pub mod agent;
pub mod auth;
pub mod broker;
pub mod echo;
pub mod faults;
pub mod hub;
pub mod messages;
pub mod net;
pub mod netem;
pub mod p2p;
pub mod session;
pub mod stack;
pub mod store;
pub mod transport;
pub mod wire;
