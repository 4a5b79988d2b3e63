//! Operator commands and the benchmark harness behind the `tdh` binary.

pub mod bench;
pub mod client;
pub mod report;
