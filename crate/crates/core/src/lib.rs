//! Simulator and trace-property harness for collective remote attestation.
//!
//! [`scenario`] files describe a swarm, a protocol and an adversary;
//! [`simnet`] runs them into [`model::Trace`]s; [`tracecheck`] decides the
//! attestation properties on traces; [`explorer`] enumerates or samples
//! adversary schedules and aggregates verdicts.

pub mod adversary;
pub mod explorer;
pub mod model;
pub mod protocols;
pub mod report;
pub mod scenario;
pub mod simnet;
pub mod symcrypto;
pub mod tracecheck;
