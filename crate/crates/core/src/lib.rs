//! Transport coding over a multi-hop packet network: a discrete-event
//! simulator and the matching closed-form delay model.
//!
//! A message of `k` information packets is sent as `n >= k` packets and is
//! complete once any `k` of them reach the receiver, so its delay is the
//! k-th order statistic of the packet delays rather than the maximum.

pub mod analytics;
pub mod config;
pub mod engine;
pub mod harness;
pub mod metrics;
pub mod network;
pub mod report;
pub mod transport;
