//! Queueing analysis and discrete-event simulation of quantum circuit
//! switching (QCS) in star networks.
//!
//! A star network connects `u` users through chains of one-way quantum
//! repeaters to a central hub. Pairs of users submit `(n, w)`-requests:
//! `n` quantum data packets must all be delivered within a sliding window
//! of `w` forwarding slots, where each packet survives the path with
//! probability `p`. Requests queue for the hub's `k` forwarding stations,
//! which are reserved either one per request (sequential distribution,
//! batch size 1, `k` concurrent requests) or all at once (parallel
//! distribution, batch size `k`, one request at a time).
//!
//! The crate computes the batch-count distribution of the window problem,
//! service-time moments, exact and approximate mean waiting times of the
//! resulting M/G/s queue, critical user counts and critical distances,
//! and cross-checks the analytics with a discrete-event simulator. The
//! `qcs` binary drives single evaluations, figure-data exports, and
//! parameter sweeps.

pub mod capacity;
pub mod driver;
mod error;
pub mod hardware;
pub mod model;
pub mod queueing;
pub mod service;
pub mod sim;
pub mod window;

pub use error::{QcsError, Result};
pub use model::{
    MomentPair, NetworkConfig, PacketSource, RequestModel, Scenario, Strategy, ValidatedScenario,
    Window,
};
