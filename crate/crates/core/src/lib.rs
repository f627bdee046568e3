//! Networked model predictive control laboratory.
//!
//! A robot joint is modelled as a saturated double integrator and driven by a
//! box-constrained MPC (or a PID baseline) across two independently impaired
//! network channels. Packets are filtered through single-slot latest-timestamp
//! buffers on both sides of the loop. The closed loop can be run as a
//! deterministic fixed-step simulation ([`simloop`]) or over real UDP sockets
//! ([`transport`]), and the [`eval`] module reproduces the delay and loss
//! robustness studies on top of both.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod eval;
pub mod netsim;
pub mod simloop;
pub mod transport;

pub use error::{Error, Result};

/// Nanoseconds on a sender-local clock.
pub type Nanos = u64;

pub const NANOS_PER_SEC: f64 = 1e9;

/// Converts seconds to whole nanoseconds, rounding to nearest.
pub fn secs_to_nanos(secs: f64) -> Nanos {
    (secs * NANOS_PER_SEC).round().max(0.0) as Nanos
}

pub fn nanos_to_secs(ns: Nanos) -> f64 {
    ns as f64 / NANOS_PER_SEC
}
