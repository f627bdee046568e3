//! Timestamped packets, impaired channels and latest-timestamp buffers.

mod buffer;
mod channel;
mod packet;
pub mod rng;

pub use buffer::{LatestBuffer, SharedLatestBuffer};
pub use channel::{Channel, ChannelConfig, ChannelStats, SendOutcome};
pub use packet::{ControlPlan, Packet, Payload, FLAG_FORWARD_PREDICTION};
