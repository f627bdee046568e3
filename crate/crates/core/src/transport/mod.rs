//! UDP endpoints for running plant and controller as separate processes,
//! plus a relay that impairs each direction independently.
//!
//! The plant (client) stamps each STATE with its own clock and echoes the
//! origin timestamp of the newest CONTROL it holds. The controller (server)
//! answers every fresh STATE with a CONTROL whose echo field carries that
//! state's stamp, so the plant can index the plan and measure the round trip
//! on its own clock. No clock synchronisation is needed.

mod plant;
mod proxy;
mod server;
pub mod wire;

use std::net::{SocketAddr, UdpSocket};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

pub use plant::{run_plant_client, PlantRun};
pub use proxy::{run_impairment_proxy, run_impairment_proxy_on, ProxyConfig, ProxyStats};
pub use server::{run_controller_server, run_controller_server_on, ServerStats};

use crate::error::{Error, Result};
use crate::simloop::ScenarioConfig;
use crate::Nanos;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    PlantClient,
    ControllerServer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EndpointConfig {
    pub role: Role,
    pub bind: SocketAddr,
    /// Where the plant sends its states. The server answers whoever wrote last.
    pub peer: Option<SocketAddr>,
    /// STATE send rate, Hz.
    pub rate_hz: f64,
    pub scenario: ScenarioConfig,
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate_hz.is_finite() && self.rate_hz > 0.0) {
            return Err(Error::config(format!(
                "send rate must be positive, got {}",
                self.rate_hz
            )));
        }
        if self.role == Role::PlantClient && self.peer.is_none() {
            return Err(Error::config("the plant client needs a peer address"));
        }
        self.scenario.validate()
    }

    /// Plant ticks between two STATE packets.
    pub(crate) fn send_every(&self) -> u64 {
        ((1.0 / (self.rate_hz * self.scenario.ts)).round() as u64).max(1)
    }
}

/// Monotonic nanoseconds since `start`.
pub(crate) fn elapsed_ns(start: Instant) -> Nanos {
    start.elapsed().as_nanos() as Nanos
}

/// Receive loops wake at least this often to notice a stop request.
pub(crate) const READ_TIMEOUT: Duration = Duration::from_millis(20);

pub(crate) fn bind(addr: SocketAddr) -> Result<UdpSocket> {
    let sock = UdpSocket::bind(addr)?;
    sock.set_read_timeout(Some(READ_TIMEOUT))?;
    Ok(sock)
}

pub(crate) fn is_timeout(e: &std::io::Error) -> bool {
    matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut)
}
