use std::collections::VecDeque;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::wire::{self, MAX_DATAGRAM};
use super::{bind, elapsed_ns, is_timeout, EndpointConfig, Role, READ_TIMEOUT};
use crate::controller::SolverStats;
use crate::dynamics::discretize;
use crate::error::{Error, Result};
use crate::netsim::{Packet, SharedLatestBuffer};
use crate::simloop::ControlAgent;
use crate::Nanos;

/// Remembered CONTROL origins, enough to cover any realistic round trip.
const ORIGIN_HISTORY: usize = 4096;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ServerStats {
    pub states_received: u64,
    pub rejected_datagrams: u64,
    pub controls_sent: u64,
    pub solver: SolverStats,
}

/// Serves CONTROL plans until `stop` is set. Every fresh STATE is answered
/// once; stale or duplicate states are dropped by the latest-timestamp buffer.
///
/// Plans are expressed in plant ticks: a plan computed from the state stamped
/// `k * ts` starts at tick `k`, and the plant indexes it from that stamp.
pub fn run_controller_server(cfg: &EndpointConfig, stop: &AtomicBool) -> Result<ServerStats> {
    cfg.validate()?;
    run_controller_server_on(bind(cfg.bind)?, cfg, stop)
}

/// Like [`run_controller_server`] on an already bound socket; `cfg.bind` is
/// ignored. Binding first lets callers learn the port before serving.
pub fn run_controller_server_on(sock: UdpSocket, cfg: &EndpointConfig, stop: &AtomicBool) -> Result<ServerStats> {
    cfg.validate()?;
    if cfg.role != Role::ControllerServer {
        return Err(Error::config("endpoint is not a controller server"));
    }
    sock.set_read_timeout(Some(READ_TIMEOUT))?;
    let scenario = &cfg.scenario;
    let model = discretize(scenario.ts)?;
    let mut agent = ControlAgent::new(scenario, model)?;
    let buffer = SharedLatestBuffer::new();
    let reply_to: Mutex<Option<SocketAddr>> = Mutex::new(cfg.peer);
    let done = AtomicBool::new(false);
    let start = Instant::now();

    let mut stats = ServerStats::default();
    let (received, rejected) = std::thread::scope(|s| {
        let receiver = s.spawn(|| {
            let mut buf = vec![0u8; MAX_DATAGRAM + 1];
            let (mut received, mut rejected) = (0u64, 0u64);
            while !done.load(Ordering::Relaxed) {
                let (n, from) = match sock.recv_from(&mut buf) {
                    Ok(r) => r,
                    Err(e) if is_timeout(&e) => continue,
                    Err(e) => {
                        log::warn!("server receive failed: {e}");
                        std::thread::sleep(Duration::from_millis(5));
                        continue;
                    }
                };
                match wire::decode(&buf[..n]) {
                    Ok(p) if p.as_state().is_some() => {
                        received += 1;
                        *reply_to.lock().unwrap_or_else(|e| e.into_inner()) = Some(from);
                        buffer.offer(p);
                    }
                    Ok(_) | Err(_) => rejected += 1,
                }
            }
            (received, rejected)
        });

        // Origin timestamp of each CONTROL sent, with the plant tick it starts at.
        let mut origins: VecDeque<(Nanos, u64)> = VecDeque::new();
        let mut seen = None;
        let mut last_origin: Nanos = 0;
        while !stop.load(Ordering::Relaxed) {
            let Some(state) = buffer.wait_fresher(seen, Duration::from_millis(50)) else {
                continue;
            };
            seen = Some(state.freshness());
            let k_s = agent.tick_of(state.origin_timestamp);
            if state.echo_timestamp > 0 {
                let i = origins.partition_point(|&(o, _)| o <= state.echo_timestamp);
                if let Some(&(o, base)) = i.checked_sub(1).map(|i| &origins[i]) {
                    if o == state.echo_timestamp {
                        agent.observe_echo(k_s, base);
                    }
                }
            }
            let Some((plan, flags)) = agent.plan(k_s, &state) else {
                continue;
            };
            let origin = elapsed_ns(start).max(last_origin + 1);
            last_origin = origin;
            let packet = Packet::control(stats.controls_sent, origin, state.origin_timestamp, flags, plan);
            let bytes = match wire::encode(&packet) {
                Ok(b) => b,
                Err(e) => {
                    log::warn!("cannot encode control: {e}");
                    continue;
                }
            };
            let Some(peer) = *reply_to.lock().unwrap_or_else(|e| e.into_inner()) else {
                continue;
            };
            match sock.send_to(&bytes, peer) {
                Ok(_) => {
                    stats.controls_sent += 1;
                    origins.push_back((origin, k_s));
                    if origins.len() > ORIGIN_HISTORY {
                        origins.pop_front();
                    }
                }
                Err(e) => log::warn!("control send failed: {e}"),
            }
        }
        done.store(true, Ordering::Relaxed);
        receiver.join().expect("receiver thread panicked")
    });
    stats.states_received = received;
    stats.rejected_datagrams = rejected;
    stats.solver = agent.solver_stats();
    Ok(stats)
}
