use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::wire::MAX_DATAGRAM;
use super::{bind, elapsed_ns, is_timeout, READ_TIMEOUT};
use crate::error::Result;
use crate::netsim::{Channel, ChannelConfig, ChannelStats};

/// Relay between one plant client and one controller server.
///
/// Datagrams from the client travel the backward (plant to controller)
/// channel, replies from the server travel the forward one. The client
/// address is learned from the first datagram received on `listen`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProxyConfig {
    pub listen: SocketAddr,
    pub upstream: SocketAddr,
    pub fwd: ChannelConfig,
    pub bwd: ChannelConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ProxyStats {
    pub fwd: ChannelStats,
    pub bwd: ChannelStats,
    /// Datagrams larger than the endpoints accept, dropped unforwarded.
    pub oversized: u64,
}

/// How often the dispatcher checks for due datagrams.
const DISPATCH_PERIOD: Duration = Duration::from_micros(200);

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Reads one socket into `channel`. Time is stamped under the channel lock
/// so send times never go backwards. With `client`, the first sender is
/// remembered as the reply address.
fn pump(
    sock: &UdpSocket,
    channel: &Mutex<Channel<Vec<u8>>>,
    client: Option<&Mutex<Option<SocketAddr>>>,
    start: Instant,
    stop: &AtomicBool,
) -> u64 {
    let mut buf = vec![0u8; MAX_DATAGRAM + 1];
    let mut oversized = 0u64;
    while !stop.load(Ordering::Relaxed) {
        let (n, from) = match sock.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => {
                log::debug!("proxy receive failed: {e}");
                std::thread::sleep(Duration::from_millis(5));
                continue;
            }
        };
        if n > MAX_DATAGRAM {
            oversized += 1;
            continue;
        }
        if let Some(client) = client {
            lock(client).get_or_insert(from);
        }
        let mut ch = lock(channel);
        if let Err(e) = ch.send(buf[..n].to_vec(), elapsed_ns(start)) {
            log::warn!("proxy channel rejected datagram: {e}");
        }
    }
    oversized
}

/// Relays until `stop` is set.
pub fn run_impairment_proxy(cfg: &ProxyConfig, stop: &AtomicBool) -> Result<ProxyStats> {
    run_impairment_proxy_on(bind(cfg.listen)?, cfg, stop)
}

/// Like [`run_impairment_proxy`] with the client-facing socket already bound;
/// `cfg.listen` is ignored.
pub fn run_impairment_proxy_on(downstream: UdpSocket, cfg: &ProxyConfig, stop: &AtomicBool) -> Result<ProxyStats> {
    let fwd = Mutex::new(Channel::<Vec<u8>>::new(cfg.fwd)?);
    let bwd = Mutex::new(Channel::<Vec<u8>>::new(cfg.bwd)?);
    downstream.set_read_timeout(Some(READ_TIMEOUT))?;
    let unspecified: SocketAddr = if cfg.upstream.is_ipv4() {
        ([0, 0, 0, 0], 0).into()
    } else {
        ([0u16; 8], 0).into()
    };
    let upstream = bind(unspecified)?;
    upstream.connect(cfg.upstream)?;
    let client: Mutex<Option<SocketAddr>> = Mutex::new(None);
    let start = Instant::now();

    let oversized = std::thread::scope(|s| {
        let from_client = s.spawn(|| pump(&downstream, &bwd, Some(&client), start, stop));
        let from_server = s.spawn(|| pump(&upstream, &fwd, None, start, stop));

        while !stop.load(Ordering::Relaxed) {
            let now = elapsed_ns(start);
            for bytes in lock(&bwd).poll(now) {
                if let Err(e) = upstream.send(&bytes) {
                    log::debug!("proxy upstream send failed: {e}");
                }
            }
            let due = lock(&fwd).poll(now);
            if let Some(addr) = *lock(&client) {
                for bytes in due {
                    if let Err(e) = downstream.send_to(&bytes, addr) {
                        log::debug!("proxy downstream send failed: {e}");
                    }
                }
            }
            std::thread::sleep(DISPATCH_PERIOD);
        }
        from_client.join().expect("proxy thread panicked") + from_server.join().expect("proxy thread panicked")
    });
    let stats = ProxyStats {
        fwd: lock(&fwd).stats(),
        bwd: lock(&bwd).stats(),
        oversized,
    };
    Ok(stats)
}
