#![allow(dead_code)]

use std::net::UdpSocket;
use std::sync::atomic::{AtomicBool, Ordering};

use nmpc_core::netsim::ChannelConfig;
use nmpc_core::simloop::ScenarioConfig;
use nmpc_core::transport::{
    run_controller_server_on, run_impairment_proxy_on, run_plant_client, EndpointConfig, PlantRun, ProxyConfig,
    ProxyStats, Role, ServerStats,
};

pub fn loopback_socket() -> UdpSocket {
    UdpSocket::bind("127.0.0.1:0").unwrap()
}

/// Sets the flag when dropped, so a failing test cannot leave server threads
/// running inside a thread scope.
pub struct StopOnDrop<'a>(pub &'a AtomicBool);

impl Drop for StopOnDrop<'_> {
    fn drop(&mut self) {
        self.0.store(true, Ordering::Relaxed);
    }
}

pub struct Loopback {
    pub plant: PlantRun,
    pub server: ServerStats,
    pub proxy: Option<ProxyStats>,
}

/// Runs server, optional proxy (forward, backward) and plant client on
/// loopback until the plant has finished the scenario.
pub fn loopback(scenario: &ScenarioConfig, proxy: Option<(ChannelConfig, ChannelConfig)>) -> Loopback {
    let server_sock = loopback_socket();
    let proxy_sock = loopback_socket();
    let server_addr = server_sock.local_addr().unwrap();
    let proxy_addr = proxy_sock.local_addr().unwrap();
    let stop = AtomicBool::new(false);
    let server_cfg = EndpointConfig {
        role: Role::ControllerServer,
        bind: server_addr,
        peer: None,
        rate_hz: 1.0 / scenario.ts,
        scenario: scenario.clone(),
    };
    let plant_cfg = EndpointConfig {
        role: Role::PlantClient,
        bind: "127.0.0.1:0".parse().unwrap(),
        peer: Some(if proxy.is_some() { proxy_addr } else { server_addr }),
        ..server_cfg.clone()
    };
    std::thread::scope(|s| {
        let _guard = StopOnDrop(&stop);
        let server = s.spawn(|| run_controller_server_on(server_sock, &server_cfg, &stop).unwrap());
        let relay = proxy.map(|(fwd, bwd)| {
            let cfg = ProxyConfig {
                listen: proxy_addr,
                upstream: server_addr,
                fwd,
                bwd,
            };
            let stop = &stop;
            s.spawn(move || run_impairment_proxy_on(proxy_sock, &cfg, stop).unwrap())
        });
        let never = AtomicBool::new(false);
        let plant = run_plant_client(&plant_cfg, &never).unwrap();
        stop.store(true, Ordering::Relaxed);
        Loopback {
            plant,
            server: server.join().unwrap(),
            proxy: relay.map(|h| h.join().unwrap()),
        }
    })
}
