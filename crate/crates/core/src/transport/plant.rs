use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use super::wire::{self, MAX_DATAGRAM};
use super::{bind, elapsed_ns, is_timeout, EndpointConfig, Role};
use crate::controller::ReferenceTarget;
use crate::dynamics::Plant;
use crate::error::{Error, Result};
use crate::netsim::{ChannelStats, Packet, SharedLatestBuffer};
use crate::simloop::{reference_signal, select_from_plan, JointSample, RunResult, Selection, TraceRecord};
use crate::{nanos_to_secs, secs_to_nanos, Nanos};

/// What the plant client observed during one run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlantRun {
    pub result: RunResult,
    /// Round-trip times in seconds, one per accepted CONTROL.
    pub rtt_samples: Vec<f64>,
    pub rejected_datagrams: u64,
}

impl PlantRun {
    pub fn mean_rtt(&self) -> Option<f64> {
        if self.rtt_samples.is_empty() {
            None
        } else {
            Some(self.rtt_samples.iter().sum::<f64>() / self.rtt_samples.len() as f64)
        }
    }
}

/// Runs the plant in real time for the scenario duration (or until `stop`).
/// Each tick it sends a STATE to the peer, applies the control selected from
/// the newest CONTROL (indexed from the state stamp the plan was computed
/// from) and steps the model. Without any CONTROL it holds the last control.
pub fn run_plant_client(cfg: &EndpointConfig, stop: &AtomicBool) -> Result<PlantRun> {
    cfg.validate()?;
    if cfg.role != Role::PlantClient {
        return Err(Error::config("endpoint is not a plant client"));
    }
    let peer = cfg.peer.expect("validated");
    let scenario = &cfg.scenario;
    let sock = bind(cfg.bind)?;
    let mut plant = Plant::new(scenario.plant_config())?;
    let ts = secs_to_nanos(scenario.ts);
    let ticks = scenario.tick_count();
    let every = cfg.send_every();
    let buffer = SharedLatestBuffer::new();
    let (rtt_tx, rtt_rx) = mpsc::channel::<f64>();
    let done = AtomicBool::new(false);
    let start = Instant::now();
    let mut active = vec![false; scenario.joint_count];
    for &j in &scenario.active_joints {
        active[j] = true;
    }

    let mut run = PlantRun::default();
    let mut bwd = ChannelStats::default();
    let mut fwd = ChannelStats::default();
    let rejected = std::thread::scope(|s| {
        let receiver = s.spawn(|| {
            let mut buf = vec![0u8; MAX_DATAGRAM + 1];
            let mut rejected = 0u64;
            while !done.load(Ordering::Relaxed) {
                let n = match sock.recv_from(&mut buf) {
                    Ok((n, _)) => n,
                    Err(e) if is_timeout(&e) => continue,
                    Err(e) => {
                        log::warn!("plant receive failed: {e}");
                        std::thread::sleep(Duration::from_millis(5));
                        continue;
                    }
                };
                let arrival = elapsed_ns(start);
                match wire::decode(&buf[..n]) {
                    Ok(p) if p.as_control().is_some() => {
                        let rtt = nanos_to_secs(arrival.saturating_sub(p.echo_timestamp));
                        if buffer.offer(p) {
                            let _ = rtt_tx.send(rtt);
                        }
                    }
                    Ok(_) | Err(_) => rejected += 1,
                }
            }
            rejected
        });

        let mut held = vec![0.0; scenario.joint_count];
        let mut echo: Nanos = 0;
        let mut seen: Option<(u64, u64)> = None;
        let mut trace = Vec::with_capacity(ticks as usize + 1);
        for tick in 0..=ticks {
            if stop.load(Ordering::Relaxed) {
                break;
            }
            let now = tick * ts;
            let wake = start + Duration::from_nanos(now);
            if let Some(wait) = wake.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }

            if tick % every == 0 {
                let state = Packet::state(tick, now, echo, plant.joints.clone());
                let bytes = wire::encode(&state).expect("validated joint count");
                match sock.send_to(&bytes, peer) {
                    Ok(_) => bwd.sent += 1,
                    Err(e) => log::warn!("state send failed: {e}"),
                }
            }

            let mut rtt = None;
            while let Ok(sample) = rtt_rx.try_recv() {
                run.rtt_samples.push(sample);
                rtt = Some(sample);
            }
            let latest: Option<Packet> = buffer.latest();
            let actuator_hit = latest.as_ref().is_some_and(|p| Some(p.freshness()) != seen);
            if actuator_hit {
                let p = latest.as_ref().expect("hit implies packet");
                seen = Some(p.freshness());
                echo = p.origin_timestamp;
                fwd.delivered += 1;
            }
            let sel = match &latest {
                Some(p) => select_from_plan(p, p.echo_timestamp, now, ts, &held),
                None => Selection {
                    controls: held.clone(),
                    index: None,
                    packet: None,
                },
            };
            held.clone_from(&sel.controls);
            let before = plant.joints.clone();
            let saturation = plant.step(&sel.controls);
            let time = nanos_to_secs(now);
            trace.push(TraceRecord {
                tick,
                time,
                joints: before
                    .iter()
                    .enumerate()
                    .map(|(j, &state)| JointSample {
                        state,
                        reference: if active[j] {
                            reference_signal(&scenario.reference, time)
                        } else {
                            ReferenceTarget::default()
                        },
                        control: scenario.limits.input.clamp(sel.controls[j]),
                    })
                    .collect(),
                control_seq: sel.packet.map(|p| p.0),
                control_age: sel.index.map(|i| i as u64),
                control_origin: sel.packet.map(|p| p.1),
                control_state_stamp: sel.packet.map(|p| p.2),
                actuator_hit,
                controller_hit: false,
                rtt,
                state_saturated: saturation.iter().any(|s| s.any_state()),
            });
        }
        run.result.trace = trace;
        done.store(true, Ordering::Relaxed);
        receiver.join().expect("receiver thread panicked")
    });
    run.rejected_datagrams = rejected;
    run.result.fwd = fwd;
    run.result.bwd = bwd;
    run.result.scenario_digest = scenario.digest();
    Ok(run)
}
