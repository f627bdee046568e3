use std::collections::VecDeque;

use super::reference::{reference_signal, ReferenceSpec};
use super::scenario::{ControllerSpec, ControllerTrigger, ScenarioConfig};
use super::trace::{JointSample, RunResult, TraceRecord};
use crate::controller::{
    pid_control, predict_forward, MpcController, PidConfig, PidState, ReferenceTarget, SolverStats,
};
use crate::dynamics::{ControlInput, DiscreteModel, JointState, Limits, Plant};
use crate::error::Result;
use crate::netsim::{Channel, ControlPlan, LatestBuffer, Packet, FLAG_FORWARD_PREDICTION};
use crate::{nanos_to_secs, secs_to_nanos, Nanos};

/// Control chosen by the actuator for one tick.
#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub controls: Vec<f64>,
    /// Horizon index used; `None` when holding because the buffer is empty.
    pub index: Option<usize>,
    pub packet: Option<(u64, Nanos, Nanos)>,
}

/// Picks the controls for time `now` from the actuator buffer: the plan step
/// `floor((now - origin) / ts)`, clamped to the horizon. With an empty
/// buffer the previously applied controls are held.
pub fn control_selection(buf: &LatestBuffer, now: Nanos, ts: Nanos, held: &[f64]) -> Selection {
    match buf.latest() {
        Some(p) => select_from_plan(p, p.origin_timestamp, now, ts, held),
        None => Selection {
            controls: held.to_vec(),
            index: None,
            packet: None,
        },
    }
}

/// Same as [`control_selection`] but measured from an explicit plan base time.
pub(crate) fn select_from_plan(p: &Packet, base: Nanos, now: Nanos, ts: Nanos, held: &[f64]) -> Selection {
    let Some(plan) = p.as_control().filter(|c| c.horizon() > 0) else {
        return Selection {
            controls: held.to_vec(),
            index: None,
            packet: None,
        };
    };
    let elapsed = now.saturating_sub(base) / ts;
    let index = (elapsed as usize).min(plan.horizon() - 1);
    Selection {
        controls: plan.step(index).to_vec(),
        index: Some(index),
        packet: Some((p.seq, p.origin_timestamp, p.echo_timestamp)),
    }
}

/// Controller-side replica of the actuator. It replays the selection rule
/// on the plans sent so far, assuming each plan reaches the plant a fixed
/// number of ticks after it is sent. That lag is estimated from the plan
/// timestamps the plant echoes back in its STATE packets.
pub(crate) struct ActuatorEmulator {
    sent: VecDeque<(u64, ControlPlan)>,
    lags: VecDeque<u64>,
    joints: usize,
}

/// Plans kept for replay, in ticks.
const SENT_HISTORY: usize = 2048;
/// Echo samples over which the smallest lag is taken.
const LAG_WINDOW: usize = 64;

impl ActuatorEmulator {
    pub(crate) fn new(joints: usize) -> Self {
        Self {
            sent: VecDeque::new(),
            lags: VecDeque::new(),
            joints,
        }
    }

    pub(crate) fn sent(&mut self, tick: u64, plan: ControlPlan) {
        self.sent.push_back((tick, plan));
        if self.sent.len() > SENT_HISTORY {
            self.sent.pop_front();
        }
    }

    /// Records that at `state_tick` the newest plan at the plant was the one
    /// sent at `echo_tick`.
    pub(crate) fn observe_echo(&mut self, state_tick: u64, echo_tick: u64) {
        if let Some(lag) = state_tick.checked_sub(echo_tick) {
            self.lags.push_back(lag);
            if self.lags.len() > LAG_WINDOW {
                self.lags.pop_front();
            }
        }
    }

    /// Estimated ticks between sending a plan and the plant first using it.
    /// One tick (an ideal channel) until the first echo arrives.
    pub(crate) fn lag(&self) -> u64 {
        self.lags.iter().copied().min().unwrap_or(1).max(1)
    }

    /// Controls the plant is believed to have applied at `tick`.
    pub(crate) fn applied(&self, tick: u64) -> Option<&[f64]> {
        let newest = tick.checked_sub(self.lag())?;
        let pos = self.sent.partition_point(|(t, _)| *t <= newest);
        let (origin, plan) = self.sent.get(pos.checked_sub(1)?)?;
        let index = ((tick - origin) as usize).min(plan.horizon().checked_sub(1)?);
        Some(plan.step(index))
    }

    /// Believed controls of one joint for ticks `from..to`.
    pub(crate) fn joint_window(&self, joint: usize, from: u64, to: u64) -> Vec<ControlInput> {
        debug_assert!(joint < self.joints);
        (from..to)
            .map(|t| ControlInput::new(self.applied(t).map_or(0.0, |u| u[joint])))
            .collect()
    }
}

enum Law {
    Mpc(MpcController),
    Pid {
        cfg: PidConfig,
        states: Vec<PidState>,
        last_stamp: Option<Nanos>,
    },
}

/// The controller (server) side of the loop.
pub(crate) struct ControlAgent {
    law: Law,
    pub(crate) buffer: LatestBuffer,
    last_used: Option<(Nanos, u64)>,
    seq: u64,
    emulator: ActuatorEmulator,
    reference: ReferenceSpec,
    active: Vec<bool>,
    model: DiscreteModel,
    limits: Limits,
    ts: Nanos,
    period: u64,
    trigger: ControllerTrigger,
    forward_prediction: bool,
    pipeline_compensation: bool,
    full_horizon: bool,
}

impl ControlAgent {
    pub(crate) fn new(cfg: &ScenarioConfig, model: DiscreteModel) -> Result<Self> {
        let law = match &cfg.controller {
            ControllerSpec::Mpc(m) => Law::Mpc(MpcController::new(*m, model, cfg.joint_count)?),
            ControllerSpec::Pid(p) => Law::Pid {
                cfg: *p,
                states: vec![PidState::default(); cfg.joint_count],
                last_stamp: None,
            },
        };
        let mut active = vec![false; cfg.joint_count];
        for &j in &cfg.active_joints {
            active[j] = true;
        }
        Ok(Self {
            law,
            buffer: LatestBuffer::new(),
            last_used: None,
            seq: 0,
            emulator: ActuatorEmulator::new(cfg.joint_count),
            reference: cfg.reference.clone(),
            active,
            model,
            limits: cfg.limits,
            ts: secs_to_nanos(cfg.ts),
            period: u64::from(cfg.controller_period),
            trigger: cfg.trigger,
            forward_prediction: cfg.forward_prediction,
            pipeline_compensation: cfg.pipeline_compensation,
            full_horizon: cfg.transmit_full_horizon,
        })
    }

    pub(crate) fn solver_stats(&self) -> SolverStats {
        match &self.law {
            Law::Mpc(m) => m.stats,
            Law::Pid { .. } => SolverStats::default(),
        }
    }

    fn target(&self, joint: usize, t: f64) -> ReferenceTarget {
        if self.active[joint] {
            reference_signal(&self.reference, t)
        } else {
            ReferenceTarget::default()
        }
    }

    pub(crate) fn tick_of(&self, stamp: Nanos) -> u64 {
        stamp / self.ts
    }

    /// Notes that the plant was using the plan based at `plan_tick` when it
    /// sampled the state of `state_tick`.
    pub(crate) fn observe_echo(&mut self, state_tick: u64, plan_tick: u64) {
        self.emulator.observe_echo(state_tick, plan_tick);
    }

    /// Accepts a delivered STATE packet.
    pub(crate) fn receive(&mut self, p: Packet) -> bool {
        // Echo 0 means "no plan yet" and cannot be told apart from the first plan.
        if p.echo_timestamp > 0 {
            self.observe_echo(self.tick_of(p.origin_timestamp), self.tick_of(p.echo_timestamp));
        }
        self.buffer.offer(p)
    }

    /// Runs the controller for `tick`, returning the CONTROL packet to send, if any.
    pub(crate) fn on_tick(&mut self, tick: u64) -> Option<Packet> {
        if !tick.is_multiple_of(self.period) {
            return None;
        }
        let latest = self.buffer.latest()?.clone();
        if self.trigger == ControllerTrigger::NewState && self.last_used == Some(latest.freshness()) {
            return None;
        }
        self.last_used = Some(latest.freshness());
        let (plan, flags) = self.plan(tick, &latest)?;
        let packet = Packet::control(self.seq, tick * self.ts, latest.origin_timestamp, flags, plan);
        self.seq += 1;
        Some(packet)
    }

    /// Computes the plan based at `tick` from a STATE packet. Entry `i` of the
    /// plan is meant for tick `tick + i`.
    pub(crate) fn plan(&mut self, tick: u64, latest: &Packet) -> Option<(ControlPlan, u8)> {
        let measured = latest.as_state()?.to_vec();
        if measured.len() != self.active.len() {
            return None;
        }
        let now = tick * self.ts;
        let stamp = latest.origin_timestamp;
        let state_tick = self.tick_of(stamp);
        let ts = nanos_to_secs(self.ts);
        let mut flags = 0;
        let per_joint: Vec<Vec<f64>> = match &mut self.law {
            Law::Mpc(mpc) => {
                // The plan is solved for the tick it is expected to reach the
                // plant; the controls already in flight until then are replayed.
                let start = if self.forward_prediction && self.pipeline_compensation {
                    tick + self.emulator.lag()
                } else {
                    tick
                };
                let steps = start.saturating_sub(state_tick);
                let x0: Vec<JointState> = if self.forward_prediction && steps > 0 {
                    flags |= FLAG_FORWARD_PREDICTION;
                    measured
                        .iter()
                        .enumerate()
                        .map(|(j, &x)| {
                            let applied = self.emulator.joint_window(j, state_tick, start);
                            predict_forward(x, &applied, steps as usize, &self.model, &self.limits)
                        })
                        .collect()
                } else {
                    measured
                };
                let t_start = start as f64 * ts;
                let preview: Vec<ReferenceTarget> = (1..=mpc.config.horizon)
                    .map(|i| reference_signal(&self.reference, t_start + i as f64 * ts))
                    .collect();
                let rest = vec![ReferenceTarget::default()];
                let refs: Vec<Vec<ReferenceTarget>> = self
                    .active
                    .iter()
                    .map(|&a| if a { preview.clone() } else { rest.clone() })
                    .collect();
                let sols = mpc.solve(start, &x0, &refs);
                let emulator = &self.emulator;
                sols.into_iter()
                    .enumerate()
                    .map(|(j, s)| {
                        if !self.full_horizon {
                            return vec![s.u_seq[0]];
                        }
                        let mut seq: Vec<f64> = (tick..start)
                            .map(|t| emulator.applied(t).map_or(0.0, |u| u[j]))
                            .collect();
                        seq.extend(s.u_seq);
                        seq
                    })
                    .collect()
            }
            Law::Pid {
                cfg,
                states,
                last_stamp,
            } => {
                let dt = last_stamp
                    .filter(|&prev| stamp > prev)
                    .map_or(ts, |prev| nanos_to_secs(stamp - prev));
                *last_stamp = Some(stamp);
                let target = reference_signal(&self.reference, nanos_to_secs(now));
                measured
                    .iter()
                    .zip(states.iter_mut())
                    .zip(&self.active)
                    .map(|((&x, st), &a)| {
                        let r = if a { target } else { ReferenceTarget::default() };
                        let (u, next) = pid_control(x, r, *st, dt, cfg);
                        *st = next;
                        vec![u.acceleration]
                    })
                    .collect()
            }
        };

        let plan = ControlPlan::from_joint_sequences(&per_joint);
        self.emulator.sent(tick, plan.clone());
        Some((plan, flags))
    }
}

/// Runs one scenario to completion. Event order within tick `k`:
/// 1. the plant samples its state, stamps it with `k * ts` and sends it backward;
/// 2. both channels deliver everything due into their latest-timestamp buffers;
/// 3. the plant applies the control selected from the actuator buffer and steps;
/// 4. the controller reads its buffer, optionally predicts the stale state
///    forward, solves and sends the plan forward.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunResult> {
    cfg.validate()?;
    let mut plant = Plant::new(cfg.plant_config())?;
    let ts = secs_to_nanos(cfg.ts);
    let (fwd_cfg, bwd_cfg) = cfg.seeded_channels();
    let mut fwd: Channel<Packet> = Channel::new(fwd_cfg)?;
    let mut bwd: Channel<Packet> = Channel::new(bwd_cfg)?;
    let mut agent = ControlAgent::new(cfg, plant.model)?;
    let mut actuator = LatestBuffer::new();
    let mut held = vec![0.0; cfg.joint_count];
    let mut echo: Nanos = 0;

    let ticks = cfg.tick_count();
    let mut trace = Vec::with_capacity(ticks as usize + 1);
    for tick in 0..=ticks {
        let now = tick * ts;
        let time = nanos_to_secs(now);

        bwd.send(Packet::state(tick, now, echo, plant.joints.clone()), now)?;

        let mut controller_hit = false;
        for p in bwd.poll(now) {
            controller_hit |= agent.receive(p);
        }
        let mut actuator_hit = false;
        let mut rtt = None;
        for p in fwd.poll(now) {
            let (origin, state_stamp) = (p.origin_timestamp, p.echo_timestamp);
            if actuator.offer(p) {
                actuator_hit = true;
                echo = origin;
                rtt = Some(nanos_to_secs(now.saturating_sub(state_stamp)));
            }
        }

        let sel = control_selection(&actuator, now, ts, &held);
        held.clone_from(&sel.controls);
        let before = plant.joints.clone();
        let saturation = plant.step(&sel.controls);
        let joints = before
            .iter()
            .enumerate()
            .map(|(j, &state)| JointSample {
                state,
                reference: agent.target(j, time),
                control: cfg.limits.input.clamp(sel.controls[j]),
            })
            .collect();
        trace.push(TraceRecord {
            tick,
            time,
            joints,
            control_seq: sel.packet.map(|p| p.0),
            control_age: sel.index.map(|i| i as u64),
            control_origin: sel.packet.map(|p| p.1),
            control_state_stamp: sel.packet.map(|p| p.2),
            actuator_hit,
            controller_hit,
            rtt,
            state_saturated: saturation.iter().any(|s| s.any_state()),
        });

        if let Some(p) = agent.on_tick(tick) {
            fwd.send(p, now)?;
        }
    }

    Ok(RunResult {
        trace,
        fwd: fwd.stats(),
        bwd: bwd.stats(),
        solver: agent.solver_stats(),
        scenario_digest: cfg.digest(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::ChannelConfig;

    fn plan_packet(origin: Nanos, horizon: usize) -> Packet {
        let seq: Vec<f64> = (0..horizon).map(|i| i as f64).collect();
        Packet::control(0, origin, 0, 0, ControlPlan::from_joint_sequences(&[seq]))
    }

    #[test]
    fn selection_indexes_by_elapsed_ticks() {
        let ts = 10_000_000;
        let mut buf = LatestBuffer::new();
        let empty = control_selection(&buf, 0, ts, &[1.5]);
        assert_eq!(empty.controls, vec![1.5]);
        assert_eq!(empty.index, None);

        buf.offer(plan_packet(100 * ts, 30));
        assert_eq!(control_selection(&buf, 100 * ts, ts, &[0.0]).index, Some(0));
        assert_eq!(
            control_selection(&buf, 100 * ts + 25 * ts / 10, ts, &[0.0]).index,
            Some(2)
        );
        let far = control_selection(&buf, 200 * ts, ts, &[0.0]);
        assert_eq!(far.index, Some(29));
        assert_eq!(far.controls, vec![29.0]);
    }

    fn step_scenario() -> ScenarioConfig {
        ScenarioConfig {
            duration: 3.0,
            active_joints: vec![0],
            reference: ReferenceSpec::Step {
                target: 0.5,
                at: 0.0,
                initial: 0.0,
            },
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn clean_step_settles() {
        let res = run_scenario(&step_scenario()).unwrap();
        assert_eq!(res.trace.len(), 301);
        let last = res.trace.last().unwrap();
        assert!((last.joints[0].state.angle - 0.5).abs() < 0.01);
        assert!(res
            .trace
            .iter()
            .all(|r| r.joints.iter().all(|s| s.control.abs() <= 4.0)));
    }

    #[test]
    fn same_seed_same_trace() {
        let cfg = ScenarioConfig {
            fwd: ChannelConfig {
                base_delay: 0.05,
                jitter: 0.02,
                loss_rate: 0.1,
                seed: 3,
            },
            bwd: ChannelConfig {
                base_delay: 0.05,
                jitter: 0.02,
                loss_rate: 0.1,
                seed: 4,
            },
            duration: 2.0,
            ..step_scenario()
        };
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
    }
}
