use std::io::{Read, Write};

use crate::controller::{ReferenceTarget, SolverStats};
use crate::dynamics::JointState;
use crate::error::{Error, Result};
use crate::netsim::ChannelStats;
use crate::Nanos;

/// Bumped whenever the trace CSV columns change.
pub const TRACE_CSV_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointSample {
    pub state: JointState,
    pub reference: ReferenceTarget,
    /// Acceleration applied during this tick.
    pub control: f64,
}

/// One plant tick.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceRecord {
    pub tick: u64,
    /// Seconds.
    pub time: f64,
    pub joints: Vec<JointSample>,
    /// Sequence number of the CONTROL packet the applied control came from.
    pub control_seq: Option<u64>,
    /// Horizon index used, i.e. ticks elapsed since the plan's origin.
    pub control_age: Option<u64>,
    pub control_origin: Option<Nanos>,
    /// Timestamp of the STATE the applied plan was computed from.
    pub control_state_stamp: Option<Nanos>,
    /// A fresher CONTROL reached the actuator buffer this tick.
    pub actuator_hit: bool,
    /// A fresher STATE reached the controller buffer this tick.
    pub controller_hit: bool,
    /// Round-trip time measured at the plant on CONTROL arrival, seconds.
    pub rtt: Option<f64>,
    /// Any joint clamped at a velocity or angle limit during this tick's step.
    pub state_saturated: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunResult {
    pub trace: Vec<TraceRecord>,
    pub fwd: ChannelStats,
    pub bwd: ChannelStats,
    pub solver: SolverStats,
    pub scenario_digest: u64,
}

impl RunResult {
    pub fn joint_count(&self) -> usize {
        self.trace.first().map_or(0, |r| r.joints.len())
    }

    /// Angle trajectory of one joint.
    pub fn angles(&self, joint: usize) -> Vec<f64> {
        self.trace.iter().map(|r| r.joints[joint].state.angle).collect()
    }

    pub fn reference_angles(&self, joint: usize) -> Vec<f64> {
        self.trace.iter().map(|r| r.joints[joint].reference.angle).collect()
    }

    pub fn saturated_fraction(&self) -> f64 {
        if self.trace.is_empty() {
            return 0.0;
        }
        self.trace.iter().filter(|r| r.state_saturated).count() as f64 / self.trace.len() as f64
    }
}

const FIXED_COLUMNS: [&str; 10] = [
    "tick",
    "time",
    "control_seq",
    "control_age",
    "control_origin_ns",
    "control_state_ns",
    "actuator_hit",
    "controller_hit",
    "rtt_ms",
    "state_saturated",
];
const JOINT_COLUMNS: [&str; 5] = ["angle", "velocity", "ref_angle", "ref_velocity", "accel"];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes one row per tick. Columns: the fixed columns above followed by
/// `angle_j, velocity_j, ref_angle_j, ref_velocity_j, accel_j` per joint.
/// Floats use the shortest round-trip representation, so equal traces give
/// equal bytes.
pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<()> {
    let joints = trace.first().map_or(0, |r| r.joints.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for j in 0..joints {
        header.extend(JOINT_COLUMNS.iter().map(|c| format!("{c}_{j}")));
    }
    w.write_record(&header)?;
    for r in trace {
        let mut row = vec![
            r.tick.to_string(),
            r.time.to_string(),
            opt(r.control_seq),
            opt(r.control_age),
            opt(r.control_origin),
            opt(r.control_state_stamp),
            u8::from(r.actuator_hit).to_string(),
            u8::from(r.controller_hit).to_string(),
            opt(r.rtt.map(|s| s * 1e3)),
            u8::from(r.state_saturated).to_string(),
        ];
        for s in &r.joints {
            row.extend([
                s.state.angle.to_string(),
                s.state.velocity.to_string(),
                s.reference.angle.to_string(),
                s.reference.velocity.to_string(),
                s.control.to_string(),
            ]);
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, name: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::invalid(format!("bad value {field:?} in column {name}")))
}

fn parse_opt<T: std::str::FromStr>(field: &str, name: &str) -> Result<Option<T>> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(field, name).map(Some)
    }
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len()
        || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b)
        || !(header.len() - FIXED_COLUMNS.len()).is_multiple_of(JOINT_COLUMNS.len())
    {
        return Err(Error::invalid("not a trace CSV header"));
    }
    let joints = (header.len() - FIXED_COLUMNS.len()) / JOINT_COLUMNS.len();
    let mut out = Vec::new();
    for row in rd.records() {
        let row = row?;
        let f = |i: usize| &row[i];
        let flag = |i: usize| -> Result<bool> { Ok(parse::<u8>(f(i), FIXED_COLUMNS[i])? != 0) };
        let mut samples = Vec::with_capacity(joints);
        for j in 0..joints {
            let base = FIXED_COLUMNS.len() + j * JOINT_COLUMNS.len();
            let v = |k: usize| parse::<f64>(f(base + k), JOINT_COLUMNS[k]);
            samples.push(JointSample {
                state: JointState::new(v(0)?, v(1)?),
                reference: ReferenceTarget::new(v(2)?, v(3)?),
                control: v(4)?,
            });
        }
        out.push(TraceRecord {
            tick: parse(f(0), "tick")?,
            time: parse(f(1), "time")?,
            control_seq: parse_opt(f(2), "control_seq")?,
            control_age: parse_opt(f(3), "control_age")?,
            control_origin: parse_opt(f(4), "control_origin_ns")?,
            control_state_stamp: parse_opt(f(5), "control_state_ns")?,
            actuator_hit: flag(6)?,
            controller_hit: flag(7)?,
            rtt: parse_opt::<f64>(f(8), "rtt_ms")?.map(|ms| ms / 1e3),
            state_saturated: flag(9)?,
            joints: samples,
        });
    }
    Ok(out)
}
