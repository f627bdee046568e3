use crate::dynamics::JointState;
use crate::Nanos;

/// Flag bit set on CONTROL packets computed from a forward-predicted state.
pub const FLAG_FORWARD_PREDICTION: u8 = 0x01;

/// Accelerations for `horizon` steps and `joint_count` joints, step-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlPlan {
    pub joint_count: usize,
    pub accelerations: Vec<f64>,
}

impl ControlPlan {
    /// Builds a plan from per-joint sequences of equal length.
    pub fn from_joint_sequences(per_joint: &[Vec<f64>]) -> Self {
        let joint_count = per_joint.len();
        let horizon = per_joint.first().map_or(0, Vec::len);
        assert!(per_joint.iter().all(|s| s.len() == horizon), "ragged plan");
        let mut accelerations = Vec::with_capacity(horizon * joint_count);
        for i in 0..horizon {
            accelerations.extend(per_joint.iter().map(|s| s[i]));
        }
        Self {
            joint_count,
            accelerations,
        }
    }

    pub fn horizon(&self) -> usize {
        self.accelerations.len().checked_div(self.joint_count).unwrap_or(0)
    }

    /// Controls of every joint at `step`.
    pub fn step(&self, step: usize) -> &[f64] {
        &self.accelerations[step * self.joint_count..(step + 1) * self.joint_count]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    State(Vec<JointState>),
    Control(ControlPlan),
}

impl Payload {
    pub fn joint_count(&self) -> usize {
        match self {
            Payload::State(s) => s.len(),
            Payload::Control(c) => c.joint_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Packet {
    /// Strictly increasing per sender.
    pub seq: u64,
    /// Sender clock at creation.
    pub origin_timestamp: Nanos,
    /// Newest timestamp received from the peer, 0 if none.
    pub echo_timestamp: Nanos,
    pub flags: u8,
    pub payload: Payload,
}

impl Packet {
    pub fn state(seq: u64, origin: Nanos, echo: Nanos, joints: Vec<JointState>) -> Self {
        Self {
            seq,
            origin_timestamp: origin,
            echo_timestamp: echo,
            flags: 0,
            payload: Payload::State(joints),
        }
    }

    pub fn control(seq: u64, origin: Nanos, echo: Nanos, flags: u8, plan: ControlPlan) -> Self {
        Self {
            seq,
            origin_timestamp: origin,
            echo_timestamp: echo,
            flags,
            payload: Payload::Control(plan),
        }
    }

    /// Ordering key of the latest-timestamp rule.
    pub fn freshness(&self) -> (Nanos, u64) {
        (self.origin_timestamp, self.seq)
    }

    pub fn as_state(&self) -> Option<&[JointState]> {
        match &self.payload {
            Payload::State(s) => Some(s),
            Payload::Control(_) => None,
        }
    }

    pub fn as_control(&self) -> Option<&ControlPlan> {
        match &self.payload {
            Payload::Control(c) => Some(c),
            Payload::State(_) => None,
        }
    }
}
