//! Double-integrator joint model.
//!
//! Each joint has state `[angle, velocity]` and is driven by an angular
//! acceleration. The continuous model `x' = A x + B u` with
//! `A = [[0, 1], [0, 0]]`, `B = [0, 1]^T` is discretized exactly under a
//! zero-order hold. All joints share one model and one limit set.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Angle and angular velocity of one joint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    /// Radians.
    pub angle: f64,
    /// Radians per second.
    pub velocity: f64,
}

impl JointState {
    pub const fn new(angle: f64, velocity: f64) -> Self {
        Self { angle, velocity }
    }

    pub fn is_finite(&self) -> bool {
        self.angle.is_finite() && self.velocity.is_finite()
    }

    pub(crate) fn as_array(&self) -> [f64; 2] {
        [self.angle, self.velocity]
    }
}

/// Commanded angular acceleration (rad/s^2).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub acceleration: f64,
}

impl ControlInput {
    pub const fn new(acceleration: f64) -> Self {
        Self { acceleration }
    }
}

impl From<f64> for ControlInput {
    fn from(acceleration: f64) -> Self {
        Self { acceleration }
    }
}

/// Closed interval `[lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(Error::config(format!(
                "{name} limits [{}, {}] are not a finite interval",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// State and input limits of a joint (UR5e manual values by default).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    pub angle: Interval,
    pub velocity: Interval,
    pub input: Interval,
}

impl Default for Limits {
    // The velocity bound is the configured 3.14 rad/s, not pi.
    #[allow(clippy::approx_constant)]
    fn default() -> Self {
        Self {
            angle: Interval::new(-6.0, 6.0),
            velocity: Interval::new(-3.14, 3.14),
            input: Interval::new(-4.0, 4.0),
        }
    }
}

impl Limits {
    pub fn validate(&self) -> Result<()> {
        self.angle.validate("angle")?;
        self.velocity.validate("velocity")?;
        self.input.validate("input")
    }

    pub fn clamp_state(&self, x: JointState) -> JointState {
        JointState::new(self.angle.clamp(x.angle), self.velocity.clamp(x.velocity))
    }

    pub fn state_within(&self, x: &JointState) -> bool {
        self.angle.contains(x.angle) && self.velocity.contains(x.velocity)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantConfig {
    pub joint_count: usize,
    /// Sample period in seconds.
    pub ts: f64,
    pub limits: Limits,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            joint_count: 6,
            ts: 0.01,
            limits: Limits::default(),
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        if self.joint_count == 0 {
            return Err(Error::config("joint_count must be at least 1"));
        }
        if !(self.ts.is_finite() && self.ts > 0.0) {
            return Err(Error::config(format!("sample period {} must be positive", self.ts)));
        }
        self.limits.validate()
    }
}

/// Zero-order-hold discretization `x[k+1] = Ad x[k] + Bd u[k]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscreteModel {
    pub ad: [[f64; 2]; 2],
    pub bd: [f64; 2],
    pub ts: f64,
}

impl DiscreteModel {
    /// Applies the model without any saturation.
    pub fn propagate(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        [
            self.ad[0][0] * x[0] + self.ad[0][1] * x[1] + self.bd[0] * u,
            self.ad[1][0] * x[0] + self.ad[1][1] * x[1] + self.bd[1] * u,
        ]
    }

    /// `Ad^m Bd`, the effect on the state of an input applied `m` steps earlier.
    pub fn input_influence(&self, m: usize) -> [f64; 2] {
        let mut v = self.bd;
        for _ in 0..m {
            v = self.propagate(v, 0.0);
        }
        v
    }
}

/// Exact discretization of the double integrator. `A` is nilpotent, so the
/// matrix exponential series stops after the linear term.
pub fn discretize(ts: f64) -> Result<DiscreteModel> {
    if !ts.is_finite() || ts <= 0.0 {
        return Err(Error::invalid(format!(
            "sample period must be positive and finite, got {ts}"
        )));
    }
    Ok(DiscreteModel {
        ad: [[1.0, ts], [0.0, 1.0]],
        bd: [0.5 * ts * ts, ts],
        ts,
    })
}

/// Which limits were hit during a plant step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Saturation {
    pub input: bool,
    pub velocity: bool,
    pub angle: bool,
}

impl Saturation {
    pub fn any_state(&self) -> bool {
        self.velocity || self.angle
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: JointState,
    /// The input after clamping, i.e. what the joint actually integrated.
    pub applied: ControlInput,
    pub saturation: Saturation,
}

/// One saturated plant step: clamp the input, integrate, then clamp the
/// velocity and the angle.
pub fn plant_step(x: JointState, u: ControlInput, model: &DiscreteModel, limits: &Limits) -> StepOutcome {
    let applied = limits.input.clamp(u.acceleration);
    let [angle, velocity] = model.propagate(x.as_array(), applied);
    let clamped_velocity = limits.velocity.clamp(velocity);
    let clamped_angle = limits.angle.clamp(angle);
    StepOutcome {
        state: JointState::new(clamped_angle, clamped_velocity),
        applied: ControlInput::new(applied),
        saturation: Saturation {
            input: applied != u.acceleration,
            velocity: clamped_velocity != velocity,
            angle: clamped_angle != angle,
        },
    }
}

/// Rolls the saturated plant forward over `inputs`; the returned trajectory
/// starts with `x0` and has `inputs.len() + 1` entries.
pub fn simulate_open_loop(
    x0: JointState,
    inputs: &[ControlInput],
    model: &DiscreteModel,
    limits: &Limits,
) -> Result<Vec<JointState>> {
    if inputs.is_empty() {
        return Err(Error::invalid("input sequence is empty"));
    }
    let mut traj = Vec::with_capacity(inputs.len() + 1);
    traj.push(x0);
    let mut x = x0;
    for &u in inputs {
        x = plant_step(x, u, model, limits).state;
        traj.push(x);
    }
    Ok(traj)
}

/// All joints of the arm, stepped independently with a shared model.
#[derive(Clone, Debug)]
pub struct Plant {
    pub config: PlantConfig,
    pub model: DiscreteModel,
    pub joints: Vec<JointState>,
}

impl Plant {
    pub fn new(config: PlantConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            model: discretize(config.ts)?,
            joints: vec![JointState::default(); config.joint_count],
            config,
        })
    }

    pub fn with_initial(config: PlantConfig, initial: Vec<JointState>) -> Result<Self> {
        let mut plant = Self::new(config)?;
        if initial.len() != config.joint_count {
            return Err(Error::invalid(format!(
                "expected {} initial joint states, got {}",
                config.joint_count,
                initial.len()
            )));
        }
        plant.joints = initial;
        Ok(plant)
    }

    /// Steps every joint with its own input. Panics if `inputs` is the wrong length.
    pub fn step(&mut self, inputs: &[f64]) -> Vec<Saturation> {
        assert_eq!(inputs.len(), self.joints.len(), "one input per joint");
        self.joints
            .iter_mut()
            .zip(inputs)
            .map(|(x, &u)| {
                let out = plant_step(*x, ControlInput::new(u), &self.model, &self.config.limits);
                *x = out.state;
                out.saturation
            })
            .collect()
    }
}
