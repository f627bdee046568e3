use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReferenceSpec;
use crate::controller::{MpcConfig, PidConfig};
use crate::dynamics::{Limits, PlantConfig};
use crate::error::{Error, Result};
use crate::netsim::rng;
use crate::netsim::ChannelConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    Mpc(MpcConfig),
    Pid(PidConfig),
}

impl Default for ControllerSpec {
    fn default() -> Self {
        ControllerSpec::Mpc(MpcConfig::default())
    }
}

impl ControllerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerSpec::Mpc(_) => "mpc",
            ControllerSpec::Pid(_) => "pid",
        }
    }
}

/// When the controller computes a new command.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerTrigger {
    /// Only when a state fresher than the last one used has arrived.
    #[default]
    NewState,
    /// On every controller tick once any state is available.
    EveryTick,
}

/// Complete description of one closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Seconds.
    pub duration: f64,
    /// Plant sample period, seconds.
    pub ts: f64,
    pub seed: u64,
    pub joint_count: usize,
    pub limits: Limits,
    /// Joints that follow `reference`; the others hold angle 0.
    pub active_joints: Vec<usize>,
    pub controller: ControllerSpec,
    /// Controller period as a multiple of `ts`.
    pub controller_period: u32,
    pub trigger: ControllerTrigger,
    /// Controller to plant.
    pub fwd: ChannelConfig,
    /// Plant to controller.
    pub bwd: ChannelConfig,
    pub reference: ReferenceSpec,
    /// Roll stale measurements forward with the logged controls before solving.
    pub forward_prediction: bool,
    /// Also predict through the controls already in flight, planning from the
    /// tick the new plan is expected to reach the plant.
    pub pipeline_compensation: bool,
    /// Send the whole horizon instead of only the first control.
    pub transmit_full_horizon: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            duration: 10.0,
            ts: 0.01,
            seed: 1,
            joint_count: 6,
            limits: Limits::default(),
            active_joints: vec![0],
            controller: ControllerSpec::default(),
            controller_period: 1,
            trigger: ControllerTrigger::default(),
            fwd: ChannelConfig::default(),
            bwd: ChannelConfig::default(),
            reference: ReferenceSpec::default(),
            forward_prediction: true,
            pipeline_compensation: true,
            transmit_full_horizon: true,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ScenarioConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::config("duration must be positive"));
        }
        self.plant_config().validate()?;
        if self.controller_period == 0 {
            return Err(Error::config("controller period must be at least one tick"));
        }
        if let Some(&j) = self.active_joints.iter().find(|&&j| j >= self.joint_count) {
            return Err(Error::config(format!("active joint {j} out of range")));
        }
        if self.joint_count > u8::MAX as usize {
            return Err(Error::config("at most 255 joints"));
        }
        match &self.controller {
            ControllerSpec::Mpc(m) => m.validate()?,
            ControllerSpec::Pid(p) => {
                if ![p.kp, p.ki, p.kd].iter().all(|g| g.is_finite()) {
                    return Err(Error::config("PID gains must be finite"));
                }
            }
        }
        self.fwd.validate()?;
        self.bwd.validate()?;
        self.reference.validate(self.limits.angle)
    }

    pub fn plant_config(&self) -> PlantConfig {
        PlantConfig {
            joint_count: self.joint_count,
            ts: self.ts,
            limits: self.limits,
        }
    }

    /// Number of plant ticks, i.e. trace length minus one.
    pub fn tick_count(&self) -> u64 {
        // Guard against 9.999999 ticks from binary rounding.
        (self.duration / self.ts + 1e-9).floor() as u64
    }

    pub fn horizon(&self) -> usize {
        match &self.controller {
            ControllerSpec::Mpc(m) => m.horizon,
            ControllerSpec::Pid(_) => 1,
        }
    }

    /// The same scenario with both channels made ideal.
    pub fn unimpaired(&self) -> Self {
        Self {
            fwd: ChannelConfig::default(),
            bwd: ChannelConfig::default(),
            ..self.clone()
        }
    }

    /// Channel configurations with seeds derived from the scenario seed.
    pub fn seeded_channels(&self) -> (ChannelConfig, ChannelConfig) {
        let derive = |c: &ChannelConfig, name: &str| ChannelConfig {
            seed: rng::derive_seed(self.seed ^ rng::mix(c.seed), name),
            ..*c
        };
        (derive(&self.fwd, "fwd"), derive(&self.bwd, "bwd"))
    }

    /// Stable digest of the serialized configuration.
    pub fn digest(&self) -> u64 {
        rng::derive_seed(0, &self.to_toml_string())
    }
}
