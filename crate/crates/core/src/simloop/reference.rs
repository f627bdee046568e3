use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::controller::ReferenceTarget;
use crate::dynamics::Interval;
use crate::error::{Error, Result};

/// Reference signal followed by the active joints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceSpec {
    /// Jump from `initial` to `target` at time `at`.
    Step {
        target: f64,
        #[serde(default)]
        at: f64,
        #[serde(default)]
        initial: f64,
    },
    /// `(time, target)` pairs with strictly increasing times; zero before the first.
    MultiStep { schedule: Vec<(f64, f64)> },
    /// `offset + amplitude * sin(2 pi frequency t)`.
    Sine {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        offset: f64,
    },
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Sine {
            amplitude: 0.5,
            frequency: 0.2,
            offset: 0.0,
        }
    }
}

impl ReferenceSpec {
    pub fn validate(&self, angle_limits: Interval) -> Result<()> {
        match self {
            ReferenceSpec::Step { target, at, initial } => {
                if !(angle_limits.contains(*target) && angle_limits.contains(*initial)) || *at < 0.0 {
                    return Err(Error::config("step reference outside angle limits"));
                }
            }
            ReferenceSpec::MultiStep { schedule } => {
                if schedule.is_empty() {
                    return Err(Error::config("multi-step schedule is empty"));
                }
                if schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::config("multi-step schedule times must strictly increase"));
                }
                if schedule.iter().any(|&(t, r)| t < 0.0 || !angle_limits.contains(r)) {
                    return Err(Error::config("multi-step target outside angle limits"));
                }
            }
            ReferenceSpec::Sine {
                amplitude,
                frequency,
                offset,
            } => {
                let reach = offset.abs() + amplitude.abs();
                if !(reach <= angle_limits.hi && -reach >= angle_limits.lo) || *frequency < 0.0 {
                    return Err(Error::config("sine reference exceeds angle limits"));
                }
            }
        }
        Ok(())
    }

    /// Times at which the reference jumps.
    pub fn step_times(&self) -> Vec<f64> {
        match self {
            ReferenceSpec::Step { at, .. } => vec![*at],
            ReferenceSpec::MultiStep { schedule } => schedule.iter().map(|s| s.0).collect(),
            ReferenceSpec::Sine { .. } => vec![],
        }
    }
}

/// Evaluates the reference at time `t` (seconds). Step targets carry zero
/// velocity; the sine carries its analytic derivative.
pub fn reference_signal(spec: &ReferenceSpec, t: f64) -> ReferenceTarget {
    match spec {
        ReferenceSpec::Step { target, at, initial } => {
            ReferenceTarget::new(if t >= *at { *target } else { *initial }, 0.0)
        }
        ReferenceSpec::MultiStep { schedule } => {
            let angle = schedule
                .iter()
                .take_while(|(time, _)| *time <= t)
                .last()
                .map_or(0.0, |s| s.1);
            ReferenceTarget::new(angle, 0.0)
        }
        ReferenceSpec::Sine {
            amplitude,
            frequency,
            offset,
        } => {
            let w = 2.0 * PI * frequency;
            ReferenceTarget::new(offset + amplitude * (w * t).sin(), amplitude * w * (w * t).cos())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sine_examples() {
        let s = ReferenceSpec::Sine {
            amplitude: 1.0,
            frequency: 0.5,
            offset: 0.0,
        };
        let r = reference_signal(&s, 0.0);
        assert_eq!(r.angle, 0.0);
        assert!((r.velocity - PI).abs() < 1e-15);
        let r = reference_signal(&s, 0.5);
        assert!((r.angle - 1.0).abs() < 1e-15);
        assert!(r.velocity.abs() < 1e-15);
    }

    #[test]
    fn multi_step_lookup() {
        let s = ReferenceSpec::MultiStep {
            schedule: vec![(0.0, 0.5), (5.0, 1.5)],
        };
        assert_eq!(reference_signal(&s, 4.9).angle, 0.5);
        assert_eq!(reference_signal(&s, 5.0).angle, 1.5);
        assert_eq!(reference_signal(&s, 5.0).velocity, 0.0);
    }

    #[test]
    fn validation() {
        let limits = Interval::new(-6.0, 6.0);
        assert!(ReferenceSpec::MultiStep {
            schedule: vec![(1.0, 0.5), (1.0, 1.0)]
        }
        .validate(limits)
        .is_err());
        assert!(ReferenceSpec::Sine {
            amplitude: 4.0,
            frequency: 1.0,
            offset: 3.0
        }
        .validate(limits)
        .is_err());
        assert!(ReferenceSpec::Step {
            target: 1.0,
            at: 0.5,
            initial: 0.0
        }
        .validate(limits)
        .is_ok());
    }
}
