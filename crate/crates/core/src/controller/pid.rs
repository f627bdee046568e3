use serde::{Deserialize, Serialize};

use super::ReferenceTarget;
use crate::dynamics::{ControlInput, Interval, JointState};

/// PID gains on the angle error.
///
/// The defaults come from a grid search on the delay-free plant at 100 Hz:
/// among gain sets whose 0.5 rad step overshoots by at most 5%, the one with
/// the smallest sine tracking error. Its natural frequency (about 6.3 rad/s)
/// is close to that of the default MPC weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PidConfig {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub output_limits: Interval,
}

impl Default for PidConfig {
    fn default() -> Self {
        Self {
            kp: 40.0,
            ki: 0.5,
            kd: 10.0,
            output_limits: Interval::new(-4.0, 4.0),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PidState {
    pub integral: f64,
    /// `None` until the first update.
    pub previous_error: Option<f64>,
}

/// One PID update with conditional-integration anti-windup: the integral is
/// left untouched whenever the output saturates.
pub fn pid_control(
    x: JointState,
    reference: ReferenceTarget,
    state: PidState,
    dt: f64,
    cfg: &PidConfig,
) -> (ControlInput, PidState) {
    let error = reference.angle - x.angle;
    let derivative = match state.previous_error {
        Some(prev) if dt > 0.0 => (error - prev) / dt,
        _ => 0.0,
    };
    let integral = state.integral + error * dt;
    let raw = cfg.kp * error + cfg.ki * integral + cfg.kd * derivative;
    let out = cfg.output_limits.clamp(raw);
    let integral = if out != raw { state.integral } else { integral };
    (
        ControlInput::new(out),
        PidState {
            integral,
            previous_error: Some(error),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p_only(kp: f64) -> PidConfig {
        PidConfig {
            kp,
            ki: 0.0,
            kd: 0.0,
            ..PidConfig::default()
        }
    }

    #[test]
    fn zero_error_gives_zero_output() {
        let (u, s) = pid_control(
            JointState::new(0.4, 0.0),
            ReferenceTarget::new(0.4, 0.0),
            PidState::default(),
            0.01,
            &PidConfig::default(),
        );
        assert_eq!(u.acceleration, 0.0);
        assert_eq!(s.integral, 0.0);
    }

    #[test]
    fn proportional_only() {
        let (u, _) = pid_control(
            JointState::new(0.0, 0.0),
            ReferenceTarget::new(0.5, 0.0),
            PidState::default(),
            0.01,
            &p_only(1.0),
        );
        assert_eq!(u.acceleration, 0.5);
    }

    #[test]
    fn saturation_freezes_integral() {
        let cfg = PidConfig {
            kp: 100.0,
            ki: 1.0,
            kd: 0.0,
            ..PidConfig::default()
        };
        let x = JointState::new(0.0, 0.0);
        let r = ReferenceTarget::new(1.0, 0.0);
        let (u1, s1) = pid_control(x, r, PidState::default(), 0.01, &cfg);
        let (u2, s2) = pid_control(x, r, s1, 0.01, &cfg);
        assert_eq!(u1.acceleration, 4.0);
        assert_eq!(u2.acceleration, 4.0);
        assert_eq!(s1.integral, 0.0);
        assert_eq!(s2.integral, s1.integral);
    }

    #[test]
    fn derivative_uses_error_difference() {
        let cfg = PidConfig {
            kp: 0.0,
            ki: 0.0,
            kd: 1.0,
            ..PidConfig::default()
        };
        let r = ReferenceTarget::new(1.0, 0.0);
        let (_, s) = pid_control(JointState::new(0.0, 0.0), r, PidState::default(), 0.01, &cfg);
        let (u, _) = pid_control(JointState::new(0.01, 0.0), r, s, 0.01, &cfg);
        assert!((u.acceleration - -1.0).abs() < 1e-9);
    }
}
