use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simloop::{RunResult, TraceRecord};

/// What RSS is measured against.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdealKind {
    /// The same scenario run over unimpaired channels.
    #[default]
    ClosedLoop,
    /// The reference signal itself.
    Reference,
}

impl IdealKind {
    pub fn name(self) -> &'static str {
        match self {
            IdealKind::ClosedLoop => "closed_loop",
            IdealKind::Reference => "reference",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ise: f64,
    pub rss: f64,
    pub ise_per_joint: Vec<f64>,
    /// One entry per joint in `rss_joints`.
    pub rss_per_joint: Vec<f64>,
    pub rss_joints: Vec<usize>,
    pub samples: usize,
    pub ideal: IdealKind,
    pub scenario_digest: u64,
    pub seed: u64,
}

/// Mean squared difference of two equally long series.
pub fn mean_square_diff(actual: &[f64], ideal: &[f64]) -> Result<f64> {
    if actual.len() != ideal.len() {
        return Err(Error::invalid(format!(
            "series lengths differ: {} vs {}",
            actual.len(),
            ideal.len()
        )));
    }
    if actual.is_empty() {
        return Err(Error::invalid("empty series"));
    }
    let sum: f64 = actual.iter().zip(ideal).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / actual.len() as f64)
}

/// Per-joint squared angle tracking error, averaged over samples.
pub fn ise_components(trace: &[TraceRecord]) -> Result<Vec<f64>> {
    let first = trace.first().ok_or_else(|| Error::invalid("empty trace"))?;
    (0..first.joints.len())
        .map(|j| {
            let sum: f64 = trace
                .iter()
                .map(|r| {
                    let s = &r.joints[j];
                    (s.state.angle - s.reference.angle).powi(2)
                })
                .sum();
            Ok(sum / trace.len() as f64)
        })
        .collect()
}

/// `1/(J n) * sum_j sum_i (angle_j(i) - target_j(i))^2` over all joints.
pub fn ise(trace: &[TraceRecord]) -> Result<f64> {
    let parts = ise_components(trace)?;
    if parts.is_empty() {
        return Err(Error::invalid("trace has no joints"));
    }
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}

fn angles(trace: &[TraceRecord], joint: usize) -> Result<Vec<f64>> {
    trace
        .iter()
        .map(|r| {
            r.joints
                .get(joint)
                .map(|s| s.state.angle)
                .ok_or_else(|| Error::invalid(format!("joint {joint} missing from trace")))
        })
        .collect()
}

/// Per-joint RSS of `trace` against `ideal`, which is another trace or, with
/// `None`, the reference recorded in `trace`.
pub fn rss_components(trace: &[TraceRecord], ideal: Option<&[TraceRecord]>, joints: &[usize]) -> Result<Vec<f64>> {
    joints
        .iter()
        .map(|&j| {
            let actual = angles(trace, j)?;
            let target = match ideal {
                Some(ideal) => angles(ideal, j)?,
                None => trace.iter().map(|r| r.joints[j].reference.angle).collect(),
            };
            mean_square_diff(&actual, &target)
        })
        .collect()
}

/// Mean over `joints` of the per-joint RSS.
pub fn rss(trace: &[TraceRecord], ideal: Option<&[TraceRecord]>, joints: &[usize]) -> Result<f64> {
    if joints.is_empty() {
        return Err(Error::invalid("no joints selected for RSS"));
    }
    let parts = rss_components(trace, ideal, joints)?;
    Ok(parts.iter().sum::<f64>() / parts.len() as f64)
}

/// Builds the full report; `ideal` must be given for [`IdealKind::ClosedLoop`].
pub fn report(
    run: &RunResult,
    ideal_kind: IdealKind,
    ideal: Option<&RunResult>,
    joints: &[usize],
    seed: u64,
) -> Result<MetricReport> {
    let ideal_trace = match (ideal_kind, ideal) {
        (IdealKind::ClosedLoop, Some(r)) => Some(r.trace.as_slice()),
        (IdealKind::ClosedLoop, None) => {
            return Err(Error::invalid("closed-loop RSS needs an ideal run"));
        }
        (IdealKind::Reference, _) => None,
    };
    let ise_per_joint = ise_components(&run.trace)?;
    let rss_per_joint = rss_components(&run.trace, ideal_trace, joints)?;
    if rss_per_joint.is_empty() {
        return Err(Error::invalid("no joints selected for RSS"));
    }
    Ok(MetricReport {
        ise: ise_per_joint.iter().sum::<f64>() / ise_per_joint.len() as f64,
        rss: rss_per_joint.iter().sum::<f64>() / rss_per_joint.len() as f64,
        ise_per_joint,
        rss_per_joint,
        rss_joints: joints.to_vec(),
        samples: run.trace.len(),
        ideal: ideal_kind,
        scenario_digest: run.scenario_digest,
        seed,
    })
}

/// Shape of one step response.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// Largest excursion past the target, radians, never negative.
    pub overshoot: f64,
    /// Seconds from the step until 90% of the move is first covered;
    /// `None` if it never is.
    pub rise_delay: Option<f64>,
}

/// Analyses the response to a step from `from` to `to` taken at `step_time`,
/// using samples up to (excluding) `until`.
pub fn step_metrics(times: &[f64], angles: &[f64], step_time: f64, from: f64, to: f64, until: f64) -> StepMetrics {
    let dir = if to >= from { 1.0 } else { -1.0 };
    let threshold = from + 0.9 * (to - from);
    let mut overshoot = 0.0f64;
    let mut rise_delay = None;
    for (&t, &a) in times.iter().zip(angles) {
        if t < step_time || t >= until {
            continue;
        }
        overshoot = overshoot.max(dir * (a - to));
        if rise_delay.is_none() && dir * (a - threshold) >= 0.0 {
            rise_delay = Some(t - step_time);
        }
    }
    StepMetrics { overshoot, rise_delay }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::ReferenceTarget;
    use crate::dynamics::JointState;
    use crate::simloop::JointSample;

    fn trace(errors: &[[f64; 6]]) -> Vec<TraceRecord> {
        errors
            .iter()
            .enumerate()
            .map(|(i, e)| TraceRecord {
                tick: i as u64,
                time: i as f64 * 0.01,
                joints: e
                    .iter()
                    .map(|&err| JointSample {
                        state: JointState::new(1.0 + err, 0.0),
                        reference: ReferenceTarget::new(1.0, 0.0),
                        control: 0.0,
                    })
                    .collect(),
                control_seq: None,
                control_age: None,
                control_origin: None,
                control_state_stamp: None,
                actuator_hit: false,
                controller_hit: false,
                rtt: None,
                state_saturated: false,
            })
            .collect()
    }

    #[test]
    fn ise_examples() {
        assert_eq!(ise(&trace(&[[0.0; 6]; 4])).unwrap(), 0.0);
        assert!((ise(&trace(&[[0.1; 6]; 4])).unwrap() - 0.01).abs() < 1e-15);
        let one = [0.1, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((ise(&trace(&[one; 7])).unwrap() - 0.01 / 6.0).abs() < 1e-15);
        assert!(ise(&[]).is_err());
    }

    #[test]
    fn rss_examples() {
        let a = [0.0, 1.0, 2.0];
        assert_eq!(mean_square_diff(&a, &a).unwrap(), 0.0);
        let shifted: Vec<f64> = a.iter().map(|v| v + 0.5).collect();
        assert_eq!(mean_square_diff(&shifted, &a).unwrap(), 0.25);
        assert!(mean_square_diff(&a, &a[..2]).is_err());
    }

    #[test]
    fn rss_of_phase_shifted_sine() {
        // Whole periods, fine sampling: the mean of (sin(w t) - sin(w t - 0.2))^2
        // tends to 1 - cos(0.2).
        let n = 100_000;
        let t: Vec<f64> = (0..n)
            .map(|i| i as f64 / n as f64 * 2.0 * std::f64::consts::PI)
            .collect();
        let a: Vec<f64> = t.iter().map(|t| t.sin()).collect();
        let b: Vec<f64> = t.iter().map(|t| (t - 0.2).sin()).collect();
        let got = mean_square_diff(&a, &b).unwrap();
        assert!((got - (1.0 - 0.2f64.cos())).abs() < 1e-6, "{got}");
        assert!((got - 0.0199).abs() < 1e-4);
    }

    #[test]
    fn report_against_reference() {
        let run = RunResult {
            trace: trace(&[[0.2; 6]; 5]),
            ..Default::default()
        };
        let r = report(&run, IdealKind::Reference, None, &[0], 7).unwrap();
        assert!((r.rss - 0.04).abs() < 1e-15);
        assert!((r.ise - 0.04).abs() < 1e-15);
        assert_eq!(r.samples, 5);
        assert!(report(&run, IdealKind::ClosedLoop, None, &[0], 7).is_err());
    }

    #[test]
    fn step_metrics_on_synthetic_response() {
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let angles = [0.0, 0.0, 0.3, 0.95, 1.1, 1.05, 1.0, 1.0, 0.0, 0.0];
        let m = step_metrics(&times, &angles, 1.0, 0.0, 1.0, 8.0);
        assert!((m.overshoot - 0.1).abs() < 1e-12);
        assert_eq!(m.rise_delay, Some(2.0));
        let down: Vec<f64> = angles.iter().map(|a| -a).collect();
        assert_eq!(step_metrics(&times, &down, 1.0, 0.0, -1.0, 8.0), m);
        assert_eq!(step_metrics(&times, &angles, 1.0, 0.0, 5.0, 8.0).rise_delay, None);
    }
}
