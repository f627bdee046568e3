//! MPC and PID controllers plus model-based forward prediction.

mod pid;
pub mod qp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::{plant_step, ControlInput, DiscreteModel, JointState, Limits};
use crate::error::{Error, Result};

pub use pid::{pid_control, PidConfig, PidState};
pub use qp::{build_qp, solve_qp, solve_qp_warm, CondensedQp, QpStructure};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Diagonal of the state-error weight: angle, velocity.
    pub qx: [f64; 2],
    /// Input-effort weight.
    pub qu: f64,
    pub limits: Limits,
    /// Stop once the projected-gradient norm is at or below this.
    pub solver_tolerance: f64,
    pub max_iterations: usize,
    /// Weight of the quadratic penalty on predicted state-limit violations.
    pub state_penalty_weight: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            qx: [13.0, 1.8],
            qu: 0.01,
            limits: Limits::default(),
            solver_tolerance: 1e-8,
            max_iterations: 2000,
            state_penalty_weight: 1e4,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.horizon > u16::MAX as usize {
            return Err(Error::config(format!("horizon {} out of range", self.horizon)));
        }
        if !(self.qx.iter().all(|&q| q > 0.0) && self.qu > 0.0) {
            return Err(Error::config("MPC weights must be positive"));
        }
        if self.solver_tolerance.is_nan() || self.solver_tolerance <= 0.0 || self.max_iterations == 0 {
            return Err(Error::config("solver tolerance and iteration budget must be positive"));
        }
        if self.state_penalty_weight < 0.0 {
            return Err(Error::config("state penalty weight must be non-negative"));
        }
        self.limits.validate()
    }
}

/// Target state of one joint at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTarget {
    pub angle: f64,
    pub velocity: f64,
}

impl ReferenceTarget {
    pub const fn new(angle: f64, velocity: f64) -> Self {
        Self { angle, velocity }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// Accelerations `u(0..N)`; `u(i)` drives `x(i) -> x(i + 1)`.
    pub u_seq: Vec<f64>,
    /// Predicted `x(1..=N)`.
    pub predicted_states: Vec<JointState>,
    pub cost: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Builds and solves the condensed problem of one joint.
pub fn mpc_control_joint(
    x0: JointState,
    reference: &[ReferenceTarget],
    model: &DiscreteModel,
    cfg: &MpcConfig,
    warm: Option<&[f64]>,
) -> MpcSolution {
    let qp = build_qp(x0, reference, model, cfg);
    solve_qp_warm(&qp, cfg, warm)
}

/// Solves every joint independently; `references[j]` is the preview of joint `j`.
pub fn mpc_control(
    x0: &[JointState],
    references: &[Vec<ReferenceTarget>],
    model: &DiscreteModel,
    cfg: &MpcConfig,
) -> Vec<MpcSolution> {
    assert_eq!(x0.len(), references.len(), "one reference preview per joint");
    x0.iter()
        .zip(references)
        .map(|(&x, r)| mpc_control_joint(x, r, model, cfg, None))
        .collect()
}

/// Multi-joint MPC that warm-starts each joint from its previous plan
/// shifted by the number of ticks elapsed since it was computed.
#[derive(Clone, Debug)]
pub struct MpcController {
    pub config: MpcConfig,
    model: DiscreteModel,
    structure: Arc<QpStructure>,
    previous: Vec<Option<(u64, Vec<f64>)>>,
    pub stats: SolverStats,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub solves: u64,
    pub non_converged: u64,
    pub iterations: u64,
}

impl MpcController {
    pub fn new(config: MpcConfig, model: DiscreteModel, joint_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            structure: Arc::new(QpStructure::new(&model, &config)),
            config,
            model,
            previous: vec![None; joint_count],
            stats: SolverStats::default(),
        })
    }

    pub fn model(&self) -> &DiscreteModel {
        &self.model
    }

    /// Solves all joints for the plan starting at `tick`.
    pub fn solve(&mut self, tick: u64, x0: &[JointState], references: &[Vec<ReferenceTarget>]) -> Vec<MpcSolution> {
        let n = self.config.horizon;
        let mut out = Vec::with_capacity(x0.len());
        for (j, (&x, r)) in x0.iter().zip(references).enumerate() {
            let warm = self.previous[j].as_ref().map(|(t, plan)| {
                let shift = tick.saturating_sub(*t) as usize;
                (0..n).map(|i| plan[(i + shift).min(n - 1)]).collect::<Vec<_>>()
            });
            let qp = self.structure.instantiate(x, r);
            let sol = solve_qp_warm(&qp, &self.config, warm.as_deref());
            self.stats.solves += 1;
            self.stats.iterations += sol.iterations_used as u64;
            if !sol.converged {
                self.stats.non_converged += 1;
            }
            self.previous[j] = Some((tick, sol.u_seq.clone()));
            out.push(sol);
        }
        out
    }
}

/// Rolls a (possibly stale) measurement forward `steps` ticks using the
/// controls applied in the meantime. Missing log entries count as zero.
pub fn predict_forward(
    measured: JointState,
    applied: &[ControlInput],
    steps: usize,
    model: &DiscreteModel,
    limits: &Limits,
) -> JointState {
    (0..steps).fold(measured, |x, k| {
        let u = applied.get(k).copied().unwrap_or_default();
        plant_step(x, u, model, limits).state
    })
}

#[cfg(test)]
#[allow(clippy::approx_constant)]
mod tests {
    use super::*;
    use crate::dynamics::{discretize, simulate_open_loop};
    use nalgebra::DVector;
    use proptest::prelude::*;

    fn rest(angle: f64) -> Vec<ReferenceTarget> {
        vec![ReferenceTarget::new(angle, 0.0)]
    }

    #[test]
    fn multi_joint_equals_independent_joints() {
        let m = discretize(0.01).unwrap();
        let cfg = MpcConfig::default();
        let x0: Vec<_> = (0..6).map(|j| JointState::new(0.2 * j as f64, -0.1)).collect();
        let refs: Vec<_> = (0..6).map(|j| rest(1.0 - 0.3 * j as f64)).collect();
        let all = mpc_control(&x0, &refs, &m, &cfg);
        for j in 0..6 {
            let single = mpc_control_joint(x0[j], &refs[j], &m, &cfg, None);
            assert_eq!(all[j], single);
        }
    }

    #[test]
    fn longer_horizon_beats_padded_shorter_plan() {
        let m = discretize(0.01).unwrap();
        let short = MpcConfig {
            horizon: 5,
            ..MpcConfig::default()
        };
        let long = MpcConfig::default();
        for (x0, r) in [(JointState::new(1.0, 0.0), 0.0), (JointState::new(-0.3, 1.2), 0.8)] {
            let s = mpc_control_joint(x0, &rest(r), &m, &short, None);
            let qp_long = build_qp(x0, &rest(r), &m, &long);
            let l = solve_qp(&qp_long, &long);
            let mut padded = s.u_seq.clone();
            padded.resize(long.horizon, 0.0);
            let padded_cost = qp_long.objective(&DVector::from_vec(padded));
            assert!(l.cost <= padded_cost + 1e-9, "{} > {}", l.cost, padded_cost);
        }
    }

    #[test]
    fn predicted_states_and_cost_are_consistent() {
        let m = discretize(0.01).unwrap();
        let cfg = MpcConfig::default();
        let x0 = JointState::new(0.5, -0.4);
        let r = rest(1.3);
        let sol = mpc_control_joint(x0, &r, &m, &cfg, None);
        let inputs: Vec<_> = sol.u_seq.iter().map(|&u| ControlInput::new(u)).collect();
        let traj = simulate_open_loop(x0, &inputs, &m, &cfg.limits).unwrap();
        let mut cost = 0.0;
        for (i, x) in traj[1..].iter().enumerate() {
            assert!((x.angle - sol.predicted_states[i].angle).abs() <= 1e-9);
            assert!((x.velocity - sol.predicted_states[i].velocity).abs() <= 1e-9);
            cost += 13.0 * (x.angle - 1.3).powi(2) + 1.8 * x.velocity.powi(2) + 0.01 * sol.u_seq[i].powi(2);
        }
        assert!((cost - sol.cost).abs() <= 1e-9 * cost);
    }

    #[test]
    fn predict_forward_examples() {
        let m = discretize(0.1).unwrap();
        let limits = Limits::default();
        let x = JointState::new(0.3, -0.2);
        assert_eq!(predict_forward(x, &[ControlInput::new(1.0)], 0, &m, &limits), x);
        let p = predict_forward(JointState::default(), &[ControlInput::new(2.0)], 1, &m, &limits);
        assert!((p.angle - 0.01).abs() < 1e-15 && (p.velocity - 0.2).abs() < 1e-15);
        // A short log is padded with zeros.
        let p = predict_forward(JointState::new(0.0, 1.0), &[], 2, &m, &limits);
        assert!((p.angle - 0.2).abs() < 1e-15 && p.velocity == 1.0);
    }

    #[test]
    fn predict_forward_recovers_true_state_with_exact_log() {
        let m = discretize(0.01).unwrap();
        let limits = Limits::default();
        let inputs: Vec<_> = (0..25)
            .map(|k| ControlInput::new(3.0 * (k as f64 * 0.3).cos()))
            .collect();
        let x0 = JointState::new(-0.2, 0.4);
        let truth = simulate_open_loop(x0, &inputs, &m, &limits).unwrap();
        for delay in [0, 1, 7, 25] {
            let start = 25 - delay;
            let predicted = predict_forward(truth[start], &inputs[start..], delay, &m, &limits);
            assert_eq!(predicted, truth[25]);
        }
    }

    #[test]
    fn warm_started_controller_matches_cold_solution() {
        let m = discretize(0.01).unwrap();
        let cfg = MpcConfig::default();
        let mut ctl = MpcController::new(cfg, m, 1).unwrap();
        let r = vec![rest(0.9)];
        let first = ctl.solve(0, &[JointState::new(0.0, 0.0)], &r);
        let x1 = JointState::new(0.0, 0.0);
        let warm = ctl.solve(1, &[x1], &r);
        let cold = mpc_control_joint(x1, &r[0], &m, &cfg, None);
        for (a, b) in warm[0].u_seq.iter().zip(&cold.u_seq) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(first[0].converged && warm[0].converged);
        assert_eq!(ctl.stats.solves, 2);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn plans_respect_input_bounds(angle in -6.0..6.0f64, velocity in -3.14..3.14f64, target in -6.0..6.0f64) {
            let m = discretize(0.01).unwrap();
            let cfg = MpcConfig { horizon: 10, ..MpcConfig::default() };
            let sol = mpc_control_joint(JointState::new(angle, velocity), &rest(target), &m, &cfg, None);
            prop_assert!(sol.u_seq.iter().all(|&u| (-4.0..=4.0).contains(&u)));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn plan_is_invariant_to_angle_translation(
            angle in -2.0..2.0f64,
            velocity in -1.0..1.0f64,
            target in -2.0..2.0f64,
            offset in -2.0..2.0f64,
        ) {
            let m = discretize(0.01).unwrap();
            let cfg = MpcConfig::default();
            let a = mpc_control_joint(JointState::new(angle, velocity), &rest(target), &m, &cfg, None);
            let b = mpc_control_joint(JointState::new(angle + offset, velocity), &rest(target + offset), &m, &cfg, None);
            prop_assume!(a.converged && b.converged);
            for (x, y) in a.u_seq.iter().zip(&b.u_seq) {
                prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
            }
        }
    }
}
