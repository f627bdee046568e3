//! Condensed MPC quadratic program and its box-constrained solver.
//!
//! States are eliminated by forward substitution, so the only decision
//! variables are the `N` accelerations of one joint. With
//! `x(i) = Ad^i x0 + sum_{k<i} Ad^(i-1-k) Bd u(k)` for `i = 1..N`, the tracking
//! cost becomes `J(u) = u'Hu + 2g'u + c`. State limits enter as a soft
//! piecewise-quadratic penalty, input limits as a hard box.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::{MpcConfig, MpcSolution, ReferenceTarget};
use crate::dynamics::{DiscreteModel, Interval, JointState};

const ANGLE: usize = 0;
const VELOCITY: usize = 1;

/// Soft penalty on predicted states leaving their limits.
#[derive(Clone, Copy, Debug)]
pub struct StatePenalty {
    pub weight: f64,
    pub angle: Interval,
    pub velocity: Interval,
}

impl StatePenalty {
    fn bounds(&self, component: usize) -> Interval {
        if component == ANGLE {
            self.angle
        } else {
            self.velocity
        }
    }
}

/// The parts of the condensed problem that depend only on the model and
/// the weights, shared by every solve with the same configuration.
#[derive(Clone, Debug)]
pub struct QpStructure {
    /// `H = Γ' Qx Γ + Qu I`, symmetric positive definite.
    pub hessian: DMatrix<f64>,
    pub input_bounds: Interval,
    pub penalty: Option<StatePenalty>,
    qx: [f64; 2],
    qu: f64,
    /// Row `i` maps the input sequence onto component `c` of `x(i + 1)`.
    influence: [DMatrix<f64>; 2],
    model: DiscreteModel,
}

impl QpStructure {
    pub fn new(model: &DiscreteModel, cfg: &MpcConfig) -> Self {
        let n = cfg.horizon;
        assert!(n >= 1, "horizon must be positive");
        let taps: Vec<[f64; 2]> = (0..n).map(|m| model.input_influence(m)).collect();
        let mut influence = [DMatrix::zeros(n, n), DMatrix::zeros(n, n)];
        for i in 0..n {
            for k in 0..=i {
                let tap = taps[i - k];
                influence[ANGLE][(i, k)] = tap[ANGLE];
                influence[VELOCITY][(i, k)] = tap[VELOCITY];
            }
        }
        let mut hessian = DMatrix::identity(n, n) * cfg.qu;
        for c in [ANGLE, VELOCITY] {
            let gamma = &influence[c];
            hessian += gamma.transpose() * gamma * cfg.qx[c];
        }
        // Keep H exactly symmetric.
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        Self {
            hessian,
            input_bounds: cfg.limits.input,
            penalty: (cfg.state_penalty_weight > 0.0).then_some(StatePenalty {
                weight: cfg.state_penalty_weight,
                angle: cfg.limits.angle,
                velocity: cfg.limits.velocity,
            }),
            qx: cfg.qx,
            qu: cfg.qu,
            influence,
            model: *model,
        }
    }

    pub fn horizon(&self) -> usize {
        self.hessian.nrows()
    }

    /// Adds the initial state and the reference preview. `reference` holds the
    /// targets for `x(1..=N)`; a single entry is used for every step.
    pub fn instantiate(self: &Arc<Self>, x0: JointState, reference: &[ReferenceTarget]) -> CondensedQp {
        let n = self.horizon();
        assert!(
            reference.len() == n || reference.len() == 1,
            "reference preview must have 1 or N entries"
        );
        let target = |i: usize| reference[if reference.len() == 1 { 0 } else { i }];
        let mut free = [DVector::zeros(n), DVector::zeros(n)];
        let mut refs = [DVector::zeros(n), DVector::zeros(n)];
        let mut x = x0.as_array();
        for i in 0..n {
            x = self.model.propagate(x, 0.0);
            free[ANGLE][i] = x[ANGLE];
            free[VELOCITY][i] = x[VELOCITY];
            refs[ANGLE][i] = target(i).angle;
            refs[VELOCITY][i] = target(i).velocity;
        }
        let mut gradient = DVector::zeros(n);
        let mut constant = 0.0;
        for c in [ANGLE, VELOCITY] {
            let offset = &free[c] - &refs[c];
            gradient += self.influence[c].tr_mul(&offset) * self.qx[c];
            constant += self.qx[c] * offset.norm_squared();
        }
        CondensedQp {
            structure: Arc::clone(self),
            gradient,
            constant,
            free,
            reference: refs,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CondensedQp {
    structure: Arc<QpStructure>,
    pub gradient: DVector<f64>,
    pub constant: f64,
    /// `Ad^(i+1) x0`, the unforced predicted states.
    free: [DVector<f64>; 2],
    reference: [DVector<f64>; 2],
}

impl std::ops::Deref for CondensedQp {
    type Target = QpStructure;

    fn deref(&self) -> &QpStructure {
        &self.structure
    }
}

impl CondensedQp {
    pub fn horizon(&self) -> usize {
        self.gradient.len()
    }

    /// Predicted states `x(1..=N)` for an input sequence.
    pub fn predict(&self, u: &DVector<f64>) -> [DVector<f64>; 2] {
        [
            &self.influence[ANGLE] * u + &self.free[ANGLE],
            &self.influence[VELOCITY] * u + &self.free[VELOCITY],
        ]
    }

    /// Full objective: tracking cost, input effort, and any state-limit violation penalty.
    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        let states = self.predict(u);
        self.objective_from(&states, u)
    }

    fn objective_from(&self, states: &[DVector<f64>; 2], u: &DVector<f64>) -> f64 {
        let mut cost = self.qu * u.norm_squared();
        for c in [ANGLE, VELOCITY] {
            let err = &states[c] - &self.reference[c];
            cost += self.qx[c] * err.norm_squared();
        }
        if let Some(p) = &self.penalty {
            for c in [ANGLE, VELOCITY] {
                let b = p.bounds(c);
                cost += p.weight * states[c].iter().map(|&x| violation(x, b).powi(2)).sum::<f64>();
            }
        }
        cost
    }

    /// Gradient of [`Self::objective`] together with the penalty rows that are active.
    fn gradient_at(&self, u: &DVector<f64>) -> (DVector<f64>, Vec<(usize, usize)>) {
        let mut grad = (&self.hessian * u + &self.gradient) * 2.0;
        let mut active = Vec::new();
        if let Some(p) = &self.penalty {
            let states = self.predict(u);
            for c in [ANGLE, VELOCITY] {
                let b = p.bounds(c);
                for (i, &x) in states[c].iter().enumerate() {
                    let v = violation(x, b);
                    if v != 0.0 {
                        active.push((c, i));
                        let row = self.influence[c].row(i);
                        grad += row.transpose() * (2.0 * p.weight * v);
                    }
                }
            }
        }
        (grad, active)
    }

    /// `d' (H + penalty rows) d`, the curvature of the active piece along `d`.
    fn curvature(&self, d: &DVector<f64>, active: &[(usize, usize)]) -> f64 {
        let mut q = d.dot(&(&self.hessian * d));
        if let Some(p) = &self.penalty {
            for &(c, i) in active {
                let s = self.influence[c].row(i).dot(&d.transpose());
                q += p.weight * s * s;
            }
        }
        q
    }

    fn piece_hessian(&self, active: &[(usize, usize)]) -> DMatrix<f64> {
        let mut h = self.hessian.clone();
        if let Some(p) = &self.penalty {
            for &(c, i) in active {
                let row = self.influence[c].row(i);
                h += row.transpose() * row * p.weight;
            }
        }
        h
    }

    fn clamp(&self, u: &mut DVector<f64>) {
        for v in u.iter_mut() {
            *v = self.input_bounds.clamp(*v);
        }
    }

    /// Gradient with components zeroed where the iterate sits on a bound and
    /// the descent direction points out of the box.
    pub fn projected_gradient(&self, u: &DVector<f64>, grad: &DVector<f64>) -> DVector<f64> {
        let b = self.input_bounds;
        DVector::from_iterator(
            u.len(),
            u.iter().zip(grad.iter()).map(|(&x, &g)| {
                if (x <= b.lo && g > 0.0) || (x >= b.hi && g < 0.0) {
                    0.0
                } else {
                    g
                }
            }),
        )
    }

    pub fn full_gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        self.gradient_at(u).0
    }
}

fn violation(x: f64, b: Interval) -> f64 {
    if x > b.hi {
        x - b.hi
    } else if x < b.lo {
        x - b.lo
    } else {
        0.0
    }
}

/// Condenses the MPC problem for one joint. `reference` holds the targets
/// for `x(1..=N)`; a single entry is used for every step.
pub fn build_qp(x0: JointState, reference: &[ReferenceTarget], model: &DiscreteModel, cfg: &MpcConfig) -> CondensedQp {
    Arc::new(QpStructure::new(model, cfg)).instantiate(x0, reference)
}

/// Solves from a zero initial guess.
pub fn solve_qp(qp: &CondensedQp, cfg: &MpcConfig) -> MpcSolution {
    solve_qp_warm(qp, cfg, None)
}

/// Gradient projection with an exact line search on the active quadratic
/// piece, followed by a Newton step on the free coordinates whenever that
/// lowers the objective. Returns the best iterate even when the projected
/// gradient norm does not reach the tolerance.
pub fn solve_qp_warm(qp: &CondensedQp, cfg: &MpcConfig, warm: Option<&[f64]>) -> MpcSolution {
    let n = qp.horizon();
    let mut u = match warm {
        Some(w) if w.len() == n => DVector::from_column_slice(w),
        _ => DVector::zeros(n),
    };
    qp.clamp(&mut u);
    let mut cost = qp.objective(&u);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        let (grad, active) = qp.gradient_at(&u);
        let pg = qp.projected_gradient(&u, &grad);
        let pg_norm2 = pg.norm_squared();
        if pg_norm2.sqrt() <= cfg.solver_tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        // Projected steepest descent, exact step on the current piece.
        let curvature = qp.curvature(&pg, &active);
        let mut alpha = if curvature > 0.0 {
            pg_norm2 / (2.0 * curvature)
        } else {
            1.0
        };
        let mut stepped = false;
        for _ in 0..60 {
            let mut trial = &u - &pg * alpha;
            qp.clamp(&mut trial);
            let trial_cost = qp.objective(&trial);
            if trial_cost <= cost {
                u = trial;
                cost = trial_cost;
                stepped = true;
                break;
            }
            alpha *= 0.5;
        }

        // Newton step restricted to coordinates strictly inside the box.
        if let Some((trial, trial_cost)) = subspace_newton(qp, &u) {
            if trial_cost <= cost {
                u = trial;
                cost = trial_cost;
                stepped = true;
            }
        }
        if !stepped {
            break;
        }
    }

    if !converged {
        let (grad, _) = qp.gradient_at(&u);
        converged = qp.projected_gradient(&u, &grad).norm() <= cfg.solver_tolerance;
    }

    let states = qp.predict(&u);
    MpcSolution {
        u_seq: u.iter().copied().collect(),
        predicted_states: (0..n)
            .map(|i| JointState::new(states[ANGLE][i], states[VELOCITY][i]))
            .collect(),
        cost: qp.objective_from(&states, &u),
        iterations_used: iterations,
        converged,
    }
}

fn subspace_newton(qp: &CondensedQp, u: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let b = qp.input_bounds;
    let (grad, active) = qp.gradient_at(u);
    let free: Vec<usize> = (0..u.len())
        .filter(|&i| {
            let x = u[i];
            !((x <= b.lo && grad[i] > 0.0) || (x >= b.hi && grad[i] < 0.0))
        })
        .collect();
    if free.is_empty() {
        return None;
    }
    let h = qp.piece_hessian(&active);
    let h_ff = DMatrix::from_fn(free.len(), free.len(), |r, c| h[(free[r], free[c])]);
    let rhs = DVector::from_iterator(free.len(), free.iter().map(|&i| -0.5 * grad[i]));
    let step = h_ff.cholesky()?.solve(&rhs);
    let mut trial = u.clone();
    for (k, &i) in free.iter().enumerate() {
        trial[i] += step[k];
    }
    qp.clamp(&mut trial);
    let cost = qp.objective(&trial);
    Some((trial, cost))
}
