//! Discrete-time two-agent dynamics.
//!
//! Joint states stack agent one's block before agent two's. Both built-in
//! agent models use the explicit forward-Euler updates
//!
//! - planar double integrator, state `[px, vx, py, vy]`, control `[ax, ay]`
//! - unicycle, state `[px, py, heading, speed]`, control `[yaw_rate, accel]`

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Controls, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite state produced at step {0}")]
    NonFinite(usize),
}

/// Jacobians of the transition about one expansion point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    /// `b[i]` is the Jacobian with respect to agent `i`'s control.
    pub b: [DMatrix<f64>; 2],
}

/// A discrete-time transition `x_{t+1} = f_t(x_t, u1_t, u2_t)`.
///
/// Implementors provide the raw transition; [`Dynamics::step`] and
/// [`Dynamics::linearize`] add dimension checks. The default Jacobian is a
/// central finite difference, which analytic models override.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dims(&self) -> [usize; 2];
    fn dt(&self) -> f64;

    fn transition(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>, t: usize)
        -> DVector<f64>;

    fn jacobians(
        &self,
        x: &DVector<f64>,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        t: usize,
    ) -> LinearizedDynamics {
        finite_difference_jacobians(self, x, u1, u2, t, 1e-6)
    }

    fn step(
        &self,
        x: &DVector<f64>,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        t: usize,
    ) -> Result<DVector<f64>, DynamicsError> {
        check_dims(self, x, u1, u2)?;
        Ok(self.transition(x, u1, u2, t))
    }

    fn linearize(
        &self,
        x: &DVector<f64>,
        u1: &DVector<f64>,
        u2: &DVector<f64>,
        t: usize,
    ) -> Result<LinearizedDynamics, DynamicsError> {
        check_dims(self, x, u1, u2)?;
        Ok(self.jacobians(x, u1, u2, t))
    }
}

fn check_dims<D: Dynamics + ?Sized>(
    model: &D,
    x: &DVector<f64>,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
) -> Result<(), DynamicsError> {
    let [m1, m2] = model.control_dims();
    for (what, expected, got) in [
        ("state", model.state_dim(), x.len()),
        ("agent 1 control", m1, u1.len()),
        ("agent 2 control", m2, u2.len()),
    ] {
        if expected != got {
            return Err(DynamicsError::DimensionMismatch { what, expected, got });
        }
    }
    Ok(())
}

/// Central-difference Jacobians of `model` about `(x, u1, u2)`.
pub fn finite_difference_jacobians<D: Dynamics + ?Sized>(
    model: &D,
    x: &DVector<f64>,
    u1: &DVector<f64>,
    u2: &DVector<f64>,
    t: usize,
    h: f64,
) -> LinearizedDynamics {
    let n = model.state_dim();
    let column = |f: &dyn Fn(f64) -> DVector<f64>| (f(h) - f(-h)) / (2.0 * h);

    let mut a = DMatrix::zeros(n, x.len());
    for j in 0..x.len() {
        let col = column(&|d| {
            let mut xp = x.clone();
            xp[j] += d;
            model.transition(&xp, u1, u2, t)
        });
        a.set_column(j, &col);
    }
    let mut b1 = DMatrix::zeros(n, u1.len());
    for j in 0..u1.len() {
        let col = column(&|d| {
            let mut up = u1.clone();
            up[j] += d;
            model.transition(x, &up, u2, t)
        });
        b1.set_column(j, &col);
    }
    let mut b2 = DMatrix::zeros(n, u2.len());
    for j in 0..u2.len() {
        let col = column(&|d| {
            let mut up = u2.clone();
            up[j] += d;
            model.transition(x, u1, &up, t)
        });
        b2.set_column(j, &col);
    }
    LinearizedDynamics { a, b: [b1, b2] }
}

/// Simulates `x_1 .. x_T` from `x1`, where `T` is the control sequence length.
///
/// The final control of each sequence does not affect the states; it is kept
/// so that states and controls stay aligned for cost evaluation.
pub fn rollout<D: Dynamics + ?Sized>(
    model: &D,
    x1: &DVector<f64>,
    controls: &Controls,
) -> Result<Trajectory, DynamicsError> {
    let horizon = controls[0].len();
    if controls[1].len() != horizon {
        return Err(DynamicsError::DimensionMismatch {
            what: "agent 2 control sequence",
            expected: horizon,
            got: controls[1].len(),
        });
    }
    if horizon == 0 {
        return Err(DynamicsError::DimensionMismatch {
            what: "control sequence",
            expected: 1,
            got: 0,
        });
    }
    let mut states = Vec::with_capacity(horizon);
    states.push(x1.clone());
    for t in 0..horizon - 1 {
        let next = model.step(&states[t], &controls[0][t], &controls[1][t], t)?;
        states.push(next);
    }
    Ok(states)
}

/// The single-agent models available for [`JointModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentModel {
    DoubleIntegrator,
    Unicycle,
}

impl AgentModel {
    pub const STATE_DIM: usize = 4;
    pub const CONTROL_DIM: usize = 2;

    /// Indices of `(px, py)` inside the agent's own block.
    pub fn position_offsets(self) -> (usize, usize) {
        match self {
            AgentModel::DoubleIntegrator => (0, 2),
            AgentModel::Unicycle => (0, 1),
        }
    }

    fn step_block(self, x: &[f64], u: &[f64], dt: f64, out: &mut [f64]) {
        match self {
            AgentModel::DoubleIntegrator => {
                out[0] = x[0] + dt * x[1];
                out[1] = x[1] + dt * u[0];
                out[2] = x[2] + dt * x[3];
                out[3] = x[3] + dt * u[1];
            }
            AgentModel::Unicycle => {
                let (s, c) = x[2].sin_cos();
                out[0] = x[0] + dt * x[3] * c;
                out[1] = x[1] + dt * x[3] * s;
                out[2] = x[2] + dt * u[0];
                out[3] = x[3] + dt * u[1];
            }
        }
    }

    /// Writes the block Jacobians into `a` (4x4) and `b` (4x2) at the given offsets.
    fn jacobian_block(
        self,
        x: &[f64],
        dt: f64,
        a: &mut DMatrix<f64>,
        b: &mut DMatrix<f64>,
        row: usize,
    ) {
        for k in 0..4 {
            a[(row + k, row + k)] = 1.0;
        }
        match self {
            AgentModel::DoubleIntegrator => {
                a[(row, row + 1)] = dt;
                a[(row + 2, row + 3)] = dt;
                b[(row + 1, 0)] = dt;
                b[(row + 3, 1)] = dt;
            }
            AgentModel::Unicycle => {
                let (s, c) = x[2].sin_cos();
                let v = x[3];
                a[(row, row + 2)] = -dt * v * s;
                a[(row, row + 3)] = dt * c;
                a[(row + 1, row + 2)] = dt * v * c;
                a[(row + 1, row + 3)] = dt * s;
                b[(row + 2, 0)] = dt;
                b[(row + 3, 1)] = dt;
            }
        }
    }
}

/// Two independent agents with block-diagonal, time-invariant dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointModel {
    pub agents: [AgentModel; 2],
    pub dt: f64,
}

impl JointModel {
    pub fn new(agents: [AgentModel; 2], dt: f64) -> Self {
        assert!(dt > 0.0 && dt.is_finite(), "sampling period must be positive");
        Self { agents, dt }
    }

    pub fn double_integrators(dt: f64) -> Self {
        Self::new([AgentModel::DoubleIntegrator; 2], dt)
    }

    pub fn unicycles(dt: f64) -> Self {
        Self::new([AgentModel::Unicycle; 2], dt)
    }

    /// Joint-state indices of agent `i`'s planar position.
    pub fn position_indices(&self, agent: crate::Agent) -> (usize, usize) {
        let (ox, oy) = self.agents[agent.index()].position_offsets();
        let base = agent.index() * AgentModel::STATE_DIM;
        (base + ox, base + oy)
    }
}

impl Dynamics for JointModel {
    fn state_dim(&self) -> usize {
        2 * AgentModel::STATE_DIM
    }

    fn control_dims(&self) -> [usize; 2] {
        [AgentModel::CONTROL_DIM; 2]
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn transition(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>, _t: usize) -> DVector<f64> {
        let mut next = DVector::zeros(8);
        let xs = x.as_slice();
        let out = next.as_mut_slice();
        let (o1, o2) = out.split_at_mut(4);
        self.agents[0].step_block(&xs[..4], u1.as_slice(), self.dt, o1);
        self.agents[1].step_block(&xs[4..], u2.as_slice(), self.dt, o2);
        next
    }

    fn jacobians(&self, x: &DVector<f64>, _u1: &DVector<f64>, _u2: &DVector<f64>, _t: usize) -> LinearizedDynamics {
        let mut a = DMatrix::zeros(8, 8);
        let mut b1 = DMatrix::zeros(8, 2);
        let mut b2 = DMatrix::zeros(8, 2);
        let xs = x.as_slice();
        self.agents[0].jacobian_block(&xs[..4], self.dt, &mut a, &mut b1, 0);
        self.agents[1].jacobian_block(&xs[4..], self.dt, &mut a, &mut b2, 4);
        LinearizedDynamics { a, b: [b1, b2] }
    }
}

/// Time-varying linear dynamics `x' = A_t x + B1_t u1 + B2_t u2`.
///
/// Handy for small hand-built games; any control dimension (including zero)
/// is allowed.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub stages: Vec<LinearizedDynamics>,
    pub dt: f64,
}

impl LinearDynamics {
    pub fn time_invariant(stage: LinearizedDynamics, horizon: usize, dt: f64) -> Self {
        Self { stages: vec![stage; horizon], dt }
    }

    fn stage(&self, t: usize) -> &LinearizedDynamics {
        &self.stages[t.min(self.stages.len() - 1)]
    }
}

impl Dynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.stages[0].a.nrows()
    }

    fn control_dims(&self) -> [usize; 2] {
        [self.stages[0].b[0].ncols(), self.stages[0].b[1].ncols()]
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn transition(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>, t: usize) -> DVector<f64> {
        let s = self.stage(t);
        &s.a * x + &s.b[0] * u1 + &s.b[1] * u2
    }

    fn jacobians(&self, _x: &DVector<f64>, _u1: &DVector<f64>, _u2: &DVector<f64>, t: usize) -> LinearizedDynamics {
        self.stage(t).clone()
    }
}

type TransitionFn = dyn Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync;

/// A user-supplied transition; Jacobians come from finite differences.
pub struct CustomDynamics {
    pub n: usize,
    pub m: [usize; 2],
    pub dt: f64,
    f: Box<TransitionFn>,
}

impl CustomDynamics {
    pub fn new<F>(n: usize, m: [usize; 2], dt: f64, f: F) -> Self
    where
        F: Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>, usize) -> DVector<f64> + Send + Sync + 'static,
    {
        Self { n, m, dt, f: Box::new(f) }
    }
}

impl Dynamics for CustomDynamics {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn control_dims(&self) -> [usize; 2] {
        self.m
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn transition(&self, x: &DVector<f64>, u1: &DVector<f64>, u2: &DVector<f64>, t: usize) -> DVector<f64> {
        (self.f)(x, u1, u2, t)
    }
}
