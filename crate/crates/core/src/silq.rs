//! Iterative LQ solver for general two-agent feedback Stackelberg games.
//!
//! Each iteration linearizes the dynamics and quadraticizes both costs about
//! the current iterate, shifts any non-convex blocks by `νI`, solves the LQ
//! Stackelberg game exactly, and takes a step
//! `u_t ← u_t - P_t δx_t - α_k p_t` along a fresh rollout. The loop stops once
//! the sup-norm change of the state trajectory drops to the tolerance, and
//! returns the iterate that was current when the test passed.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{auto_nu, convexify_in_place, CostError, StageCost};
use crate::dynamics::{rollout, Dynamics, DynamicsError};
use crate::lq_stackelberg::{self, AffineStrategy, LqError, LqGame};
use crate::types::{Agent, Controls, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("nominal rollout leaves the cost domain: {0}")]
    InfeasibleNominal(CostError),
    #[error("LQ subproblem failed at iteration {iteration}: {source}")]
    Lq { iteration: usize, source: LqError },
    #[error("trajectories have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Dynamics, both agents' stage costs, a horizon and the leader.
#[derive(Clone)]
pub struct GameDefinition {
    pub model: Arc<dyn Dynamics>,
    pub costs: [Arc<dyn StageCost>; 2],
    pub horizon: usize,
    pub leader: Agent,
}

impl GameDefinition {
    pub fn with_leader(&self, leader: Agent) -> Self {
        Self { leader, ..self.clone() }
    }

    pub fn with_horizon(&self, horizon: usize) -> Self {
        Self { horizon, ..self.clone() }
    }

    pub fn cost_refs(&self) -> [&dyn StageCost; 2] {
        [self.costs[0].as_ref(), self.costs[1].as_ref()]
    }

    /// Both agents' objectives over a trajectory.
    pub fn objectives(&self, states: &[DVector<f64>], controls: &Controls) -> Result<[f64; 2], CostError> {
        let mut out = [0.0; 2];
        for (i, cost) in self.costs.iter().enumerate() {
            out[i] = crate::costs::sum_objective(cost.as_ref(), states, &controls[0], &controls[1])?;
        }
        Ok(out)
    }

    /// Zero controls for both agents over the full horizon.
    pub fn zero_controls(&self) -> Controls {
        let [m1, m2] = self.model.control_dims();
        [vec![DVector::zeros(m1); self.horizon], vec![DVector::zeros(m2); self.horizon]]
    }
}

impl std::fmt::Debug for GameDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameDefinition")
            .field("state_dim", &self.model.state_dim())
            .field("horizon", &self.horizon)
            .field("leader", &self.leader)
            .finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Convergence threshold on the sup-norm trajectory change.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub initial_step: f64,
    pub min_step: f64,
    /// Step-size decay factor applied after every non-final iteration.
    pub decay: f64,
    /// Target minimum eigenvalue when a cost expansion needs convexifying.
    pub nu_margin: f64,
    /// Step halvings allowed when a rollout leaves a cost's domain.
    pub max_backoffs: usize,
    #[serde(default)]
    pub convexify: ConvexifyPolicy,
}

/// When a stage's cost expansion receives the `νI` shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvexifyPolicy {
    /// Only when `Q` is not PSD or `R^{ii}` is not PD; exactly convex
    /// expansions (e.g. LQ games) are left untouched.
    #[default]
    WhenNeeded,
    /// Whenever the minimum eigenvalue of `Q` or `R^{ii}` is below the margin.
    Margin,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1.2e-3,
            max_iterations: 3500,
            initial_step: 1.0,
            min_step: 1e-2,
            decay: 0.98,
            nu_margin: 1e-3,
            max_backoffs: 20,
            convexify: ConvexifyPolicy::WhenNeeded,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolveError> {
        let bad = |msg: &str| Err(SolveError::Config(msg.to_owned()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1");
        }
        if !(self.min_step > 0.0 && self.min_step <= self.initial_step && self.initial_step <= 1.0) {
            return bad("step sizes must satisfy 0 < min_step <= initial_step <= 1");
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return bad("decay must lie in (0, 1)");
        }
        if !(self.nu_margin > 0.0) {
            return bad("nu_margin must be positive");
        }
        Ok(())
    }
}

/// `α_{k+1} = max(α_min, β α_k)`.
pub fn next_step(alpha: f64, cfg: &SolverConfig) -> f64 {
    (cfg.decay * alpha).max(cfg.min_step)
}

/// Step size used at (1-based) iteration `k`.
pub fn step_size_schedule(k: usize, cfg: &SolverConfig) -> f64 {
    assert!(k >= 1, "iterations are numbered from 1");
    (1..k).fold(cfg.initial_step, |a, _| next_step(a, cfg))
}

/// `‖x_new - x_old‖_∞` over all timesteps and entries.
pub fn convergence_metric(x_new: &[DVector<f64>], x_old: &[DVector<f64>]) -> Result<f64, SolveError> {
    if x_new.len() != x_old.len() {
        return Err(SolveError::LengthMismatch(x_new.len(), x_old.len()));
    }
    let mut worst = 0.0f64;
    for (a, b) in x_new.iter().zip(x_old) {
        if a.len() != b.len() {
            return Err(SolveError::LengthMismatch(a.len(), b.len()));
        }
        for (p, q) in a.iter().zip(b.iter()) {
            worst = worst.max((p - q).abs());
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub converged: bool,
    /// Iterations performed (the one whose test passed included).
    pub iterations: usize,
    pub states: Trajectory,
    pub controls: Controls,
    /// Convergence metric of every iteration.
    pub metric_history: Vec<f64>,
    /// Step size actually applied at every iteration (after any backoff).
    pub step_history: Vec<f64>,
    /// Objectives of the proposed iterate at every iteration.
    pub objective_history: Vec<[f64; 2]>,
    /// Objectives of the returned trajectory.
    pub objectives: [f64; 2],
    /// Wall time of every iteration in seconds.
    pub iteration_seconds: Vec<f64>,
    /// Set when step backoff could not keep a rollout inside the cost domain.
    pub domain_violation: bool,
}

/// Builds the (convexified) LQ approximation about a trajectory.
pub fn approximate(
    game: &GameDefinition,
    states: &[DVector<f64>],
    controls: &Controls,
    cfg: &SolverConfig,
) -> Result<LqGame, CostError> {
    let mut dynamics = Vec::with_capacity(states.len());
    let mut costs = Vec::with_capacity(states.len());
    for (t, x) in states.iter().enumerate() {
        let (u1, u2) = (&controls[0][t], &controls[1][t]);
        dynamics.push(game.model.jacobians(x, u1, u2, t));
        let mut stage = [game.costs[0].quadraticize(x, u1, u2)?, game.costs[1].quadraticize(x, u1, u2)?];
        for approx in &mut stage {
            let shift = match cfg.convexify {
                ConvexifyPolicy::WhenNeeded => !approx.is_convex(1e-9),
                ConvexifyPolicy::Margin => true,
            };
            if shift {
                let nu = auto_nu(approx, cfg.nu_margin);
                if nu > 0.0 {
                    convexify_in_place(approx, nu);
                }
            }
        }
        costs.push(stage);
    }
    Ok(LqGame { dynamics, costs, leader: game.leader })
}

/// The affine feedback law of the LQ game approximated about a trajectory.
pub fn feedback_law(
    game: &GameDefinition,
    states: &[DVector<f64>],
    controls: &Controls,
    cfg: &SolverConfig,
) -> Result<AffineStrategy, SolveError> {
    let lq = approximate(game, states, controls, cfg).map_err(SolveError::InfeasibleNominal)?;
    lq_stackelberg::solve(&lq).map_err(|source| SolveError::Lq { iteration: 0, source })
}

fn forward_pass(
    game: &GameDefinition,
    states: &[DVector<f64>],
    controls: &Controls,
    strategy: &AffineStrategy,
    step: f64,
) -> Option<(Trajectory, Controls)> {
    let horizon = states.len();
    let mut xs = Vec::with_capacity(horizon);
    let mut us: Controls = [Vec::with_capacity(horizon), Vec::with_capacity(horizon)];
    let mut x = states[0].clone();
    for t in 0..horizon {
        let dx = &x - &states[t];
        for i in 0..2 {
            let mut u = &controls[i][t] - &strategy.gains[i][t] * &dx;
            u.axpy(-step, &strategy.feedforward[i][t], 1.0);
            us[i].push(u);
        }
        let next = if t + 1 < horizon { game.model.transition(&x, &us[0][t], &us[1][t], t) } else { x.clone() };
        if !next.iter().all(|v| v.is_finite()) {
            return None;
        }
        xs.push(std::mem::replace(&mut x, next));
    }
    Some((xs, us))
}

/// Runs the iterative solver from `x1` and nominal controls.
pub fn solve(
    game: &GameDefinition,
    x1: &DVector<f64>,
    nominal: &Controls,
    cfg: &SolverConfig,
) -> Result<SolveResult, SolveError> {
    cfg.validate()?;
    for seq in nominal {
        if seq.len() != game.horizon {
            return Err(SolveError::LengthMismatch(seq.len(), game.horizon));
        }
    }
    let mut states = rollout(game.model.as_ref(), x1, nominal)?;
    let mut controls = nominal.clone();
    let mut objectives = game.objectives(&states, &controls).map_err(SolveError::InfeasibleNominal)?;

    let mut result = SolveResult {
        converged: false,
        iterations: 0,
        states: Vec::new(),
        controls: [Vec::new(), Vec::new()],
        metric_history: Vec::new(),
        step_history: Vec::new(),
        objective_history: Vec::new(),
        objectives,
        iteration_seconds: Vec::new(),
        domain_violation: false,
    };

    let mut alpha = cfg.initial_step;
    for k in 1..=cfg.max_iterations {
        let started = Instant::now();
        result.iterations = k;
        // the current iterate is always feasible, so the expansion succeeds
        let lq = approximate(game, &states, &controls, cfg).map_err(SolveError::InfeasibleNominal)?;
        let strategy = lq_stackelberg::solve(&lq).map_err(|source| SolveError::Lq { iteration: k, source })?;

        let mut step = alpha;
        let mut accepted = None;
        for _ in 0..=cfg.max_backoffs {
            if let Some((xs, us)) = forward_pass(game, &states, &controls, &strategy, step) {
                if let Ok(obj) = game.objectives(&xs, &us) {
                    accepted = Some((xs, us, obj));
                    break;
                }
            }
            step *= 0.5;
        }
        let Some((new_states, new_controls, new_objectives)) = accepted else {
            log::debug!("iteration {k}: step backoff exhausted");
            result.domain_violation = true;
            result.iteration_seconds.push(started.elapsed().as_secs_f64());
            break;
        };

        let metric = convergence_metric(&new_states, &states)?;
        result.metric_history.push(metric);
        result.step_history.push(step);
        result.objective_history.push(new_objectives);
        result.iteration_seconds.push(started.elapsed().as_secs_f64());

        if metric <= cfg.tolerance {
            result.converged = true;
            break;
        }
        states = new_states;
        controls = new_controls;
        objectives = new_objectives;
        alpha = next_step(alpha, cfg);
    }
    result.states = states;
    result.controls = controls;
    result.objectives = objectives;
    Ok(result)
}
