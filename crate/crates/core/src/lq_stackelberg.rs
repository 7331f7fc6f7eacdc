//! Finite-horizon feedback Stackelberg solutions of two-player LQ games.
//!
//! The game is posed in deviation coordinates: dynamics
//! `x' = A x + B1 u1 + B2 u2` and, for each agent, a stage cost
//! `c + qᵀx + ½xᵀQx + Σ_j (r_jᵀu_j + ½u_jᵀR_j u_j)`. Working backwards, at
//! every stage the follower's best response to the leader's control is
//! affine in the state and in that control; the leader minimises its own
//! stage-plus-cost-to-go with that response substituted, and both value
//! functions are propagated with the resulting affine laws.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::costs::{QuadraticApproximation, StageCost};
use crate::dynamics::{Dynamics, LinearizedDynamics};
use crate::types::{Agent, Controls, Trajectory};

const CONDITION_WARN: f64 = 1e10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LqError {
    #[error("singular {which} system at stage {stage}")]
    Singular { stage: usize, which: &'static str },
    #[error("game has {dynamics} dynamics stages but {costs} cost stages")]
    HorizonMismatch { dynamics: usize, costs: usize },
}

/// A two-player LQ game with a designated leader.
#[derive(Debug, Clone)]
pub struct LqGame {
    pub dynamics: Vec<LinearizedDynamics>,
    /// `costs[t][i]` is agent `i`'s expansion at stage `t`.
    pub costs: Vec<[QuadraticApproximation; 2]>,
    pub leader: Agent,
}

impl LqGame {
    pub fn horizon(&self) -> usize {
        self.costs.len()
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics[0].a.nrows()
    }

    pub fn control_dims(&self) -> [usize; 2] {
        [self.dynamics[0].b[0].ncols(), self.dynamics[0].b[1].ncols()]
    }
}

/// The follower's stage response `u_F = -K x - L u_L - k`.
#[derive(Debug, Clone, PartialEq)]
pub struct FollowerReaction {
    pub state_gain: DMatrix<f64>,
    pub leader_gain: DMatrix<f64>,
    pub offset: DVector<f64>,
}

/// Per-agent, per-stage affine laws `u_t^(i) = -P_t^(i) x_t - p_t^(i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStrategy {
    pub leader: Agent,
    pub gains: [Vec<DMatrix<f64>>; 2],
    pub feedforward: [Vec<DVector<f64>>; 2],
    pub reactions: Vec<FollowerReaction>,
}

impl AffineStrategy {
    pub fn horizon(&self) -> usize {
        self.gains[0].len()
    }

    pub fn control(&self, agent: Agent, t: usize, x: &DVector<f64>) -> DVector<f64> {
        let i = agent.index();
        -(&self.gains[i][t] * x) - &self.feedforward[i][t]
    }

    /// Rolls the laws out through `model` from `x1`.
    pub fn apply(&self, model: &dyn Dynamics, x1: &DVector<f64>) -> (Trajectory, Controls) {
        self.simulate(x1, |x, u1, u2, t| model.transition(x, u1, u2, t))
    }

    /// Rolls the laws out through the game's own linear dynamics.
    pub fn apply_linear(&self, game: &LqGame, x1: &DVector<f64>) -> (Trajectory, Controls) {
        self.simulate(x1, |x, u1, u2, t| {
            let d = &game.dynamics[t];
            &d.a * x + &d.b[0] * u1 + &d.b[1] * u2
        })
    }

    fn simulate(
        &self,
        x1: &DVector<f64>,
        step: impl Fn(&DVector<f64>, &DVector<f64>, &DVector<f64>, usize) -> DVector<f64>,
    ) -> (Trajectory, Controls) {
        let horizon = self.horizon();
        let mut states = Vec::with_capacity(horizon);
        let mut controls: Controls = [Vec::with_capacity(horizon), Vec::with_capacity(horizon)];
        let mut x = x1.clone();
        for t in 0..horizon {
            let u1 = self.control(Agent::One, t, &x);
            let u2 = self.control(Agent::Two, t, &x);
            let next = if t + 1 < horizon { step(&x, &u1, &u2, t) } else { x.clone() };
            states.push(std::mem::replace(&mut x, next));
            controls[0].push(u1);
            controls[1].push(u2);
        }
        (states, controls)
    }
}

fn inverse(m: &DMatrix<f64>, stage: usize, which: &'static str) -> Result<DMatrix<f64>, LqError> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let inv = m.clone().try_inverse().ok_or(LqError::Singular { stage, which })?;
    if !inv.iter().all(|v| v.is_finite()) {
        return Err(LqError::Singular { stage, which });
    }
    let norm1 = |a: &DMatrix<f64>| a.column_iter().map(|c| c.lp_norm(1)).fold(0.0, f64::max);
    let cond = norm1(m) * norm1(&inv);
    if cond > CONDITION_WARN {
        log::warn!("{which} system at stage {stage} is ill-conditioned (cond ~ {cond:.3e})");
    }
    Ok(inv)
}

/// Solves the LQ game by backward recursion.
pub fn solve(game: &LqGame) -> Result<AffineStrategy, LqError> {
    let horizon = game.horizon();
    if game.dynamics.len() != horizon {
        return Err(LqError::HorizonMismatch { dynamics: game.dynamics.len(), costs: horizon });
    }
    let n = game.state_dim();
    let (l, f) = (game.leader.index(), game.leader.other().index());

    let mut z = [DMatrix::<f64>::zeros(n, n), DMatrix::zeros(n, n)];
    let mut zeta = [DVector::<f64>::zeros(n), DVector::zeros(n)];

    let mut gains: [Vec<DMatrix<f64>>; 2] = [vec![DMatrix::zeros(0, 0); horizon], vec![DMatrix::zeros(0, 0); horizon]];
    let mut feedforward: [Vec<DVector<f64>>; 2] = [vec![DVector::zeros(0); horizon], vec![DVector::zeros(0); horizon]];
    let mut reactions = Vec::with_capacity(horizon);

    for t in (0..horizon).rev() {
        let dyn_t = &game.dynamics[t];
        let a = &dyn_t.a;
        let (bl, bf) = (&dyn_t.b[l], &dyn_t.b[f]);
        let (cl, cf) = (&game.costs[t][l], &game.costs[t][f]);

        // follower's best response to (x, u_L)
        let bf_t_zf = bf.transpose() * &z[f];
        let s_f = &cf.control_hess[f] + &bf_t_zf * bf;
        let s_f_inv = inverse(&s_f, t, "follower")?;
        let k_gain = &s_f_inv * (&bf_t_zf * a);
        let l_gain = &s_f_inv * (&bf_t_zf * bl);
        let k_off = &s_f_inv * (bf.transpose() * &zeta[f] + &cf.control_grad[f]);

        // leader, with the response substituted
        let a_tilde = a - bf * &k_gain;
        let b_tilde = bl - bf * &l_gain;
        let c_tilde = -(bf * &k_off);
        let lt_rlf = l_gain.transpose() * &cl.control_hess[f];
        let bt_zl = b_tilde.transpose() * &z[l];
        let s_l = &cl.control_hess[l] + &lt_rlf * &l_gain + &bt_zl * &b_tilde;
        let s_l_inv = inverse(&s_l, t, "leader")?;
        let p_l = &s_l_inv * (&lt_rlf * &k_gain + &bt_zl * &a_tilde);
        let pp_l = &s_l_inv
            * (&cl.control_grad[l] + &lt_rlf * &k_off - l_gain.transpose() * &cl.control_grad[f]
                + &bt_zl * &c_tilde
                + b_tilde.transpose() * &zeta[l]);

        let p_f = &k_gain - &l_gain * &p_l;
        let pp_f = &k_off - &l_gain * &pp_l;

        // propagate both value functions under the closed loop
        let closed = a - bl * &p_l - bf * &p_f;
        let drift = -(bl * &pp_l + bf * &pp_f);
        let mut p_by_agent = [DMatrix::zeros(0, 0), DMatrix::zeros(0, 0)];
        let mut pp_by_agent = [DVector::zeros(0), DVector::zeros(0)];
        p_by_agent[l] = p_l;
        p_by_agent[f] = p_f;
        pp_by_agent[l] = pp_l;
        pp_by_agent[f] = pp_f;

        for i in 0..2 {
            let ci = &game.costs[t][i];
            let mut zi = ci.state_hess.clone();
            let mut zeta_i = ci.state_grad.clone();
            for j in 0..2 {
                let pj_t_rij = p_by_agent[j].transpose() * &ci.control_hess[j];
                zi += &pj_t_rij * &p_by_agent[j];
                zeta_i += &pj_t_rij * &pp_by_agent[j] - p_by_agent[j].transpose() * &ci.control_grad[j];
            }
            let ct_z = closed.transpose() * &z[i];
            zi += &ct_z * &closed;
            zeta_i += &ct_z * &drift + closed.transpose() * &zeta[i];
            z[i] = (&zi + zi.transpose()) * 0.5;
            zeta[i] = zeta_i;
        }

        reactions.push(FollowerReaction { state_gain: k_gain, leader_gain: l_gain, offset: k_off });
        let [p0, p1] = p_by_agent;
        let [pp0, pp1] = pp_by_agent;
        gains[0][t] = p0;
        gains[1][t] = p1;
        feedforward[0][t] = pp0;
        feedforward[1][t] = pp1;
    }
    reactions.reverse();
    Ok(AffineStrategy { leader: game.leader, gains, feedforward, reactions })
}

/// How hard [`verify_stackelberg`] probes a solution.
#[derive(Debug, Clone)]
pub struct PerturbationBudget {
    pub samples_per_stage: usize,
    /// Number of randomly chosen stages to probe; `None` probes every stage.
    pub stages: Option<usize>,
    /// Perturbation radii are drawn uniformly from `(0, max_norm]`.
    pub max_norm: f64,
    pub check_leader: bool,
    pub seed: u64,
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        Self { samples_per_stage: 100, stages: None, max_norm: 0.1, check_leader: true, seed: 0 }
    }
}

/// Smallest objective changes found by [`verify_stackelberg`]. A negative
/// value is an improvement the agent could have made unilaterally.
#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub follower_min_change: f64,
    pub follower_worst_stage: usize,
    pub leader_min_change: f64,
    pub leader_worst_stage: usize,
    /// The deviating agent's own control change behind each minimum.
    pub follower_direction: DVector<f64>,
    pub leader_direction: DVector<f64>,
    pub samples: usize,
}

impl VerificationReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.follower_min_change >= -tolerance && self.leader_min_change >= -tolerance
    }
}

/// Probes a trajectory for profitable single-stage deviations.
///
/// `law` is an affine feedback law about the reference (for LQ games the exact
/// strategy; for general games the solution of the last LQ approximation).
/// A follower deviation at stage `t` perturbs only its own stage-`t` control;
/// a leader deviation is answered by the follower's stage reaction. Later
/// stages follow `u = u_ref - P (x - x_ref)` in both cases, and the change in
/// the deviating agent's full objective is recorded. Rollouts leaving a cost's
/// domain count as no improvement.
pub fn verify_stackelberg(
    model: &dyn Dynamics,
    costs: [&dyn StageCost; 2],
    states: &[DVector<f64>],
    controls: &Controls,
    law: &AffineStrategy,
    budget: &PerturbationBudget,
) -> VerificationReport {
    let horizon = states.len();
    let leader = law.leader;
    let follower = leader.other();
    let mut rng = ChaCha8Rng::seed_from_u64(budget.seed);

    let objective = |agent: Agent, xs: &[DVector<f64>], us: &Controls, from: usize| -> f64 {
        let cost = costs[agent.index()];
        let mut total = 0.0;
        for t in from..xs.len() {
            match cost.evaluate(&xs[t], &us[0][t], &us[1][t]) {
                Ok(v) => total += v,
                Err(_) => return f64::INFINITY,
            }
        }
        total
    };

    let perturbed = |t: usize, deviation: [DVector<f64>; 2]| -> (Trajectory, Controls) {
        let mut xs: Trajectory = states[..=t].to_vec();
        let mut us: Controls = [controls[0][..t].to_vec(), controls[1][..t].to_vec()];
        let [d1, d2] = deviation;
        us[0].push(&controls[0][t] + d1);
        us[1].push(&controls[1][t] + d2);
        for s in t..horizon - 1 {
            let next = model.transition(&xs[s], &us[0][s], &us[1][s], s);
            let dx = &next - &states[s + 1];
            for i in 0..2 {
                us[i].push(&controls[i][s + 1] - &law.gains[i][s + 1] * &dx);
            }
            xs.push(next);
        }
        (xs, us)
    };

    let mut stages: Vec<usize> = (0..horizon).collect();
    if let Some(k) = budget.stages {
        // partial Fisher-Yates for k distinct stages
        let k = k.min(horizon);
        for i in 0..k {
            let j = rng.random_range(i..horizon);
            stages.swap(i, j);
        }
        stages.truncate(k);
        stages.sort_unstable();
    }

    let sample = |dim: usize, rng: &mut ChaCha8Rng| -> DVector<f64> {
        let dir = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let radius = budget.max_norm * (1.0 - rng.random::<f64>());
        match dir.norm() {
            norm if norm > 0.0 => dir * (radius / norm),
            _ => dir,
        }
    };

    let dims = [controls[0][0].len(), controls[1][0].len()];
    let mut report = VerificationReport {
        follower_min_change: f64::INFINITY,
        follower_worst_stage: 0,
        leader_min_change: f64::INFINITY,
        leader_worst_stage: 0,
        follower_direction: DVector::zeros(dims[follower.index()]),
        leader_direction: DVector::zeros(dims[leader.index()]),
        samples: 0,
    };
    for &t in &stages {
        let base_f = objective(follower, states, controls, t);
        let base_l = objective(leader, states, controls, t);
        for _ in 0..budget.samples_per_stage {
            let mut dev = [DVector::zeros(dims[0]), DVector::zeros(dims[1])];
            dev[follower.index()] = sample(dims[follower.index()], &mut rng);
            let (xs, us) = perturbed(t, dev.clone());
            let change = objective(follower, &xs, &us, t) - base_f;
            if change < report.follower_min_change {
                report.follower_min_change = change;
                report.follower_worst_stage = t;
                report.follower_direction = dev[follower.index()].clone();
            }
            report.samples += 1;

            if budget.check_leader {
                let dl = sample(dims[leader.index()], &mut rng);
                let response = -(&law.reactions[t].leader_gain * &dl);
                let mut dev = [DVector::zeros(dims[0]), DVector::zeros(dims[1])];
                dev[leader.index()] = dl.clone();
                dev[follower.index()] = response;
                let (xs, us) = perturbed(t, dev);
                let change = objective(leader, &xs, &us, t) - base_l;
                if change < report.leader_min_change {
                    report.leader_min_change = change;
                    report.leader_worst_stage = t;
                    report.leader_direction = dl;
                }
                report.samples += 1;
            }
        }
    }
    if !budget.check_leader {
        report.leader_min_change = 0.0;
    }
    report
}
