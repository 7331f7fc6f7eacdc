//! Brute-force feedback Stackelberg oracle for scalar LQ games.
//!
//! The oracle never touches Riccati algebra: at each stage it minimizes the
//! follower's cost-to-go over its control by nested grid search (refined by
//! golden section and a final parabolic step) for every leader control the
//! leader's own search tries, and it recovers each agent's cost-to-go by
//! evaluating the resulting equilibrium at three states (cost-to-go of an
//! LQ game is quadratic in the state).

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use stackelberg::lq_stackelberg::{self, LqGame};
use stackelberg::{Agent, LinearizedDynamics, QuadraticApproximation};

#[derive(Debug, Clone)]
pub struct ScalarGame {
    pub a: f64,
    pub b: [f64; 2],
    /// Per agent: state Hessian and gradient.
    pub q: [(f64, f64); 2],
    /// `r[i][j]`: agent `i`'s Hessian and gradient in agent `j`'s control.
    pub r: [[(f64, f64); 2]; 2],
    pub horizon: usize,
    pub leader: Agent,
    pub x1: f64,
}

impl ScalarGame {
    pub fn stage_cost(&self, i: usize, x: f64, u: [f64; 2]) -> f64 {
        let (qh, qg) = self.q[i];
        let mut c = qg * x + 0.5 * qh * x * x;
        for j in 0..2 {
            let (rh, rg) = self.r[i][j];
            c += rg * u[j] + 0.5 * rh * u[j] * u[j];
        }
        c
    }

    pub fn next(&self, x: f64, u: [f64; 2]) -> f64 {
        self.a * x + self.b[0] * u[0] + self.b[1] * u[1]
    }

    pub fn to_lq(&self) -> LqGame {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        let v = |v: f64| DVector::from_element(1, v);
        let stage = |i: usize| {
            let mut c = QuadraticApproximation::zeros(Agent::BOTH[i], 1, [1, 1]);
            c.state_hess = m(self.q[i].0);
            c.state_grad = v(self.q[i].1);
            for j in 0..2 {
                c.control_hess[j] = m(self.r[i][j].0);
                c.control_grad[j] = v(self.r[i][j].1);
            }
            c
        };
        LqGame {
            dynamics: vec![LinearizedDynamics { a: m(self.a), b: [m(self.b[0]), m(self.b[1])] }; self.horizon],
            costs: vec![[stage(0), stage(1)]; self.horizon],
            leader: self.leader,
        }
    }
}

/// `c0 + c1 x + c2 x²`.
#[derive(Debug, Clone, Copy, Default)]
struct Quadratic([f64; 3]);

impl Quadratic {
    fn eval(&self, x: f64) -> f64 {
        self.0[0] + self.0[1] * x + self.0[2] * x * x
    }

    fn through(v_minus: f64, v0: f64, v_plus: f64) -> Self {
        Quadratic([v0, 0.5 * (v_plus - v_minus), 0.5 * (v_plus + v_minus) - v0])
    }
}

const SEARCH_BOUND: f64 = 60.0;

/// Minimizer of a convex function on `[-SEARCH_BOUND, SEARCH_BOUND]`.
fn argmin(f: impl Fn(f64) -> f64) -> f64 {
    // coarse grid
    let n = 480;
    let step = 2.0 * SEARCH_BOUND / n as f64;
    let best = (0..=n)
        .map(|k| -SEARCH_BOUND + k as f64 * step)
        .min_by(|a, b| f(*a).total_cmp(&f(*b)))
        .unwrap();
    assert!(best.abs() < SEARCH_BOUND - step, "minimizer at the search boundary");
    // golden section inside the bracketing cells
    let (mut lo, mut hi) = (best - step, best + step);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (hi - g * (hi - lo), lo + g * (hi - lo));
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > 1e-3 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - g * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + g * (hi - lo);
            fd = f(d);
        }
    }
    // parabolic polish through a well-separated triple
    let m = 0.5 * (lo + hi);
    let h = 0.05;
    let (fm, f0, fp) = (f(m - h), f(m), f(m + h));
    m - h * (fp - fm) / (2.0 * (fp - 2.0 * f0 + fm))
}

pub struct Oracle<'a> {
    game: &'a ScalarGame,
    /// Cost-to-go of each agent from stage `t + 1` on, per stage `t`.
    continuation: Vec<[Quadratic; 2]>,
}

impl<'a> Oracle<'a> {
    pub fn new(game: &'a ScalarGame) -> Self {
        let mut continuation = vec![[Quadratic::default(); 2]; game.horizon];
        for t in (0..game.horizon).rev() {
            let mut oracle = Oracle { game, continuation: continuation.clone() };
            oracle.continuation.truncate(t + 1);
            let at = |x: f64| oracle.stage_values(t, x);
            let (m, z, p) = (at(-1.0), at(0.0), at(1.0));
            if t > 0 {
                continuation[t - 1] = [0, 1].map(|i| Quadratic::through(m[i], z[i], p[i]));
            }
        }
        Oracle { game, continuation }
    }

    fn cost_to_go(&self, i: usize, t: usize, x: f64, u: [f64; 2]) -> f64 {
        let g = self.game;
        let later = if t + 1 < g.horizon { self.continuation[t][i].eval(g.next(x, u)) } else { 0.0 };
        g.stage_cost(i, x, u) + later
    }

    fn controls(&self, l: usize, u_l: f64, u_f: f64) -> [f64; 2] {
        let mut u = [0.0; 2];
        u[l] = u_l;
        u[1 - l] = u_f;
        u
    }

    pub fn follower_response(&self, t: usize, x: f64, u_l: f64) -> f64 {
        let l = self.game.leader.index();
        argmin(|u_f| self.cost_to_go(1 - l, t, x, self.controls(l, u_l, u_f)))
    }

    pub fn equilibrium(&self, t: usize, x: f64) -> [f64; 2] {
        let l = self.game.leader.index();
        let u_l = argmin(|u_l| {
            let u_f = self.follower_response(t, x, u_l);
            self.cost_to_go(l, t, x, self.controls(l, u_l, u_f))
        });
        self.controls(l, u_l, self.follower_response(t, x, u_l))
    }

    fn stage_values(&self, t: usize, x: f64) -> [f64; 2] {
        let u = self.equilibrium(t, x);
        [0, 1].map(|i| self.cost_to_go(i, t, x, u))
    }
}

pub fn game_strategy() -> impl Strategy<Value = ScalarGame> {
    let pair = |lo: f64, hi: f64| (lo..hi, -1.0..1.0f64);
    (
        -1.3..1.3f64,
        prop::array::uniform2(prop_oneof![-1.0..-0.2f64, 0.2..1.0f64]),
        prop::array::uniform2(pair(0.0, 2.0)),
        // own-control Hessians strictly positive, cross ones PSD
        prop::array::uniform2(pair(0.3, 2.0)),
        prop::array::uniform2(pair(0.0, 1.0)),
        1..=3usize,
        prop::bool::ANY,
        -2.0..2.0f64,
    )
        .prop_map(|(a, b, q, own, cross, horizon, leader_one, x1)| ScalarGame {
            a,
            b,
            q,
            r: [[own[0], cross[0]], [cross[1], own[1]]],
            horizon,
            leader: if leader_one { Agent::One } else { Agent::Two },
            x1,
        })
}

pub fn totals(game: &ScalarGame, xs: &[f64], us: &[[f64; 2]]) -> [f64; 2] {
    [0, 1].map(|i| xs.iter().zip(us).map(|(x, u)| game.stage_cost(i, *x, *u)).sum())
}

/// Solver against oracle on one game: trajectory costs within 1e-5, the
/// follower's control within 1e-6 of its stage-wise best response.
pub fn check_against_oracle(game: &ScalarGame) -> Result<(), TestCaseError> {
    let strategy = lq_stackelberg::solve(&game.to_lq()).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let (xs, us) = strategy.apply_linear(&game.to_lq(), &DVector::from_element(1, game.x1));
    let solver_x: Vec<f64> = xs.iter().map(|x| x[0]).collect();
    let solver_u: Vec<[f64; 2]> = (0..game.horizon).map(|t| [us[0][t][0], us[1][t][0]]).collect();

    let oracle = Oracle::new(game);
    let mut x = game.x1;
    let (mut oracle_x, mut oracle_u) = (Vec::new(), Vec::new());
    for t in 0..game.horizon {
        let u = oracle.equilibrium(t, x);
        oracle_x.push(x);
        oracle_u.push(u);
        x = game.next(x, u);
    }

    let (a, b) = (totals(game, &solver_x, &solver_u), totals(game, &oracle_x, &oracle_u));
    for i in 0..2 {
        prop_assert!((a[i] - b[i]).abs() <= 1e-5, "agent {} cost {} vs oracle {}", i + 1, a[i], b[i]);
    }
    // the follower's control is its stage-wise best response along the solution
    let l = game.leader.index();
    for t in 0..game.horizon {
        let br = oracle.follower_response(t, solver_x[t], solver_u[t][l]);
        prop_assert!((br - solver_u[t][1 - l]).abs() <= 1e-6, "stage {t}: follower {} vs oracle {br}", solver_u[t][1 - l]);
    }
    Ok(())
}
