//! Particle filter over the joint context `(x_t, H_t)`: the game state and
//! which agent leads.
//!
//! Leadership follows a two-state Markov chain that flips with probability
//! `p_trans`; the state follows the game dynamics under the observed controls
//! plus Gaussian process noise. The measurement model is a short-horizon
//! Stackelberg game played from each particle's previous state with that
//! particle's leader: the solved state one step ahead is what the particle
//! expects to observe.

use std::collections::HashMap;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::Dynamics;
use crate::silq::{self, GameDefinition, SolveError, SolverConfig};
use crate::types::{seed_for, Agent, Controls};

/// Likelihood floor relative to the best particle of a step.
pub const LIKELIHOOD_FLOOR: f64 = 1e-300;

// stream tags for seed derivation
const STREAM_INIT: u64 = 0;
const STREAM_PROPAGATE: u64 = 1;
const STREAM_RESAMPLE: u64 = 2;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    Config(String),
    #[error("measurement {index}: {what} has length {got}, expected {expected}")]
    Dimension { index: usize, what: &'static str, expected: usize, got: usize },
    #[error("no measurements")]
    Empty,
    #[error("failed to build worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: DVector<f64>,
    pub prev_state: DVector<f64>,
    pub leader: Agent,
    pub prev_leader: Agent,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub num_particles: usize,
    /// Horizon `T_s` (in steps) of every measurement game.
    pub horizon: usize,
    pub p_trans: f64,
    /// Diagonal of the process-noise covariance `W`.
    pub process_noise: Vec<f64>,
    /// Diagonal of the measurement covariance `Σ`.
    pub measurement_noise: Vec<f64>,
    /// Diagonal of the initial particle spread around `ŷ_1`; `None` uses `Σ`.
    #[serde(default)]
    pub initial_spread: Option<Vec<f64>>,
    /// Prior probability that agent one leads.
    pub prior_leader_one: f64,
    /// Resample when ESS drops below this fraction of the particle count.
    pub resample_fraction: f64,
    /// State entries compared in the likelihood; `None` compares all of them.
    #[serde(default)]
    pub compared_indices: Option<Vec<usize>>,
    /// Keep a copy of every particle at every step in the trace.
    #[serde(default)]
    pub record_particles: bool,
    pub solver: SolverConfig,
}

impl FilterConfig {
    /// Defaults for a state of dimension `n` with isotropic noise levels.
    pub fn isotropic(n: usize, process_var: f64, measurement_var: f64) -> Self {
        Self {
            num_particles: 50,
            horizon: 75,
            p_trans: 0.02,
            process_noise: vec![process_var; n],
            measurement_noise: vec![measurement_var; n],
            initial_spread: None,
            prior_leader_one: 0.5,
            resample_fraction: 0.5,
            compared_indices: None,
            record_particles: false,
            solver: SolverConfig { tolerance: 1.5e-2, max_iterations: 50, ..Default::default() },
        }
    }

    pub fn validate(&self, state_dim: usize) -> Result<(), FilterError> {
        let bad = |msg: String| Err(FilterError::Config(msg));
        if self.num_particles == 0 {
            return bad("num_particles must be at least 1".into());
        }
        if self.horizon < 2 {
            return bad(format!("measurement horizon must be at least 2 steps, got {}", self.horizon));
        }
        if !(0.0..=1.0).contains(&self.p_trans) {
            return bad(format!("p_trans must lie in [0, 1], got {}", self.p_trans));
        }
        if !(0.0..=1.0).contains(&self.prior_leader_one) {
            return bad(format!("prior_leader_one must lie in [0, 1], got {}", self.prior_leader_one));
        }
        if !(0.0..=1.0).contains(&self.resample_fraction) {
            return bad("resample_fraction must lie in [0, 1]".into());
        }
        if self.process_noise.len() != state_dim || self.measurement_noise.len() != state_dim {
            return bad(format!("noise diagonals must have length {state_dim}"));
        }
        if self.process_noise.iter().any(|&w| !(w >= 0.0) || !w.is_finite()) {
            return bad("process noise variances must be finite and non-negative".into());
        }
        if self.measurement_noise.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return bad("measurement noise variances must be finite and positive".into());
        }
        if let Some(spread) = &self.initial_spread {
            if spread.len() != state_dim || spread.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return bad(format!("initial_spread must hold {state_dim} finite, non-negative variances"));
            }
        }
        if let Some(idx) = &self.compared_indices {
            if idx.is_empty() || idx.iter().any(|&i| i >= state_dim) {
                return bad(format!("compared_indices must be non-empty and below {state_dim}"));
            }
        }
        self.solver.validate().map_err(|e| FilterError::Config(e.to_string()))
    }
}

/// Observed state `ŷ_t` and both agents' controls `w_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub state: DVector<f64>,
    pub controls: [DVector<f64>; 2],
}

/// Solved measurement game of one particle.
#[derive(Debug, Clone)]
pub struct StackelbergMeasurementTrajectory {
    pub states: Vec<DVector<f64>>,
    pub converged: bool,
    pub iterations: usize,
}

impl StackelbergMeasurementTrajectory {
    /// The state one step after the particle's previous state.
    pub fn expected(&self) -> &DVector<f64> {
        &self.states[1]
    }
}

/// Per-step leadership probabilities and particle-cloud diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LeadershipBelief {
    pub leader_one: Vec<f64>,
    pub leader_two: Vec<f64>,
    pub ess: Vec<f64>,
    pub mean_state: Vec<Vec<f64>>,
    pub state_variance: Vec<Vec<f64>>,
}

impl LeadershipBelief {
    pub fn len(&self) -> usize {
        self.leader_one.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leader_one.is_empty()
    }

    pub fn of(&self, agent: Agent) -> &[f64] {
        match agent {
            Agent::One => &self.leader_one,
            Agent::Two => &self.leader_two,
        }
    }

    fn push(&mut self, particles: &[Particle]) {
        let (b1, b2) = leadership_belief(particles);
        self.leader_one.push(b1);
        self.leader_two.push(b2);
        self.ess.push(effective_sample_size(particles));
        let n = particles[0].state.len();
        let mut mean = DVector::zeros(n);
        for p in particles {
            mean.axpy(p.weight, &p.state, 1.0);
        }
        let mut var = DVector::zeros(n);
        for p in particles {
            let d = &p.state - &mean;
            var.axpy(p.weight, &d.component_mul(&d), 1.0);
        }
        self.mean_state.push(mean.as_slice().to_vec());
        self.state_variance.push(var.as_slice().to_vec());
    }
}

/// Per-step bookkeeping beyond the belief itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub resampled: bool,
    /// Particles whose measurement game hit the iteration cap.
    pub nonconverged: usize,
    /// Particles whose measurement game failed outright.
    pub failed: usize,
    /// Distinct measurement games solved (after de-duplication).
    pub games_solved: usize,
    /// Every likelihood underflowed and the weights were reset.
    pub degenerate: bool,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FilterTrace {
    pub belief: LeadershipBelief,
    pub steps: Vec<StepDiagnostics>,
    /// Post-update particle sets, when recording is enabled.
    pub particles: Vec<Vec<Particle>>,
}

/// `1 / Σ w²`.
pub fn effective_sample_size(particles: &[Particle]) -> f64 {
    1.0 / particles.iter().map(|p| p.weight * p.weight).sum::<f64>()
}

/// `(b(H = 1), b(H = 2))`, with `b2` computed as the complement.
///
/// `b1 = s1 / (s1 + s2)` over the two hypotheses' weight sums, which is
/// exactly 1 (or 0) when every particle agrees.
pub fn leadership_belief(particles: &[Particle]) -> (f64, f64) {
    let (mut s1, mut s2) = (0.0, 0.0);
    for p in particles {
        match p.leader {
            Agent::One => s1 += p.weight,
            Agent::Two => s2 += p.weight,
        }
    }
    let b1 = if s1 + s2 > 0.0 { (s1 / (s1 + s2)).clamp(0.0, 1.0) } else { 0.5 };
    (b1, 1.0 - b1)
}

/// Each agent's last observed control repeated `horizon` times; zeros when
/// nothing has been observed yet.
pub fn get_nominal_trajectory(
    horizon: usize,
    last_controls: Option<&[DVector<f64>; 2]>,
    control_dims: [usize; 2],
) -> Controls {
    let make = |i: usize| -> Vec<DVector<f64>> {
        let u = last_controls.map_or_else(|| DVector::zeros(control_dims[i]), |c| c[i].clone());
        vec![u; horizon]
    };
    [make(0), make(1)]
}

/// Flips leaders with probability `p_trans` and pushes states through the
/// dynamics under `controls` plus noise with variances `process_noise`.
pub fn propagate(
    particles: &mut [Particle],
    controls: &[DVector<f64>; 2],
    model: &dyn Dynamics,
    process_noise: &[f64],
    p_trans: f64,
    seed: u64,
    t: usize,
) {
    let std: Vec<f64> = process_noise.iter().map(|w| w.sqrt()).collect();
    for (k, p) in particles.iter_mut().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(seed, &[STREAM_PROPAGATE, t as u64, k as u64]));
        p.prev_leader = p.leader;
        if rng.random::<f64>() < p_trans {
            p.leader = p.leader.other();
        }
        let mut next = model.transition(&p.state, &controls[0], &controls[1], t);
        for (x, s) in next.iter_mut().zip(&std) {
            if *s > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                *x += s * z;
            }
        }
        p.prev_state = std::mem::replace(&mut p.state, next);
    }
}

/// Solves the measurement game from `prev_state` with `leader`.
pub fn expected_measurement(
    game: &GameDefinition,
    prev_state: &DVector<f64>,
    leader: Agent,
    nominal: &Controls,
    solver: &SolverConfig,
) -> Result<StackelbergMeasurementTrajectory, SolveError> {
    let game = game.with_leader(leader);
    let res = silq::solve(&game, prev_state, nominal, solver)?;
    Ok(StackelbergMeasurementTrajectory { states: res.states, converged: res.converged, iterations: res.iterations })
}

/// Multiplies weights by the Gaussian likelihood of `observed` and
/// renormalizes. `expected[k] = None` marks a failed measurement game, which
/// gets the likelihood floor. Returns `true` if every likelihood was
/// unusable and the weights were reset to uniform.
pub fn measurement_update(
    particles: &mut [Particle],
    expected: &[Option<&DVector<f64>>],
    observed: &DVector<f64>,
    variances: &[f64],
    indices: Option<&[usize]>,
) -> bool {
    assert_eq!(particles.len(), expected.len());
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..observed.len()).collect();
            &all
        }
    };
    let log_lik: Vec<f64> = expected
        .iter()
        .map(|e| match e {
            Some(e) => -0.5 * idx.iter().map(|&i| (observed[i] - e[i]).powi(2) / variances[i]).sum::<f64>(),
            None => f64::NEG_INFINITY,
        })
        .collect();
    let best = log_lik.iter().copied().filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        log::warn!("every particle likelihood is unusable; resetting to uniform weights");
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
        return true;
    }
    for (p, l) in particles.iter_mut().zip(&log_lik) {
        let rel = if l.is_finite() { (l - best).exp() } else { 0.0 };
        p.weight *= rel.max(LIKELIHOOD_FLOOR);
    }
    let total: f64 = particles.iter().map(|p| p.weight).sum();
    if !(total > 0.0) || !total.is_finite() {
        log::warn!("posterior weights vanished; resetting to uniform weights");
        let w = 1.0 / particles.len() as f64;
        particles.iter_mut().for_each(|p| p.weight = w);
        return true;
    }
    particles.iter_mut().for_each(|p| p.weight /= total);
    false
}

/// Systematic resampling: one uniform offset, `N` evenly spaced pointers.
pub fn resample(particles: &[Particle], offset: f64) -> Vec<Particle> {
    let n = particles.len();
    let step = 1.0 / n as f64;
    let mut out = Vec::with_capacity(n);
    let mut cumulative = particles[0].weight;
    let mut j = 0;
    for i in 0..n {
        let u = (offset.clamp(0.0, 1.0) + i as f64) * step;
        while u >= cumulative && j + 1 < n {
            j += 1;
            cumulative += particles[j].weight;
        }
        let mut p = particles[j].clone();
        p.weight = step;
        out.push(p);
    }
    out
}

/// Number of leader-one particles for a prior, rounded to the nearest count.
fn leader_one_count(n: usize, prior: f64) -> usize {
    ((n as f64 * prior).round() as usize).min(n)
}

/// Stateful filter: feed measurements one at a time with [`step`](Self::step).
pub struct LeadershipFilter {
    game: GameDefinition,
    cfg: FilterConfig,
    seed: u64,
    pool: Option<Arc<rayon::ThreadPool>>,
    particles: Vec<Particle>,
    last_controls: Option<[DVector<f64>; 2]>,
    t: usize,
    trace: FilterTrace,
}

impl LeadershipFilter {
    /// `game` supplies dynamics and costs; its horizon and leader are
    /// replaced by the configured measurement horizon and each particle's
    /// hypothesis.
    pub fn new(game: &GameDefinition, cfg: FilterConfig, seed: u64) -> Result<Self, FilterError> {
        cfg.validate(game.model.state_dim())?;
        Ok(Self {
            game: game.with_horizon(cfg.horizon),
            cfg,
            seed,
            pool: None,
            particles: Vec::new(),
            last_controls: None,
            t: 0,
            trace: FilterTrace::default(),
        })
    }

    /// Solve measurement games on a dedicated pool of `workers` threads.
    /// Results do not depend on the worker count.
    pub fn with_workers(mut self, workers: usize) -> Result<Self, FilterError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()
            .map_err(|e| FilterError::Pool(e.to_string()))?;
        self.pool = Some(Arc::new(pool));
        Ok(self)
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn particles(&self) -> &[Particle] {
        &self.particles
    }

    pub fn trace(&self) -> &FilterTrace {
        &self.trace
    }

    pub fn into_trace(self) -> FilterTrace {
        self.trace
    }

    fn check(&self, y: &Measurement) -> Result<(), FilterError> {
        let n = self.game.model.state_dim();
        let [m1, m2] = self.game.model.control_dims();
        let index = self.t;
        for (what, expected, got) in [
            ("state", n, y.state.len()),
            ("agent 1 control", m1, y.controls[0].len()),
            ("agent 2 control", m2, y.controls[1].len()),
        ] {
            if expected != got {
                return Err(FilterError::Dimension { index, what, expected, got });
            }
        }
        Ok(())
    }

    /// Processes the next measurement. The first call draws the initial
    /// particle set around it.
    pub fn step(&mut self, y: &Measurement) -> Result<(), FilterError> {
        self.check(y)?;
        let started = Instant::now();
        let mut diag = StepDiagnostics::default();
        if self.t == 0 {
            self.initialize(&y.state);
        } else {
            let controls = self.last_controls.clone().expect("controls recorded after first step");
            propagate(
                &mut self.particles,
                &controls,
                self.game.model.as_ref(),
                &self.cfg.process_noise,
                self.cfg.p_trans,
                self.seed,
                self.t,
            );
            self.update(&y.state, &controls, &mut diag);
        }

        self.trace.belief.push(&self.particles);
        if self.cfg.record_particles {
            self.trace.particles.push(self.particles.clone());
        }
        let n = self.particles.len() as f64;
        if self.t > 0 && effective_sample_size(&self.particles) < self.cfg.resample_fraction * n {
            let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.seed, &[STREAM_RESAMPLE, self.t as u64]));
            self.particles = resample(&self.particles, rng.random::<f64>());
            diag.resampled = true;
        }
        diag.seconds = started.elapsed().as_secs_f64();
        self.trace.steps.push(diag);
        self.last_controls = Some(y.controls.clone());
        self.t += 1;
        Ok(())
    }

    /// States drawn from `N(ŷ_1, Σ)` (or the configured initial spread); exactly `round(prior · N)` particles
    /// start with agent one leading, at shuffled positions.
    fn initialize(&mut self, y1: &DVector<f64>) {
        let n = self.cfg.num_particles;
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(self.seed, &[STREAM_INIT]));
        let mut leaders: Vec<Agent> = (0..n)
            .map(|k| if k < leader_one_count(n, self.cfg.prior_leader_one) { Agent::One } else { Agent::Two })
            .collect();
        for k in (1..n).rev() {
            leaders.swap(k, rng.random_range(0..=k));
        }
        let spread = self.cfg.initial_spread.as_ref().unwrap_or(&self.cfg.measurement_noise);
        let std: Vec<f64> = spread.iter().map(|s| s.sqrt()).collect();
        self.particles = leaders
            .into_iter()
            .map(|leader| {
                let mut x = y1.clone();
                for (v, s) in x.iter_mut().zip(&std) {
                    let z: f64 = rng.sample(StandardNormal);
                    *v += s * z;
                }
                Particle { prev_state: x.clone(), state: x, leader, prev_leader: leader, weight: 1.0 / n as f64 }
            })
            .collect();
    }

    fn update(&mut self, observed: &DVector<f64>, controls: &[DVector<f64>; 2], diag: &mut StepDiagnostics) {
        // particles duplicated by resampling share their previous state, so
        // each distinct (previous state, leader) game is solved once
        let mut keys: HashMap<(Vec<u64>, Agent), usize> = HashMap::new();
        let mut jobs: Vec<(DVector<f64>, Agent)> = Vec::new();
        let slots: Vec<usize> = self
            .particles
            .iter()
            .map(|p| {
                let key = (p.prev_state.iter().map(|v| v.to_bits()).collect(), p.prev_leader);
                *keys.entry(key).or_insert_with(|| {
                    jobs.push((p.prev_state.clone(), p.prev_leader));
                    jobs.len() - 1
                })
            })
            .collect();

        let nominal = get_nominal_trajectory(self.cfg.horizon, Some(controls), self.game.model.control_dims());
        let game = &self.game;
        let solver = &self.cfg.solver;
        let solve_all = || -> Vec<Result<StackelbergMeasurementTrajectory, SolveError>> {
            jobs.par_iter().map(|(x, h)| expected_measurement(game, x, *h, &nominal, solver)).collect()
        };
        let solved = match &self.pool {
            Some(pool) => pool.install(solve_all),
            None => solve_all(),
        };
        diag.games_solved = solved.len();
        for r in &solved {
            match r {
                Ok(m) if !m.converged => diag.nonconverged += 1,
                Err(e) => {
                    log::debug!("measurement game failed at step {}: {e}", self.t);
                    diag.failed += 1;
                }
                _ => {}
            }
        }
        let expected: Vec<Option<&DVector<f64>>> =
            slots.iter().map(|&s| solved[s].as_ref().ok().map(|m| m.expected())).collect();
        diag.degenerate = measurement_update(
            &mut self.particles,
            &expected,
            observed,
            &self.cfg.measurement_noise,
            self.cfg.compared_indices.as_deref(),
        );
    }
}

/// Runs the filter over a whole measurement sequence.
pub fn run_filter(
    game: &GameDefinition,
    measurements: &[Measurement],
    cfg: &FilterConfig,
    seed: u64,
    workers: Option<usize>,
) -> Result<FilterTrace, FilterError> {
    if measurements.is_empty() {
        return Err(FilterError::Empty);
    }
    let mut filter = LeadershipFilter::new(game, cfg.clone(), seed)?;
    if let Some(w) = workers {
        filter = filter.with_workers(w)?;
    }
    for y in measurements {
        filter.step(y)?;
    }
    Ok(filter.into_trace())
}
