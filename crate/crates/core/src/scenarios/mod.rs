//! Named experiment presets: dynamics, costs, initial conditions, filter and
//! solver defaults, and ground-truth generators.
//!
//! Every preset is a plain [`ScenarioConfig`] so it can be written out,
//! edited, and overridden key by key (`filter.num_particles=20`).

mod overrides;
pub mod road;
pub mod script;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3};
use std::ops::Range;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costs::{
    driving_cost, nonlq_shepherd_cost, sheep_cost, shepherd_cost, DrivingCostParams, DrivingWeights, StageCost,
};
use crate::dynamics::{rollout, AgentModel, JointModel};
use crate::filter::{FilterConfig, Measurement};
use crate::lq_stackelberg::{self, LqError};
use crate::silq::{self, GameDefinition, SolveError, SolverConfig};
use crate::types::{Agent, Controls, Trajectory};

pub use overrides::{apply_overrides, parse_override};
pub use road::{Lane, RoadGeometry, RoadLayout};
pub use script::{track, LaneChange, ManeuverScript};

pub const PRESETS: [&str; 5] = [
    "lq_shepherd_sheep",
    "nonlq_shepherd_sheep",
    "nonlq_shepherd_sheep_filter",
    "passing",
    "merging",
];

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario `{0}`; known presets: {known}", known = PRESETS.join(", "))]
    UnknownScenario(String),
    #[error("invalid override `{key}`: {message}")]
    Override { key: String, message: String },
    #[error("invalid scenario configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("analytic LQ ground truth failed: {0}")]
    Lq(#[from] LqError),
    #[error("scripted {agent} deviates {deviation:.3} m from its waypoint at step {step}")]
    InfeasibleScript { agent: Agent, step: usize, deviation: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroundTruthKind {
    /// Exact LQ Stackelberg solution (costs must be quadratic).
    AnalyticLq,
    /// Iterative solver output.
    Silq,
    /// Scripted maneuvers tracked by inverse dynamics.
    Scripted,
}

/// Which state entries the filter likelihood compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compare {
    FullState,
    Positions,
}

/// Filter parameters in scalar form; expanded per state layout by
/// [`Scenario::filter_config`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub num_particles: usize,
    /// Measurement-game horizon in steps.
    pub horizon: usize,
    pub p_trans: f64,
    pub position_var: f64,
    pub heading_var: f64,
    pub velocity_var: f64,
    pub measurement_var: f64,
    pub prior_leader_one: f64,
    pub resample_fraction: f64,
    pub compare: Compare,
    /// Only filter the first `max_steps` measurements.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default)]
    pub record_particles: bool,
    pub solver: SolverConfig,
}

impl FilterSettings {
    fn shepherd() -> Self {
        Self {
            num_particles: 50,
            horizon: 75,
            p_trans: 0.02,
            position_var: 1e-3,
            heading_var: 1e-3,
            velocity_var: 1e-4,
            measurement_var: 5e-3,
            prior_leader_one: 0.5,
            resample_fraction: 0.5,
            compare: Compare::FullState,
            max_steps: None,
            record_particles: false,
            solver: SolverConfig { tolerance: 1.5e-2, max_iterations: 50, min_step: 1e-2, ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShepherdParams {
    pub model: AgentModel,
    pub agent_one_start: [f64; 2],
    /// Nominal start of agent two; Monte Carlo starts lie on the circle
    /// through it about the origin.
    pub agent_two_start: [f64; 2],
    /// Arc length (rad) of agent two's Monte Carlo starts, centered on the
    /// nominal start. Zero disables variation.
    pub arc_width: f64,
    /// Half-width `s` of the log-barrier box on the sheep; absent for the
    /// quadratic game.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier_half_width: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingParams {
    pub road: RoadGeometry,
    pub road_length: f64,
    pub max_speed: f64,
    pub min_distance: f64,
    pub max_heading_deviation: f64,
    pub max_omega: f64,
    pub max_accel: f64,
    pub initial_speed: f64,
    pub goal_speed: f64,
    /// Lateral goal position of each agent at the end of the road.
    pub goal_x: [f64; 2],
    /// Weights of `(px, py, ψ, v)` inside the goal distance.
    pub goal_weights: [f64; 4],
    /// Penalize the center line (two-way roads only).
    pub center_line: bool,
    /// Diagonal `(lateral, longitudinal)` of the center-line covariance.
    pub center_covariance: [f64; 2],
    pub lanes: [Lane; 2],
    pub weights: DrivingWeights,
    pub scripts: [ManeuverScript; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub dt: f64,
    /// Simulation length in steps.
    pub horizon: usize,
    /// Leader used when the ground truth is a game solution.
    pub leader: Agent,
    pub ground_truth: GroundTruthKind,
    pub solver: SolverConfig,
    pub filter: FilterSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shepherd: Option<ShepherdParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub driving: Option<DrivingParams>,
}

/// Default configuration of a named preset.
pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
    let lq_shepherd = ShepherdParams {
        model: AgentModel::DoubleIntegrator,
        agent_one_start: [2.0, 1.0],
        agent_two_start: [-1.0, 2.0],
        arc_width: 0.0,
        barrier_half_width: None,
    };
    let nonlq_shepherd = ShepherdParams {
        model: AgentModel::Unicycle,
        arc_width: 0.4,
        barrier_half_width: Some(5.0),
        ..lq_shepherd.clone()
    };
    let shepherd_game = |name: &str, leader, ground_truth, shepherd| ScenarioConfig {
        name: name.to_owned(),
        dt: 0.02,
        horizon: 501,
        leader,
        ground_truth,
        solver: SolverConfig::default(),
        filter: FilterSettings::shepherd(),
        shepherd: Some(shepherd),
        driving: None,
    };
    let driving_filter = FilterSettings { num_particles: 100, horizon: 20, ..FilterSettings::shepherd() };
    let driving = |name: &str, horizon, params| ScenarioConfig {
        name: name.to_owned(),
        dt: 0.05,
        horizon,
        leader: Agent::One,
        ground_truth: GroundTruthKind::Scripted,
        solver: SolverConfig::default(),
        filter: driving_filter.clone(),
        shepherd: None,
        driving: Some(params),
    };
    let road_defaults = |road: RoadGeometry, lanes, goal_x, center_line, scripts| DrivingParams {
        road,
        road_length: 150.0,
        max_speed: 35.0,
        min_distance: 0.2,
        max_heading_deviation: FRAC_PI_3,
        max_omega: 2.0,
        max_accel: 9.0,
        initial_speed: 10.0,
        goal_speed: 10.0,
        goal_x,
        goal_weights: [1.0, 1.0, 1.0, 0.1],
        center_line,
        // lateral std ℓ_w / 2; the longitudinal entry is a wide ridge
        center_covariance: [1.25 * 1.25, 1e3],
        lanes,
        weights: DrivingWeights::default(),
        scripts,
    };

    Ok(match name {
        "lq_shepherd_sheep" => shepherd_game(name, Agent::One, GroundTruthKind::AnalyticLq, lq_shepherd),
        "nonlq_shepherd_sheep" => shepherd_game(name, Agent::Two, GroundTruthKind::Silq, nonlq_shepherd),
        "nonlq_shepherd_sheep_filter" => {
            let mut cfg = shepherd_game(name, Agent::Two, GroundTruthKind::Silq, nonlq_shepherd);
            cfg.filter.measurement_var = 2e-2;
            cfg.filter.solver.tolerance = 1e-3;
            cfg.filter.solver.max_iterations = 50;
            cfg.filter.solver.min_step = 2e-2;
            cfg
        }
        "passing" => {
            let lead = ManeuverScript::cruise([1.25, 10.0], 10.0);
            let passer = ManeuverScript {
                start: [1.25, 0.0],
                speed_knots: vec![[0.0, 10.0], [2.5, 10.0], [4.0, 16.0]],
                lane_changes: vec![
                    LaneChange { start: 2.5, duration: 1.0, to_x: -1.25 },
                    LaneChange { start: 6.0, duration: 1.0, to_x: 1.25 },
                ],
            };
            let params = road_defaults(
                RoadGeometry::two_lane(2.5),
                [Lane::Road, Lane::Road],
                [1.25, 1.25],
                true,
                [lead, passer],
            );
            driving(name, 151, params)
        }
        "merging" => {
            let yielder = ManeuverScript {
                start: [1.25, 0.0],
                speed_knots: vec![[0.0, 10.0], [1.0, 10.0], [2.5, 7.0], [5.5, 7.0], [7.0, 10.0]],
                lane_changes: vec![LaneChange { start: 4.0, duration: 1.5, to_x: 0.0 }],
            };
            let first = ManeuverScript {
                start: [-1.25, 10.0],
                speed_knots: vec![[0.0, 10.0]],
                lane_changes: vec![LaneChange { start: 2.5, duration: 1.5, to_x: 0.0 }],
            };
            let params = road_defaults(
                RoadGeometry::merging(2.5),
                [Lane::Right, Lane::Left],
                [0.0, 0.0],
                false,
                [yielder, first],
            );
            driving(name, 161, DrivingParams { road_length: 120.0, ..params })
        }
        other => return Err(ScenarioError::UnknownScenario(other.to_owned())),
    })
}

/// Looks up a preset and applies `key=value` overrides to it.
pub fn build(name: &str, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
    let cfg = apply_overrides(&preset(name)?, overrides)?;
    Scenario::from_config(cfg)
}

/// A bound scenario: configuration plus the game it defines.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub model: Arc<JointModel>,
    /// Full-horizon game with the configured ground-truth leader.
    pub game: GameDefinition,
}

/// Ground-truth trajectory and how it was produced.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub states: Trajectory,
    pub controls: Controls,
    pub kind: GroundTruthKind,
    /// Leader of game-generated truths.
    pub leader: Option<Agent>,
    /// Iterative-solver outcome, for [`GroundTruthKind::Silq`].
    pub solve: Option<silq::SolveResult>,
    /// Largest realized-vs-waypoint distance, for scripted truths.
    pub script_deviation: Option<f64>,
}

impl GroundTruth {
    pub fn converged(&self) -> bool {
        self.solve.as_ref().is_none_or(|s| s.converged)
    }
}

impl Scenario {
    pub fn from_config(config: ScenarioConfig) -> Result<Self, ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        if !(config.dt > 0.0 && config.dt.is_finite()) {
            return invalid(format!("dt must be positive, got {}", config.dt));
        }
        if config.horizon < 2 {
            return invalid(format!("horizon must be at least 2 steps, got {}", config.horizon));
        }
        config.solver.validate()?;
        let (model, costs): (JointModel, [Arc<dyn StageCost>; 2]) = match (&config.shepherd, &config.driving) {
            (Some(s), None) => {
                let model = JointModel::new([s.model; 2], config.dt);
                let shepherd: Arc<dyn StageCost> = match s.barrier_half_width {
                    Some(hw) => {
                        if s.model != AgentModel::Unicycle {
                            return invalid("the barrier shepherd game uses unicycle agents".into());
                        }
                        check_barrier_feasible(s, hw)?;
                        Arc::new(nonlq_shepherd_cost(&model, hw))
                    }
                    None => Arc::new(shepherd_cost(&model)),
                };
                if config.ground_truth == GroundTruthKind::AnalyticLq
                    && (s.barrier_half_width.is_some() || s.model != AgentModel::DoubleIntegrator)
                {
                    return invalid("analytic_lq ground truth needs the quadratic double-integrator game".into());
                }
                if config.ground_truth == GroundTruthKind::Scripted {
                    return invalid("shepherd scenarios have no scripted ground truth".into());
                }
                let sheep: Arc<dyn StageCost> = Arc::new(sheep_cost(&model));
                (model, [shepherd, sheep])
            }
            (None, Some(d)) => {
                for (i, s) in d.scripts.iter().enumerate() {
                    s.validate().map_err(|m| ScenarioError::Invalid(format!("driving.scripts.{i}: {m}")))?;
                }
                if config.ground_truth == GroundTruthKind::AnalyticLq {
                    return invalid("driving costs are not quadratic".into());
                }
                let model = JointModel::unicycles(config.dt);
                let cost = |agent: Agent| -> Arc<dyn StageCost> {
                    let i = agent.index();
                    let params = DrivingCostParams {
                        goal: [d.goal_x[i], d.road_length, FRAC_PI_2, d.goal_speed],
                        goal_weights: d.goal_weights,
                        min_distance: d.min_distance,
                        max_speed: d.max_speed,
                        max_heading_deviation: d.max_heading_deviation,
                        road_heading: FRAC_PI_2,
                        profile: Arc::new(d.road.profile(d.lanes[i])),
                        center_x: d.center_line.then_some(d.road.center_x),
                        center_covariance: (d.center_covariance[0], d.center_covariance[1]),
                        weights: d.weights,
                    };
                    Arc::new(driving_cost(&model, agent, &params))
                };
                let costs = [cost(Agent::One), cost(Agent::Two)];
                (model, costs)
            }
            _ => return invalid("exactly one of the `shepherd` and `driving` sections must be present".into()),
        };
        let model = Arc::new(model);
        let game = GameDefinition {
            model: model.clone(),
            costs,
            horizon: config.horizon,
            leader: config.leader,
        };
        let scenario = Self { config, model, game };
        scenario.filter_config().validate(8).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        Ok(scenario)
    }

    pub fn name(&self) -> &str {
        &self.config.name
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Steps whose times `t·Δt` fall in `[from, to]` seconds, clipped to `len`.
    pub fn steps_in(&self, from: f64, to: f64, len: usize) -> Range<usize> {
        let eps = 1e-9;
        let start = ((from / self.dt()) - eps).ceil().max(0.0) as usize;
        let end = (((to / self.dt()) + eps).floor() as usize + 1).min(len);
        start.min(end)..end
    }

    /// Initial joint state. `variation` seeds the Monte Carlo start of
    /// agent two on shepherd games; `None` gives the nominal start.
    pub fn initial_state(&self, variation: Option<u64>) -> DVector<f64> {
        if let Some(s) = &self.config.shepherd {
            let p1 = s.agent_one_start;
            let mut p2 = s.agent_two_start;
            if let (Some(seed), true) = (variation, s.arc_width > 0.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let offset = (rng.random::<f64>() - 0.5) * s.arc_width;
                let r = p2[0].hypot(p2[1]);
                let angle = p2[1].atan2(p2[0]) + offset;
                p2 = [r * angle.cos(), r * angle.sin()];
            }
            let block = |p: [f64; 2]| -> [f64; 4] {
                match s.model {
                    AgentModel::DoubleIntegrator => [p[0], 0.0, p[1], 0.0],
                    // stationary, facing the origin
                    AgentModel::Unicycle => [p[0], p[1], (-p[1]).atan2(-p[0]), 0.0],
                }
            };
            let (a, b) = (block(p1), block(p2));
            return DVector::from_iterator(8, a.into_iter().chain(b));
        }
        let d = self.config.driving.as_ref().expect("validated scenario");
        let block = |s: &ManeuverScript| [s.start[0], s.start[1], FRAC_PI_2, d.initial_speed];
        let (a, b) = (block(&d.scripts[0]), block(&d.scripts[1]));
        DVector::from_iterator(8, a.into_iter().chain(b))
    }

    /// Expanded filter configuration for this scenario's state layout.
    pub fn filter_config(&self) -> FilterConfig {
        let f = &self.config.filter;
        let mut process = Vec::with_capacity(8);
        for agent in self.model.agents {
            match agent {
                AgentModel::DoubleIntegrator => {
                    process.extend([f.position_var, f.velocity_var, f.position_var, f.velocity_var])
                }
                AgentModel::Unicycle => {
                    process.extend([f.position_var, f.position_var, f.heading_var, f.velocity_var])
                }
            }
        }
        let compared_indices = match f.compare {
            Compare::FullState => None,
            Compare::Positions => {
                let (a, b) = self.model.position_indices(Agent::One);
                let (c, d) = self.model.position_indices(Agent::Two);
                Some(vec![a, b, c, d])
            }
        };
        FilterConfig {
            num_particles: f.num_particles,
            horizon: f.horizon,
            p_trans: f.p_trans,
            process_noise: process,
            measurement_noise: vec![f.measurement_var; 8],
            initial_spread: None,
            prior_leader_one: f.prior_leader_one,
            resample_fraction: f.resample_fraction,
            compared_indices,
            record_particles: f.record_particles,
            solver: f.solver,
        }
    }

    /// Produces the ground-truth trajectory.
    pub fn ground_truth(&self, variation: Option<u64>) -> Result<GroundTruth, ScenarioError> {
        generate_ground_truth(self, variation)
    }

    /// First step at which either agent has entered the merge taper.
    pub fn merge_entry_step(&self, truth: &GroundTruth) -> Option<usize> {
        let start = self.config.driving.as_ref()?.road.merge_start()?;
        let (y1, y2) = (self.model.position_indices(Agent::One).1, self.model.position_indices(Agent::Two).1);
        truth.states.iter().position(|x| x[y1] >= start || x[y2] >= start)
    }
}

fn check_barrier_feasible(s: &ShepherdParams, half_width: f64) -> Result<(), ScenarioError> {
    let r = s.agent_two_start[0].hypot(s.agent_two_start[1]);
    let base = s.agent_two_start[1].atan2(s.agent_two_start[0]);
    // every start on the Monte Carlo arc must sit strictly inside the box
    for k in 0..=100 {
        let a = base + (k as f64 / 100.0 - 0.5) * s.arc_width;
        let p = [r * a.cos(), r * a.sin()];
        if p.iter().any(|c| c.abs() >= half_width) {
            return Err(ScenarioError::Invalid(format!(
                "sheep start ({:.3}, {:.3}) lies outside the barrier box of half-width {half_width}",
                p[0], p[1]
            )));
        }
    }
    Ok(())
}

/// Generates the scenario's ground truth.
pub fn generate_ground_truth(scenario: &Scenario, variation: Option<u64>) -> Result<GroundTruth, ScenarioError> {
    let x1 = scenario.initial_state(variation);
    let game = &scenario.game;
    match scenario.config.ground_truth {
        GroundTruthKind::AnalyticLq => {
            // quadratic costs: the expansion about the origin is the game itself
            let origin = vec![DVector::zeros(8); game.horizon];
            let lq = silq::approximate(game, &origin, &game.zero_controls(), &scenario.config.solver)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            let strategy = lq_stackelberg::solve(&lq)?;
            let (states, controls) = strategy.apply(game.model.as_ref(), &x1);
            Ok(GroundTruth {
                states,
                controls,
                kind: GroundTruthKind::AnalyticLq,
                leader: Some(game.leader),
                solve: None,
                script_deviation: None,
            })
        }
        GroundTruthKind::Silq => {
            let res = silq::solve(game, &x1, &game.zero_controls(), &scenario.config.solver)?;
            Ok(GroundTruth {
                states: res.states.clone(),
                controls: res.controls.clone(),
                kind: GroundTruthKind::Silq,
                leader: Some(game.leader),
                solve: Some(res),
                script_deviation: None,
            })
        }
        GroundTruthKind::Scripted => scripted_truth(scenario, &x1),
    }
}

fn scripted_truth(scenario: &Scenario, x1: &DVector<f64>) -> Result<GroundTruth, ScenarioError> {
    let d = scenario.config.driving.as_ref().expect("validated scenario");
    let steps = scenario.config.horizon;
    let mut controls: Controls = [Vec::new(), Vec::new()];
    for agent in Agent::BOTH {
        let script = &d.scripts[agent.index()];
        if (script.speed_at(0.0) - d.initial_speed).abs() > 1e-9 {
            return Err(ScenarioError::Invalid(format!(
                "driving.scripts.{}: initial speed {} differs from initial_speed {}",
                agent.index(),
                script.speed_at(0.0),
                d.initial_speed
            )));
        }
        let tracked = track(script, FRAC_PI_2, steps, scenario.dt(), d.max_omega, d.max_accel);
        controls[agent.index()] = if script.lane_changes.is_empty() && script.speed_knots.iter().all(|k| k[1] == d.initial_speed) {
            // plain cruising is exactly zero input
            vec![DVector::zeros(2); steps]
        } else {
            tracked.controls.iter().map(|u| DVector::from_column_slice(u)).collect()
        };
    }
    let states = rollout(scenario.model.as_ref(), x1, &controls).map_err(SolveError::from)?;
    let mut worst = 0.0f64;
    for agent in Agent::BOTH {
        let script = &d.scripts[agent.index()];
        let (ix, iy) = scenario.model.position_indices(agent);
        for (t, x) in states.iter().enumerate() {
            let w = script.position_at(t as f64 * scenario.dt());
            let dev = (x[ix] - w[0]).hypot(x[iy] - w[1]);
            worst = worst.max(dev);
            if dev > 0.1 {
                return Err(ScenarioError::InfeasibleScript { agent, step: t, deviation: dev });
            }
        }
    }
    Ok(GroundTruth {
        states,
        controls,
        kind: GroundTruthKind::Scripted,
        leader: None,
        solve: None,
        script_deviation: Some(worst),
    })
}

/// `ŷ_t = x_t + N(0, diag(variances))`, seeded.
pub fn simulate_measurements(
    states: &[DVector<f64>],
    variances: &[f64],
    seed: u64,
) -> Result<Vec<DVector<f64>>, ScenarioError> {
    if let Some(bad) = variances.iter().find(|&&v| !(v >= 1e-12) || !v.is_finite()) {
        return Err(ScenarioError::Invalid(format!("measurement variance {bad} below the 1e-12 minimum")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
    Ok(states
        .iter()
        .map(|x| {
            assert_eq!(x.len(), std.len(), "variance diagonal must match the state dimension");
            DVector::from_iterator(
                x.len(),
                x.iter().zip(&std).map(|(v, s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    v + s * z
                }),
            )
        })
        .collect())
}

/// Pairs noisy states with the (directly observed) ground-truth controls.
pub fn measurements(observed: Vec<DVector<f64>>, controls: &Controls) -> Vec<Measurement> {
    observed
        .into_iter()
        .enumerate()
        .map(|(t, state)| Measurement { state, controls: [controls[0][t].clone(), controls[1][t].clone()] })
        .collect()
}
