//! Run configuration, repetition execution, and on-disk artifacts.
//!
//! A run writes into one directory:
//!
//! - `trace.csv`: one row per repetition and timestep with the state,
//!   both controls and, in filter modes, the measurement, `b(H=1)`,
//!   `b(H=2)` and the effective sample size;
//! - `iterations.csv` (solve modes): iteration, convergence metric, step
//!   size, both objectives and wall time;
//! - `summary.json`: a [`RunSummary`];
//! - `config.resolved`: the run configuration with every override folded
//!   into the full scenario configuration; running it again reproduces the
//!   artifacts (wall-clock columns aside);
//! - `verify.txt` (verify mode).
//!
//! Repetition `r` draws all randomness from `seed_for(seed, [r, ..])`, so
//! results do not depend on the worker count.

mod summary;
mod table;
mod verify;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use summary::{
    mean, percentile, std_dev, timing_report, Aggregates, FilterRow, MetricBand, RepetitionRow, RunSummary,
    TimingReport, TimingRow,
};
pub use table::{Table, TableKind, SCHEMA_VERSION};
pub use verify::{
    default_budget, dynamics_residual, trajectory_from_trace, verify_trace, DynamicsResidual, VerifyReport,
    EQUILIBRIUM_TOL, RESIDUAL_TOL,
};

use crate::filter::{run_filter, FilterError, FilterTrace};
use crate::scenarios::{
    apply_overrides, measurements, parse_override, preset, simulate_measurements, GroundTruth, Scenario, ScenarioConfig,
    ScenarioError,
};
use crate::silq::{self, SolveError};
use crate::types::seed_for;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed artifact: {0}")]
    Schema(String),
}

impl ExperimentError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_owned(), source }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// One solve from the nominal initial state.
    Solve,
    /// One filter run on the scenario's ground truth.
    Filter,
    /// Solves from randomized initial states.
    MontecarloSolve,
    /// Filter runs with independent measurement noise and filter seeds.
    MontecarloFilter,
    /// A solve followed by [`verify_trace`] on its own trace.
    Verify,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Solve, Mode::Filter, Mode::MontecarloSolve, Mode::MontecarloFilter, Mode::Verify];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Solve => "solve",
            Mode::Filter => "filter",
            Mode::MontecarloSolve => "montecarlo-solve",
            Mode::MontecarloFilter => "montecarlo-filter",
            Mode::Verify => "verify",
        }
    }

    fn solves(self) -> bool {
        matches!(self, Mode::Solve | Mode::MontecarloSolve | Mode::Verify)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = Mode::ALL.iter().map(|m| m.name()).collect();
            format!("unknown mode `{s}`; expected one of {}", names.join(", "))
        })
    }
}

fn one() -> usize {
    1
}

/// Everything that determines a run. Loadable from TOML; `set` holds
/// `key=value` overrides of the scenario configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub reps: usize,
    #[serde(default = "one")]
    pub workers: usize,
    #[serde(default)]
    pub allow_nonconverged: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub set: Vec<String>,
    /// Full scenario configuration; replaces the named preset as the base
    /// that `set` applies to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolved: Option<ScenarioConfig>,
}

impl RunConfig {
    pub fn new(scenario: &str, mode: Mode) -> Self {
        Self {
            scenario: scenario.to_owned(),
            mode,
            seed: 0,
            reps: 1,
            workers: 1,
            allow_nonconverged: false,
            set: Vec::new(),
            resolved: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configurations serialize")
    }

    /// Folds the overrides into the scenario configuration and validates.
    pub fn resolve(&self) -> Result<RunConfig, ExperimentError> {
        if self.reps == 0 {
            return Err(ExperimentError::Config("reps: must be at least 1".into()));
        }
        if self.workers == 0 {
            return Err(ExperimentError::Config("workers: must be at least 1".into()));
        }
        let base = match &self.resolved {
            Some(cfg) if cfg.name != self.scenario => {
                return Err(ExperimentError::Config(format!(
                    "resolved.name: `{}` does not match scenario `{}`",
                    cfg.name, self.scenario
                )))
            }
            Some(cfg) => cfg.clone(),
            None => preset(&self.scenario)?,
        };
        let overrides = self.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
        let cfg = apply_overrides(&base, &overrides)?;
        // binding validates every value
        Scenario::from_config(cfg.clone())?;
        Ok(RunConfig { set: Vec::new(), resolved: Some(cfg), ..self.clone() })
    }

    pub fn scenario(&self) -> Result<Scenario, ExperimentError> {
        let resolved = self.resolve()?;
        Ok(Scenario::from_config(resolved.resolved.expect("resolve fills the configuration"))?)
    }
}

/// Whether a run met its convergence requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Success,
    /// A solve-mode repetition did not converge (or verification failed)
    /// and non-convergence was not allowed.
    NotConverged,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Success => 0,
            RunStatus::NotConverged => 2,
        }
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub summary: RunSummary,
    pub out_dir: PathBuf,
    pub verify: Option<VerifyReport>,
}

struct Repetition {
    row: RepetitionRow,
    trace: Vec<Vec<f64>>,
    iterations: Vec<Vec<f64>>,
}

/// Executes a run and writes its artifacts into `out_dir` (created if
/// missing).
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome, ExperimentError> {
    let resolved = cfg.resolve()?;
    let scenario = Scenario::from_config(resolved.resolved.clone().expect("resolved"))?;
    std::fs::create_dir_all(out_dir).map_err(|e| ExperimentError::io(out_dir, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(resolved.workers)
        .build()
        .map_err(|e| ExperimentError::Config(format!("workers: {e}")))?;
    // collected in repetition order; this thread alone writes the files
    let reps: Vec<Repetition> = if resolved.mode.solves() {
        pool.install(|| (0..resolved.reps).into_par_iter().map(|r| solve_rep(&scenario, &resolved, r)).collect::<Result<_, _>>())?
    } else {
        let truth = scenario.ground_truth(None)?;
        pool.install(|| {
            (0..resolved.reps)
                .into_par_iter()
                .map(|r| filter_rep(&scenario, &resolved, &truth, r))
                .collect::<Result<_, _>>()
        })?
    };

    let n = scenario.game.model.state_dim();
    let m = scenario.game.model.control_dims();
    let mut trace = Table::new(TableKind::Trace, trace_columns(n, m, !resolved.mode.solves()));
    let mut iterations = Table::new(TableKind::Iterations, ITERATION_COLUMNS.map(str::to_owned).to_vec());
    let mut rows = Vec::with_capacity(reps.len());
    for rep in reps {
        trace.rows.extend(rep.trace);
        iterations.rows.extend(rep.iterations);
        rows.push(rep.row);
    }
    let summary = RunSummary::new(&resolved.scenario, resolved.mode, resolved.seed, rows);

    let path = |name: &str| out_dir.join(name);
    trace.write(&path("trace.csv"))?;
    if resolved.mode.solves() {
        iterations.write(&path("iterations.csv"))?;
    }
    summary.write(&path("summary.json"))?;
    std::fs::write(path("config.resolved"), resolved.to_toml()).map_err(|e| ExperimentError::io(&path("config.resolved"), e))?;

    let verify = if resolved.mode == Mode::Verify {
        let report = verify_trace(&trace, &scenario, None, &default_budget(seed_for(resolved.seed, &[u64::MAX])))?;
        std::fs::write(path("verify.txt"), format!("{report}\n")).map_err(|e| ExperimentError::io(&path("verify.txt"), e))?;
        Some(report)
    } else {
        None
    };

    let failed = resolved.mode.solves() && !summary.all_converged()
        || verify.as_ref().is_some_and(|v| !v.passes());
    let status = if failed && !resolved.allow_nonconverged { RunStatus::NotConverged } else { RunStatus::Success };
    Ok(RunOutcome { status, summary, out_dir: out_dir.to_owned(), verify })
}

const ITERATION_COLUMNS: [&str; 7] = ["rep", "k", "conv", "alpha", "obj1", "obj2", "elapsed"];

fn trace_columns(n: usize, m: [usize; 2], filter: bool) -> Vec<String> {
    let mut cols: Vec<String> = vec!["rep".into(), "t".into(), "time".into()];
    cols.extend((0..n).map(|i| format!("x{i}")));
    cols.extend((0..m[0]).map(|i| format!("u1_{i}")));
    cols.extend((0..m[1]).map(|i| format!("u2_{i}")));
    if filter {
        cols.extend((0..n).map(|i| format!("y{i}")));
        cols.extend(["b1", "b2", "ess", "resampled", "nonconverged_games"].map(str::to_owned));
    }
    cols
}

fn state_row(rep: usize, t: usize, dt: f64, x: &[f64], u: [&[f64]; 2]) -> Vec<f64> {
    let mut row = vec![rep as f64, t as f64, t as f64 * dt];
    row.extend_from_slice(x);
    row.extend_from_slice(u[0]);
    row.extend_from_slice(u[1]);
    row
}

fn solve_rep(scenario: &Scenario, cfg: &RunConfig, rep: usize) -> Result<Repetition, ExperimentError> {
    let seed = seed_for(cfg.seed, &[rep as u64]);
    let variation = (cfg.mode == Mode::MontecarloSolve).then_some(seed);
    let game = &scenario.game;
    let x1 = scenario.initial_state(variation);
    let res = silq::solve(game, &x1, &game.zero_controls(), &scenario.config.solver)?;
    log::info!(
        "{} rep {rep}: converged {} after {} iterations",
        scenario.name(),
        res.converged,
        res.iterations
    );
    let trace = (0..res.states.len())
        .map(|t| {
            state_row(rep, t, scenario.dt(), res.states[t].as_slice(), [
                res.controls[0][t].as_slice(),
                res.controls[1][t].as_slice(),
            ])
        })
        .collect();
    let iterations = (0..res.iterations)
        .map(|k| {
            let [o1, o2] = res.objective_history[k];
            vec![rep as f64, (k + 1) as f64, res.metric_history[k], res.step_history[k], o1, o2, res.iteration_seconds[k]]
        })
        .collect();
    Ok(Repetition { row: RepetitionRow::from_solve(rep, seed, &res), trace, iterations })
}

fn filter_rep(scenario: &Scenario, cfg: &RunConfig, truth: &GroundTruth, rep: usize) -> Result<Repetition, ExperimentError> {
    let seed = seed_for(cfg.seed, &[rep as u64]);
    let fcfg = scenario.filter_config();
    let steps = scenario.config.filter.max_steps.unwrap_or(truth.states.len()).min(truth.states.len());
    let observed = simulate_measurements(&truth.states[..steps], &fcfg.measurement_noise, seed_for(seed, &[0]))?;
    let ys = measurements(observed, &truth.controls);
    let started = Instant::now();
    let trace: FilterTrace = run_filter(&scenario.game, &ys, &fcfg, seed_for(seed, &[1]), None)?;
    log::info!("{} rep {rep}: filtered {steps} steps in {:.1}s", scenario.name(), started.elapsed().as_secs_f64());

    let b = &trace.belief;
    let rows = (0..steps)
        .map(|t| {
            let mut row = state_row(rep, t, scenario.dt(), truth.states[t].as_slice(), [
                truth.controls[0][t].as_slice(),
                truth.controls[1][t].as_slice(),
            ]);
            row.extend_from_slice(ys[t].state.as_slice());
            let d = &trace.steps[t];
            row.extend([b.leader_one[t], b.leader_two[t], b.ess[t], d.resampled as u8 as f64, d.nonconverged as f64]);
            row
        })
        .collect();

    let (converged, iterations, per_iter, objectives, violation, metrics) = match &truth.solve {
        Some(s) => (s.converged, s.iterations, mean(&s.iteration_seconds), s.objectives, s.domain_violation, s.metric_history.clone()),
        None => {
            let obj = scenario.game.objectives(&truth.states, &truth.controls).unwrap_or([f64::NAN; 2]);
            (true, 0, 0.0, obj, false, Vec::new())
        }
    };
    let cycle: Vec<f64> = trace.steps.iter().skip(1).map(|d| d.seconds).collect();
    let row = RepetitionRow {
        rep,
        seed,
        converged,
        iterations,
        seconds_per_iteration: per_iter,
        objectives,
        domain_violation: violation,
        metric_history: metrics,
        filter: Some(FilterRow {
            steps,
            mean_leader_one: mean(&b.leader_one),
            mean_leader_two: mean(&b.leader_two),
            seconds_per_cycle: mean(&cycle),
            games_solved: trace.steps.iter().map(|d| d.games_solved).sum(),
            nonconverged_games: trace.steps.iter().map(|d| d.nonconverged).sum(),
            failed_games: trace.steps.iter().map(|d| d.failed).sum(),
            resamples: trace.steps.iter().filter(|d| d.resampled).count(),
        }),
    };
    Ok(Repetition { row, trace: rows, iterations: Vec::new() })
}
