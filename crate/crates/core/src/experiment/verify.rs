//! Re-checks a solve-mode trace: dynamics consistency and the equilibrium
//! perturbation test.

use std::fmt;

use nalgebra::DVector;

use super::table::Table;
use super::ExperimentError;
use crate::lq_stackelberg::{verify_stackelberg, PerturbationBudget, VerificationReport};
use crate::scenarios::Scenario;
use crate::silq::feedback_law;
use crate::types::{Controls, Trajectory};

pub const RESIDUAL_TOL: f64 = 1e-8;
pub const EQUILIBRIUM_TOL: f64 = 1e-3;

/// Budget used by `verify`: 100 samples on each of 10 random stages, norm
/// at most 0.05.
pub fn default_budget(seed: u64) -> PerturbationBudget {
    PerturbationBudget { samples_per_stage: 100, stages: Some(10), max_norm: 0.05, check_leader: true, seed }
}

/// States and controls of repetition `rep` (the first one present if
/// `None`) from a trace table.
pub fn trajectory_from_trace(table: &Table, rep: Option<usize>) -> Result<(Trajectory, Controls), ExperimentError> {
    let schema = |m: String| ExperimentError::Schema(m);
    if table.column("b1").is_some() {
        return Err(schema("trace carries leadership beliefs; verify needs a solve-mode trace".into()));
    }
    let rep_col = table.column("rep").ok_or_else(|| schema("trace has no `rep` column".into()))?;
    let t_col = table.column("t").ok_or_else(|| schema("trace has no `t` column".into()))?;
    let xs = table.indexed_columns("x");
    let us = [table.indexed_columns("u1_"), table.indexed_columns("u2_")];
    if xs.is_empty() || us.iter().any(Vec::is_empty) {
        return Err(schema("trace needs x0.., u1_0.. and u2_0.. columns".into()));
    }
    let wanted = match rep {
        Some(r) => r as f64,
        None => table.rows.first().ok_or_else(|| schema("trace has no rows".into()))?[rep_col],
    };
    let rows: Vec<&Vec<f64>> = table.rows.iter().filter(|r| r[rep_col] == wanted).collect();
    if rows.is_empty() {
        return Err(schema(format!("trace has no rows for repetition {wanted}")));
    }
    for (k, r) in rows.iter().enumerate() {
        if r[t_col] != k as f64 {
            return Err(schema(format!("repetition {wanted}: expected t = {k}, found {}", r[t_col])));
        }
    }
    let pick = |r: &Vec<f64>, cols: &[usize]| DVector::from_iterator(cols.len(), cols.iter().map(|&c| r[c]));
    let states = rows.iter().map(|r| pick(r, &xs)).collect();
    let controls = [0, 1].map(|i| rows.iter().map(|r| pick(r, &us[i])).collect());
    Ok((states, controls))
}

/// `‖x_{t+1} - f(x_t, u_t)‖_∞`, reported against the state index `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsResidual {
    pub max: f64,
    pub worst_step: usize,
    /// Steps whose residual exceeds [`RESIDUAL_TOL`].
    pub flagged: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub steps: usize,
    pub residual: DynamicsResidual,
    /// `Err` when no feedback law could be built about the trace.
    pub equilibrium: Result<VerificationReport, String>,
}

impl VerifyReport {
    pub fn passes(&self) -> bool {
        self.residual.flagged.is_empty() && self.equilibrium.as_ref().is_ok_and(|e| e.passes(EQUILIBRIUM_TOL))
    }
}

pub fn dynamics_residual(scenario: &Scenario, states: &[DVector<f64>], controls: &Controls) -> DynamicsResidual {
    let model = scenario.game.model.as_ref();
    let mut out = DynamicsResidual { max: 0.0, worst_step: 0, flagged: Vec::new() };
    for t in 0..states.len().saturating_sub(1) {
        let next = model.transition(&states[t], &controls[0][t], &controls[1][t], t);
        let r = (&states[t + 1] - next).amax();
        let r = if r.is_nan() { f64::INFINITY } else { r };
        if r > out.max {
            out.max = r;
            out.worst_step = t + 1;
        }
        if r > RESIDUAL_TOL {
            out.flagged.push((t + 1, r));
        }
    }
    out
}

/// Verifies repetition `rep` of a solve-mode trace against `scenario`.
pub fn verify_trace(
    table: &Table,
    scenario: &Scenario,
    rep: Option<usize>,
    budget: &PerturbationBudget,
) -> Result<VerifyReport, ExperimentError> {
    let (states, controls) = trajectory_from_trace(table, rep)?;
    let n = scenario.game.model.state_dim();
    let [m1, m2] = scenario.game.model.control_dims();
    if states[0].len() != n || controls[0][0].len() != m1 || controls[1][0].len() != m2 {
        return Err(ExperimentError::Schema(format!(
            "trace dimensions ({}, {}, {}) do not match scenario `{}` ({n}, {m1}, {m2})",
            states[0].len(),
            controls[0][0].len(),
            controls[1][0].len(),
            scenario.name()
        )));
    }
    let residual = dynamics_residual(scenario, &states, &controls);
    let game = scenario.game.with_horizon(states.len());
    let equilibrium = feedback_law(&game, &states, &controls, &scenario.config.solver)
        .map(|law| verify_stackelberg(game.model.as_ref(), game.cost_refs(), &states, &controls, &law, budget))
        .map_err(|e| e.to_string());
    Ok(VerifyReport { steps: states.len(), residual, equilibrium })
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let r = &self.residual;
        writeln!(
            f,
            "dynamics residual: {} max {:.3e} at step {} ({} of {} steps above {RESIDUAL_TOL:e})",
            verdict(r.flagged.is_empty()),
            r.max,
            r.worst_step,
            r.flagged.len(),
            self.steps.saturating_sub(1)
        )?;
        for (t, v) in r.flagged.iter().take(10) {
            writeln!(f, "  step {t}: residual {v:.3e}")?;
        }
        match &self.equilibrium {
            Ok(e) => {
                writeln!(
                    f,
                    "equilibrium: {} ({} samples, tolerance {EQUILIBRIUM_TOL:e})",
                    verdict(e.passes(EQUILIBRIUM_TOL)),
                    e.samples
                )?;
                let dir = |v: &DVector<f64>| format!("{:?}", v.as_slice());
                writeln!(
                    f,
                    "  follower: best change {:+.3e} at stage {}, deviation {}",
                    e.follower_min_change,
                    e.follower_worst_stage,
                    dir(&e.follower_direction)
                )?;
                writeln!(
                    f,
                    "  leader:   best change {:+.3e} at stage {}, deviation {}",
                    e.leader_min_change,
                    e.leader_worst_stage,
                    dir(&e.leader_direction)
                )?;
            }
            Err(msg) => writeln!(f, "equilibrium: FAIL (no feedback law about the trace: {msg})")?,
        }
        write!(f, "overall: {}", verdict(self.passes()))
    }
}
