//! `summary.json`: per-repetition rows plus aggregates derived from them.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Mode};
use crate::silq::SolveResult;

/// Aggregates must match a recomputation from the rows to this relative
/// tolerance when a summary is loaded.
const RECOMPUTE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterRow {
    pub steps: usize,
    pub mean_leader_one: f64,
    pub mean_leader_two: f64,
    pub seconds_per_cycle: f64,
    pub games_solved: usize,
    pub nonconverged_games: usize,
    pub failed_games: usize,
    pub resamples: usize,
}

/// One repetition. In filter modes the solver fields describe the ground
/// truth (iterations 0 when it was not produced by the iterative solver).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepetitionRow {
    pub rep: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub seconds_per_iteration: f64,
    pub objectives: [f64; 2],
    pub domain_violation: bool,
    /// Convergence metric per iteration.
    pub metric_history: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterRow>,
}

impl RepetitionRow {
    pub fn from_solve(rep: usize, seed: u64, r: &SolveResult) -> Self {
        Self {
            rep,
            seed,
            converged: r.converged,
            iterations: r.iterations,
            seconds_per_iteration: mean(&r.iteration_seconds),
            objectives: r.objectives,
            domain_violation: r.domain_violation,
            metric_history: r.metric_history.clone(),
            filter: None,
        }
    }
}

/// 10th/50th/90th percentiles of the convergence metric at one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricBand {
    pub iteration: usize,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub mean_iterations: f64,
    pub std_iterations: f64,
    pub convergence_rate: f64,
    pub mean_seconds_per_iteration: f64,
    pub std_seconds_per_iteration: f64,
    /// Per-iteration bands; a repetition that stopped early contributes its
    /// last metric to later iterations.
    pub metric_bands: Vec<MetricBand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_leader_one: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_seconds_per_cycle: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_seconds_per_cycle: Option<f64>,
}

impl Aggregates {
    pub fn from_rows(rows: &[RepetitionRow]) -> Self {
        let iterations: Vec<f64> = rows.iter().map(|r| r.iterations as f64).collect();
        let per_iter: Vec<f64> = rows.iter().map(|r| r.seconds_per_iteration).collect();
        let converged = rows.iter().filter(|r| r.converged).count();
        let filters: Vec<&FilterRow> = rows.iter().filter_map(|r| r.filter.as_ref()).collect();
        let cycle: Vec<f64> = filters.iter().map(|f| f.seconds_per_cycle).collect();
        let some_if = |v: f64| (!filters.is_empty()).then_some(v);
        Self {
            mean_iterations: mean(&iterations),
            std_iterations: std_dev(&iterations),
            convergence_rate: if rows.is_empty() { 0.0 } else { converged as f64 / rows.len() as f64 },
            mean_seconds_per_iteration: mean(&per_iter),
            std_seconds_per_iteration: std_dev(&per_iter),
            metric_bands: metric_bands(rows),
            mean_leader_one: some_if(mean(&filters.iter().map(|f| f.mean_leader_one).collect::<Vec<_>>())),
            mean_seconds_per_cycle: some_if(mean(&cycle)),
            std_seconds_per_cycle: some_if(std_dev(&cycle)),
        }
    }

    /// First field that differs from `other` beyond the recompute tolerance.
    fn mismatch(&self, other: &Aggregates) -> Option<String> {
        let close = |a: f64, b: f64| (a - b).abs() <= RECOMPUTE_TOL * a.abs().max(b.abs()).max(1.0) || (a.is_nan() && b.is_nan());
        let opt = |a: Option<f64>, b: Option<f64>| match (a, b) {
            (Some(a), Some(b)) => close(a, b),
            (None, None) => true,
            _ => false,
        };
        let scalars = [
            ("mean_iterations", close(self.mean_iterations, other.mean_iterations)),
            ("std_iterations", close(self.std_iterations, other.std_iterations)),
            ("convergence_rate", close(self.convergence_rate, other.convergence_rate)),
            ("mean_seconds_per_iteration", close(self.mean_seconds_per_iteration, other.mean_seconds_per_iteration)),
            ("std_seconds_per_iteration", close(self.std_seconds_per_iteration, other.std_seconds_per_iteration)),
            ("mean_leader_one", opt(self.mean_leader_one, other.mean_leader_one)),
            ("mean_seconds_per_cycle", opt(self.mean_seconds_per_cycle, other.mean_seconds_per_cycle)),
            ("std_seconds_per_cycle", opt(self.std_seconds_per_cycle, other.std_seconds_per_cycle)),
        ];
        if let Some((name, _)) = scalars.iter().find(|(_, ok)| !ok) {
            return Some((*name).to_owned());
        }
        if self.metric_bands.len() != other.metric_bands.len() {
            return Some("metric_bands".to_owned());
        }
        self.metric_bands
            .iter()
            .zip(&other.metric_bands)
            .position(|(a, b)| a.iteration != b.iteration || !close(a.p10, b.p10) || !close(a.p50, b.p50) || !close(a.p90, b.p90))
            .map(|k| format!("metric_bands[{k}]"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub schema_version: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub repetitions: Vec<RepetitionRow>,
    pub aggregates: Aggregates,
}

impl RunSummary {
    pub fn new(scenario: &str, mode: Mode, seed: u64, repetitions: Vec<RepetitionRow>) -> Self {
        let aggregates = Aggregates::from_rows(&repetitions);
        Self { schema_version: super::table::SCHEMA_VERSION, scenario: scenario.to_owned(), mode, seed, repetitions, aggregates }
    }

    pub fn all_converged(&self) -> bool {
        self.repetitions.iter().all(|r| r.converged)
    }

    pub fn write(&self, path: &Path) -> Result<(), ExperimentError> {
        let json = serde_json::to_string_pretty(self).map_err(|e| ExperimentError::Schema(e.to_string()))?;
        std::fs::write(path, json + "\n").map_err(|e| ExperimentError::io(path, e))
    }

    /// Loads a summary and checks its aggregates against its rows.
    pub fn read(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        let summary: RunSummary =
            serde_json::from_str(&text).map_err(|e| ExperimentError::Schema(format!("{}: {e}", path.display())))?;
        if summary.schema_version != super::table::SCHEMA_VERSION {
            return Err(ExperimentError::Schema(format!(
                "{}: unsupported schema version {}",
                path.display(),
                summary.schema_version
            )));
        }
        if let Some(field) = summary.aggregates.mismatch(&Aggregates::from_rows(&summary.repetitions)) {
            return Err(ExperimentError::Schema(format!(
                "{}: aggregate `{field}` does not match its repetition rows",
                path.display()
            )));
        }
        Ok(summary)
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation (zero for a single value).
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let pos = q / 100.0 * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

fn metric_bands(rows: &[RepetitionRow]) -> Vec<MetricBand> {
    let longest = rows.iter().map(|r| r.metric_history.len()).max().unwrap_or(0);
    (0..longest)
        .map(|k| {
            let mut column: Vec<f64> = rows
                .iter()
                .filter_map(|r| r.metric_history.get(k).or(r.metric_history.last()).copied())
                .collect();
            column.sort_by(f64::total_cmp);
            MetricBand {
                iteration: k + 1,
                p10: percentile(&column, 10.0),
                p50: percentile(&column, 50.0),
                p90: percentile(&column, 90.0),
            }
        })
        .collect()
}

/// Wall-time statistics of one summary.
#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub label: String,
    pub repetitions: usize,
    pub mean_seconds_per_iteration: f64,
    pub std_seconds_per_iteration: f64,
    pub mean_seconds_per_cycle: Option<f64>,
    pub std_seconds_per_cycle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

/// Per-iteration and per-filter-cycle wall times, recomputed from the
/// repetition rows of each summary.
pub fn timing_report(summaries: &[RunSummary]) -> TimingReport {
    let rows = summaries
        .iter()
        .map(|s| {
            let a = Aggregates::from_rows(&s.repetitions);
            TimingRow {
                label: format!("{} ({})", s.scenario, s.mode),
                repetitions: s.repetitions.len(),
                mean_seconds_per_iteration: a.mean_seconds_per_iteration,
                std_seconds_per_iteration: a.std_seconds_per_iteration,
                mean_seconds_per_cycle: a.mean_seconds_per_cycle,
                std_seconds_per_cycle: a.std_seconds_per_cycle,
            }
        })
        .collect();
    TimingReport { rows }
}

impl fmt::Display for TimingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<44} {:>5} {:>14} {:>14} {:>14} {:>14}", "run", "reps", "iter mean [s]", "iter std [s]", "cycle mean [s]", "cycle std [s]")?;
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_owned(), |v| format!("{v:.6}"));
        for r in &self.rows {
            writeln!(
                f,
                "{:<44} {:>5} {:>14.6} {:>14.6} {:>14} {:>14}",
                r.label,
                r.repetitions,
                r.mean_seconds_per_iteration,
                r.std_seconds_per_iteration,
                opt(r.mean_seconds_per_cycle),
                opt(r.std_seconds_per_cycle)
            )?;
        }
        Ok(())
    }
}
