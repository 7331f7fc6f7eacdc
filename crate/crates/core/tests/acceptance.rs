//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Built without the libtest harness. Criteria whose outcome rests on
//! stochastic filter behaviour or on iteration-count bands are reported, not
//! asserted, so the process exits 0 unless `ACCEPTANCE_STRICT=1` is set. The
//! focused targets (`lq_oracle`, `filter_invariants`, `derivatives`,
//! `experiment_cli`) assert the exact properties.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use stackelberg::experiment::{self, default_budget, Mode, RunConfig, Table, TableKind};
use stackelberg::scenarios::{self, Scenario};
use stackelberg::{seed_for, silq};

use common::{derivative_checks, filter_checks, oracle};

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Verdict { pass, detail: detail.into() }
    }
}

type Outcome = Result<Verdict, String>;

fn artifacts() -> PathBuf {
    Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

/// Runs a panicking check and turns the panic message into an error.
fn guarded<T>(f: impl FnOnce() -> T) -> Result<T, String> {
    panic::catch_unwind(AssertUnwindSafe(f)).map_err(|e| {
        e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default()
    })
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run_experiment(label: &str, cfg: RunConfig) -> Result<(experiment::RunOutcome, Table), String> {
    let dir = artifacts().join(label);
    let outcome = experiment::run(&cfg, &dir).map_err(|e| e.to_string())?;
    let trace = Table::read(&dir.join("trace.csv"), TableKind::Trace).map_err(|e| e.to_string())?;
    Ok((outcome, trace))
}

fn config(scenario: &str, mode: Mode, reps: usize, seed: u64, set: &[&str]) -> RunConfig {
    RunConfig {
        reps,
        seed,
        allow_nonconverged: true,
        set: set.iter().map(|s| s.to_string()).collect(),
        ..RunConfig::new(scenario, mode)
    }
}

/// Per-timestep mean of `b(H = 1)` across the repetitions of a filter trace.
fn seed_mean_leader_one(trace: &Table) -> Vec<f64> {
    let (t_col, b_col) = (trace.column("t").unwrap(), trace.column("b1").unwrap());
    let len = trace.rows.iter().map(|r| r[t_col] as usize + 1).max().unwrap_or(0);
    let mut sum = vec![0.0; len];
    let mut count = vec![0usize; len];
    for r in &trace.rows {
        sum[r[t_col] as usize] += r[b_col];
        count[r[t_col] as usize] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

fn window_mean(b1: &[f64], range: std::ops::Range<usize>) -> f64 {
    let w = &b1[range];
    w.iter().sum::<f64>() / w.len() as f64
}

fn c1_oracle() -> Outcome {
    let start = Instant::now();
    let result = runner(50).run(&oracle::game_strategy(), |g| oracle::check_against_oracle(&g));
    let secs = start.elapsed().as_secs_f64();
    Ok(match result {
        Ok(()) => Verdict::new(secs < 60.0, format!("50 random games match the oracle ({secs:.1} s)")),
        Err(e) => Verdict::new(false, format!("{e}")),
    })
}

fn c2_lq_silq() -> Outcome {
    let s = scenarios::build("lq_shepherd_sheep", &[]).map_err(|e| e.to_string())?;
    let tau = s.config.solver.tolerance;
    let res = silq::solve(&s.game, &s.initial_state(None), &s.game.zero_controls(), &s.config.solver)
        .map_err(|e| e.to_string())?;
    let truth = s.ground_truth(None).map_err(|e| e.to_string())?;
    let mut err: f64 = 0.0;
    for (a, b) in res.states.iter().zip(&truth.states) {
        err = err.max((a - b).amax());
    }
    for i in 0..2 {
        for (a, b) in res.controls[i].iter().zip(&truth.controls[i]) {
            err = err.max((a - b).amax());
        }
    }
    let metric = res.metric_history.last().copied().unwrap_or(f64::INFINITY);
    Ok(Verdict::new(
        res.converged && metric <= tau && res.iterations <= 3 && err <= 1e-6,
        format!("{} iteration(s), final metric {metric:.2e} (τ {tau:e}), ℓ∞ gap to analytic {err:.2e}", res.iterations),
    ))
}

/// Criteria 3 and 4 share the T = 501 Monte Carlo run; returns each
/// outcome with its wall time.
fn c3_c4_nonlq() -> ((Outcome, f64), (Outcome, f64)) {
    let start = Instant::now();
    let full = run_experiment("c3-T501", config("nonlq_shepherd_sheep", Mode::MontecarloSolve, 20, 7, &[]));
    let fast = run_experiment("c3-T101", config("nonlq_shepherd_sheep", Mode::MontecarloSolve, 20, 7, &["horizon=101"]));
    let c3 = match (&full, &fast) {
        (Ok((a, _)), Ok((b, _))) => {
            let (a, b) = (&a.summary.aggregates, &b.summary.aggregates);
            let band = (200.0..=3200.0).contains(&a.mean_iterations);
            Ok(Verdict::new(
                a.convergence_rate == 1.0 && band && b.convergence_rate == 1.0,
                format!(
                    "T=501: rate {:.2}, mean iterations {:.1} (std {:.1}, band [200, 3200]); T=101: rate {:.2}, mean iterations {:.1}",
                    a.convergence_rate, a.mean_iterations, a.std_iterations, b.convergence_rate, b.mean_iterations
                ),
            ))
        }
        (Err(e), _) | (_, Err(e)) => Err(e.clone()),
    };
    let c3_secs = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let c4 = full.and_then(|(outcome, trace)| {
        let s = outcome_scenario("nonlq_shepherd_sheep", &[])?;
        let (mut checked, mut worst) = (0, f64::INFINITY);
        for row in outcome.summary.repetitions.iter().filter(|r| r.converged) {
            let budget = stackelberg::lq_stackelberg::PerturbationBudget {
                check_leader: false,
                ..default_budget(seed_for(row.seed, &[4]))
            };
            let report = experiment::verify_trace(&trace, &s, Some(row.rep), &budget).map_err(|e| e.to_string())?;
            let eq = report.equilibrium.map_err(|e| format!("repetition {}: {e}", row.rep))?;
            worst = worst.min(eq.follower_min_change);
            checked += 1;
        }
        Ok(Verdict::new(
            checked > 0 && worst >= -1e-3,
            format!("{checked} converged solutions; largest follower cost reduction {:.2e} (tolerance 1e-3)", (-worst).max(0.0)),
        ))
    });
    ((c3, c3_secs), (c4, start.elapsed().as_secs_f64()))
}

fn outcome_scenario(name: &str, set: &[&str]) -> Result<Scenario, String> {
    config(name, Mode::Solve, 1, 0, set).scenario().map_err(|e| e.to_string())
}

fn c5_lq_filter() -> Outcome {
    let (_, trace) = run_experiment("c5", config("lq_shepherd_sheep", Mode::MontecarloFilter, 5, 0, &["filter.max_steps=176"]))?;
    let s = outcome_scenario("lq_shepherd_sheep", &[])?;
    let b1 = seed_mean_leader_one(&trace);
    let window = s.steps_in(1.5, 3.5, b1.len());
    let mean = window_mean(&b1, window.clone());
    let ahead = b1[window.clone()].iter().filter(|&&b| b > 1.0 - b).count() as f64 / window.len() as f64;
    Ok(Verdict::new(
        mean > 0.5 && ahead >= 0.7,
        format!("5 seeds, steps {window:?}: mean b(H=1) {mean:.3}, b(H=1) > b(H=2) at {:.0}% of steps", 100.0 * ahead),
    ))
}

fn c6_nonlq_filter() -> Outcome {
    let (_, trace) =
        run_experiment("c6", config("nonlq_shepherd_sheep_filter", Mode::MontecarloFilter, 3, 0, &["filter.max_steps=76"]))?;
    let s = outcome_scenario("nonlq_shepherd_sheep_filter", &[])?;
    let b1 = seed_mean_leader_one(&trace);
    let window = s.steps_in(0.0, 1.5, b1.len());
    let b2 = 1.0 - window_mean(&b1, window.clone());
    Ok(Verdict::new(b2 > 0.5, format!("3 seeds, steps {window:?}: mean b(H=2) {b2:.3}")))
}

fn c7_passing() -> Outcome {
    let (_, trace) = run_experiment("c7", config("passing", Mode::Filter, 1, 0, &[]))?;
    let s = outcome_scenario("passing", &[])?;
    let b1 = seed_mean_leader_one(&trace);
    let end = (b1.len() - 1) as f64 * s.dt();
    let (early, late) = (s.steps_in(0.0, 2.5, b1.len()), s.steps_in(end - 2.0, end, b1.len()));
    let (e, l) = (window_mean(&b1, early.clone()), window_mean(&b1, late.clone()));
    Ok(Verdict::new(
        e > 0.5 && l < 0.5,
        format!("steps {early:?}: mean b(H=1) {e:.3}; steps {late:?}: mean b(H=2) {:.3}", 1.0 - l),
    ))
}

fn c8_merging() -> Outcome {
    let (_, trace) = run_experiment("c8", config("merging", Mode::Filter, 1, 0, &[]))?;
    let s = outcome_scenario("merging", &[])?;
    let truth = s.ground_truth(None).map_err(|e| e.to_string())?;
    let entry = s.merge_entry_step(&truth).ok_or("ground truth never enters the merge segment")?;
    let b1 = seed_mean_leader_one(&trace);
    let b2 = 1.0 - window_mean(&b1, entry..b1.len());
    Ok(Verdict::new(b2 > 0.5, format!("steps {entry}..{}: mean b(H=2) {b2:.3}", b1.len())))
}

fn c9_filter_invariants() -> Outcome {
    guarded(|| {
        filter_checks::every_step_keeps_normalization_count_and_complement();
        filter_checks::no_switching_from_all_leader_one_keeps_certainty();
        filter_checks::enormous_measurement_noise_keeps_the_prior();
        filter_checks::identical_predictions_leave_the_prior_alone();
        filter_checks::belief_series_does_not_depend_on_worker_count();
        filter_checks::markov_flip_rate_matches_p_trans();
        filter_checks::degenerate_switch_probabilities();
        filter_checks::ess_formula_examples();
    })?;
    let weights = filter_checks::weights;
    let properties = [
        runner(256).run(&weights(60), |w| filter_checks::ess_lies_between_one_and_n(&w)).map_err(|e| e.to_string()),
        runner(256).run(&(weights(60), prop::collection::vec(prop::bool::ANY, 60)), |(w, l)| {
            filter_checks::belief_halves_are_complementary(&w, &l)
        })
        .map_err(|e| e.to_string()),
        runner(256).run(&(weights(40), 0.0..1.0f64), |(w, o)| filter_checks::systematic_resampling_copies_floor_or_ceil(&w, o))
            .map_err(|e| e.to_string()),
        runner(256).run(
            &(
                weights(30),
                prop::collection::vec(-5.0..5.0f64, 30),
                prop::collection::vec(prop::bool::weighted(0.2), 30),
            ),
            |(w, r, f)| filter_checks::update_normalizes(&w, &r, &f),
        )
        .map_err(|e| e.to_string()),
    ];
    for p in properties {
        p?;
    }
    Ok(Verdict::new(true, "8 invariant checks and 4 properties (256 cases each) hold"))
}

fn c10_derivatives() -> Outcome {
    guarded(|| {
        derivative_checks::quadratic_terms_match_finite_differences();
        derivative_checks::box_barrier_matches_finite_differences();
        derivative_checks::driving_terms_match_finite_differences();
        derivative_checks::preset_costs_match_finite_differences();
        derivative_checks::unicycle_jacobians_match_finite_differences();
    })?;
    Ok(Verdict::new(true, "all cost terms, preset costs and unicycle Jacobians agree with central differences"))
}

fn main() -> ExitCode {
    // panics inside guarded checks are reported as FAIL details
    panic::set_hook(Box::new(|_| {}));
    let _ = std::fs::create_dir_all(artifacts());

    let mut failed = 0;
    let mut report = |n: usize, title: &str, outcome: Outcome, secs: f64| {
        let (pass, detail) = match outcome {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!("criterion {n:>2} {}: {title} — {detail} [{secs:.0} s]", if pass { "PASS" } else { "FAIL" });
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let start = Instant::now();
        let out = guarded(f).and_then(|o| o);
        (out, start.elapsed().as_secs_f64())
    };

    let (o, s) = timed(&c1_oracle);
    report(1, "LQ recursion vs brute-force oracle", o, s);
    let (o, s) = timed(&c2_lq_silq);
    report(2, "iterative solver on the LQ game", o, s);
    let ((c3, s3), (c4, s4)) = guarded(c3_c4_nonlq).unwrap_or_else(|e| ((Err(e.clone()), 0.0), (Err(e), 0.0)));
    report(3, "non-LQ Monte Carlo convergence", c3, s3);
    report(4, "converged non-LQ solutions resist follower deviations", c4, s4);
    let (o, s) = timed(&c5_lq_filter);
    report(5, "filter identifies agent 1 on the LQ game", o, s);
    let (o, s) = timed(&c6_nonlq_filter);
    report(6, "filter identifies agent 2 on the non-LQ game", o, s);
    let (o, s) = timed(&c7_passing);
    report(7, "passing: leadership shifts to agent 2", o, s);
    let (o, s) = timed(&c8_merging);
    report(8, "merging: agent 2 leads after merge entry", o, s);
    let (o, s) = timed(&c9_filter_invariants);
    report(9, "filter invariants", o, s);
    let (o, s) = timed(&c10_derivatives);
    report(10, "derivative checks", o, s);

    println!("{} of 10 criteria passed; artifacts in {}", 10 - failed, artifacts().display());
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
