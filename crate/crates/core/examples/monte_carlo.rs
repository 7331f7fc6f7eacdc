//! Programmatic Monte Carlo run through the experiment layer: randomized
//! sheep starts, artifacts in a directory, summary and timing table.
//!
//! cargo run --example monte_carlo [-- <reps> <out-dir>]

use std::path::PathBuf;

use stackelberg::experiment::{run, timing_report, Mode, RunConfig, RunSummary};

fn main() {
    let mut args = std::env::args().skip(1);
    let reps: usize = args.next().map_or(4, |s| s.parse().expect("reps"));
    let out = args.next().map_or_else(|| std::env::temp_dir().join("slf-monte-carlo"), PathBuf::from);

    let cfg = RunConfig {
        reps,
        seed: 7,
        workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        // a shorter horizon keeps the example quick
        set: vec!["horizon=101".into()],
        ..RunConfig::new("nonlq_shepherd_sheep", Mode::MontecarloSolve)
    };
    let outcome = run(&cfg, &out).unwrap();
    for r in &outcome.summary.repetitions {
        println!("rep {:2}: converged {} after {:3} iterations, J = {:.3?}", r.rep, r.converged, r.iterations, r.objectives);
    }
    let a = &outcome.summary.aggregates;
    println!("convergence rate {:.2}, iterations {:.1} ± {:.1}", a.convergence_rate, a.mean_iterations, a.std_iterations);
    for band in a.metric_bands.iter().step_by(5) {
        println!("  k = {:3}: metric p10 {:.2e}  p50 {:.2e}  p90 {:.2e}", band.iteration, band.p10, band.p50, band.p90);
    }
    // summaries re-validate their aggregates on load
    let summary = RunSummary::read(&out.join("summary.json")).unwrap();
    print!("{}", timing_report(&[summary]));
    println!("artifacts in {}", out.display());
}
