//! Probes solver output for profitable single-stage deviations: a
//! converged solution passes, a two-iteration solution does not.
//!
//! cargo run --example verify_equilibrium

use stackelberg::experiment::EQUILIBRIUM_TOL;
use stackelberg::lq_stackelberg::{verify_stackelberg, PerturbationBudget};
use stackelberg::scenarios;
use stackelberg::silq::{feedback_law, solve, SolverConfig};

fn main() {
    let scenario = scenarios::build("nonlq_shepherd_sheep", &[]).unwrap();
    let game = &scenario.game;
    let x1 = scenario.initial_state(None);
    let budget = PerturbationBudget { samples_per_stage: 100, stages: Some(10), max_norm: 0.05, check_leader: true, seed: 1 };

    for max_iterations in [2, 3500] {
        let cfg = SolverConfig { max_iterations, ..scenario.config.solver };
        let res = solve(game, &x1, &game.zero_controls(), &cfg).unwrap();
        let law = feedback_law(game, &res.states, &res.controls, &cfg).unwrap();
        let report = verify_stackelberg(game.model.as_ref(), game.cost_refs(), &res.states, &res.controls, &law, &budget);
        println!(
            "M = {max_iterations:4} (converged {}): follower best change {:+.2e} at stage {}, leader {:+.2e} at stage {} -> {}",
            res.converged,
            report.follower_min_change,
            report.follower_worst_stage,
            report.leader_min_change,
            report.leader_worst_stage,
            if report.passes(EQUILIBRIUM_TOL) { "equilibrium" } else { "improvable" }
        );
    }
}
