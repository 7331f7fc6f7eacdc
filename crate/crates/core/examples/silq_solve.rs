//! Iterative LQ solve of the non-LQ shepherd-and-sheep game (unicycles,
//! log-barrier box on the sheep), printing the convergence history.
//!
//! cargo run --example silq_solve [-- <leader: 1|2>]

use stackelberg::scenarios;
use stackelberg::silq::solve;
use stackelberg::Agent;

fn main() {
    let leader = match std::env::args().nth(1).as_deref() {
        Some("1") => Agent::One,
        _ => Agent::Two,
    };
    let scenario = scenarios::build("nonlq_shepherd_sheep", &[]).unwrap();
    let game = scenario.game.with_leader(leader);
    let x1 = scenario.initial_state(None);
    let cfg = scenario.config.solver;

    let res = solve(&game, &x1, &game.zero_controls(), &cfg).unwrap();
    println!("leader {leader}, tolerance {:e}: converged = {} after {} iterations", cfg.tolerance, res.converged, res.iterations);
    println!("{:>5} {:>12} {:>8} {:>12} {:>12}", "k", "conv", "alpha", "J1", "J2");
    for k in 0..res.iterations {
        let [j1, j2] = res.objective_history[k];
        println!("{:>5} {:>12.4e} {:>8.4} {:>12.4} {:>12.4}", k + 1, res.metric_history[k], res.step_history[k], j1, j2);
    }
    let last = res.states.last().unwrap();
    println!("sheep ends at ({:+.3}, {:+.3}); mean iteration time {:.2} ms", last[4], last[5],
        1e3 * res.iteration_seconds.iter().sum::<f64>() / res.iterations.max(1) as f64);
}
