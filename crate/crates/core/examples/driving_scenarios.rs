//! Scripted passing and merging ground truths: road geometry, tracked
//! maneuvers, and how closely the unicycles follow their waypoints.
//!
//! cargo run --example driving_scenarios

use stackelberg::scenarios::{self, Lane};
use stackelberg::Agent;

fn main() {
    for name in ["passing", "merging"] {
        let scenario = scenarios::build(name, &[]).unwrap();
        let d = scenario.config.driving.as_ref().unwrap();
        let truth = scenario.ground_truth(None).unwrap();
        println!("{name}: {} steps of {} s, worst waypoint deviation {:.2e} m", truth.states.len(), scenario.dt(),
            truth.script_deviation.unwrap());
        if let Some(t) = scenario.merge_entry_step(&truth) {
            println!("  merge segment entered at step {t} ({:.2} s)", t as f64 * scenario.dt());
        }
        for station in [0.0, 30.0, 45.0, 60.0] {
            let b = d.road.bounds(station, Lane::Road);
            println!("  road at y = {station:4}: x in [{:+.3}, {:+.3}]", b.right.min(b.left), b.right.max(b.left));
        }
        for t in (0..truth.states.len()).step_by(30).chain([truth.states.len() - 1]) {
            let x = &truth.states[t];
            let p = |a: Agent| {
                let (i, j) = scenario.model.position_indices(a);
                format!("({:+6.2}, {:6.2})", x[i], x[j])
            };
            println!("  t = {:4.2}s  A1 {}  A2 {}", t as f64 * scenario.dt(), p(Agent::One), p(Agent::Two));
        }
        let objectives = scenario.game.objectives(&truth.states, &truth.controls).unwrap();
        println!("  driving objectives along the script: {:.1?}", objectives);
    }
}
