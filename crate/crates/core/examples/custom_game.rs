//! A user-defined game: two scalar agents with nonlinear coupling, custom
//! dynamics via a closure and costs assembled from library terms.
//!
//! cargo run --example custom_game

use std::sync::Arc;

use nalgebra::DVector;
use stackelberg::costs::{ControlEffort, SquaredDistance, WeightedCost};
use stackelberg::dynamics::CustomDynamics;
use stackelberg::silq::{solve, GameDefinition, SolverConfig};
use stackelberg::Agent;

fn main() {
    // two planar points; agent two's control weakens with its distance to agent one
    let dt = 0.05;
    let model = Arc::new(CustomDynamics::new(4, [2, 2], dt, move |x, u1, u2, _| {
        let gap = ((x[0] - x[2]).powi(2) + (x[1] - x[3]).powi(2)).sqrt();
        let damp = 1.0 / (1.0 + gap);
        DVector::from_column_slice(&[
            x[0] + dt * u1[0],
            x[1] + dt * u1[1],
            x[2] + dt * damp * u2[0],
            x[3] + dt * damp * u2[1],
        ])
    }));
    // agent one wants agent two at the origin; agent two wants to reach agent one
    let c1 = WeightedCost::new(Agent::One, 4, [2, 2])
        .with(1.0, SquaredDistance { from: (2, 3), to: None })
        .with(0.5, ControlEffort { agent: Agent::One });
    let c2 = WeightedCost::new(Agent::Two, 4, [2, 2])
        .with(1.0, SquaredDistance { from: (0, 1), to: Some((2, 3)) })
        .with(0.5, ControlEffort { agent: Agent::Two });
    let base = GameDefinition { model, costs: [Arc::new(c1), Arc::new(c2)], horizon: 60, leader: Agent::One };
    let x1 = DVector::from_column_slice(&[1.0, 0.0, -1.0, 1.0]);

    for leader in Agent::BOTH {
        let game = base.with_leader(leader);
        let res = solve(&game, &x1, &game.zero_controls(), &SolverConfig::default()).unwrap();
        let last = res.states.last().unwrap();
        println!(
            "leader {leader}: converged {} in {} iterations, J = {:.3?}, final A1 ({:+.3}, {:+.3}) A2 ({:+.3}, {:+.3})",
            res.converged, res.iterations, res.objectives, last[0], last[1], last[2], last[3]
        );
    }
}
