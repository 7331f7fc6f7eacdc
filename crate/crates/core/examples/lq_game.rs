//! Exact feedback Stackelberg solution of the quadratic shepherd-and-sheep
//! game, and how the leader assignment changes the outcome.
//!
//! cargo run --example lq_game

use std::sync::Arc;

use nalgebra::DVector;
use stackelberg::costs::{sheep_cost, shepherd_cost, sum_objective};
use stackelberg::lq_stackelberg;
use stackelberg::silq::{approximate, GameDefinition, SolverConfig};
use stackelberg::{Agent, JointModel};

fn main() {
    let model = Arc::new(JointModel::double_integrators(0.02));
    // [px, vx, py, vy] for the shepherd, then the sheep
    let x1 = DVector::from_column_slice(&[2.0, 0.0, 1.0, 0.0, -1.0, 0.0, 2.0, 0.0]);

    for leader in Agent::BOTH {
        let game = GameDefinition {
            model: model.clone(),
            costs: [Arc::new(shepherd_cost(&model)), Arc::new(sheep_cost(&model))],
            horizon: 501,
            leader,
        };
        // quadratic costs and linear dynamics: the expansion is the game itself
        let origin = vec![DVector::zeros(8); game.horizon];
        let lq = approximate(&game, &origin, &game.zero_controls(), &SolverConfig::default()).unwrap();
        let strategy = lq_stackelberg::solve(&lq).unwrap();
        let (xs, us) = strategy.apply(model.as_ref(), &x1);

        let costs = game.cost_refs();
        let j = [0, 1].map(|i| sum_objective(costs[i], &xs, &us[0], &us[1]).unwrap());
        let last = xs.last().unwrap();
        println!("leader {leader}: J1 = {:9.3}  J2 = {:9.3}", j[0], j[1]);
        println!("  final shepherd ({:+.3}, {:+.3})  sheep ({:+.3}, {:+.3})", last[0], last[2], last[4], last[6]);
        println!("  first-stage gain of the follower:{:.3}", strategy.gains[leader.other().index()][0]);
    }
}
