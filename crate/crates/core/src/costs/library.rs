use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::terms::*;
use super::WeightedCost;
use crate::dynamics::{AgentModel, Dynamics, JointModel};
use crate::types::Agent;

fn base(owner: Agent, model: &JointModel) -> WeightedCost {
    WeightedCost::new(owner, model.state_dim(), model.control_dims())
}

/// Shepherd (agent one): sheep's squared distance to the origin plus own effort.
pub fn shepherd_cost(model: &JointModel) -> WeightedCost {
    base(Agent::One, model)
        .with(1.0, SquaredDistance { from: model.position_indices(Agent::Two), to: None })
        .with(1.0, ControlEffort { agent: Agent::One })
}

/// Sheep (agent two): squared distance to the shepherd plus own effort.
pub fn sheep_cost(model: &JointModel) -> WeightedCost {
    base(Agent::Two, model)
        .with(
            1.0,
            SquaredDistance {
                from: model.position_indices(Agent::One),
                to: Some(model.position_indices(Agent::Two)),
            },
        )
        .with(1.0, ControlEffort { agent: Agent::Two })
}

/// Shepherd cost with log barriers confining the sheep to `|p| < s` per axis.
pub fn nonlq_shepherd_cost(model: &JointModel, half_width: f64) -> WeightedCost {
    shepherd_cost(model).with(
        1.0,
        BoxBarrier { position: model.position_indices(Agent::Two), half_width },
    )
}

/// Subobjective weights of a driving cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrivingWeights {
    pub goal: f64,
    pub collision: f64,
    pub speed_heading: f64,
    pub control: f64,
    pub lane: f64,
    pub center_line: f64,
}

impl Default for DrivingWeights {
    fn default() -> Self {
        Self { goal: 1.0, collision: 1.0, speed_heading: 1.0, control: 0.1, lane: 1.0, center_line: 1.0 }
    }
}

/// Everything one agent's driving cost needs besides the model.
#[derive(Debug, Clone)]
pub struct DrivingCostParams {
    /// Goal in the agent's own `[px, py, heading, speed]` layout.
    pub goal: [f64; 4],
    pub goal_weights: [f64; 4],
    pub min_distance: f64,
    pub max_speed: f64,
    pub max_heading_deviation: f64,
    pub road_heading: f64,
    pub profile: Arc<dyn BoundaryProfile>,
    /// Lateral position of a center line to stay off, if the road has one.
    pub center_x: Option<f64>,
    pub center_covariance: (f64, f64),
    pub weights: DrivingWeights,
}

/// Weighted sum of the six driving subobjectives for `agent` (unicycle model).
pub fn driving_cost(model: &JointModel, agent: Agent, p: &DrivingCostParams) -> WeightedCost {
    assert_eq!(model.agents[agent.index()], AgentModel::Unicycle, "driving costs assume unicycle agents");
    let block = agent.index() * AgentModel::STATE_DIM;
    let position = model.position_indices(agent);
    let w = &p.weights;
    let mut cost = base(agent, model)
        .with(w.goal, GoalDistance { block, goal: p.goal, weights: p.goal_weights })
        .with(
            w.collision,
            CollisionBarrier {
                own: position,
                other: model.position_indices(agent.other()),
                min_distance: p.min_distance,
            },
        )
        .with(
            w.speed_heading,
            SpeedHeadingBarrier {
                speed: block + 3,
                heading: block + 2,
                max_speed: p.max_speed,
                max_heading_deviation: p.max_heading_deviation,
                road_heading: p.road_heading,
            },
        )
        .with(w.control, ControlEffort { agent })
        .with(w.lane, LaneBoundaryBarrier { position, profile: p.profile.clone() });
    if let Some(center_x) = p.center_x {
        cost = cost.with(
            w.center_line,
            CenterLineGaussian { position, center_x, covariance: p.center_covariance },
        );
    }
    cost
}
