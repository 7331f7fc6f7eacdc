use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use super::{CostError, CostTerm, QuadraticApproximation};
use crate::types::Agent;

fn domain(term: &'static str, argument: f64) -> Result<(), CostError> {
    if argument > 0.0 && argument.is_finite() {
        Ok(())
    } else {
        Err(CostError::Domain { term, argument })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared planar distance `‖p - target‖²`, where the target is either the
/// origin or another position in the state.
#[derive(Debug, Clone)]
pub struct SquaredDistance {
    pub from: (usize, usize),
    pub to: Option<(usize, usize)>,
}

impl SquaredDistance {
    fn diff(&self, x: &DVector<f64>) -> [f64; 2] {
        let (tx, ty) = self.to.map(|(i, j)| (x[i], x[j])).unwrap_or((0.0, 0.0));
        [x[self.from.0] - tx, x[self.from.1] - ty]
    }
}

impl CostTerm for SquaredDistance {
    fn name(&self) -> &'static str {
        "squared_distance"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let d = self.diff(x);
        Ok(d[0] * d[0] + d[1] * d[1])
    }

    fn accumulate(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        let d = self.diff(x);
        acc.value += w * (d[0] * d[0] + d[1] * d[1]);
        let from = [self.from.0, self.from.1];
        for k in 0..2 {
            let i = from[k];
            acc.state_grad[i] += 2.0 * w * d[k];
            acc.state_hess[(i, i)] += 2.0 * w;
            if let Some(to) = self.to {
                let j = [to.0, to.1][k];
                acc.state_grad[j] -= 2.0 * w * d[k];
                acc.state_hess[(j, j)] += 2.0 * w;
                acc.state_hess[(i, j)] -= 2.0 * w;
                acc.state_hess[(j, i)] -= 2.0 * w;
            }
        }
        Ok(())
    }
}

/// `‖u_agent‖²`.
#[derive(Debug, Clone)]
pub struct ControlEffort {
    pub agent: Agent,
}

impl CostTerm for ControlEffort {
    fn name(&self) -> &'static str {
        "control_effort"
    }

    fn value(&self, _x: &DVector<f64>, u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        Ok(u[self.agent.index()].norm_squared())
    }

    fn accumulate(&self, _x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        let j = self.agent.index();
        let uj = u[j];
        acc.value += w * uj.norm_squared();
        acc.control_grad[j].axpy(2.0 * w, uj, 1.0);
        for k in 0..uj.len() {
            acc.control_hess[j][(k, k)] += 2.0 * w;
        }
        Ok(())
    }
}

/// Keeps a planar position inside the square `|px| < s, |py| < s` with the
/// barrier `-log(s - p) - log(p + s)` on each axis.
#[derive(Debug, Clone)]
pub struct BoxBarrier {
    pub position: (usize, usize),
    pub half_width: f64,
}

impl CostTerm for BoxBarrier {
    fn name(&self) -> &'static str {
        "box_barrier"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let s = self.half_width;
        let mut total = 0.0;
        for i in [self.position.0, self.position.1] {
            let (hi, lo) = (s - x[i], x[i] + s);
            domain(self.name(), hi)?;
            domain(self.name(), lo)?;
            total -= hi.ln() + lo.ln();
        }
        Ok(total)
    }

    fn accumulate(&self, x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        acc.value += w * self.value(x, u)?;
        let s = self.half_width;
        for i in [self.position.0, self.position.1] {
            let (hi, lo) = (s - x[i], x[i] + s);
            acc.state_grad[i] += w * (1.0 / hi - 1.0 / lo);
            acc.state_hess[(i, i)] += w * (1.0 / (hi * hi) + 1.0 / (lo * lo));
        }
        Ok(())
    }
}

/// Weighted Euclidean distance between one agent's 4-state block and a goal.
#[derive(Debug, Clone)]
pub struct GoalDistance {
    /// Joint-state index of the agent's first entry.
    pub block: usize,
    pub goal: [f64; 4],
    pub weights: [f64; 4],
}

impl GoalDistance {
    const FLOOR: f64 = 1e-9;

    fn dist(&self, x: &DVector<f64>) -> ([f64; 4], f64) {
        let mut e = [0.0; 4];
        let mut sq = 0.0;
        for k in 0..4 {
            e[k] = x[self.block + k] - self.goal[k];
            sq += self.weights[k] * e[k] * e[k];
        }
        (e, sq.sqrt())
    }
}

impl CostTerm for GoalDistance {
    fn name(&self) -> &'static str {
        "goal_distance"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        Ok(self.dist(x).1)
    }

    fn accumulate(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        let (e, d) = self.dist(x);
        acc.value += w * d;
        if d < Self::FLOOR {
            return Ok(());
        }
        let g: Vec<f64> = (0..4).map(|k| self.weights[k] * e[k] / d).collect();
        for k in 0..4 {
            let i = self.block + k;
            acc.state_grad[i] += w * g[k];
            acc.state_hess[(i, i)] += w * self.weights[k] / d;
            for l in 0..4 {
                acc.state_hess[(i, self.block + l)] -= w * g[k] * g[l] / d;
            }
        }
        Ok(())
    }
}

/// `-log(‖p_i - p_j‖² - d_c)`.
#[derive(Debug, Clone)]
pub struct CollisionBarrier {
    pub own: (usize, usize),
    pub other: (usize, usize),
    pub min_distance: f64,
}

impl CostTerm for CollisionBarrier {
    fn name(&self) -> &'static str {
        "collision_barrier"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let (dx, dy) = (x[self.own.0] - x[self.other.0], x[self.own.1] - x[self.other.1]);
        let phi = dx * dx + dy * dy - self.min_distance;
        domain(self.name(), phi)?;
        Ok(-phi.ln())
    }

    fn accumulate(&self, x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        acc.value += w * self.value(x, u)?;
        let d = [x[self.own.0] - x[self.other.0], x[self.own.1] - x[self.other.1]];
        let phi = d[0] * d[0] + d[1] * d[1] - self.min_distance;
        // gradient of phi w.r.t. (own_x, own_y, other_x, other_y)
        let idx = [self.own.0, self.own.1, self.other.0, self.other.1];
        let grad_phi = [2.0 * d[0], 2.0 * d[1], -2.0 * d[0], -2.0 * d[1]];
        let sgn = [1.0, 1.0, -1.0, -1.0];
        for a in 0..4 {
            acc.state_grad[idx[a]] -= w * grad_phi[a] / phi;
            for b in 0..4 {
                // Hessian of phi is 2 on matching axes with sign by agent
                let hess_phi = if a % 2 == b % 2 { 2.0 * sgn[a] * sgn[b] } else { 0.0 };
                acc.state_hess[(idx[a], idx[b])] += w * (grad_phi[a] * grad_phi[b] / (phi * phi) - hess_phi / phi);
            }
        }
        Ok(())
    }
}

/// `-log(v_m - |v|) - log(Δψ_m - |ψ - ψ_r|)`.
#[derive(Debug, Clone)]
pub struct SpeedHeadingBarrier {
    pub speed: usize,
    pub heading: usize,
    pub max_speed: f64,
    pub max_heading_deviation: f64,
    pub road_heading: f64,
}

impl SpeedHeadingBarrier {
    fn parts(&self, x: &DVector<f64>) -> [(usize, f64, f64); 2] {
        let v = x[self.speed];
        let e = x[self.heading] - self.road_heading;
        [
            (self.speed, self.max_speed - v.abs(), sign(v)),
            (self.heading, self.max_heading_deviation - e.abs(), sign(e)),
        ]
    }
}

impl CostTerm for SpeedHeadingBarrier {
    fn name(&self) -> &'static str {
        "speed_heading_barrier"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let mut total = 0.0;
        for (_, slack, _) in self.parts(x) {
            domain(self.name(), slack)?;
            total -= slack.ln();
        }
        Ok(total)
    }

    fn accumulate(&self, x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        acc.value += w * self.value(x, u)?;
        for (i, slack, s) in self.parts(x) {
            acc.state_grad[i] += w * s / slack;
            acc.state_hess[(i, i)] += w / (slack * slack);
        }
        Ok(())
    }
}

/// Lateral road boundaries at one longitudinal station, with their slopes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneBounds {
    pub left: f64,
    pub left_slope: f64,
    pub right: f64,
    pub right_slope: f64,
}

/// Maps a longitudinal station (the `y` coordinate) to lane boundaries.
pub trait BoundaryProfile: Send + Sync + fmt::Debug {
    fn bounds(&self, station: f64) -> LaneBounds;
}

/// `-log(‖p_llb - p‖²) - log(‖p_rlb - p‖²)`, with boundary points taken at
/// the vehicle's own station.
#[derive(Debug, Clone)]
pub struct LaneBoundaryBarrier {
    pub position: (usize, usize),
    pub profile: Arc<dyn BoundaryProfile>,
}

impl LaneBoundaryBarrier {
    /// Signed lateral gaps `boundary(y) - x` with their slopes in `y`.
    fn gaps(&self, x: &DVector<f64>) -> [(f64, f64); 2] {
        let (px, py) = (x[self.position.0], x[self.position.1]);
        let b = self.profile.bounds(py);
        [(b.left - px, b.left_slope), (b.right - px, b.right_slope)]
    }
}

impl CostTerm for LaneBoundaryBarrier {
    fn name(&self) -> &'static str {
        "lane_boundary_barrier"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let mut total = 0.0;
        for (gap, _) in self.gaps(x) {
            let sq = gap * gap;
            domain(self.name(), sq)?;
            total -= sq.ln();
        }
        Ok(total)
    }

    fn accumulate(&self, x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        acc.value += w * self.value(x, u)?;
        let idx = [self.position.0, self.position.1];
        for (gap, slope) in self.gaps(x) {
            // -log(e²) = -2 log|e|, e linear in (x, y) away from profile kinks
            let de = [-1.0, slope];
            for a in 0..2 {
                acc.state_grad[idx[a]] -= w * 2.0 * de[a] / gap;
                for b in 0..2 {
                    acc.state_hess[(idx[a], idx[b])] += w * 2.0 * de[a] * de[b] / (gap * gap);
                }
            }
        }
        Ok(())
    }
}

/// `exp(-½ dᵀ C⁻¹ d)` with `d = p_cl - p`, where the center-line point sits at
/// the vehicle's own station so `d = (x_cl - px, 0)`.
#[derive(Debug, Clone)]
pub struct CenterLineGaussian {
    pub position: (usize, usize),
    pub center_x: f64,
    /// Diagonal of `C`: (lateral variance, longitudinal variance).
    pub covariance: (f64, f64),
}

impl CostTerm for CenterLineGaussian {
    fn name(&self) -> &'static str {
        "center_line_gaussian"
    }

    fn value(&self, x: &DVector<f64>, _u: [&DVector<f64>; 2]) -> Result<f64, CostError> {
        let e = self.center_x - x[self.position.0];
        Ok((-0.5 * e * e / self.covariance.0).exp())
    }

    fn accumulate(&self, x: &DVector<f64>, u: [&DVector<f64>; 2], w: f64, acc: &mut QuadraticApproximation) -> Result<(), CostError> {
        let f = self.value(x, u)?;
        let k = 1.0 / self.covariance.0;
        let e = self.center_x - x[self.position.0];
        let i = self.position.0;
        acc.value += w * f;
        acc.state_grad[i] += w * f * k * e;
        acc.state_hess[(i, i)] += w * f * (k * k * e * e - k);
        Ok(())
    }
}
