//! Scripted driving maneuvers and the inverse-dynamics tracker that turns
//! them into feasible unicycle trajectories.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A lateral move to `to_x`, eased in and out over `[start, start + duration]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneChange {
    pub start: f64,
    pub duration: f64,
    pub to_x: f64,
}

/// Reference path of one vehicle: a lateral profile built from lane changes
/// and a piecewise-linear speed profile along the road heading `+y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManeuverScript {
    pub start: [f64; 2],
    /// `[time, speed]` knots; speed is held constant outside them.
    pub speed_knots: Vec<[f64; 2]>,
    #[serde(default)]
    pub lane_changes: Vec<LaneChange>,
}

/// Quintic ease with zero first and second derivatives at both ends.
fn ease(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

impl ManeuverScript {
    /// Straight driving at constant speed.
    pub fn cruise(start: [f64; 2], speed: f64) -> Self {
        Self { start, speed_knots: vec![[0.0, speed]], lane_changes: Vec::new() }
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        let k = &self.speed_knots;
        if t <= k[0][0] {
            return k[0][1];
        }
        for w in k.windows(2) {
            let ([t0, v0], [t1, v1]) = (w[0], w[1]);
            if t <= t1 {
                return v0 + (v1 - v0) * (t - t0) / (t1 - t0);
            }
        }
        k[k.len() - 1][1]
    }

    /// Distance travelled along the road by time `t` (exact for the
    /// piecewise-linear speed profile).
    pub fn station_at(&self, t: f64) -> f64 {
        let k = &self.speed_knots;
        let mut s = self.start[1];
        let mut prev = (0.0, self.speed_at(0.0));
        let mut knots: Vec<f64> = k.iter().map(|kn| kn[0]).filter(|&tk| tk > 0.0 && tk < t).collect();
        knots.push(t);
        for tk in knots {
            let v = self.speed_at(tk);
            s += 0.5 * (prev.1 + v) * (tk - prev.0);
            prev = (tk, v);
        }
        s
    }

    pub fn lateral_at(&self, t: f64) -> f64 {
        let mut x = self.start[0];
        for c in &self.lane_changes {
            x += (c.to_x - x) * ease((t - c.start) / c.duration);
        }
        x
    }

    pub fn position_at(&self, t: f64) -> [f64; 2] {
        [self.lateral_at(t), self.station_at(t)]
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.speed_knots.is_empty() {
            return Err("speed_knots must not be empty".into());
        }
        if self.speed_knots.windows(2).any(|w| w[1][0] <= w[0][0]) {
            return Err("speed knot times must increase".into());
        }
        if self.lane_changes.iter().any(|c| !(c.duration > 0.0)) {
            return Err("lane change durations must be positive".into());
        }
        if self.lane_changes.windows(2).any(|w| w[1].start < w[0].start + w[0].duration) {
            return Err("lane changes must not overlap".into());
        }
        Ok(())
    }
}

/// Result of tracking a script with the unicycle model.
#[derive(Debug, Clone)]
pub struct TrackedScript {
    /// Per-step `[px, py, ψ, v]`.
    pub states: Vec<[f64; 4]>,
    /// Per-step `[ω, α]`; the last entry is unused by the dynamics.
    pub controls: Vec<[f64; 2]>,
    /// Largest distance between a realized position and its waypoint.
    pub max_deviation: f64,
    pub worst_step: usize,
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Chooses `(ω_t, α_t)` so that `p_{t+2}` lands on the waypoint at
/// `(t + 2) Δt`, clamps to the bounds, and rolls the unicycle forward.
pub fn track(
    script: &ManeuverScript,
    heading: f64,
    steps: usize,
    dt: f64,
    max_omega: f64,
    max_accel: f64,
) -> TrackedScript {
    let mut x = [script.start[0], script.start[1], heading, script.speed_at(0.0)];
    let mut states = Vec::with_capacity(steps);
    let mut controls = Vec::with_capacity(steps);
    let (mut max_deviation, mut worst_step) = (0.0f64, 0);
    for t in 0..steps {
        let target = script.position_at(t as f64 * dt);
        let dev = ((x[0] - target[0]).powi(2) + (x[1] - target[1]).powi(2)).sqrt();
        if dev > max_deviation {
            max_deviation = dev;
            worst_step = t;
        }
        // p_{t+1} is already fixed by the current state
        let next_p = [x[0] + dt * x[3] * x[2].cos(), x[1] + dt * x[3] * x[2].sin()];
        let goal = script.position_at((t + 2) as f64 * dt);
        let d = [goal[0] - next_p[0], goal[1] - next_p[1]];
        let want_v = (d[0] * d[0] + d[1] * d[1]).sqrt() / dt;
        let want_psi = d[1].atan2(d[0]);
        let omega = (wrap(want_psi - x[2]) / dt).clamp(-max_omega, max_omega);
        let accel = ((want_v - x[3]) / dt).clamp(-max_accel, max_accel);
        states.push(x);
        controls.push([omega, accel]);
        x = [next_p[0], next_p[1], x[2] + dt * omega, x[3] + dt * accel];
    }
    TrackedScript { states, controls, max_deviation, worst_step }
}
