//! Analytic cost derivatives and unicycle Jacobians against central finite
//! differences at random in-domain points. Each check panics on the first
//! mismatch.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stackelberg::costs::{
    BoxBarrier, CenterLineGaussian, CollisionBarrier, ControlEffort, CostTerm, GoalDistance, LaneBoundaryBarrier,
    SpeedHeadingBarrier, SquaredDistance, WeightedCost,
};
use stackelberg::dynamics::finite_difference_jacobians;
use stackelberg::scenarios::{self, Lane, RoadGeometry};
use stackelberg::{Agent, Dynamics, JointModel, StageCost};

pub const POINTS: usize = 100;
pub const REL_TOL: f64 = 1e-4;

/// `|a - b| / max(1, |b|)` entrywise, maximized.
fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs() / y.abs().max(1.0)).fold(0.0, f64::max)
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Random unicycle joint state on a two-lane road, heading roughly along +y.
fn road_state(rng: &mut impl Rng) -> DVector<f64> {
    loop {
        let mut x = DVector::zeros(8);
        for b in [0, 4] {
            x[b] = rng.random_range(-2.2..2.2);
            x[b + 1] = rng.random_range(0.0..110.0);
            x[b + 2] = std::f64::consts::FRAC_PI_2 + rng.random_range(-0.9..0.9);
            x[b + 3] = rng.random_range(-30.0..30.0);
        }
        let d2 = (x[0] - x[4]).powi(2) + (x[1] - x[5]).powi(2);
        // keep away from the |.| kinks and the collision boundary
        let kinks = [x[3], x[7], x[0], x[4]].iter().all(|v: &f64| v.abs() > 1e-3);
        if d2 > 0.5 && kinks {
            return x;
        }
    }
}

fn controls(rng: &mut impl Rng) -> [DVector<f64>; 2] {
    [0, 1].map(|_| DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0)))
}

/// Checks gradient against FD of the value, Hessians against FD of the
/// analytic gradient.
fn check_cost(label: &str, cost: &dyn StageCost, x: &DVector<f64>, u: &[DVector<f64>; 2]) {
    let h = 1e-6;
    let q = cost.quadraticize(x, &u[0], &u[1]).unwrap_or_else(|e| panic!("{label}: {e}"));
    let v0 = cost.evaluate(x, &u[0], &u[1]).unwrap();
    assert!((q.value - v0).abs() <= 1e-9 * v0.abs().max(1.0), "{label}: value {} vs {}", q.value, v0);

    let n = x.len();
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for j in 0..n {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[j] += h;
        xm[j] -= h;
        grad[j] = (cost.evaluate(&xp, &u[0], &u[1]).unwrap() - cost.evaluate(&xm, &u[0], &u[1]).unwrap()) / (2.0 * h);
        let gp = cost.quadraticize(&xp, &u[0], &u[1]).unwrap().state_grad;
        let gm = cost.quadraticize(&xm, &u[0], &u[1]).unwrap().state_grad;
        hess.set_column(j, &((gp - gm) / (2.0 * h)));
    }
    let e = rel_err(&col(&q.state_grad), &col(&grad));
    assert!(e < REL_TOL, "{label}: state gradient error {e:e} at {x}");
    let e = rel_err(&q.state_hess, &hess);
    assert!(e < REL_TOL, "{label}: state Hessian error {e:e} at {x}");

    for a in 0..2 {
        let m = u[a].len();
        let mut g = DVector::zeros(m);
        let mut hm = DMatrix::zeros(m, m);
        for j in 0..m {
            let shifted = |d: f64| {
                let mut w = u.clone();
                w[a][j] += d;
                w
            };
            let (wp, wm) = (shifted(h), shifted(-h));
            g[j] = (cost.evaluate(x, &wp[0], &wp[1]).unwrap() - cost.evaluate(x, &wm[0], &wm[1]).unwrap()) / (2.0 * h);
            let gp = cost.quadraticize(x, &wp[0], &wp[1]).unwrap().control_grad[a].clone();
            let gm = cost.quadraticize(x, &wm[0], &wm[1]).unwrap().control_grad[a].clone();
            hm.set_column(j, &((gp - gm) / (2.0 * h)));
        }
        let e = rel_err(&col(&q.control_grad[a]), &col(&g));
        assert!(e < REL_TOL, "{label}: control {a} gradient error {e:e}");
        let e = rel_err(&q.control_hess[a], &hm);
        assert!(e < REL_TOL, "{label}: control {a} Hessian error {e:e}");
    }
}

fn single(term: impl CostTerm + 'static) -> WeightedCost {
    WeightedCost::new(Agent::One, 8, [2, 2]).with(1.0, term)
}

fn for_points(seed: u64, mut state: impl FnMut(&mut ChaCha8Rng) -> DVector<f64>, mut f: impl FnMut(&DVector<f64>, &[DVector<f64>; 2])) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..POINTS {
        let x = state(&mut rng);
        let u = controls(&mut rng);
        f(&x, &u);
    }
}

pub fn quadratic_terms_match_finite_differences() {
    let terms: Vec<(&str, WeightedCost)> = vec![
        ("squared_distance_origin", single(SquaredDistance { from: (4, 6), to: None })),
        ("squared_distance_pair", single(SquaredDistance { from: (0, 2), to: Some((4, 6)) })),
        ("control_effort_1", single(ControlEffort { agent: Agent::One })),
        ("control_effort_2", single(ControlEffort { agent: Agent::Two })),
    ];
    for (label, cost) in &terms {
        for_points(1, |r| DVector::from_fn(8, |_, _| r.random_range(-5.0..5.0)), |x, u| check_cost(label, cost, x, u));
    }
}

pub fn box_barrier_matches_finite_differences() {
    let cost = single(BoxBarrier { position: (4, 5), half_width: 5.0 });
    for_points(2, |r| DVector::from_fn(8, |_, _| r.random_range(-4.5..4.5)), |x, u| check_cost("box_barrier", &cost, x, u));
}

pub fn driving_terms_match_finite_differences() {
    let road = RoadGeometry::two_lane(2.5);
    let merge = RoadGeometry::merging(2.5);
    let terms: Vec<(&str, WeightedCost)> = vec![
        ("goal_distance", single(GoalDistance { block: 0, goal: [1.25, 150.0, 1.57, 10.0], weights: [1.0, 1.0, 1.0, 0.1] })),
        ("collision_barrier", single(CollisionBarrier { own: (0, 1), other: (4, 5), min_distance: 0.2 })),
        (
            "speed_heading_barrier",
            single(SpeedHeadingBarrier {
                speed: 3,
                heading: 2,
                max_speed: 35.0,
                max_heading_deviation: std::f64::consts::FRAC_PI_3,
                road_heading: std::f64::consts::FRAC_PI_2,
            }),
        ),
        ("lane_barrier_road", single(LaneBoundaryBarrier { position: (0, 1), profile: Arc::new(road.profile(Lane::Road)) })),
        ("lane_barrier_merge", single(LaneBoundaryBarrier { position: (4, 5), profile: Arc::new(merge.profile(Lane::Road)) })),
        ("center_line", single(CenterLineGaussian { position: (4, 5), center_x: 0.0, covariance: (0.5, 1.0) })),
    ];
    for (label, cost) in &terms {
        for_points(3, |r| {
            let mut x = road_state(r);
            // merging road narrows to ±1.25 past the taper
            x[4] = x[4].clamp(-1.2, 1.2);
            x
        }, |x, u| check_cost(label, cost, x, u));
    }
}

pub fn preset_costs_match_finite_differences() {
    for name in ["lq_shepherd_sheep", "nonlq_shepherd_sheep"] {
        let s = scenarios::build(name, &[]).unwrap();
        for (i, cost) in s.game.costs.iter().enumerate() {
            for_points(4 + i as u64, |r| DVector::from_fn(8, |_, _| r.random_range(-4.5..4.5)), |x, u| {
                check_cost(&format!("{name}/{i}"), cost.as_ref(), x, u)
            });
        }
    }
    let s = scenarios::build("passing", &[]).unwrap();
    for (i, cost) in s.game.costs.iter().enumerate() {
        for_points(6 + i as u64, road_state, |x, u| check_cost(&format!("passing/{i}"), cost.as_ref(), x, u));
    }
}

pub fn unicycle_jacobians_match_finite_differences() {
    let model = JointModel::unicycles(0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..POINTS {
        let x = DVector::from_fn(8, |_, _| rng.random_range(-5.0..5.0));
        let u = controls(&mut rng);
        let analytic = model.linearize(&x, &u[0], &u[1], 0).unwrap();
        let fd = finite_difference_jacobians(&model, &x, &u[0], &u[1], 0, 1e-6);
        assert!(rel_err(&analytic.a, &fd.a) < 1e-5, "A mismatch at {x}");
        for a in 0..2 {
            assert!(rel_err(&analytic.b[a], &fd.b[a]) < 1e-5, "B{a} mismatch");
        }
    }
}
