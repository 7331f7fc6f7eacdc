//! Exact invariants of the leadership filter. Plain checks panic on a
//! violation; property bodies return a `TestCaseError`.

use nalgebra::DVector;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use stackelberg::filter::{
    effective_sample_size, leadership_belief, measurement_update, propagate, resample, run_filter, FilterTrace,
    LeadershipFilter, Measurement, Particle,
};
use stackelberg::scenarios::{self, measurements, simulate_measurements, Scenario};
use stackelberg::{Agent, FilterConfig, JointModel};

/// Quadratic shepherd game with a short measurement horizon: cheap solves.
pub fn small_setup(steps: usize, overrides: &[(&str, &str)]) -> (Scenario, FilterConfig, Vec<Measurement>) {
    let mut all = vec![("filter.horizon", "6"), ("filter.num_particles", "16")];
    all.extend_from_slice(overrides);
    let owned: Vec<(String, String)> = all.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let scenario = scenarios::build("lq_shepherd_sheep", &owned).unwrap();
    let truth = scenario.ground_truth(None).unwrap();
    let cfg = scenario.filter_config();
    let observed = simulate_measurements(&truth.states[..steps], &cfg.measurement_noise, 11).unwrap();
    (scenario.clone(), cfg, measurements(observed, &truth.controls))
}

pub fn particle(leader: Agent, weight: f64) -> Particle {
    let x = DVector::zeros(8);
    Particle { state: x.clone(), prev_state: x, leader, prev_leader: leader, weight }
}

pub fn every_step_keeps_normalization_count_and_complement() {
    let (scenario, cfg, ys) = small_setup(30, &[]);
    let n = cfg.num_particles;
    let mut filter = LeadershipFilter::new(&scenario.game, cfg, 5).unwrap();
    for (t, y) in ys.iter().enumerate() {
        filter.step(y).unwrap();
        let ps = filter.particles();
        assert_eq!(ps.len(), n, "particle count at step {t}");
        let total: f64 = ps.iter().map(|p| p.weight).sum();
        assert!((total - 1.0).abs() <= 1e-12, "weights sum to {total} at step {t}");
        let b = &filter.trace().belief;
        assert_eq!(b.leader_one[t] + b.leader_two[t], 1.0, "complement at step {t}");
        assert!((0.0..=1.0).contains(&b.leader_one[t]));
    }
    assert!(filter.trace().steps.iter().any(|d| d.resampled), "the run should exercise resampling");
}

pub fn no_switching_from_all_leader_one_keeps_certainty() {
    let (scenario, cfg, ys) = small_setup(25, &[("filter.p_trans", "0"), ("filter.prior_leader_one", "1")]);
    let trace = run_filter(&scenario.game, &ys, &cfg, 2, None).unwrap();
    assert!(trace.belief.leader_one.iter().all(|&b| b == 1.0), "{:?}", trace.belief.leader_one);
    assert!(trace.belief.leader_two.iter().all(|&b| b == 0.0));
}

pub fn enormous_measurement_noise_keeps_the_prior() {
    let (scenario, mut cfg, ys) = small_setup(25, &[("filter.p_trans", "0")]);
    // the observations keep their nominal noise; only the filter's Σ is inflated
    cfg.initial_spread = Some(cfg.measurement_noise.clone());
    cfg.measurement_noise = vec![1e12; 8];
    let trace = run_filter(&scenario.game, &ys, &cfg, 4, None).unwrap();
    for (t, b) in trace.belief.leader_one.iter().enumerate() {
        assert!((b - cfg.prior_leader_one).abs() <= 1e-6, "belief {b} at step {t}");
    }
}

pub fn identical_predictions_leave_the_prior_alone() {
    // both hypotheses predict the same measurement: the update carries no information
    let mut ps: Vec<Particle> = (0..40).map(|k| particle(Agent::BOTH[k % 2], 1.0 / 40.0)).collect();
    let prediction = DVector::from_element(8, 0.3);
    let refs = vec![Some(&prediction); 40];
    measurement_update(&mut ps, &refs, &DVector::zeros(8), &[5e-3; 8], None);
    assert_eq!(leadership_belief(&ps), (0.5, 0.5));
    assert!(ps.iter().all(|p| (p.weight - 1.0 / 40.0).abs() < 1e-15));
}

pub fn belief_series_does_not_depend_on_worker_count() {
    let (scenario, cfg, ys) = small_setup(25, &[]);
    let runs: Vec<FilterTrace> =
        [1, 2, 4].iter().map(|&w| run_filter(&scenario.game, &ys, &cfg, 9, Some(w)).unwrap()).collect();
    for r in &runs[1..] {
        assert_eq!(r.belief, runs[0].belief);
    }
    let again = run_filter(&scenario.game, &ys, &cfg, 9, None).unwrap();
    assert_eq!(again.belief, runs[0].belief);
    let other_seed = run_filter(&scenario.game, &ys, &cfg, 10, None).unwrap();
    assert_ne!(other_seed.belief, runs[0].belief);
}

pub fn markov_flip_rate_matches_p_trans() {
    let model = JointModel::double_integrators(0.02);
    let zero = [DVector::zeros(2), DVector::zeros(2)];
    let noise = vec![0.0; 8];
    let p = 0.02;
    // 100 particles over 100 steps
    let mut particles: Vec<Particle> = (0..100).map(|_| particle(Agent::One, 0.01)).collect();
    let mut flips = 0usize;
    for t in 0..100 {
        propagate(&mut particles, &zero, &model, &noise, p, 3, t);
        flips += particles.iter().filter(|q| q.leader != q.prev_leader).count();
    }
    let n = 10_000.0;
    let rate = flips as f64 / n;
    let se = (p * (1.0 - p) / n).sqrt();
    assert!((rate - p).abs() <= 3.0 * se, "flip rate {rate} vs {p} ± 3·{se}");
}

pub fn degenerate_switch_probabilities() {
    let model = JointModel::double_integrators(0.02);
    let zero = [DVector::zeros(2), DVector::zeros(2)];
    let noise = vec![1e-3; 8];
    let mut stay: Vec<Particle> = (0..50).map(|k| particle(Agent::BOTH[k % 2], 0.02)).collect();
    let mut flip = stay.clone();
    for t in 0..200 {
        propagate(&mut stay, &zero, &model, &noise, 0.0, 1, t);
        propagate(&mut flip, &zero, &model, &noise, 1.0, 1, t);
        assert!(stay.iter().all(|q| q.leader == q.prev_leader));
        assert!(flip.iter().all(|q| q.leader == q.prev_leader.other()));
        assert_eq!(stay.len(), 50);
    }
    assert!(stay.iter().enumerate().all(|(k, q)| q.leader == Agent::BOTH[k % 2]));
}

pub fn ess_formula_examples() {
    let uniform: Vec<Particle> = (0..50).map(|_| particle(Agent::One, 0.02)).collect();
    assert!((effective_sample_size(&uniform) - 50.0).abs() < 1e-9);
    let mut single: Vec<Particle> = (0..5).map(|_| particle(Agent::One, 0.0)).collect();
    single[2].weight = 1.0;
    assert_eq!(effective_sample_size(&single), 1.0);
    let half = [particle(Agent::One, 0.5), particle(Agent::Two, 0.5), particle(Agent::Two, 0.0)];
    assert_eq!(effective_sample_size(&half), 2.0);
}

pub fn weights(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.0f64, 1..max_len).prop_filter_map("needs positive mass", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|x| x / s).collect())
    })
}

pub fn ess_lies_between_one_and_n(w: &[f64]) -> Result<(), TestCaseError> {
    let ps: Vec<Particle> = w.iter().map(|&x| particle(Agent::One, x)).collect();
    let ess = effective_sample_size(&ps);
    let direct = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    prop_assert!((ess - direct).abs() <= 1e-9 * direct);
    prop_assert!(ess >= 1.0 - 1e-9 && ess <= w.len() as f64 + 1e-9);
    Ok(())
}

pub fn belief_halves_are_complementary(w: &[f64], leaders: &[bool]) -> Result<(), TestCaseError> {
    let ps: Vec<Particle> =
        w.iter().zip(leaders).map(|(&x, &one)| particle(if one { Agent::One } else { Agent::Two }, x)).collect();
    let (b1, b2) = leadership_belief(&ps);
    prop_assert_eq!(b1 + b2, 1.0);
    let direct: f64 = ps.iter().filter(|p| p.leader == Agent::One).map(|p| p.weight).sum();
    prop_assert!((b1 - direct).abs() <= 1e-12);
    Ok(())
}

pub fn systematic_resampling_copies_floor_or_ceil(w: &[f64], offset: f64) -> Result<(), TestCaseError> {
    let ps: Vec<Particle> = w
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let mut p = particle(Agent::One, x);
            p.state[0] = k as f64;
            p
        })
        .collect();
    let out = resample(&ps, offset);
    let n = ps.len();
    prop_assert_eq!(out.len(), n);
    for p in &out {
        prop_assert_eq!(p.weight, 1.0 / n as f64);
    }
    for (k, wk) in w.iter().enumerate() {
        let copies = out.iter().filter(|p| p.state[0] == k as f64).count() as f64;
        let expected = n as f64 * wk;
        prop_assert!(
            copies >= (expected - 1e-9).floor() && copies <= (expected + 1e-9).ceil(),
            "particle {} copied {} times for expected {}",
            k,
            copies,
            expected
        );
    }
    Ok(())
}

pub fn update_normalizes(w: &[f64], residuals: &[f64], failed: &[bool]) -> Result<(), TestCaseError> {
    let mut ps: Vec<Particle> = w.iter().map(|&x| particle(Agent::One, x)).collect();
    let observed = DVector::zeros(8);
    let expected: Vec<DVector<f64>> = residuals.iter().take(ps.len()).map(|&r| DVector::from_element(8, r)).collect();
    let refs: Vec<Option<&DVector<f64>>> = expected.iter().zip(failed).map(|(e, &f)| (!f).then_some(e)).collect();
    measurement_update(&mut ps, &refs, &observed, &[0.5; 8], None);
    let total: f64 = ps.iter().map(|p| p.weight).sum();
    prop_assert!((total - 1.0).abs() <= 1e-12);
    prop_assert!(ps.iter().all(|p| p.weight >= 0.0 && p.weight.is_finite()));
    Ok(())
}
