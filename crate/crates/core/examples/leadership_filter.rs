//! Stackelberg leadership filter on the quadratic shepherd-and-sheep ground
//! truth (agent one leads), stepping measurements one at a time.
//!
//! cargo run --example leadership_filter [-- <steps> <seed>]

use stackelberg::filter::LeadershipFilter;
use stackelberg::scenarios::{self, measurements, simulate_measurements};
use stackelberg::Agent;

fn main() {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(100, |s| s.parse().expect("steps"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let scenario = scenarios::build("lq_shepherd_sheep", &[]).unwrap();
    let truth = scenario.ground_truth(None).unwrap();
    let cfg = scenario.filter_config();
    let observed = simulate_measurements(&truth.states[..steps], &cfg.measurement_noise, seed).unwrap();
    let ys = measurements(observed, &truth.controls);

    let mut filter = LeadershipFilter::new(&scenario.game, cfg, seed).unwrap();
    for (t, y) in ys.iter().enumerate() {
        filter.step(y).unwrap();
        if t % 10 == 0 {
            let b = &filter.trace().belief;
            let d = &filter.trace().steps[t];
            println!(
                "t = {:5.2}s  b(H=1) = {:.3}  b(H=2) = {:.3}  ESS = {:5.1}  games = {:3}{}",
                t as f64 * scenario.dt(),
                b.leader_one[t],
                b.leader_two[t],
                b.ess[t],
                d.games_solved,
                if d.resampled { "  resampled" } else { "" }
            );
        }
    }
    let b = &filter.trace().belief;
    println!("mean belief in the true leader {}: {:.3}", Agent::One, b.of(Agent::One).iter().sum::<f64>() / b.len() as f64);
}
