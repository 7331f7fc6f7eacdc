//! Scenario presets as plain configuration: list them, override keys, and
//! print the resolved TOML that a run would record.
//!
//! cargo run --example scenario_config [-- <scenario> [key=value ...]]

use stackelberg::scenarios::{self, parse_override, PRESETS};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "passing".into());
    let overrides: Vec<_> = args.map(|a| parse_override(&a).unwrap()).collect();

    println!("presets: {}", PRESETS.join(", "));
    match scenarios::build(&name, &overrides) {
        Ok(s) => {
            let f = s.filter_config();
            println!("# {name}: {} steps of {} s, {} particles, measurement horizon {}", s.config.horizon, s.dt(),
                f.num_particles, f.horizon);
            print!("{}", toml::to_string(&s.config).unwrap());
        }
        Err(e) => eprintln!("error: {e}"),
    }
}
