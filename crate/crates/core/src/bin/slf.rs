//! Command-line front end: `slf run`, `slf verify`, `slf timing`, `slf show`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stackelberg::experiment::{
    self, default_budget, timing_report, verify_trace, ExperimentError, Mode, RunConfig, RunSummary, Table, TableKind,
};

/// Default root for run directories when `--out` is not given.
const OUT_ENV: &str = "SLF_OUT_DIR";

#[derive(Parser)]
#[command(name = "slf", version, about = "Feedback Stackelberg game solver and leadership filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a solve, filter or Monte Carlo experiment and write its artifacts.
    Run(RunArgs),
    /// Re-check a solve-mode trace: dynamics residual and equilibrium test.
    Verify {
        trace: PathBuf,
        #[arg(long)]
        scenario: String,
        /// Repetition to check (first one in the file by default).
        #[arg(long)]
        rep: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Per-iteration and per-filter-cycle wall times of summaries.
    Timing {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
    /// Print a scenario's resolved configuration as TOML.
    Show {
        scenario: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $SLF_OUT_DIR/<scenario>-<mode>-s<seed>, or runs/...].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// Exit 0 even if a solve does not converge.
    #[arg(long)]
    allow_nonconverged: bool,
    /// Scenario override, e.g. `--set filter.num_particles=20`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn run_config(args: &RunArgs) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => {
            let scenario = args
                .scenario
                .as_deref()
                .ok_or_else(|| ExperimentError::Config("scenario: required without --config".into()))?;
            RunConfig::new(scenario, args.mode.unwrap_or(Mode::Solve))
        }
    };
    if let Some(s) = &args.scenario {
        if cfg.resolved.is_some() && *s != cfg.scenario {
            return Err(ExperimentError::Config(format!("scenario: `{s}` conflicts with the resolved `{}`", cfg.scenario)));
        }
        cfg.scenario = s.clone();
    }
    cfg.mode = args.mode.unwrap_or(cfg.mode);
    cfg.reps = args.reps.unwrap_or(cfg.reps);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.workers = args.workers.unwrap_or(cfg.workers);
    cfg.allow_nonconverged |= args.allow_nonconverged;
    cfg.set.extend(args.set.iter().cloned());
    Ok(cfg)
}

fn default_out(cfg: &RunConfig) -> PathBuf {
    let root = std::env::var_os(OUT_ENV).map_or_else(|| PathBuf::from("runs"), PathBuf::from);
    root.join(format!("{}-{}-s{}", cfg.scenario, cfg.mode, cfg.seed))
}

fn run(args: RunArgs) -> Result<ExitCode, ExperimentError> {
    let cfg = run_config(&args)?;
    let out = args.out.clone().unwrap_or_else(|| default_out(&cfg));
    let outcome = experiment::run(&cfg, &out)?;
    let a = &outcome.summary.aggregates;
    println!(
        "{} {}: {} repetition(s), convergence rate {:.3}, mean iterations {:.1} (std {:.1})",
        cfg.scenario,
        cfg.mode,
        outcome.summary.repetitions.len(),
        a.convergence_rate,
        a.mean_iterations,
        a.std_iterations
    );
    if let Some(b1) = a.mean_leader_one {
        println!("mean b(H=1) {b1:.3}, mean b(H=2) {:.3}", 1.0 - b1);
    }
    if let Some(v) = &outcome.verify {
        println!("{v}");
    }
    println!("artifacts in {}", outcome.out_dir.display());
    Ok(ExitCode::from(outcome.status.exit_code() as u8))
}

fn verify(trace: &Path, scenario: &str, rep: Option<usize>, seed: u64, set: Vec<String>) -> Result<ExitCode, ExperimentError> {
    let table = Table::read(trace, TableKind::Trace)?;
    let scenario = RunConfig { set, ..RunConfig::new(scenario, Mode::Verify) }.scenario()?;
    let report = verify_trace(&table, &scenario, rep, &default_budget(seed))?;
    println!("{report}");
    Ok(if report.passes() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Verify { trace, scenario, rep, seed, set } => verify(&trace, &scenario, rep, seed, set),
        Command::Timing { summaries } => summaries
            .iter()
            .map(|p| RunSummary::read(p))
            .collect::<Result<Vec<_>, _>>()
            .map(|s| {
                print!("{}", timing_report(&s));
                ExitCode::SUCCESS
            }),
        Command::Show { scenario, set } => RunConfig { set, ..RunConfig::new(&scenario, Mode::Solve) }
            .resolve()
            .map(|r| {
                print!("{}", toml::to_string(&r.resolved).expect("scenario configurations serialize"));
                ExitCode::SUCCESS
            }),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(1)
    })
}
