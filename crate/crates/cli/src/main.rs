//! `delaycal` command-line front end.
//!
//! Exit codes: 0 success, 1 runtime or numerical failure, 2 usage or
//! configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use delaycal::identifiability::{
    construct_pair_lagging, construct_pair_leading, simulate_pair, verify_pair, BoundedControl,
    PairInputs,
};
use delaycal::montecarlo::{run_batch, run_batch_with_threads, run_trial, ExperimentConfig};
use delaycal::output;
use delaycal::trajectory::{Preset, TrajectorySpec};
use delaycal::{consistency, Error};

const THREADS_ENV: &str = "DELAYCAL_THREADS";

#[derive(Parser)]
#[command(name = "delaycal", version, about = "Time-delay estimation experiments for a delayed single integrator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one trial and write its per-step trace and plot.
    Simulate {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Trial index within the seeded stream.
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Run a Monte Carlo batch and write summary tables, per-trial data and a plot.
    Montecarlo {
        #[command(flatten)]
        exp: ExperimentArgs,
    },
    /// Construct and verify a pair of indistinguishable delays.
    Identifiability(IdentArgs),
    /// Recompute summaries and plots from a stored batch directory.
    Report {
        /// Directory written by `montecarlo`.
        batch_dir: PathBuf,
        /// Where to write the regenerated files (default: the batch directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; absent fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of Monte Carlo trials.
    #[arg(long)]
    trials: Option<usize>,
    /// Trajectory preset.
    #[arg(long, value_parser = ["traj1", "traj2"])]
    traj: Option<String>,
    /// Override a config field, e.g. `--set delay.value=-0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct IdentArgs {
    /// Delay of the first system (s); its sign selects the branch.
    #[arg(long, allow_hyphen_values = true)]
    tau: f64,
    /// Delay of the second system (s): same sign, at least as large in magnitude.
    #[arg(long = "tau-prime", allow_hyphen_values = true)]
    tau_prime: f64,
    /// Common initial state x(0).
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    x0: f64,
    /// Values of the control that links the anchor and x(0), spread evenly over its span.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "0.6,-0.3,0.9")]
    driving: Vec<f64>,
    /// Values of the remaining free control, spread evenly over its span.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.8,0.4")]
    free: Vec<f64>,
    /// Sampling step of the written CSV (s).
    #[arg(long, default_value_t = 1e-3)]
    csv_step: f64,
    /// Grid step used for verification (s).
    #[arg(long, default_value_t = 1e-4)]
    grid_step: f64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) | Error::Construction(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(args: &ExperimentArgs) -> CliResult<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            ExperimentConfig::from_json(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(n) = args.trials {
        cfg.n_trials = n;
    }
    if let Some(name) = &args.traj {
        cfg.trajectory = TrajectorySpec::Preset(Preset::from_name(name)?);
    }
    for item in &args.overrides {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        cfg = cfg.with_override(key.trim(), value.trim())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .map(Some)
            .ok_or_else(|| Failure::Usage(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))),
        _ => Ok(None),
    }
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn simulate(exp: &ExperimentArgs, trial: usize) -> CliResult<()> {
    let cfg = load_config(exp)?;
    let trace = run_trial(&cfg, trial);
    let paths = vec![
        output::write_file(&exp.out, "trace.csv", &output::trace_csv(&trace))?,
        output::write_file(&exp.out, "trace.svg", &output::trace_svg(&trace))?,
    ];
    print_written(&paths);
    if let Some(f) = &trace.failure {
        eprintln!("trial {trial} stopped early: {f}");
    }
    Ok(())
}

fn print_summary(stats: &consistency::BatchStats) {
    println!(
        "{} trials, {} excluded; 95% ANEES interval [{:.4}, {:.4}]",
        stats.n_trials,
        stats.n_excluded,
        stats.steps.first().map_or(f64::NAN, |s| s.anees_lo),
        stats.steps.first().map_or(f64::NAN, |s| s.anees_hi),
    );
    println!("{:>6} {:>12} {:>12} {:>10} {:>10}", "step", "rms pos (m)", "rms dly (ms)", "ANEES", "3sig dly");
    for &k in &output::SUMMARY_STEPS {
        if let Some(s) = stats.at(k) {
            println!(
                "{k:>6} {:>12.4} {:>12.2} {:>10.3} {:>10.3}",
                s.rms_position, s.rms_delay_ms, s.anees, s.containment_delay
            );
        }
    }
}

fn montecarlo(exp: &ExperimentArgs) -> CliResult<()> {
    let cfg = load_config(exp)?;
    let result = match thread_cap()? {
        Some(n) => run_batch_with_threads(&cfg, n)?,
        None => run_batch(&cfg)?,
    };
    let paths = output::write_batch(&exp.out, &result)?;
    print_summary(&result.stats);
    println!("backward-time events: {}", result.backward_time_events());
    print_written(&paths);
    Ok(())
}

fn identifiability(args: &IdentArgs) -> CliResult<()> {
    let (tau, tau_prime) = (args.tau, args.tau_prime);
    if tau == 0.0 || tau.signum() != tau_prime.signum() {
        return Err(Failure::Usage(format!(
            "tau and tau-prime must be nonzero with the same sign, got {tau} and {tau_prime}"
        )));
    }
    let mag = tau.abs();
    let (driving_span, free_span) = if tau < 0.0 {
        ((tau, 0.0), (0.0, mag))
    } else {
        ((0.0, tau), (tau, 2.0 * tau))
    };
    let inputs = PairInputs {
        anchor: None,
        driving: Some(BoundedControl::uniform(driving_span.0, driving_span.1, &args.driving)?),
        free: Some(BoundedControl::uniform(free_span.0, free_span.1, &args.free)?),
    };
    let pair = if tau < 0.0 {
        construct_pair_lagging(tau, tau_prime, args.x0, &inputs)?
    } else {
        construct_pair_leading(tau, tau_prime, args.x0, &inputs)?
    };
    let max_diff = verify_pair(&pair, args.grid_step)?;

    let lo = pair.u.start().min(pair.u_prime.start()).min(0.0);
    let hi = pair.u.end().max(pair.u_prime.end()).max(pair.horizon);
    let samples = simulate_pair(&pair, lo, hi, args.csv_step)?;
    let summary = serde_json::json!({
        "tau": pair.tau,
        "tau_prime": pair.tau_prime,
        "x0": pair.x0,
        "anchor": pair.anchor,
        "horizon": pair.horizon,
        "grid_step": args.grid_step,
        "max_abs_output_difference": max_diff,
    });
    let paths = vec![
        output::write_file(&args.out, "identifiability.csv", &output::identifiability_csv(&samples))?,
        output::write_file(&args.out, "identifiability.svg", &output::identifiability_svg(&pair, &samples))?,
        output::write_file(
            &args.out,
            "identifiability.json",
            &(serde_json::to_string_pretty(&summary).expect("json value serialises") + "\n"),
        )?,
    ];
    println!("max |y - y'| on [0, {}] = {max_diff:e}", pair.horizon);
    print_written(&paths);
    Ok(())
}

fn report(batch_dir: &Path, out: Option<&Path>) -> CliResult<()> {
    let traces = output::read_batch_traces(batch_dir).map_err(|e| Failure::Usage(e.to_string()))?;
    let stats = consistency::batch_stats(&traces)?;
    let paths = output::write_summaries(out.unwrap_or(batch_dir), &stats)?;
    print_summary(&stats);
    print_written(&paths);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate { exp, trial } => simulate(exp, *trial),
        Command::Montecarlo { exp } => montecarlo(exp),
        Command::Identifiability(args) => identifiability(args),
        Command::Report { batch_dir, out } => report(batch_dir, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
