//! `lpvsd` — synthesize and validate delay-aware sampled-data controllers
//! for the air-fuel-ratio benchmark.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lpvsd::engine::SamplingConvention;
use lpvsd::Error;
use lpvsd_cli::commands::{cmd_compare, cmd_simulate, cmd_synthesize, cmd_validate, Overrides};
use lpvsd_cli::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "lpvsd",
    version,
    about = "Delay-aware gain-scheduled controller synthesis and closed-loop validation",
    long_about = "Synthesize a delay-dependent, sampled-data, gain-scheduled output-feedback \
controller for the spark-ignition air-fuel-ratio benchmark, then exercise it in a hybrid \
closed-loop simulator.\n\n\
Configuration comes from a JSON document (--config); omitted fields take the benchmark \
defaults, and an absent file means the full default configuration. Flags beat the \
LPVSD_OUT, LPVSD_SCENARIO, LPVSD_SEED, LPVSD_DENSE_GRID, and LPVSD_CONVENTION environment \
variables, which in turn beat the file.\n\n\
Exit codes: 0 success, 1 usage or configuration error, 2 synthesis infeasible (or a \
certificate failing verification), 3 closed loop halted."
)]
struct Cli {
    /// Path to a JSON run configuration (defaults to the built-in benchmark).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory for all artifacts (overrides the configuration).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Run a single named scenario instead of the configured list.
    #[arg(long, global = true, value_name = "NAME")]
    scenario: Option<String>,

    /// Scenario seed recorded in the run.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,

    /// Per-axis point count for dense verification grids.
    #[arg(long, global = true, value_name = "N")]
    dense_grid: Option<usize>,

    /// Sampling-period convention for the engine model.
    #[arg(long, global = true, value_enum, value_name = "NAME")]
    convention: Option<ConventionArg>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid the scheduling box, sweep the scalarization weights, and write
    /// the winning certificate with its margin report.
    Synthesize,
    /// Run the certified controller through the configured scenarios.
    Simulate,
    /// Run the certified controller against a delay-unaware baseline.
    Compare,
    /// Re-check a stored certificate: dense-grid margins and the
    /// controller-formula round trip.
    Validate,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConventionArg {
    /// Sampling period 4π/ω_e (two crank revolutions in rad/s).
    #[value(name = "literal-4pi")]
    Literal4Pi,
    /// Sampling period 120/N for speed N in rpm.
    #[value(name = "physical-120")]
    Physical120,
}

impl From<ConventionArg> for SamplingConvention {
    fn from(arg: ConventionArg) -> Self {
        match arg {
            ConventionArg::Literal4Pi => SamplingConvention::Literal4Pi,
            ConventionArg::Physical120 => SamplingConvention::Physical120,
        }
    }
}

fn run(cli: Cli) -> lpvsd::Result<i32> {
    let cfg = match &cli.config {
        Some(path) => lpvsd_cli::config::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        out: cli.out,
        scenario: cli.scenario,
        seed: cli.seed,
        dense_grid: cli.dense_grid,
        convention: cli.convention.map(SamplingConvention::from),
    }
    .with_env()?;
    match cli.command {
        Command::Synthesize => cmd_synthesize(&cfg, &overrides),
        Command::Simulate => cmd_simulate(&cfg, &overrides),
        Command::Compare => cmd_compare(&cfg, &overrides),
        Command::Validate => cmd_validate(&cfg, &overrides),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::InfeasibleEverywhere(_) => 2,
                Error::SimHalt(_) => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
