use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::CONFIG_KEYS;

/// Moment propagation, Floquet stability and Monte Carlo checks for a
/// levitated oscillator under square-wave trap modulation with self-gravity.
#[derive(Parser)]
#[command(name = "sn-floquet", version, after_help = CONFIG_KEYS)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set schedule.alpha=1.911`. Repeatable;
    /// applied in order after the file is read.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Self-gravity frequency and segment timing as JSON.
    #[command(after_help = CONFIG_KEYS)]
    OmegaSn(Common),
    /// Second moments with and without self-gravity, envelopes and the
    /// validity check. Default sn_mode: exact.
    #[command(after_help = CONFIG_KEYS)]
    Simulate(Common),
    /// Stability classification over an (alpha, beta) grid.
    #[command(after_help = CONFIG_KEYS)]
    StabilityMap(Common),
    /// Envelope difference of the two runs. Default sn_mode: exact.
    #[command(after_help = CONFIG_KEYS)]
    DeltaEnvelope(Common),
    /// Envelope difference at the periodic fixed points, at one point or
    /// over run.scan. Default sn_mode: f_terms_neglected.
    #[command(after_help = CONFIG_KEYS)]
    AsymptoticDelta(Common),
    /// First time the mean position leaves the trap.
    #[command(after_help = CONFIG_KEYS)]
    TrapExit(Common),
    /// Monte Carlo ensemble against the moment equations. Default sn_mode:
    /// exact.
    #[command(after_help = CONFIG_KEYS)]
    McVerify(Common),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (common, run): (&Common, fn(&config::RunConfig) -> anyhow::Result<()>) = match &cli.command {
        Command::OmegaSn(c) => (c, commands::omega_sn),
        Command::Simulate(c) => (c, commands::simulate),
        Command::StabilityMap(c) => (c, commands::stability_map),
        Command::DeltaEnvelope(c) => (c, commands::delta_envelope),
        Command::AsymptoticDelta(c) => (c, commands::asymptotic_delta),
        Command::TrapExit(c) => (c, commands::trap_exit),
        Command::McVerify(c) => (c, commands::mc_verify),
    };
    if let Some(n) = common.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = config::load(common.config.as_deref(), &common.overrides).and_then(|cfg| run(&cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::Diverged>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
