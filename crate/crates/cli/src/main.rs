mod commands;
mod config;
mod error;
mod output;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use taskcode::sweep::Family;
use taskcode::CovarianceMethod;

use crate::error::{CliError, CliResult};
use crate::output::{OutputDir, Provenance};

#[derive(Parser, Debug)]
#[command(name = "taskcode", version, about = "Population codes for estimation versus control")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Backward Riccati solution and noise integral on the time grid.
    Riccati(Common),
    /// Closed-loop episode: state, spikes, point-process filter, CE control.
    FilterDemo(Common),
    /// Tuning-width sweep.
    SweepWidth(Common),
    /// Anisotropy sweep with the Kalman baseline.
    SweepAniso(Common),
    /// Mutual information over time or over the encoder grid.
    Mi(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides `run.method`.
    #[arg(long, value_parser = parse_method)]
    method: Option<CovarianceMethod>,
    /// Also write an SVG of the sweep curves.
    #[arg(long)]
    plot: bool,
    /// Record wall-clock start and end times in the manifest.
    #[arg(long)]
    record_times: bool,
}

fn parse_method(s: &str) -> Result<CovarianceMethod, String> {
    s.parse().map_err(|e: taskcode::Error| e.to_string())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn run(
    name: &'static str,
    args: &Common,
    body: impl FnOnce(&taskcode::SweepConfig, &mut OutputDir) -> CliResult<()>,
) -> CliResult<()> {
    let started = unix_now();
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    if let Some(method) = args.method {
        cfg.run.method = method;
    }
    cfg.validate()?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    let canonical = config::canonical(&cfg)?;
    let provenance = Provenance {
        command: name,
        config_sha256: config::sha256_hex(&canonical),
        seed: cfg.run.seed,
        canonical_config: canonical,
    };
    log::info!("{name}: config {}", provenance.config_sha256);
    let mut out = OutputDir::create(&args.out, provenance)?;
    let outcome = body(&cfg, &mut out);
    // Partial sweeps still get a manifest for the files they wrote.
    if matches!(outcome, Ok(()) | Err(CliError::Partial { .. })) {
        let times = args.record_times.then(|| (started, unix_now()));
        out.finish(times)?;
    }
    outcome
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Riccati(a) => run("riccati", a, commands::riccati),
        Command::FilterDemo(a) => run("filter-demo", a, commands::filter_demo),
        Command::SweepWidth(a) => run("sweep-width", a, |c, o| commands::sweep(c, Family::Width, a.plot, o)),
        Command::SweepAniso(a) => run("sweep-aniso", a, |c, o| commands::sweep(c, Family::Anisotropy, a.plot, o)),
        Command::Mi(a) => run("mi", a, commands::mi),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
