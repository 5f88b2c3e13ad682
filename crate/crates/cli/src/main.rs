//! `fundsep`: derived constants, portfolios and Monte Carlo experiments.
//!
//! Exit codes: 0 success, 1 parse or configuration error, 2 model assumption
//! violated, 3 a check failed (oracle tolerance or `--check` digest mismatch).

mod commands;
mod config;
mod output;

use clap::{Parser, Subcommand};
use config::{Config, Overrides};
use fundsep::{Error, Result};
use output::{Outcome, RunManifest};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "fundsep",
    version,
    about = "Long-horizon fund separation experiments"
)]
struct Cli {
    /// TOML file with [market], [model], [simulation] and [experiment] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    paths: Option<usize>,
    #[arg(long, global = true)]
    dt: Option<f64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Full budget (1e5 paths, dt 1e-3) unless paths or dt are set explicitly.
    #[arg(long, global = true)]
    expensive: bool,
    /// Recompute and compare against the recorded manifest instead of writing.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form constants, assumption flags and the eigen residual.
    Derive,
    /// Fund decomposition of the optimal portfolio.
    Portfolio {
        /// Static portfolio only, without Monte Carlo.
        #[arg(long = "static")]
        static_only: bool,
        /// `linear`, or `sqrt` for the 3/2 variant with √z-scaled returns.
        #[arg(long)]
        myopic_scaling: Option<String>,
    },
    /// State paths under a chosen measure.
    Simulate,
    /// Monte Carlo estimators against exact identities and closed forms.
    VerifyHs,
    /// Decay rate of the intertemporal weight.
    Rate,
    /// Dynamic versus static sensitivities over maturities.
    Sens,
    /// Steady-state filter on given or synthetic prices.
    Filter,
    /// Constants and static funds of every model.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Derive => "derive",
            Command::Portfolio { .. } => "portfolio",
            Command::Simulate => "simulate",
            Command::VerifyHs => "verify-hs",
            Command::Rate => "rate",
            Command::Sens => "sens",
            Command::Filter => "filter",
            Command::Report => "report",
        }
    }
}

/// Fails with a check error; mapped to exit code 3.
struct CheckFailed(String);

enum Failure {
    Lib(Error),
    Check(CheckFailed),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FUNDSEP_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::ConfigError(format!(
            "FUNDSEP_THREADS must be a positive integer, got `{v}`"
        ))
    })?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::ConfigError(e.to_string()))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: &Cli) -> std::result::Result<(), Failure> {
    init_threads()?;
    let mut overrides = Overrides {
        seed: cli.seed,
        paths: cli.paths,
        dt: cli.dt,
        expensive: cli.expensive,
        ..Overrides::default()
    };
    if let Command::Portfolio {
        static_only,
        myopic_scaling,
    } = &cli.command
    {
        overrides.static_only = *static_only;
        overrides.myopic_scaling = myopic_scaling.clone();
    }
    let cfg: Config = config::resolve(config::load(cli.config.as_deref())?, &overrides)?;
    let name = cli.command.name();
    let out: Outcome = match cli.command {
        Command::Derive => commands::derive(&cfg)?,
        Command::Portfolio { .. } => commands::portfolio(&cfg)?,
        Command::Simulate => commands::simulate_cmd(&cfg)?,
        Command::VerifyHs => commands::verify_hs(&cfg)?,
        Command::Rate => commands::rate(&cfg)?,
        Command::Sens => commands::sens(&cfg)?,
        Command::Filter => commands::filter(&cfg)?,
        Command::Report => commands::report(&cfg)?,
    };
    print!("{}", out.summary);
    let manifest = RunManifest::new(name, cfg.hash(name), cfg.simulation.seed, &out.files);
    let manifest_path = cli.out_dir.join(RunManifest::file_name(name));
    if cli.check {
        let recorded = RunManifest::read(&manifest_path)?;
        let diffs = manifest.compare(&recorded);
        if !diffs.is_empty() {
            return Err(Failure::Check(CheckFailed(diffs.join("; "))));
        }
        println!(
            "check: {} outputs match {}",
            manifest.outputs.len(),
            manifest_path.display()
        );
    } else {
        let mut files = out.files;
        files.push((RunManifest::file_name(name), manifest.to_bytes()));
        output::write_all(&cli.out_dir, &files)?;
        println!("wrote {} files to {}", files.len(), cli.out_dir.display());
    }
    if out.failed {
        return Err(Failure::Check(CheckFailed(format!(
            "{name}: one or more checks failed"
        ))));
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::AssumptionViolated(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Check(CheckFailed(msg))) => {
            eprintln!("check failed: {msg}");
            ExitCode::from(3)
        }
    }
}
