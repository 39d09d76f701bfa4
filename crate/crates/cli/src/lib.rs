//! Batch front-end: configuration parsing, experiment orchestration, and
//! report emission for the spectral Kirchhoff toolkit.
//!
//! Outputs are deterministic: identical configurations produce byte-identical
//! CSV and JSON artifacts (fixed reduction orders, no wall-clock anywhere in
//! the data paths).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use kirchhoff_spectral::modulus::{ContinuityModulus, MollifierKernel};

use config::{parse_config, ResolvedRun, RunConfig};

pub const EXIT_USAGE: i32 = 2;

/// Caps the rayon worker count for per-mode checks and sweeps.
pub const THREADS_ENV: &str = "KIRCHHOFF_SPECTRAL_THREADS";

#[derive(Parser, Debug)]
#[command(
    name = "kirchhoff-spectral",
    version,
    about = "Simulation and certification toolkit for the nonlocal wave equation \
             u'' + m(|A^(1/2)u|^2) A u = 0 on a truncated eigenbasis"
)]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: the config's output.dir, then `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override run.rho_seed.
    #[arg(long = "seed-rho", global = true)]
    seed_rho: Option<f64>,

    /// Override spectrum.modes (presets only).
    #[arg(long, global = true)]
    modes: Option<usize>,

    /// Suppress progress lines (reports are still written).
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Integrate the Galerkin system and export the trajectory as CSV.
    Simulate,
    /// Split the data into two gap-certified components.
    Decompose,
    /// Replay the strictly hyperbolic estimate chain for both components.
    CertifyStrict {
        /// Reuse a decomposition certificate instead of re-decomposing.
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Replay the weakly hyperbolic estimate chain for both components.
    CertifyWeak {
        #[arg(long)]
        certificate: Option<PathBuf>,
    },
    /// Axiom, inequality, and mollifier-bound suite for a continuity modulus.
    CheckModulus {
        /// Modulus name (overrides the config's omega), e.g. `hoelder:0.5`.
        #[arg(long)]
        omega: Option<String>,
    },
    /// Weighted-norm and membership reports for the configured data.
    Norms,
    /// End to end: decompose, simulate both components, certify both.
    Demo,
}

/// Entry point shared by the binary and the test harness. Returns the
/// process exit code: 0 all-pass, 1 reported violation, 2 usage error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version through the error path too
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    configure_threads();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                EXIT_USAGE
            } else {
                commands::EXIT_VIOLATION
            }
        }
    }
}

/// Marks failures that stem from the invocation or configuration rather
/// than from the mathematics; displays as the wrapped cause chain.
#[derive(Debug)]
struct UsageError(anyhow::Error);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: anyhow::Error) -> anyhow::Error {
    anyhow::Error::new(UsageError(e))
}

fn configure_threads() {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                // Ignore the error if a global pool already exists (repeat
                // calls within one process).
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let needs_full_config = !matches!(cli.command, Command::CheckModulus { .. });
    let config = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .map_err(usage)?;
            Some(parse_config(&text).map_err(usage)?)
        }
        None => None,
    };
    let config = match (config, needs_full_config) {
        (Some(c), _) => Some(c),
        (None, true) => return Err(usage(anyhow!("--config PATH is required"))),
        (None, false) => None,
    };

    match &cli.command {
        Command::CheckModulus { omega } => {
            let config = config.unwrap_or_else(minimal_config);
            let resolved_omega = match omega {
                Some(name) => ContinuityModulus::parse(name)
                    .map_err(|e| usage(anyhow!("--omega: {e}")))?,
                None => {
                    let name = config
                        .omega
                        .clone()
                        .ok_or_else(|| usage(anyhow!("give --omega or set omega in the config")))?;
                    ContinuityModulus::parse(&name).map_err(|e| usage(anyhow!("/omega: {e}")))?
                }
            };
            let kernel = MollifierKernel::parse(&config.run.kernel)
                .map_err(|e| usage(anyhow!("/run/kernel: {e}")))?;
            let out = output_dir(cli, &config)?;
            commands::check_modulus(&resolved_omega, &kernel, &config, &out, cli.quiet)
        }
        other => {
            let mut config = config.expect("checked above");
            if let Some(seed) = cli.seed_rho {
                config.run.rho_seed = seed;
            }
            if let Some(modes) = cli.modes {
                config.spectrum.modes = Some(modes);
                if config.spectrum.lambdas.is_some() {
                    return Err(usage(anyhow!(
                        "--modes conflicts with an explicit spectrum.lambdas list"
                    )));
                }
            }
            let out = output_dir(cli, &config)?;
            let resolved: ResolvedRun = config.resolve().map_err(usage)?;
            match other {
                Command::Simulate => commands::simulate(&resolved, &out, cli.quiet),
                Command::Decompose => commands::decompose_cmd(&resolved, &out, cli.quiet),
                Command::CertifyStrict { certificate } => commands::certify_cmd(
                    &resolved,
                    true,
                    certificate.as_deref(),
                    &out,
                    cli.quiet,
                ),
                Command::CertifyWeak { certificate } => commands::certify_cmd(
                    &resolved,
                    false,
                    certificate.as_deref(),
                    &out,
                    cli.quiet,
                ),
                Command::Norms => commands::norms_cmd(&resolved, &out, cli.quiet),
                Command::Demo => commands::demo(&resolved, &out, cli.quiet),
                Command::CheckModulus { .. } => unreachable!(),
            }
        }
    }
}

fn minimal_config() -> RunConfig {
    parse_config(r#"{"spectrum": {"modes": 4}}"#).expect("static minimal config")
}

fn output_dir(cli: &Cli, config: &RunConfig) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .or_else(|| config.output.dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))
        .map_err(usage)?;
    Ok(dir)
}
