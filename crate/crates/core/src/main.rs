use std::path::PathBuf;
use std::process::ExitCode;

use breather_squeeze::cli::{self, CliError, RunConfig, WORKERS_ENV};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "breather-squeeze", version, about = "Squeezing and photon-number correlations of NLSE soliton bound states")]
struct Args {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; defaults are used for absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Treat window overflow as an error.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Classical field |U(z, t)| on the configured distances.
    Classical,
    /// Optimum homodyne squeezing ratio versus distance.
    Squeeze,
    /// Photon-number correlation matrices over frequency slots.
    Spectrum,
    /// Oracle checks of propagation, adjoint and Monte-Carlo paths.
    Validate,
    /// Squeezing curves over a list of (eta1, eta2) pairs.
    Sweep,
}

fn resolve(args: &Args) -> Result<RunConfig, CliError> {
    let mut config = cli::load_config(args.config.as_deref())?;
    if let Some(out) = &args.out {
        config.output_dir = out.display().to_string();
    }
    config.strict |= args.strict;
    Ok(config)
}

fn configure_workers() -> Result<(), CliError> {
    let Ok(value) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("{WORKERS_ENV} must be a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn run(args: &Args) -> Result<(), CliError> {
    configure_workers()?;
    let config = resolve(args)?;
    match args.command {
        Command::Classical => cli::cmd_classical(&config),
        Command::Squeeze => cli::cmd_squeeze(&config),
        Command::Spectrum => cli::cmd_spectrum(&config),
        Command::Validate => cli::cmd_validate(&config).map(|_| ()),
        Command::Sweep => cli::cmd_sweep(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
