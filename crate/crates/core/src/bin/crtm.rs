use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crtm_core::config::ExperimentConfig;
use crtm_core::experiments::{cmd_asymptotic, cmd_converge, cmd_evolve, cmd_mc_compare};

/// Confined run-and-tumble laboratory: kinetic solver, particle engine,
/// and diagnostics.
#[derive(Parser)]
#[command(name = "crtm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV artifacts (overrides `output.dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Particle-engine seed (overrides `mc.seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-key config overrides, e.g. `--set solver.dt=0.0005`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Time-evolve the kinetic model, writing snapshots and diagnostics.
    Evolve(CommonArgs),
    /// Grid-refinement error table against a fine reference run.
    Converge(CommonArgs),
    /// Run solver and particle engine side by side and compare densities.
    McCompare(CommonArgs),
    /// Long-time bulk/wall mass ratio over a descending epsilon ladder.
    Asymptotic(CommonArgs),
}

fn load_config(args: &CommonArgs) -> Result<ExperimentConfig, crtm_core::Error> {
    let text = std::fs::read_to_string(&args.config).map_err(|source| {
        crtm_core::config::ConfigError::Read {
            path: args.config.display().to_string(),
            source,
        }
    })?;
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("mc.seed={seed}"));
    }
    Ok(ExperimentConfig::from_toml_with_overrides(&text, &overrides)?)
}

fn dispatch(cmd: &Command) -> Result<Vec<PathBuf>, crtm_core::Error> {
    let args = match cmd {
        Command::Evolve(a)
        | Command::Converge(a)
        | Command::McCompare(a)
        | Command::Asymptotic(a) => a,
    };
    let config = load_config(args)?;
    let out_dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    match cmd {
        Command::Evolve(_) => cmd_evolve(&config, &out_dir).map(|o| o.files),
        Command::Converge(_) => cmd_converge(&config, &out_dir).map(|o| o.files),
        Command::McCompare(_) => cmd_mc_compare(&config, &out_dir).map(|o| o.files),
        Command::Asymptotic(_) => cmd_asymptotic(&config, &out_dir).map(|o| o.files),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
