use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use qpa_core::experiments::{self, ExperimentConfig, Subcommand};
use qpa_core::QpaError;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Imaging,
    ChannelScaling,
    PumpSweep,
    Beamwidth,
    Fov,
    Cluster,
    Calibrate,
    LossBudget,
    SncCurve,
}

impl From<Command> for Subcommand {
    fn from(c: Command) -> Self {
        match c {
            Command::Imaging => Subcommand::Imaging,
            Command::ChannelScaling => Subcommand::ChannelScaling,
            Command::PumpSweep => Subcommand::PumpSweep,
            Command::Beamwidth => Subcommand::Beamwidth,
            Command::Fov => Subcommand::Fov,
            Command::Cluster => Subcommand::Cluster,
            Command::Calibrate => Subcommand::Calibrate,
            Command::LossBudget => Subcommand::LossBudget,
            Command::SncCurve => Subcommand::SncCurve,
        }
    }
}

/// Seeded experiment runs of the quantum phased array simulator. Each run
/// writes CSV artifacts and the resolved configuration to the output
/// directory.
#[derive(Debug, Parser)]
#[command(name = "qpa", version)]
struct Cli {
    command: Command,

    /// TOML experiment configuration; defaults apply to anything omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    seed: Option<u64>,

    /// Output directory (overrides `output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Dotted override such as `beam.diameter_um=150`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

fn exit_code(err: &QpaError) -> u8 {
    match err {
        QpaError::Numerical(_) => 3,
        _ => 2,
    }
}

fn run(cli: &Cli) -> Result<(), QpaError> {
    let mut overrides = cli.set.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("master_seed={seed}"));
    }
    if let Some(out) = &cli.out {
        let quoted = toml::Value::String(out.display().to_string()).to_string();
        overrides.push(format!("output_dir={quoted}"));
    }
    let config = ExperimentConfig::load(cli.config.as_deref(), &overrides)?;
    if cli.print_config {
        print!("{}", config.to_toml());
        return Ok(());
    }
    for path in experiments::run(cli.command.into(), &config)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpa: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
