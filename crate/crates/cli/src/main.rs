use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use edgeswitch_cli::commands::{
    cmd_calibrate, cmd_cost, cmd_evaluate, cmd_generate, cmd_serve, cmd_train,
};
use edgeswitch_cli::config::RunConfig;

/// Hybrid edge-cloud switcher pipeline: generate distillation data, train
/// and calibrate the alignment switcher, evaluate routing approaches, and
/// serve.
#[derive(Parser)]
#[command(name = "edgeswitch", version, about)]
struct Cli {
    /// Run configuration file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the configuration's master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the configuration's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run both teachers over the manifest and write DMD files per split.
    Generate,
    /// Train the switcher on the generated train/validation data.
    Train,
    /// Sweep deferral fractions and write the policy and curve.
    Calibrate,
    /// Compare small-only, large-only, uncertainty, and routed approaches.
    Evaluate,
    /// Emit the modeled cost sweep.
    Cost,
    /// Run the routing service.
    Serve,
}

fn run() -> Result<(), (String, i32)> {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err)
            if matches!(
                err.kind(),
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
            ) =>
        {
            print!("{err}");
            return Ok(());
        }
        Err(err) => return Err((err.to_string(), 1)),
    };

    let config_path = cli
        .config
        .ok_or_else(|| ("--config <path> is required".to_string(), 1))?;
    let mut config =
        RunConfig::load(&config_path).map_err(|e| (e.to_string(), e.exit_kind().code()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = cli.out {
        config.out_dir = out;
    }

    let result = match cli.command {
        Command::Generate => cmd_generate(&config),
        Command::Train => cmd_train(&config),
        Command::Calibrate => cmd_calibrate(&config),
        Command::Evaluate => cmd_evaluate(&config).map(|_| ()),
        Command::Cost => cmd_cost(&config),
        Command::Serve => cmd_serve(&config),
    };
    result.map_err(|e| (e.to_string(), e.exit_kind().code()))
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((message, code)) => {
            eprintln!("error: {message}");
            ExitCode::from(code as u8)
        }
    }
}
