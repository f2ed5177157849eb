use clap::{Parser, Subcommand};
use cvae_cli::commands;
use std::path::PathBuf;
use std::process::ExitCode;

/// Train, evaluate and visualize conditional latent-variable models.
#[derive(Parser)]
#[command(name = "cvae", version, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write history.csv plus a checkpoint
    Train {
        /// Experiment config file
        #[arg(long)]
        config: PathBuf,
        /// Override a config value (repeatable)
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// Compute the configured metrics for a trained checkpoint
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint prefix; defaults to <output-dir>/checkpoint
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// Sample targets from a trained checkpoint into a CSV
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
    },
    /// Render a CSV report as a deterministic SVG figure
    Plot {
        /// Figure kind: scatter, line, box or latent-field
        #[arg(long)]
        kind: String,
        /// Input CSV (repeat for box plots)
        #[arg(long)]
        input: Vec<PathBuf>,
        /// Output SVG path
        #[arg(long)]
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1, // bad invocations are user errors
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train { config, set } => commands::cmd_train(config, set),
        Command::Eval { config, checkpoint, set } => {
            commands::cmd_eval(config, checkpoint.as_deref(), set)
        }
        Command::Generate { config, checkpoint, set } => {
            commands::cmd_generate(config, checkpoint.as_deref(), set)
        }
        Command::Plot { kind, input, output } => commands::cmd_plot(kind, input, output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
