use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use guidelab_cli::commands;

#[derive(Parser)]
#[command(
    name = "guidelab",
    about = "Class-incremental continual learning with guided diffusion replay",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured scenario once per seed and write records.
    Run {
        /// Flat key = value config file.
        config: PathBuf,
    },
    /// Repeat the experiment along one axis, one summary row per value.
    Sweep {
        config: PathBuf,
        /// Axis to vary: scale, ddim_steps or interval.
        #[arg(long)]
        axis: String,
        /// Comma-separated values (interval accepts `inf`).
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// FGSM boundary statistics per guidance variant from a completed run.
    Probe {
        /// Output directory of a completed `run`.
        run_dir: PathBuf,
    },
    /// Dual-guidance demonstration (requires a [dual] config section).
    DemoDual {
        config: PathBuf,
    },
    /// Re-summarize the records in a run directory.
    Report {
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => commands::run::execute(&config).map(|_| ()),
        Command::Sweep {
            config,
            axis,
            values,
        } => commands::sweep::execute(&config, &axis, &values),
        Command::Probe { run_dir } => commands::probe::execute(&run_dir),
        Command::DemoDual { config } => commands::demo_dual::execute(&config),
        Command::Report { out_dir } => commands::report::execute(&out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
