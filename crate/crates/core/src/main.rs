use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use variability::cli;

#[derive(Parser)]
#[command(
    name = "variability",
    version,
    about = "FaaS performance variability toolkit"
)]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a live campaign against HTTP endpoints.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        records: PathBuf,
    },
    /// Run a campaign against the simulator on a virtual clock.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Scenario JSON; defaults to the bundled `paper-gcf.json`.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Virtual seconds per real second; unset runs as fast as possible.
        #[arg(long)]
        accel: Option<f64>,
    },
    /// Analyze a records file and write a report bundle.
    Analyze {
        #[arg(long)]
        records: PathBuf,
        #[arg(long, default_value = "CET")]
        tz: String,
        /// Output directory; defaults to `<records>.report`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional analysis settings JSON.
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VARIABILITY_LOG", "info"))
        .init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                cli::EXIT_USAGE as u8
            } else {
                0
            });
        }
    };
    let result = match args.command {
        Command::Run { config, records } => cli::cmd_run(&config, &records),
        Command::Simulate {
            config,
            scenario,
            records,
            seed,
            accel,
        } => cli::cmd_simulate(&config, scenario.as_deref(), &records, accel, seed),
        Command::Analyze {
            records,
            tz,
            out,
            config,
        } => {
            let out = out.unwrap_or_else(|| cli::default_out_dir(&records));
            cli::cmd_analyze(&records, &tz, &out, config.as_deref())
        }
    };
    ExitCode::from(cli::exit_code(result) as u8)
}
