use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use osrkit_cli::{divide, report, run, CliError};

#[derive(Parser)]
#[command(
    name = "osrkit",
    about = "Open set recognition experiment runner",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate problem configurations and write them as a division file.
    Divide {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Output division file (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and score every configuration × fold cell.
    Run {
        /// Experiment configuration (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Division file produced by `divide`.
        #[arg(long)]
        division: PathBuf,
        /// Results CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write final-epoch confusion matrices (JSON).
        #[arg(long)]
        conf_out: Option<PathBuf>,
        /// Run cells on this many worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Summarize a results CSV and emit plot-ready epoch series.
    Report {
        /// Results CSV produced by `run`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Long-format output CSV; defaults to `<input>.report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome: Result<ExitCode, CliError> = match cli.command {
        Command::Divide { config, out } => divide::cmd_divide(&config, &out).map(|_| ExitCode::SUCCESS),
        Command::Run {
            config,
            division,
            out,
            conf_out,
            jobs,
        } => run::cmd_run(&config, &division, &out, conf_out.as_deref(), jobs).map(|summary| {
            eprintln!(
                "{} rows from {} cells written",
                summary.rows_written, summary.cells
            );
            if summary.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for failure in &summary.failures {
                    eprintln!(
                        "failed: config={} fold={}: {}",
                        failure.config_id, failure.fold, failure.message
                    );
                }
                ExitCode::from(2)
            }
        }),
        Command::Report { input, out } => {
            report::cmd_report(&input, out.as_deref()).map(|_| ExitCode::SUCCESS)
        }
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {}", err);
            ExitCode::from(err.exit_code())
        }
    }
}
