use std::process::ExitCode;

use clap::{Parser, Subcommand};
use memiss_cli::commands::{self, CheckArgs, FitArgs, SimulateArgs, StudyArgs};
use memiss_cli::CliResult;

/// Bayesian regression with measurement error and missing covariates.
#[derive(Debug, Parser)]
#[command(name = "memiss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit one model with one engine or both.
    Fit(FitArgs),
    /// Write simulated replicates as CSV.
    Simulate(SimulateArgs),
    /// Simulate, fit naive/corrected/best-case models and aggregate.
    Study(StudyArgs),
    /// Conjugate-oracle and cross-engine diagnostics.
    Check(CheckArgs),
}

fn run(cli: Cli) -> CliResult<String> {
    match cli.command {
        Command::Fit(a) => commands::fit(&a).map(|o| o.report),
        Command::Simulate(a) => {
            let paths = commands::simulate(&a)?;
            Ok(format!("wrote {} replicate(s) to {}\n", paths.len(), a.out.display()))
        }
        Command::Study(a) => commands::run_study_command(&a).map(|(_, report)| report),
        Command::Check(a) => commands::check(&a).map(|(_, report)| report),
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
    match run(cli) {
        Ok(report) => {
            print!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
