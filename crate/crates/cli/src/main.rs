use std::process::ExitCode;

use clap::Parser;
use iqa_cli::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match iqa_cli::run(&cli) {
        Ok(outcome) if outcome.success() => ExitCode::SUCCESS,
        Ok(outcome) => {
            eprintln!("error: all {} inputs failed", outcome.failed);
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {}", iqa_cli::error_chain(&e));
            ExitCode::from(2)
        }
    }
}
