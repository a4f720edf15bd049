use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = sma_cli::Cli::parse();
    match sma_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
