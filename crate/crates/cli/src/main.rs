use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    match ips_cli::run(ips_cli::Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
