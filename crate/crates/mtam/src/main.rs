use std::io;
use std::process::ExitCode;

use clap::Parser;

use mtam::cli::Cli;
use mtam::commands;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(&cli, &mut io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
