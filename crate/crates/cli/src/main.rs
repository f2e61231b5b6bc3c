use std::process::ExitCode;

use clap::Parser;
use mktsens::app::{configure_threads, execute, Cli};
use mktsens::error::exit;

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    let outcome = configure_threads().and_then(|()| execute(&cli));
    match outcome {
        Ok(lines) => {
            for line in lines {
                println!("{line}");
            }
            ExitCode::from(exit::OK as u8)
        }
        Err(e) => {
            eprintln!("mktsens: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
