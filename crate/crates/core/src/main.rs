use std::process::ExitCode;

use clap::Parser;
use induction_core::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("induction: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
