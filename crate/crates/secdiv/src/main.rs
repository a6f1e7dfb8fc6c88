mod args;
mod commands;
mod report;
mod store;
mod table;

use std::process::ExitCode;

use clap::Parser;
use thiserror::Error;

use args::{Cli, Command};

#[derive(Debug, Error)]
pub enum Failure {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Usage(String),
    #[error("unsatisfiable: {0}")]
    Unsat(String),
    #[error("timeout: {0}")]
    Timeout(String),
    #[error("oracle failure: {0}")]
    Oracle(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 1,
            Failure::Usage(_) => 2,
            Failure::Unsat(_) => 3,
            Failure::Timeout(_) => 4,
            Failure::Oracle(_) => 5,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Compile(c) => commands::compile(c),
        Command::Diversify(c) => commands::diversify_cmd(c),
        Command::Verify(c) => commands::verify_cmd(c),
        Command::Gadgets(c) => commands::gadgets_cmd(c),
        Command::Report(r) => report::report(r),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
