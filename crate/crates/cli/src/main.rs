//! `choice-confound` command-line interface.
//!
//! Exit codes: 0 success, 2 usage error, 3 data or contract error,
//! 4 numerical failure.

mod args;
mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches};

use crate::args::Cli;

/// Errors surfaced to the user, each with its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<choice_confound::Error> for CliError {
    fn from(e: choice_confound::Error) -> Self {
        if e.is_numerical() {
            CliError::Numerical(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn run(argv: Vec<OsString>) -> CliResult<()> {
    // Later occurrences of a flag win, which is what lets explicit flags
    // override the injected config entries.
    let mut cmd = Cli::command().mut_subcommands(|s| s.args_override_self(true));
    let argv = config::inject_config(&cmd, argv)?;
    let matches = match cmd.try_get_matches_from_mut(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            if code == 0 {
                return Ok(());
            }
            return Err(CliError::Usage(String::new()));
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = cmd.find_subcommand(name).expect("parsed subcommand exists");
    commands::dispatch(cli.command, sub, sub_matches)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.message().is_empty() {
                eprintln!("error: {}", e.message());
            }
            ExitCode::from(e.exit_code())
        }
    }
}
