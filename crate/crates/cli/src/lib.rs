//! Command-line driver: `preprocess`, `fit`, `simulate`, `report`, plus
//! `replay` and `verify` for manifests.
//!
//! Failures print one line, `error[CLASS]: message`, to stderr. Classes
//! PARSE, SCHEMA, DATA, CONFIG and USAGE exit with code 2; IO, NUMERIC,
//! SAMPLER and INTERNAL exit with code 1.

pub mod args;
pub mod commands;
pub mod error;
pub mod manifest;

pub use args::{Cli, Command};
pub use error::{CliError, ErrorClass};

use clap::Parser;
use std::ffi::OsString;

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::usage(commands::first_line(&e.to_string()));
            eprintln!("{}", err.line());
            return err.exit_code();
        }
    };
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::run(&cli, &argv) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
