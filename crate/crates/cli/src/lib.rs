//! The `goas` command-line tool.
//!
//! Exit codes: 0 on success, 1 on usage or validation errors, 2 on runtime
//! failures.

mod args;
mod commands;
pub mod comparison;
pub mod descriptor;

use std::ffi::OsString;

use clap::Parser;
use goas_core::GoasError;

pub use args::Cli;

/// Environment variable naming the dataset cache directory.
pub const CACHE_ENV: &str = "GOAS_CACHE";

/// A request the tool refuses to carry out as given.
#[derive(Debug)]
pub struct Refused(pub String);

impl std::fmt::Display for Refused {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Refused {}

pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<Refused>().is_some() {
        return 1;
    }
    match err.downcast_ref::<GoasError>() {
        Some(
            GoasError::MissingFile(_)
            | GoasError::Schema { .. }
            | GoasError::Shape(_)
            | GoasError::InvalidArgument(_)
            | GoasError::Config(_)
            | GoasError::EmptySplit(_)
            | GoasError::Checkpoint(_)
            | GoasError::Json(_),
        ) => 1,
        _ => 2,
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log)
        .format_timestamp(None)
        .try_init();
    match commands::dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
