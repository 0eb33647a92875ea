//! `isoform` command line: synthesize datasets, segment, featurize, train,
//! evaluate, replay recordings and serve live sessions. Everything printed is
//! JSON (indented with `--pretty`); errors go to standard error as
//! `{"error":{"code":..,"message":..}}`.
//!
//! Exit codes: 0 success, 1 invalid invocation, 2 failure while working.

mod args;
mod commands;
mod config;
pub mod server;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use clap::error::ErrorKind;
use clap::Parser;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub exit: i32,
    pub code: &'static str,
    pub message: String,
}

impl CliError {
    pub fn usage(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit: EXIT_USAGE,
            code,
            message: message.into(),
        }
    }

    pub fn runtime(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            exit: EXIT_RUNTIME,
            code,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl std::error::Error for CliError {}

fn report(e: &CliError, pretty: bool, err: &mut dyn Write) -> i32 {
    let body = serde_json::json!({ "error": { "code": e.code, "message": e.message } });
    let text = if pretty {
        serde_json::to_string_pretty(&body)
    } else {
        serde_json::to_string(&body)
    }
    .expect("error JSON");
    let _ = writeln!(err, "{text}");
    e.exit
}

/// Runs one invocation. `args` includes the program name.
pub fn run_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let pretty = argv.iter().any(|a| a == "--pretty");
    let argv = match config::apply(argv) {
        Ok(a) => a,
        Err(e) => return report(&e, pretty, err),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{}", e.render());
                return EXIT_OK;
            }
            let message = e.render().to_string().trim_end().to_string();
            return report(&CliError::usage("usage", message), pretty, err);
        }
    };
    let pretty = cli.pretty;
    match commands::run(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => report(&e, pretty, err),
    }
}
