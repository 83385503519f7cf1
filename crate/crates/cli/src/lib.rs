//! The `cdsa` command line: phantom generation, vesselness priors, pair
//! synthesis, noise injection, log subtraction, evaluation and gradient
//! checks, plus a `pipeline` verb chaining them end to end.
//!
//! Exit codes: 0 success, 1 a gradient check exceeded its threshold,
//! 2 argument errors, 3 data or validation errors.

mod args;
mod commands;
mod config;

use std::ffi::OsString;
use std::fmt;
use std::io::Write;

use cdsa_core::CdsaError;
use clap::Parser;

pub use args::{Cli, Command};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(CdsaError),
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(CdsaError::Argument(_) | CdsaError::Unsupported(_)) => EXIT_USAGE,
            CliError::Core(_) => EXIT_DATA,
            CliError::CheckFailed(_) => EXIT_CHECK_FAILED,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::CheckFailed(m) => write!(f, "{m}"),
        }
    }
}

impl From<CdsaError> for CliError {
    fn from(e: CdsaError) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(CdsaError::Io(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the command line with the process's standard streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the command line, writing results to `out` and diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match parse(&argv) {
        Ok(cli) => cli,
        Err(ParseOutcome::Exit(code, text, to_stdout)) => {
            let _ = if to_stdout { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => {
                // the caller's streams need not be Send; buffer inside the pool
                let (mut o, mut e) = (Vec::new(), Vec::new());
                let r = pool.install(|| commands::dispatch(&cli, &mut o, &mut e));
                let _ = out.write_all(&o);
                let _ = err.write_all(&e);
                r
            }
            Err(e) => Err(CliError::Usage(format!("cannot build a pool of {n} threads: {e}"))),
        },
        None => commands::dispatch(&cli, out, err),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "cdsa: {e}");
            e.exit_code()
        }
    }
}

enum ParseOutcome {
    /// Exit code, message, and whether it belongs on standard output.
    Exit(i32, String, bool),
}

fn parse(argv: &[OsString]) -> std::result::Result<Cli, ParseOutcome> {
    let first = Cli::try_parse_from(argv).map_err(clap_exit)?;
    let Some(path) = &first.config else {
        return Ok(first);
    };
    let extra = config::load(path).map_err(|e| ParseOutcome::Exit(e.exit_code(), format!("cdsa: {e}\n"), false))?;
    let merged = config::merge(argv, &extra);
    Cli::try_parse_from(merged).map_err(clap_exit)
}

fn clap_exit(e: clap::Error) -> ParseOutcome {
    use clap::error::ErrorKind;
    let informational = matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion);
    let code = if informational { EXIT_OK } else { EXIT_USAGE };
    ParseOutcome::Exit(code, e.render().to_string(), informational)
}
