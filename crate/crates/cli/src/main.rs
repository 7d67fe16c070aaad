mod args;
mod commands;

use std::path::Path;
use std::process::ExitCode;

use clap::Parser;
use serde_json::json;
use thiserror::Error;

use mmhca::ErrorKind;

use crate::args::{Cli, Command};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Core(#[from] mmhca::Error),

    #[error("gradient check failed: max relative error {max:.3e} at `{name}` (tolerance {tolerance:.1e})")]
    GradCheck { max: f64, name: String, tolerance: f64 },
}

impl CliError {
    fn kind(&self) -> ErrorKind {
        match self {
            CliError::Usage(_) => ErrorKind::Usage,
            CliError::Core(e) => e.kind(),
            CliError::GradCheck { .. } => ErrorKind::Numeric,
        }
    }

    fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.code(),
            CliError::GradCheck { .. } => "gradcheck_failed",
        }
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Usage => 1,
        ErrorKind::Data => 2,
        ErrorKind::Numeric => 3,
    }
}

/// `error code=<code> kind=<kind> message="<json string>"` on stderr.
fn report(code: &str, kind: ErrorKind, message: &str) -> ExitCode {
    let kind_name = match kind {
        ErrorKind::Usage => "usage",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    };
    let quoted = serde_json::to_string(message).unwrap_or_else(|_| "\"\"".into());
    eprintln!("error code={code} kind={kind_name} message={quoted}");
    ExitCode::from(exit_code(kind))
}

/// Record the command line and the fully resolved configuration next to the
/// run's outputs.
pub fn write_echo(out_dir: &Path, argv: &[String], command: &str, resolved: serde_json::Value) -> Result<(), CliError> {
    std::fs::create_dir_all(out_dir).map_err(|e| io_error(out_dir, e))?;
    let echo = json!({
        "command": command,
        "argv": argv,
        "version": env!("CARGO_PKG_VERSION"),
        "resolved": resolved,
    });
    let path = out_dir.join("config.json");
    let text = serde_json::to_string_pretty(&echo).expect("JSON values serialize");
    std::fs::write(&path, text + "\n").map_err(|e| io_error(&path, e))
}

pub fn io_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Core(mmhca::Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn run(argv: Vec<String>, depth: usize) -> ExitCode {
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind as Ek;
            if matches!(e.kind(), Ek::DisplayHelp | Ek::DisplayVersion | Ek::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return if e.kind() == Ek::DisplayHelpOnMissingArgumentOrSubcommand {
                    ExitCode::from(1)
                } else {
                    ExitCode::SUCCESS
                };
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return report("usage", ErrorKind::Usage, first.trim_start_matches("error: "));
        }
    };
    if let Command::Replay(r) = &cli.command {
        if depth > 0 {
            return report("usage", ErrorKind::Usage, "a config echo cannot replay another replay");
        }
        return match commands::read_echo(&r.echo) {
            Ok(recorded) => run(recorded, depth + 1),
            Err(e) => report(e.code(), e.kind(), &e.to_string()),
        };
    }
    match commands::dispatch(cli.command, &argv) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.code(), e.kind(), &e.to_string()),
    }
}

fn main() -> ExitCode {
    run(std::env::args().collect(), 0)
}
