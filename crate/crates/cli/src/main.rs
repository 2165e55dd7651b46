//! `slr`: ingestion, estimation, effects, rolling fits, projections and
//! validation from the command line.
//!
//! Exit codes: 0 success, 2 usage, 3 data error, 4 numerical error. Failures
//! print one JSON object to stderr.

mod commands;
mod config;
mod provenance;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use config::{RunArgs, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "slr", version, about = "Sea-level effects on regional growth")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    run: RunArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tide-gauge and economic inputs to a decadal panel.
    Ingest,
    /// Fit the requested model specifications.
    Estimate,
    /// Effect curve, point-estimate table and significance threshold.
    Effects,
    /// Rolling-window refits of one specification.
    Roll,
    /// Scenario projections, rankings and aggregates.
    Project,
    /// Oracle comparisons and Monte Carlo recovery on synthetic data.
    Validate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, Serialize)]
pub struct CliError {
    pub class: ErrorClass,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Usage, kind: "usage".into(), message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { class: ErrorClass::Data, kind: "data".into(), message: message.into() }
    }

    pub fn context(mut self, prefix: &str) -> Self {
        self.message = format!("{prefix}: {}", self.message);
        self
    }

    fn exit_code(&self) -> u8 {
        match self.class {
            ErrorClass::Usage => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numerical => 4,
        }
    }
}

impl From<slr_core::Error> for CliError {
    fn from(e: slr_core::Error) -> Self {
        let class = if matches!(e, slr_core::Error::UnknownSpec(_)) {
            ErrorClass::Usage
        } else if e.is_numerical() {
            ErrorClass::Numerical
        } else {
            ErrorClass::Data
        };
        Self { class, kind: e.kind().into(), message: e.to_string() }
    }
}

fn report(err: &CliError) -> ExitCode {
    let body = serde_json::json!({
        "error": {
            "class": err.class,
            "kind": err.kind,
            "message": err.message,
            "exit_code": err.exit_code(),
        }
    });
    eprintln!("{body}");
    ExitCode::from(err.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return report(&CliError::usage(e.to_string().trim_end()));
        }
    };
    let result = RunConfig::from_args(&cli.run).and_then(|cfg| match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Estimate => commands::estimate(&cfg),
        Command::Effects => commands::effects(&cfg),
        Command::Roll => commands::roll(&cfg),
        Command::Project => commands::project(&cfg),
        Command::Validate => commands::validate(&cfg),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}
