//! Batch driver: loads protocol and config files, runs the pipelines and
//! writes reproducible JSON or CSV reports.

pub mod commands;
pub mod config;
pub mod error;
pub mod protocol_file;
pub mod report;

use std::time::Instant;

use config::{thread_count, Cli, RunConfig};
use error::CliError;

/// Rendered output and the exit code it implies.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub text: String,
    pub exit_code: i32,
    pub failures: Vec<String>,
    pub warnings: Vec<String>,
}

/// Resolves the configuration, runs the command and writes the report.
/// The report is returned as well; it is written to `--out` when given.
pub fn run(cli: &Cli) -> Result<RunOutput, CliError> {
    let cfg = RunConfig::resolve(cli)?;
    let threads = thread_count()?;
    let start = Instant::now();
    let done = commands::run(&cfg, threads)?;
    let clock = cfg.timing.then(|| start.elapsed().as_secs_f64());
    let text = report::render(&cfg, &done, clock)?;
    if let Some(path) = &cfg.out {
        report::write_atomic(path, &text)?;
    }
    Ok(RunOutput {
        text,
        exit_code: if done.failures.is_empty() { 0 } else { 3 },
        failures: done.failures,
        warnings: done.warnings,
    })
}
