//! Library side of the `pfclt` binary, so the commands can be driven from tests.

pub mod args;
pub mod commands;
pub mod output;

use anyhow::Result;
use std::fs::File;
use std::io::{stdout, BufWriter};

/// Runs a parsed invocation, writes its report, and returns whether every check passed.
pub fn execute(cli: args::Cli) -> Result<bool> {
    let cfg = args::RunConfig::from_cli(cli)?;
    let report = commands::run(&cfg)?;
    match &cfg.out {
        Some(path) => report.write(cfg.format, BufWriter::new(File::create(path)?))?,
        None => report.write(cfg.format, stdout().lock())?,
    }
    Ok(report.all_passed())
}
