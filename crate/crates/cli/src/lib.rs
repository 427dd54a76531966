//! Command-line driver: configuration, staged execution and reporting.

pub mod config;
pub mod pipeline;
pub mod report;
pub mod stage;

use llmerge_core::{Error, Result};
use log::info;

use crate::config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Ingest,
    Events,
    Markets,
    Adjust,
    Estimate,
    Report,
    All,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 2,
        Error::Schema { .. } | Error::Csv(_) => 3,
        Error::Identification(_) => 4,
        _ => 1,
    }
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let run = |name: &str, f: fn(&RunConfig) -> Result<()>| {
        info!("stage {name}");
        f(cfg)
    };
    match cmd {
        Command::Simulate => run("simulate", pipeline::simulate),
        Command::Ingest => run("ingest", pipeline::ingest),
        Command::Events => run("events", pipeline::events),
        Command::Markets => run("markets", pipeline::markets),
        Command::Adjust => run("adjust", pipeline::adjust),
        Command::Estimate => run("estimate", pipeline::estimate),
        Command::Report => run("report", pipeline::report),
        Command::All => {
            if cfg.synthetic {
                run("simulate", pipeline::simulate)?;
            }
            run("ingest", pipeline::ingest)?;
            run("events", pipeline::events)?;
            run("markets", pipeline::markets)?;
            run("adjust", pipeline::adjust)?;
            run("estimate", pipeline::estimate)?;
            run("report", pipeline::report)
        }
    }
}
