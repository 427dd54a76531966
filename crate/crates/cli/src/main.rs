use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use llmerge::config::{EventType, Overrides, RunConfig};
use llmerge::{execute, exit_code, Command};

#[derive(Parser)]
#[command(
    name = "llmerge",
    version,
    about = "Labor-market effects of mergers and acquisitions"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "LLMERGE_DATA_ROOT")]
    data_root: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Anticipation years.
    #[arg(long, global = true)]
    zeta: Option<u32>,
    /// Event window in years on each side.
    #[arg(long, global = true)]
    window: Option<u32>,
    #[arg(long, global = true, value_enum)]
    event_type: Option<EventType>,
    /// Bootstrap draws.
    #[arg(long, global = true)]
    draws: Option<usize>,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// Generate a synthetic data root with a known ground truth.
    Simulate,
    Ingest,
    Events,
    Markets,
    Adjust,
    Estimate,
    Report,
    /// Every stage in order.
    All,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Simulate => Command::Simulate,
            Cmd::Ingest => Command::Ingest,
            Cmd::Events => Command::Events,
            Cmd::Markets => Command::Markets,
            Cmd::Adjust => Command::Adjust,
            Cmd::Estimate => Command::Estimate,
            Cmd::Report => Command::Report,
            Cmd::All => Command::All,
        }
    }
}

fn run(cli: &Cli) -> llmerge_core::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&Overrides {
        data_root: cli.data_root.clone(),
        output: cli.out.clone(),
        seed: cli.seed,
        threads: cli.threads,
        zeta: cli.zeta,
        window: cli.window,
        event_type: cli.event_type,
        draws: cli.draws,
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| llmerge_core::Error::Config(e.to_string()))?;
    pool.install(|| execute(cli.command.into(), &cfg))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
