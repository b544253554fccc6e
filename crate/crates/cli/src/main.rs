//! `attrib-audit` command-line driver.
//!
//! Exit codes: 0 when every requested row was produced, 1 when some cells
//! failed (listed on stderr) or a run aborted, 2 for config and path errors.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::Report;
use config::Command;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Path(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] attrib_audit::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Path(_) | CliError::Config(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "attrib-audit", version, about = "Attribution sanity, faithfulness and theory experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "ATTRIB_AUDIT_THREADS")]
    threads: Option<usize>,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Train a model and write `model.bin` plus a training log.
    Train(Common),
    /// Cascading or single-layer randomization similarity grid.
    Sanity(Common),
    /// Blur-occlusion curves and AUCs.
    Faithfulness(Common),
    /// Monte Carlo and closed-form theory experiments.
    Theory(Common),
    /// Activation quantiles, non-positive fractions and overtaking grid.
    Stats(Common),
}

fn dispatch<C: Command>(
    common: &Common,
    run: fn(&C, u64, &Path) -> Result<Report, CliError>,
) -> Result<Report, CliError> {
    let cfg: C = config::load(&common.config)?;
    let seed = common.seed.or(cfg.seed()).unwrap_or(0);
    let out = common.out.clone().or_else(|| cfg.out().map(Path::to_path_buf)).unwrap_or_else(|| "out".into());
    commands::ensure_dir(&out)?;
    run(&cfg, seed, &out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Cmd::Train(c) => dispatch(c, commands::cmd_train),
        Cmd::Sanity(c) => dispatch(c, commands::cmd_sanity),
        Cmd::Faithfulness(c) => dispatch(c, commands::cmd_faithfulness),
        Cmd::Theory(c) => dispatch(c, commands::cmd_theory),
        Cmd::Stats(c) => dispatch(c, commands::cmd_stats),
    };
    match result {
        Ok(report) => {
            for p in &report.written {
                println!("{}", p.display());
            }
            if report.failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("{} cell(s) failed:", report.failed.len());
                for f in &report.failed {
                    eprintln!("  {f}");
                }
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
