//! Command-line driver: loads a JSON run file, runs the requested stages on
//! a replica worker pool and writes CSV/JSON artifacts, a manifest and plot
//! scripts into the output directory.
//!
//! Exit codes: 0 when every gated check passes, 1 when one fails, 2 for
//! configuration errors and missing artifacts, 3 for numeric failures.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
pub mod plots;
pub mod verify;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{execute, plots, Command, Outcome};
use crate::config::{Overrides, RunFile};
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "superfractal",
    version,
    about = "Superprocess density simulation and multifractal analysis"
)]
pub struct Cli {
    /// JSON run file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `run.n_replicas`.
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    /// Output directory; overrides `run.output_dir`.
    #[arg(long, global = true, env = "SUPERFRACTAL_OUT")]
    pub out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Simulate replicas; writes density.csv, jumps.csv, diagnostics.json.
    Simulate,
    /// Hölder field, level sets and the pooled spectrum.
    Spectrum,
    /// Jump-box and event census.
    Census,
    /// Kernel, Lévy and duality property suites.
    Verify {
        /// Also dump the kernel table of `p_t^α` as kernel_table.csv.
        #[arg(long)]
        kernel_table: bool,
    },
    /// Duality check against the log-Laplace solver only.
    LoglaplaceCheck,
    /// Every stage, then plot scripts.
    All,
    /// Plot scripts for an existing run directory.
    Plots {
        /// Run directory (default: --out or the config's output_dir).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
}

fn load(cli: &Cli) -> CliResult<RunFile> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    RunFile::load(
        path,
        &Overrides {
            seed: cli.seed,
            replicas: cli.replicas,
            out: cli.out.clone(),
        },
    )
}

/// Runs one invocation without touching the process state.
pub fn dispatch(cli: &Cli) -> CliResult<Outcome> {
    let cmd = match &cli.command {
        Sub::Simulate => Command::Simulate,
        Sub::Spectrum => Command::Spectrum,
        Sub::Census => Command::Census,
        Sub::Verify { kernel_table } => Command::Verify {
            kernel_table: *kernel_table,
        },
        Sub::LoglaplaceCheck => Command::LoglaplaceCheck,
        Sub::All => Command::All,
        Sub::Plots { dir } => {
            let rf = cli.config.as_ref().map(|_| load(cli)).transpose()?;
            let dir = dir
                .clone()
                .or_else(|| cli.out.clone())
                .or_else(|| rf.as_ref().map(|r| r.run.output_dir.clone()))
                .ok_or_else(|| CliError::Config("plots needs --dir, --out or --config".into()))?;
            return plots(&dir, rf.as_ref());
        }
    };
    let rf = load(cli)?;
    execute(cmd, &rf)
}

/// Full invocation: worker pool, dispatch and exit code.
pub fn run(cli: Cli) -> i32 {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: worker pool: {e}");
            return 3;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(outcome) => {
            for g in &outcome.manifest.gates {
                println!("{} {}", if g.pass { "PASS" } else { "FAIL" }, g.name);
            }
            println!("artifacts in {}", outcome.dir.display());
            if outcome.pass() {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
