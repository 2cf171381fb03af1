//! `purify`: synthetic-data experiments for nonnegative feature recovery.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error,
//! 3 rank-deficient iterate, 4 equilibration pass cap, 5 verify failures.
//! No environment variables are read.

mod commands;
mod config;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] purify_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("verify failures: {}", .0.join(", "))]
    VerifyFailed(Vec<String>),
}

impl CliError {
    pub fn config(e: purify_core::Error) -> CliError {
        CliError::Config(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        use purify_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::VerifyFailed(_) => 5,
            CliError::Io(_) => 1,
            CliError::Core(e) => match e.root() {
                E::RankDeficient | E::SingularMatrix => 3,
                E::MaxOuterExceeded { .. } => 4,
                E::BadParams(_) | E::BadDims(_) | E::SupportTooLarge(_) => 2,
                _ => 1,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "purify", version, about = "Feature recovery experiments on synthetic data")]
struct Cli {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `outputs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads. Results do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Write the ground truth and initial iterate.
    Gen,
    /// Run purification and record its trajectory.
    Run,
    /// Balance feature moments, optionally followed by purification.
    Equilibrate {
        #[arg(long)]
        then_purify: bool,
    },
    /// One run per value of a config axis.
    Sweep {
        /// noise_level, batch_size or warm_start_ell.
        #[arg(long)]
        axis: Option<String>,
        /// Comma-separated values.
        #[arg(long)]
        values: Option<String>,
        /// Seeds per value; repeat 0 uses the master seed.
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Randomized audits of the library's bounds.
    Verify {
        /// norms, pinv, lemmas, recurrences or all.
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value_t = 100)]
        draws: usize,
    },
    /// Min-∞-norm left inverse of a CSV matrix.
    Pinv {
        #[arg(long)]
        input: PathBuf,
    },
    /// Exact population update at the initial iterate.
    Oracle,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads.max(1)).build_global() {
        eprintln!("error: thread pool: {e}");
        return ExitCode::from(1);
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = commands::Globals { config: cli.config.clone(), seed: cli.seed, out: cli.out.clone() };
    match &cli.cmd {
        Cmd::Gen => commands::gen(&g),
        Cmd::Run => commands::run(&g),
        Cmd::Equilibrate { then_purify } => commands::equilibrate(&g, *then_purify),
        Cmd::Sweep { axis, values, repeats } => commands::sweep(&g, axis.as_deref(), values.as_deref(), *repeats),
        Cmd::Verify { suite, draws } => verify::cmd_verify(&g, suite, *draws),
        Cmd::Pinv { input } => commands::pinv(&g, input),
        Cmd::Oracle => commands::oracle(&g),
    }
}
