//! `geobridge` command-line driver.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use geobridge_core::{Error, Result};

use crate::config::RunConfig;
use crate::run::{output_root, RunDir, OUTPUT_ROOT_ENV};

#[derive(Parser)]
#[command(
    name = "geobridge",
    version,
    about = "Geodesic interpolant generative models on S^2 and SO(3)"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output root; the run directory is created inside it.
    #[arg(short, long, env = OUTPUT_ROOT_ENV)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write target and prior sample files.
    Datagen {
        #[command(flatten)]
        common: Common,
    },
    /// Train velocity (and score) nets.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training data file; synthesized from the target section when absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Generate samples from trained nets.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Directory holding velocity.ckpt and optionally score.ckpt.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Start points for backward sampling.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare generated samples with ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Trained nets, needed for NLL.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Convergence orders of the stochastic schemes.
    Bench {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Datagen { common } => ("datagen", common),
            Command::Train { common, .. } => ("train", common),
            Command::Sample { common, .. } => ("sample", common),
            Command::Eval { common, .. } => ("eval", common),
            Command::Bench { common } => ("bench", common),
        }
    }
}

fn check_input(p: &std::path::Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(Error::io(
            p,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ))
    }
}

fn execute(cli: &Cli) -> Result<PathBuf> {
    let (name, common) = cli.command.parts();
    let cfg = RunConfig::load(common.config.as_deref(), &common.overrides)?;
    match &cli.command {
        Command::Train { data: Some(p), .. } => check_input(p)?,
        Command::Sample { checkpoint, data, .. } => {
            check_input(checkpoint)?;
            if let Some(p) = data {
                check_input(p)?;
            }
        }
        Command::Eval {
            generated,
            truth,
            checkpoint,
            ..
        } => {
            check_input(generated)?;
            check_input(truth)?;
            if let Some(p) = checkpoint {
                check_input(p)?;
            }
        }
        _ => {}
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| Error::Config(format!("threads: {e}")))?;
    }
    let dir = RunDir::create(&output_root(common.out.as_deref(), &cfg), name, &cfg)?;
    match &cli.command {
        Command::Datagen { .. } => commands::datagen(&cfg, &dir)?,
        Command::Train { data, .. } => commands::train_cmd(&cfg, data.as_deref(), &dir)?,
        Command::Sample { checkpoint, data, .. } => commands::sample_cmd(&cfg, checkpoint, data.as_deref(), &dir)?,
        Command::Eval {
            generated,
            truth,
            checkpoint,
            ..
        } => commands::eval_cmd(&cfg, generated, truth, checkpoint.as_deref(), &dir)?,
        Command::Bench { .. } => commands::bench_cmd(&cfg, &dir)?,
    }
    Ok(dir.finish())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("{}: {msg}", e.class());
            ExitCode::from(1)
        }
    }
}
