//! `clea`: the experiment pipeline as file-passing subcommands.

mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "clea", version, about = "Contrastive feature learning from exploratory actions")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Config override, e.g. `--set plan.eval_users=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub sets: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Out {
    /// Artifact directory; relative paths land under the output root. Must
    /// not exist yet or be empty.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a behavior database (plus an auxiliary sample of the same payload map).
    GenDb {
        #[arg(long)]
        modality: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: Out,
    },
    /// Simulate exploration sessions of a training population and rankings of an evaluation population.
    Simulate {
        /// Database directory or file.
        #[arg(long)]
        db: PathBuf,
        /// Training users.
        #[arg(long)]
        users: Option<usize>,
        /// Pages per training user.
        #[arg(long)]
        pages: Option<usize>,
        #[arg(long)]
        page_size: Option<usize>,
        #[arg(long)]
        eval_users: Option<usize>,
        #[command(flatten)]
        out: Out,
    },
    /// Train a feature space on logged sessions.
    Train {
        #[arg(long)]
        db: PathBuf,
        /// Session log, or a directory holding `sessions.jsonl`.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long)]
        objective: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        weighting: Option<String>,
        #[command(flatten)]
        out: Out,
    },
    /// Train one space per value of `alpha` or `beta` and tabulate validation triplet accuracy.
    Sweep {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        sessions: PathBuf,
        #[arg(long)]
        objective: String,
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        param: String,
        /// Comma-separated; defaults to the standard sweep grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
        #[command(flatten)]
        out: Out,
    },
    /// Run evaluation criteria, in simulation (default) or on stored artifacts.
    Evaluate {
        /// Comma-separated criteria.
        #[arg(long, default_value = "completeness")]
        criteria: String,
        #[arg(long)]
        modality: Option<String>,
        /// Number of seeds for simulation mode.
        #[arg(long)]
        seeds: Option<u64>,
        /// Artifact mode: database directory or file.
        #[arg(long)]
        db: Option<PathBuf>,
        /// Artifact mode: rankings file or simulate directory.
        #[arg(long)]
        rankings: Option<PathBuf>,
        /// Artifact mode: trained space directories.
        #[arg(long, value_delimiter = ',')]
        spaces: Vec<PathBuf>,
        #[command(flatten)]
        out: Out,
    },
    /// Nearest neighbors of one behavior in a trained space.
    Neighbors {
        #[arg(long)]
        space: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        id: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Serve the session API.
    Serve {
        /// Database directories or files; repeatable.
        #[arg(long, required = true)]
        db: Vec<PathBuf>,
        /// Population session log pooled into training, for the first database.
        #[arg(long)]
        sessions: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
    },
    /// Write per-figure CSV tables from a stored evaluation report.
    PlotData {
        #[arg(long)]
        report: PathBuf,
        #[command(flatten)]
        out: Out,
    },
}

fn fail(e: CliError) -> ! {
    eprintln!("{}", e.to_json());
    std::process::exit(e.exit_code());
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                std::process::exit(0);
            }
            let message = e.render().to_string();
            let first = message.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            fail(CliError::usage(first));
        }
    };
    if let Err(e) = commands::run(cli) {
        fail(e);
    }
}
