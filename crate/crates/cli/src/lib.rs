//! Command-line experiment driver: `prepare`, `train`, `sweep`, `ablate` and
//! `cka`, all driven by one TOML config.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

pub use config::{ConfigError, ExperimentConfig};

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable overriding the config's seed list (`3` or `0,1,2`).
pub const SEED_ENV: &str = "FGSSL_SEED";

#[derive(Debug, Parser)]
#[command(name = "fgssl", version, about = "Federated graph learning experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set loss.tau=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Worker threads for client updates (default: client count, capped by the CPU count).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory; overrides `out` in the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Subcommand)]
pub enum Command {
    /// Split the graph, run Louvain and write `partition.tsv` and `masks.tsv`.
    Prepare,
    /// Train every configured method for every seed.
    Train,
    /// Run the Cartesian grid of the `[sweep]` section.
    Sweep,
    /// Component and augmentation ablations.
    Ablate,
    /// Pairwise CKA between the checkpoints in `[cka]`.
    Cka,
}

pub const DEFAULT_OUT: &str = "fgssl-out";

/// Resolves the config, seeds, thread pool and output directory, then runs the command.
pub fn run(cli: &Cli) -> anyhow::Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| ConfigError("--config is required".into()))?;
    let mut cfg = ExperimentConfig::load(path, &cli.set)?;
    if let Ok(seeds) = std::env::var(SEED_ENV) {
        cfg.seeds = config::parse_seed_list(&seeds)?;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let threads = match cli.threads {
        Some(0) => return Err(ConfigError("--threads must be at least 1".into()).into()),
        Some(n) => n,
        None => {
            let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
            cfg.partition.clients().min(cpus)
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    pool.install(|| match cli.command {
        Command::Prepare => commands::cmd_prepare(&cfg, &out),
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Sweep => commands::cmd_sweep(&cfg, &out),
        Command::Ablate => commands::cmd_ablate(&cfg, &out),
        Command::Cka => commands::cmd_cka(&cfg, &out),
    })
}

/// Process exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    if let Some(e) = err.downcast_ref::<fgssl_core::Error>() {
        return match e {
            e if e.is_numeric() => EXIT_NUMERIC,
            fgssl_core::Error::Io { .. } | fgssl_core::Error::Load { .. } | fgssl_core::Error::Format { .. } => EXIT_IO,
            _ => EXIT_CONFIG,
        };
    }
    if err.chain().any(|c| c.downcast_ref::<std::io::Error>().is_some() || c.downcast_ref::<csv::Error>().is_some()) {
        return EXIT_IO;
    }
    EXIT_CONFIG
}
