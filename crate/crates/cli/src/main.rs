use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod error;

/// Identify active stress in cardiac tissue from displacement data.
#[derive(Debug, Parser)]
#[command(name = "activepinn", version = env!("ACTIVEPINN_VERSION"))]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Seed of the sampled data (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Training seeds, comma separated or a range `a..b` (overrides the config).
    #[arg(long, global = true, value_parser = parse_seeds)]
    pub seeds: Option<SeedList>,
    /// Worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace existing outputs.
    #[arg(long, global = true)]
    pub overwrite: bool,
    /// Only print errors.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a manufactured observation dataset.
    Generate {
        /// Preset used when the config names none.
        #[arg(long, default_value = "hom-qs")]
        case: String,
    },
    /// Train every seed and write trajectories, summaries and networks.
    Train {
        #[arg(long, default_value = "hom-qs")]
        case: String,
        /// Observations written by `generate` (with the sidecar next to it).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train over a loss-weight grid.
    Sweep {
        #[arg(long, default_value = "hom-qs")]
        case: String,
        /// Grid as `obs=1,10,100;pde=0.01,0.1,1;bcn=1` (overrides the config).
        #[arg(long, value_parser = config::parse_grid)]
        grid: Option<config::SweepConfig>,
    },
    /// Threshold a trained amplitude network on a voxel grid.
    Classify {
        /// Network file written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Preset whose ground truth labels the voxels.
        #[arg(long, default_value = "one-scar")]
        truth: String,
        #[arg(long)]
        threshold: Option<f64>,
        /// Voxels per axis.
        #[arg(long)]
        grid_res: Option<usize>,
    },
    /// Run a paired comparison.
    Ablate {
        /// adaptive-vs-rba, reg-on-off, weak-vs-exact-bcd or robin-mismatch.
        #[arg(long)]
        which: String,
    },
}

#[derive(Debug, Clone)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|e| format!("bad range start: {e}"))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|e| format!("bad range end: {e}"))?;
        if a >= b {
            return Err(format!("empty seed range {a}..{b}"));
        }
        return Ok(SeedList((a..b).collect()));
    }
    let seeds = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<u64>()
                .map_err(|e| format!("bad seed `{p}`: {e}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds".into());
    }
    Ok(SeedList(seeds))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
