mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::Precision;

/// Voxel set attention: self-tests, benchmarks, synthetic data, toy
/// detector training and inference.
#[derive(Debug, Parser)]
#[command(name = "voxset", version)]
pub struct Cli {
    /// Seed for every random choice; required by `gen` and `train-toy`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; computation is single-threaded, so only 1 changes nothing.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Floating-point precision of the numerical engine.
    #[arg(long, global = true, value_enum)]
    pub precision: Option<Precision>,
    /// TOML run configuration; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Gradient checks, scatter and VSA oracle comparisons, softmax normalisation.
    Selftest {
        /// Run only suites whose name contains this string.
        #[arg(long)]
        filter: Option<String>,
        /// Negate one VJP so the gradient suite must fail.
        #[arg(long)]
        sabotage_vjp: bool,
    },
    /// Median forward time of the attention block per point count.
    /// Prints `n  median_ms  ratio_to_prev` rows.
    Bench {
        /// Ascending point counts, comma separated.
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Writes `count` synthetic scenes as `NNNNNN.bin` point files and
    /// `NNNNNN.txt` label files.
    Gen {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        outdir: PathBuf,
        /// Scene generator settings (TOML); overrides `[scene]` of --config.
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Trains the toy detector; writes `metrics.tsv` and `model.ckpt` to --out.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        eval_scenes: Option<usize>,
    },
    /// Detects boxes in a KITTI `.bin` cloud; writes `x y z l w h yaw score` rows.
    Infer {
        #[arg(long, required_unless_present = "cheat_labels")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the network with a head that outputs exactly these labels.
        #[arg(long)]
        cheat_labels: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_USAGE
            } else {
                0
            });
        }
    };
    match commands::run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
