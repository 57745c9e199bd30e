mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "oass",
    version,
    about = "Object-aware self-supervision for multi-label classification"
)]
pub struct Cli {
    /// Run configuration (TOML). Defaults apply to every missing key.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides `train.seed` (and the synthetic stream seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Compute device. Only `cpu` is available.
    #[arg(long, global = true, default_value = "cpu")]
    pub device: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes metrics, checkpoints and the resolved config to `--out`.
    Train {
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long, default_value = "runs/oass")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on a split; prints the AP table.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Defaults to `data.val_split`.
        #[arg(long)]
        split: Option<String>,
        /// Also write the per-class APs as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Score with the EMA teacher instead of the student.
        #[arg(long)]
        teacher: bool,
    },
    /// Per-class box-centre shift statistics after resizing to a square canvas.
    Stats {
        /// VOC root or synthetic manifest directory; defaults to the configured data.
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = 512)]
        target_size: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Export CAM overlays for selected images.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image ids, comma separated; defaults to the first eight of the split.
        #[arg(long, value_delimiter = ',')]
        ids: Vec<String>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value = "viz")]
        out: PathBuf,
        /// Also dump the 2x2 cut of the configured keypoint strategy.
        #[arg(long)]
        patches: bool,
    },
    /// Write a synthetic dataset (`train/` and `val/` manifests) from `data.synth`.
    Synth {
        #[arg(long, default_value = "data/synth")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
