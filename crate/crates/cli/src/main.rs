mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Super-resolved radiance fields from low-resolution views.
#[derive(Debug, Parser)]
#[command(name = "supernerf", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline config (TOML); unspecified keys take their defaults.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; created if missing.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Overrides the super-resolution scale factor.
    #[arg(long)]
    pub scale: Option<usize>,
}

/// Flags that shape the mutual-learning run.
#[derive(Debug, Args)]
pub struct TrainFlags {
    /// Fraction of training views supervised by their HR ground truth.
    #[arg(long, value_name = "F")]
    pub hybrid_hr_fraction: Option<f64>,
    /// Train without the LR field's renders (blend weight fixed at zero).
    #[arg(long)]
    pub no_lr_nerf: bool,
    /// Spatial downsample factor of the latent codes.
    #[arg(long, value_name = "D", value_parser = ["1", "4", "16"])]
    pub latent_downsample: Option<String>,
}

/// Pretrained inputs of the mutual-learning stage.
#[derive(Debug, Args)]
pub struct Stages {
    /// Dataset directory written by `gen-data`.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// LR field checkpoint written by `pretrain-lr`.
    #[arg(long, value_name = "PATH")]
    pub lr_field: PathBuf,
    /// Generator checkpoint written by `pretrain-sr`.
    #[arg(long, value_name = "PATH")]
    pub backbone: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the reference toy scene into training and held-out datasets.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the LR field to the LR views of a dataset.
    PretrainLr {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
    },
    /// Pretrain the super-resolution generator on a procedural corpus.
    PretrainSr {
        #[command(flatten)]
        common: Common,
    },
    /// Jointly fit the HR field and the per-view latent codes.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stages: Stages,
        #[command(flatten)]
        flags: TrainFlags,
        /// Continue from a training checkpoint.
        #[arg(long, value_name = "PATH")]
        resume: Option<PathBuf>,
    },
    /// Render novel views from a training checkpoint along a pose path.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Dataset whose training poses are the path keyframes.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value_t = 24)]
        frames: usize,
    },
    /// Score a training checkpoint and write metrics and plots.
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stages: Stages,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Held-out ground truth (defaults to `<data>/../held_out` when present).
        #[arg(long, value_name = "DIR")]
        held_out: Option<PathBuf>,
        /// Loss log to plot.
        #[arg(long, value_name = "PATH")]
        loss_log: Option<PathBuf>,
    },
    /// Retrain with spatially downsampled latent codes and compare.
    AblateLatent {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        stages: Stages,
        /// Downsample factors to compare.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 4, 16])]
        factors: Vec<usize>,
        #[arg(long, value_name = "DIR")]
        held_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { common } => commands::gen_data(&common),
        Command::PretrainLr { common, data } => commands::pretrain_lr(&common, &data),
        Command::PretrainSr { common } => commands::pretrain_sr(&common),
        Command::Train {
            common,
            stages,
            flags,
            resume,
        } => commands::train(&common, &stages, &flags, resume.as_deref()),
        Command::Render {
            common,
            checkpoint,
            data,
            frames,
        } => commands::render(&common, &checkpoint, &data, frames),
        Command::Eval {
            common,
            stages,
            flags,
            checkpoint,
            held_out,
            loss_log,
        } => commands::eval(&common, &stages, &flags, &checkpoint, held_out.as_deref(), loss_log.as_deref()),
        Command::AblateLatent {
            common,
            stages,
            factors,
            held_out,
        } => commands::ablate_latent(&common, &stages, &factors, held_out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {}", format!("{err:#}").replace('\n', " "));
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
