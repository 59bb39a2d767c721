//! Optimisation stages: LR-field pretraining and the mutual-learning loop.
//! Generator pretraining lives in [`crate::ccsr::pretrain`].

pub mod config;
pub mod loss;
pub mod lr;
pub mod mutual;
pub mod schedule;

pub use config::{LrPretrainConfig, PipelineConfig, TrainConfig};
pub use loss::{loss_range, loss_sr, range_penalty};
pub use lr::{pretrain_lr_nerf, pretrain_lr_nerf_with};
pub use mutual::{
    append_loss_log, checkpoint_path, read_loss_log, train_super_nerf, CheckpointBundle, LossReport, MutualLearning,
    LOSS_LOG_HEADER,
};
pub use schedule::{alpha, AlphaSchedule, ScheduleKind};
