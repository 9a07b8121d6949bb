//! Losses, optimizers, alpha calibration and the three training stages.

mod checkpoint;
mod config;
mod data;
mod losses;
mod loops;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, RngState};
pub use config::{Alpha, Stage, TrainConfig};
pub use data::{batch_tensors, build_samples, observation_input, Sample};
pub use losses::{
    calibrate_alpha, combined_loss, gradient_penalty, naturalness_loss, voxel_loss, wgan_gp_losses, AlphaCalibration,
    GanLosses,
};
pub use loops::{finetune, train_completion, train_gan, LossCurve, TrainOutcome};
pub use optim::{grad_norm, Adam, Sgd};
