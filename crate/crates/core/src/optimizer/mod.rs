//! Training loop, losses, metrics and optimizer state.

mod adam;
mod config;
mod loss;
mod metrics;
mod train;

pub use adam::{AdamParams, Moments};
pub use config::{AblationFlags, EvalRates, LearningRates, RunConfig};
pub use loss::{l1, photometric_loss, photometric_loss_grad, pose_penalty, pose_penalty_grad, PenaltyWeights, L1_WEIGHT, SSIM_WEIGHT};
pub use metrics::{metrics, mse, psnr, ssim, Metrics, PSNR_CAP};
pub use train::{
    eval_optimize, floor_references, scene_extent, start_scene, train, train_with, EvalRecord, FrameMoments, IterationRecord, SceneMoments, TrainState,
    REFERENCE_FLOOR,
};
