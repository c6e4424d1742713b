//! Run configuration: render settings, optimizer hyperparameters and ablation switches.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::camera::{FrameMotion, RenderConfig};
use crate::error::{Error, Result};
use crate::simkit::ScenePerturbation;

use super::adam::AdamParams;
use super::loss::PenaltyWeights;

/// Base step sizes. `means` and `pose_translation` are multiplied by the scene extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub means: f64,
    pub quats: f64,
    pub scales: f64,
    pub opacity: f64,
    pub sh: f64,
    pub pose_translation: f64,
    pub pose_rotation: f64,
    pub velocity: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            means: 1.6e-4,
            quats: 5e-3,
            scales: 5e-3,
            opacity: 5e-2,
            sh: 2.5e-3,
            pose_translation: 1e-4,
            pose_rotation: 1e-4,
            velocity: 1e-4,
        }
    }
}

/// Step sizes for fixed-scene registration of evaluation frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRates {
    /// Multiplied by the scene extent.
    pub translation: f64,
    pub rotation: f64,
    pub velocity: f64,
    /// Ratio of the last step size to the first; steps decay geometrically in between.
    pub final_ratio: f64,
}

impl Default for EvalRates {
    fn default() -> Self {
        EvalRates {
            translation: 1e-3,
            rotation: 1e-3,
            velocity: 1e-3,
            final_ratio: 0.1,
        }
    }
}

/// Switches for each modeled effect; all on is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Off: exposure time 0 and a single blur sample.
    pub motion_blur: bool,
    /// Off: readout time 0.
    pub rolling_shutter: bool,
    pub pose_opt: bool,
    pub velocity_opt: bool,
    /// Off: velocities start at zero instead of the trajectory estimate.
    pub vio_init: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            motion_blur: true,
            rolling_shutter: true,
            pose_opt: true,
            velocity_opt: true,
            vio_init: true,
        }
    }
}

impl AblationFlags {
    pub fn all_off() -> Self {
        AblationFlags {
            motion_blur: false,
            rolling_shutter: false,
            pose_opt: false,
            velocity_opt: false,
            vio_init: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub dataset: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub render: RenderConfig,
    pub lr: LearningRates,
    pub adam: AdamParams,
    pub lambda_pose: f64,
    pub lambda_rot: f64,
    pub flags: AblationFlags,
    /// Seeded perturbation applied to the dataset scene before training starts.
    pub init_perturbation: Option<ScenePerturbation>,
    pub seed: u64,
    pub iterations: usize,
    pub eval_iterations: usize,
    pub eval_lr: EvalRates,
    /// Evaluate every this many iterations (0: only after training).
    pub metrics_every: usize,
    /// Write a checkpoint every this many iterations (0: only at the end).
    pub checkpoint_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            output: None,
            render: RenderConfig::default(),
            lr: LearningRates::default(),
            adam: AdamParams::default(),
            lambda_pose: 1e-2,
            lambda_rot: 1e-2,
            flags: AblationFlags::default(),
            init_perturbation: None,
            seed: 0,
            iterations: 20_000,
            eval_iterations: 300,
            eval_lr: EvalRates::default(),
            metrics_every: 0,
            checkpoint_every: 0,
        }
    }
}

impl RunConfig {
    pub fn penalty(&self) -> PenaltyWeights {
        PenaltyWeights {
            translation: self.lambda_pose,
            rotation: self.lambda_rot,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        let lr = &self.lr;
        let rates = [
            lr.means,
            lr.quats,
            lr.scales,
            lr.opacity,
            lr.sh,
            lr.pose_translation,
            lr.pose_rotation,
            lr.velocity,
            self.eval_lr.translation,
            self.eval_lr.rotation,
            self.eval_lr.velocity,
        ];
        if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::invalid("run config: learning rates must be finite and non-negative"));
        }
        if !(self.eval_lr.final_ratio > 0.0 && self.eval_lr.final_ratio <= 1.0) {
            return Err(Error::invalid("run config: eval_lr.final_ratio must lie in (0, 1]"));
        }
        if !(self.lambda_pose >= 0.0 && self.lambda_rot >= 0.0) {
            return Err(Error::invalid("run config: penalty weights must be non-negative"));
        }
        let a = &self.adam;
        if !(a.beta1 >= 0.0 && a.beta1 < 1.0 && a.beta2 >= 0.0 && a.beta2 < 1.0 && a.eps > 0.0) {
            return Err(Error::invalid("run config: invalid Adam parameters"));
        }
        Ok(())
    }

    /// A frame as the training model sees it: zero exposure without blur modeling and
    /// zero readout without rolling-shutter modeling.
    pub fn model_frame(&self, frame: &FrameMotion) -> FrameMotion {
        let mut f = *frame;
        if !self.flags.motion_blur {
            f.exposure = 0.0;
        }
        if !self.flags.rolling_shutter {
            f.readout = 0.0;
        }
        f
    }

    /// Render settings for the training model after applying the ablation flags.
    pub fn model_render(&self) -> RenderConfig {
        RenderConfig {
            n_blur: if self.flags.motion_blur { self.render.n_blur } else { 1 },
            ..self.render
        }
    }
}
