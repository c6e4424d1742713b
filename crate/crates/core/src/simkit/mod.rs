//! Synthetic datasets with known ground truth, the brute-force reference renderer, and
//! the keyframe and velocity utilities used to prepare real captures.

mod keyframes;
mod noise;
mod oracle;
mod scenes;
mod trajectory;
mod transfer;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use keyframes::{blur_score, eval_split, frame_blur_score, keyframe_filter, EVAL_BLOCK};
pub use noise::{add_pose_noise, add_velocity_noise, perturb_scene, ScenePerturbation};
pub use oracle::{exposure_nodes, oracle_linear, oracle_render, OracleImage, OracleSpec, Quadrature};
pub use scenes::{make_scene, make_scene_named, Recipe, BOX_HALF, DEFAULT_CLOUD_SIZE, MAX_SCALE, MAX_SPLATS, MIN_SPLATS};
pub use trajectory::{frame_times, Trajectory, TrajectoryKind, ARC_RADIUS};
pub use transfer::{spread, transfer_velocities};

use crate::camera::{FrameMotion, Intrinsics, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::{Pose, Vec3};
use crate::io::{Dataset, Split};
use crate::optimizer::scene_extent;
use crate::scene::Scene;

/// Which corruption the training images carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Sharp global-shutter images and exact poses.
    Clean,
    /// Motion blur only.
    Mb,
    /// Rolling shutter only.
    Rs,
    /// Motion blur and rolling shutter together.
    MbRs,
    /// Sharp images rendered from the true poses, noisy initial pose estimates.
    PoseNoise,
}

impl Variant {
    /// Exposure and readout times of training frames under this variant.
    pub fn timings(self, exposure: f64, readout: f64) -> (f64, f64) {
        match self {
            Variant::Clean | Variant::PoseNoise => (0.0, 0.0),
            Variant::Mb => (exposure, 0.0),
            Variant::Rs => (0.0, readout),
            Variant::MbRs => (exposure, readout),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Variant::Clean),
            "mb" => Ok(Variant::Mb),
            "rs" => Ok(Variant::Rs),
            "mb-rs" => Ok(Variant::MbRs),
            "pose-noise" => Ok(Variant::PoseNoise),
            other => Err(Error::invalid(format!(
                "unknown variant '{other}' (expected clean, mb, rs, mb-rs or pose-noise)"
            ))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Clean => "clean",
            Variant::Mb => "mb",
            Variant::Rs => "rs",
            Variant::MbRs => "mb-rs",
            Variant::PoseNoise => "pose-noise",
        })
    }
}

/// Everything that determines a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimSpec {
    pub recipe: Recipe,
    /// Splat count for `random-cloud`.
    pub n_splats: Option<usize>,
    pub trajectory: TrajectoryKind,
    /// Camera path speed in scene units per second.
    pub speed: f64,
    /// Time between consecutive frames in seconds.
    pub frame_interval: f64,
    pub variant: Variant,
    /// Exposure time used by blurred variants.
    pub exposure: f64,
    /// Readout time used by rolling-shutter variants.
    pub readout: f64,
    pub n_train: usize,
    pub n_eval: usize,
    pub width: usize,
    pub height: usize,
    /// Focal length as a multiple of the image width.
    pub focal_scale: f64,
    pub oracle: OracleSpec,
    /// Position noise standard deviation; `None` means 1% of the scene extent.
    pub sigma_trans: Option<f64>,
    /// Rotation noise standard deviation in degrees.
    pub sigma_rot_deg: f64,
    /// Noise the initial estimates of every variant, not only `pose-noise`.
    pub init_noise: bool,
    /// Velocity noise relative to the true speed, applied when `init_noise` is set.
    pub sigma_velocity_rel: f64,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            recipe: Recipe::GridWall,
            n_splats: None,
            trajectory: TrajectoryKind::Line,
            speed: 1.0,
            frame_interval: 0.1,
            variant: Variant::Mb,
            exposure: 0.05,
            readout: 0.05,
            n_train: 24,
            n_eval: 3,
            width: 64,
            height: 64,
            focal_scale: 1.25,
            oracle: OracleSpec::default(),
            sigma_trans: None,
            sigma_rot_deg: 0.5,
            init_noise: false,
            sigma_velocity_rel: 0.1,
            render: RenderConfig::default(),
            seed: 0,
        }
    }
}

impl SimSpec {
    pub fn validate(&self) -> Result<()> {
        self.render.validate()?;
        self.oracle.validate()?;
        if self.n_train == 0 {
            return Err(Error::invalid("simulation needs at least one training frame"));
        }
        if self.oracle.n_pose_samples < 2 * self.render.n_blur {
            return Err(Error::invalid(format!(
                "oracle n_pose_samples {} must be at least twice n_blur {}",
                self.oracle.n_pose_samples, self.render.n_blur
            )));
        }
        let finite_nonneg = [
            self.speed,
            self.frame_interval,
            self.exposure,
            self.readout,
            self.sigma_rot_deg,
            self.sigma_velocity_rel,
        ];
        if finite_nonneg.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || self.sigma_trans.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::invalid("simulation speeds, times and noise levels must be finite and non-negative"));
        }
        self.intrinsics().map(|_| ())
    }

    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Intrinsics::centered(self.width, self.height, self.focal_scale)
    }

    /// Split label of every frame: `n_eval` evaluation frames spread evenly among the training frames.
    pub fn splits(&self) -> Vec<Split> {
        let n = self.n_train + self.n_eval;
        let mut out = vec![Split::Train; n];
        for j in 0..self.n_eval {
            out[((j as f64 + 0.5) * n as f64 / self.n_eval as f64) as usize] = Split::Eval;
        }
        out
    }
}

/// Landmarks the simulator treats as sparse map points.
pub fn landmarks(scene: &Scene) -> Vec<Vec3> {
    scene.gaussians.iter().map(|g| g.mean).collect()
}

/// Render a full synthetic dataset. Training frames carry the variant's corruption,
/// evaluation frames are always sharp, and images are stored with 8-bit levels.
pub fn simulate_sequence(spec: &SimSpec) -> Result<Dataset> {
    spec.validate()?;
    let scene = make_scene(spec.recipe, spec.n_splats, spec.seed)?;
    let k = spec.intrinsics()?;
    let path = Trajectory::new(spec.trajectory, spec.speed, spec.seed);
    let splits = spec.splits();
    let times = frame_times(splits.len(), spec.frame_interval);
    let (te, tro) = spec.variant.timings(spec.exposure, spec.readout);
    let truth: Vec<FrameMotion> = splits
        .iter()
        .zip(&times)
        .map(|(s, &t)| match s {
            Split::Train => path.frame(t, te, tro),
            Split::Eval => path.frame(t, 0.0, 0.0),
        })
        .collect();
    let mut images = Vec::with_capacity(truth.len());
    for (i, fm) in truth.iter().enumerate() {
        let o = oracle_render(&scene, fm, &k, &spec.render, &spec.oracle)?;
        if !o.converged {
            log::warn!("frame {i}: oracle residual {:.3e} after {} samples", o.residual, o.n_pose_samples);
        }
        images.push(o.image.quantized());
    }
    let mut init = truth.clone();
    if spec.variant == Variant::PoseNoise || spec.init_noise {
        let sigma_t = spec.sigma_trans.unwrap_or(0.01 * scene_extent(&scene));
        let poses: Vec<Pose> = truth.iter().map(|f| f.pose).collect();
        let noisy = add_pose_noise(&poses, sigma_t, spec.sigma_rot_deg.to_radians(), spec.seed)?;
        for (f, p) in init.iter_mut().zip(noisy) {
            f.pose = p;
        }
    }
    if spec.init_noise {
        let vel: Vec<(Vec3, Vec3)> = truth.iter().map(|f| (f.linear_velocity, f.angular_velocity)).collect();
        for (f, (v, w)) in init.iter_mut().zip(add_velocity_noise(&vel, spec.sigma_velocity_rel, spec.seed)?) {
            f.linear_velocity = v;
            f.angular_velocity = w;
        }
    }
    Ok(Dataset {
        scene: Some(scene),
        intrinsics: k,
        splits,
        truth,
        init,
        images,
        spec: serde_json::to_value(spec).map_err(|e| Error::invalid(e.to_string()))?,
    })
}
