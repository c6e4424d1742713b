//! Finite-difference checks of the full render gradient, one parameter block at a time.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::camera::{FrameMotion, Intrinsics, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose, Quat, Vec3};
use crate::image::{encode_gamma, ColorSpace, Image};
use crate::rasterizer::RenderPass;
use crate::scene::{dc_for_color, logit, Gaussian, Scene, SH_COEFFS};

use super::fd::{fd_check, FdOptions, FdReport};
use super::{backward_all, GradBuffers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ParamBlock {
    Mean,
    Quat,
    Scale,
    Opacity,
    Sh,
    Position,
    Rotation,
    LinearVelocity,
    AngularVelocity,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 9] = [
        ParamBlock::Mean,
        ParamBlock::Quat,
        ParamBlock::Scale,
        ParamBlock::Opacity,
        ParamBlock::Sh,
        ParamBlock::Position,
        ParamBlock::Rotation,
        ParamBlock::LinearVelocity,
        ParamBlock::AngularVelocity,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ParamBlock::Mean => "mu",
            ParamBlock::Quat => "q",
            ParamBlock::Scale => "s",
            ParamBlock::Opacity => "alpha",
            ParamBlock::Sh => "sh",
            ParamBlock::Position => "p",
            ParamBlock::Rotation => "rot",
            ParamBlock::LinearVelocity => "v",
            ParamBlock::AngularVelocity => "w",
        }
    }

    /// Pose gradients drop some terms, so they are held to a looser bound.
    pub fn is_approximate(&self) -> bool {
        matches!(self, ParamBlock::Position | ParamBlock::Rotation)
    }

    /// Blocks shared by the whole frame, which move every splat at once.
    pub fn is_frame(&self) -> bool {
        matches!(
            self,
            ParamBlock::Position | ParamBlock::Rotation | ParamBlock::LinearVelocity | ParamBlock::AngularVelocity
        )
    }

    /// Step multiplier for finite differences. A frame parameter shifts every splat, so
    /// a full-size step crosses many opacity cutoffs; a shorter step keeps it on one branch.
    pub fn step_scale(&self) -> f64 {
        if self.is_frame() {
            1e-3
        } else {
            1.0
        }
    }

    pub fn tolerance(&self) -> f64 {
        if self.is_approximate() {
            5e-2
        } else {
            1e-4
        }
    }
}

impl fmt::Display for ParamBlock {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamBlock {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ParamBlock::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown parameter block '{s}'")))
    }
}

/// A scene, one frame and a random pixel weighting defining the scalar loss
/// `sum(W * gamma(render))` whose gradient is checked.
#[derive(Debug, Clone)]
pub struct CheckProblem {
    pub scene: Scene,
    pub frame: FrameMotion,
    pub intrinsics: Intrinsics,
    pub config: RenderConfig,
    pub weights: Image,
}

/// Shape of a randomly generated [`CheckProblem`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckSetup {
    pub n_splats: usize,
    pub width: usize,
    pub height: usize,
    pub n_blur: usize,
    pub exposure: f64,
    pub readout: f64,
    pub speed: f64,
    pub angular_speed: f64,
    /// Magnitude of the non-DC SH coefficients; zero gives view-independent color.
    pub sh_rest: f64,
    pub anisotropic: bool,
}

impl Default for CheckSetup {
    fn default() -> Self {
        CheckSetup {
            n_splats: 50,
            width: 32,
            height: 32,
            n_blur: 3,
            exposure: 0.04,
            readout: 0.03,
            speed: 1.5,
            angular_speed: 1.5,
            sh_rest: 0.05,
            anisotropic: true,
        }
    }
}

fn rvec(rng: &mut impl Rng, s: f64) -> Vec3 {
    Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
}

impl CheckProblem {
    pub fn random(seed: u64, setup: &CheckSetup) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let intrinsics = Intrinsics::centered(setup.width, setup.height, 1.25)?;
        let pose = Pose::new(so3_exp(&rvec(&mut rng, 0.3)), rvec(&mut rng, 1.0));
        let aspect = setup.height as f64 / setup.width as f64;
        let gaussians = (0..setup.n_splats)
            .map(|_| {
                let z = rng.random_range(3.0..6.0);
                let cam = Vec3::new(rng.random_range(-0.4..0.4) * z, rng.random_range(-0.4..0.4) * z * aspect, z);
                let base: f64 = rng.random_range(0.02..0.1);
                let var = if setup.anisotropic {
                    Vec3::new(base, base * rng.random_range(0.25..1.0), base * rng.random_range(0.25..1.0))
                } else {
                    Vec3::repeat(base)
                };
                let rotation = if setup.anisotropic {
                    Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                } else {
                    Quat::IDENTITY
                };
                let mut sh = [Vec3::zeros(); SH_COEFFS];
                sh[0] = dc_for_color(&Vec3::new(rng.random_range(0.15..0.85), rng.random_range(0.15..0.85), rng.random_range(0.15..0.85)));
                if setup.sh_rest > 0.0 {
                    for c in sh.iter_mut().skip(1) {
                        *c = rvec(&mut rng, setup.sh_rest);
                    }
                }
                Gaussian {
                    mean: pose.transform_point(&cam),
                    rotation,
                    scale_logits: var.map(logit),
                    opacity_logit: logit(rng.random_range(0.3..0.9)),
                    sh,
                }
            })
            .collect();
        let frame = FrameMotion {
            pose,
            linear_velocity: rvec(&mut rng, setup.speed),
            angular_velocity: rvec(&mut rng, setup.angular_speed),
            exposure: setup.exposure,
            readout: setup.readout,
            timestamp: 0.0,
        };
        let weights = Image::from_fn(setup.width, setup.height, ColorSpace::Gamma, |_, _| rvec(&mut rng, 1.0));
        Ok(CheckProblem {
            scene: Scene::new(gaussians),
            frame,
            intrinsics,
            config: RenderConfig {
                n_blur: setup.n_blur,
                ..Default::default()
            },
            weights,
        })
    }

    pub fn loss_of(&self, scene: &Scene, frame: &FrameMotion) -> Result<f64> {
        let pass = RenderPass::new(scene, frame, &self.intrinsics, &self.config)?;
        let img = encode_gamma(&pass.forward(), self.config.gamma);
        Ok(img.data.iter().zip(&self.weights.data).map(|(c, w)| c.dot(w)).sum())
    }

    pub fn loss(&self) -> Result<f64> {
        self.loss_of(&self.scene, &self.frame)
    }

    pub fn gradients(&self) -> Result<GradBuffers> {
        let pass = RenderPass::new(&self.scene, &self.frame, &self.intrinsics, &self.config)?;
        let linear = pass.forward();
        let pixel = pass.backward_gamma(&linear, &self.weights)?;
        backward_all(&self.scene, &pass, &pixel)
    }

    /// Current values of a block, flattened.
    pub fn params(&self, block: ParamBlock) -> Vec<f64> {
        let gs = &self.scene.gaussians;
        match block {
            ParamBlock::Mean => gs.iter().flat_map(|g| g.mean.iter().copied().collect::<Vec<_>>()).collect(),
            ParamBlock::Quat => gs.iter().flat_map(|g| [g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z]).collect(),
            ParamBlock::Scale => gs.iter().flat_map(|g| g.scale_logits.iter().copied().collect::<Vec<_>>()).collect(),
            ParamBlock::Opacity => gs.iter().map(|g| g.opacity_logit).collect(),
            ParamBlock::Sh => gs.iter().flat_map(|g| g.sh.iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()).collect(),
            ParamBlock::Position => self.frame.pose.translation.iter().copied().collect(),
            ParamBlock::Rotation => vec![0.0; 3],
            ParamBlock::LinearVelocity => self.frame.linear_velocity.iter().copied().collect(),
            ParamBlock::AngularVelocity => self.frame.angular_velocity.iter().copied().collect(),
        }
    }

    /// Scene and frame with a block replaced by `x`. Rotation is a right tangent offset.
    pub fn with_params(&self, block: ParamBlock, x: &[f64]) -> (Scene, FrameMotion) {
        let mut scene = self.scene.clone();
        let mut frame = self.frame;
        let v3 = |i: usize| Vec3::new(x[i], x[i + 1], x[i + 2]);
        match block {
            ParamBlock::Mean => scene.gaussians.iter_mut().enumerate().for_each(|(i, g)| g.mean = v3(3 * i)),
            ParamBlock::Quat => scene
                .gaussians
                .iter_mut()
                .enumerate()
                .for_each(|(i, g)| g.rotation = Quat::new(x[4 * i], x[4 * i + 1], x[4 * i + 2], x[4 * i + 3])),
            ParamBlock::Scale => scene.gaussians.iter_mut().enumerate().for_each(|(i, g)| g.scale_logits = v3(3 * i)),
            ParamBlock::Opacity => scene.gaussians.iter_mut().enumerate().for_each(|(i, g)| g.opacity_logit = x[i]),
            ParamBlock::Sh => scene.gaussians.iter_mut().enumerate().for_each(|(i, g)| {
                for (k, c) in g.sh.iter_mut().enumerate() {
                    *c = v3(3 * (i * SH_COEFFS + k));
                }
            }),
            ParamBlock::Position => frame.pose.translation = v3(0),
            ParamBlock::Rotation => frame.pose.rotation = self.frame.pose.rotation * so3_exp(&v3(0)),
            ParamBlock::LinearVelocity => frame.linear_velocity = v3(0),
            ParamBlock::AngularVelocity => frame.angular_velocity = v3(0),
        }
        (scene, frame)
    }

    /// Analytic gradient of a block, laid out like [`CheckProblem::params`].
    pub fn block_gradient(&self, grads: &GradBuffers, block: ParamBlock) -> Vec<f64> {
        let gs = &grads.gaussians;
        let f = &grads.frame;
        match block {
            ParamBlock::Mean => gs.iter().flat_map(|g| g.d_mu.iter().copied().collect::<Vec<_>>()).collect(),
            ParamBlock::Quat => gs.iter().flat_map(|g| g.d_q.iter().copied().collect::<Vec<_>>()).collect(),
            ParamBlock::Scale => gs.iter().flat_map(|g| g.d_s.iter().copied().collect::<Vec<_>>()).collect(),
            ParamBlock::Opacity => gs.iter().map(|g| g.d_alpha_logit).collect(),
            ParamBlock::Sh => gs.iter().flat_map(|g| g.d_sh.iter().flat_map(|c| c.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>()).collect(),
            ParamBlock::Position => f.d_p.iter().copied().collect(),
            ParamBlock::Rotation => f.d_rot.iter().copied().collect(),
            ParamBlock::LinearVelocity => f.d_v.iter().copied().collect(),
            ParamBlock::AngularVelocity => f.d_w.iter().copied().collect(),
        }
    }

    /// Default step layout for a block.
    pub fn fd_options(&self, block: ParamBlock) -> FdOptions {
        FdOptions {
            scales: vec![block.step_scale(); self.params(block).len()],
            ..Default::default()
        }
    }

    pub fn check(&self, block: ParamBlock, opts: &FdOptions) -> Result<FdReport> {
        let grads = self.gradients()?;
        Ok(self.check_with(&grads, block, opts))
    }

    /// Check a block against precomputed gradients.
    pub fn check_with(&self, grads: &GradBuffers, block: ParamBlock, opts: &FdOptions) -> FdReport {
        let x = self.params(block);
        let g = self.block_gradient(grads, block);
        let f = |p: &[f64]| {
            let (scene, frame) = self.with_params(block, p);
            self.loss_of(&scene, &frame).unwrap_or(f64::NAN)
        };
        fd_check(f, &x, &g, opts)
    }
}
