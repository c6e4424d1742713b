//! Pinhole intrinsics, per-frame camera motion and blur / rolling-shutter sample timing.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Mat3, Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let k = Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// Centered principal point with focal length `focal_scale * width`.
    pub fn centered(width: usize, height: usize, focal_scale: f64) -> Result<Self> {
        let f = focal_scale * width as f64;
        Intrinsics::new(f, f, width as f64 * 0.5, height as f64 * 0.5, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.fx.is_finite() || !self.fy.is_finite() {
            return Err(Error::invalid("intrinsics: focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("intrinsics: image size must be at least 1x1"));
        }
        if !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid("intrinsics: principal point must be finite"));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }
}

/// Camera state for one frame: midpoint pose plus constant local velocities over the frame interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameMotion {
    /// Camera-to-world pose at the frame midpoint.
    pub pose: Pose,
    /// Linear velocity in camera coordinates (world units / s).
    pub linear_velocity: Vec3,
    /// Angular velocity in camera coordinates (rad / s).
    pub angular_velocity: Vec3,
    pub exposure: f64,
    pub readout: f64,
    pub timestamp: f64,
}

impl FrameMotion {
    pub fn still(pose: Pose) -> Self {
        FrameMotion {
            pose,
            linear_velocity: Vec3::zeros(),
            angular_velocity: Vec3::zeros(),
            exposure: 0.0,
            readout: 0.0,
            timestamp: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.exposure >= 0.0) || !(self.readout >= 0.0) {
            return Err(Error::invalid("frame: exposure and readout times must be non-negative"));
        }
        if !self.pose.is_finite()
            || !self.linear_velocity.iter().chain(self.angular_velocity.iter()).all(|v| v.is_finite())
        {
            return Err(Error::invalid("frame: non-finite pose or velocity"));
        }
        Ok(())
    }

    /// Camera pose at `dt` seconds from the frame midpoint under the constant-velocity model.
    pub fn pose_at(&self, dt: f64) -> Pose {
        pose_at(self, dt)
    }

    /// Largest `|dt|` reached by any blur / readout sample.
    pub fn max_offset(&self) -> f64 {
        0.5 * (self.exposure + self.readout)
    }

    pub fn has_motion(&self) -> bool {
        self.linear_velocity != Vec3::zeros() || self.angular_velocity != Vec3::zeros()
    }
}

/// `[R exp(dt [w]x) | p + dt R v]`.
pub fn pose_at(fm: &FrameMotion, dt: f64) -> Pose {
    let r = fm.pose.rotation;
    let rotation: Mat3 = r * so3_exp(&(fm.angular_velocity * dt));
    Pose::new(rotation, fm.pose.translation + r * (fm.linear_velocity * dt))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    /// Blur samples per pixel along the exposure interval.
    pub n_blur: usize,
    pub gamma: f64,
    /// Near-plane depth; closer splats are discarded.
    pub d_min: f64,
    /// Culling margin beyond the image border, in pixels.
    pub cull_margin: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            n_blur: 5,
            gamma: 2.2,
            d_min: 0.2,
            cull_margin: 32.0,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_blur == 0 {
            return Err(Error::invalid("render config: n_blur must be at least 1"));
        }
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::invalid("render config: gamma must be positive"));
        }
        if !(self.d_min > 0.0) {
            return Err(Error::invalid("render config: d_min must be positive"));
        }
        if !(self.cull_margin >= 0.0) {
            return Err(Error::invalid("render config: cull_margin must be non-negative"));
        }
        Ok(())
    }
}

/// Exposure part of the sample time for blur sample `k` (1-based) out of `n_blur`.
pub fn exposure_offset(k: usize, n_blur: usize, exposure: f64) -> f64 {
    if n_blur <= 1 {
        return 0.0;
    }
    ((k - 1) as f64 / (n_blur - 1) as f64 - 0.5) * exposure
}

/// Readout part of the sample time for pixel row `y`; the top row is read first.
pub fn readout_offset(y: usize, height: usize, readout: f64) -> f64 {
    ((y as f64 + 0.5) / height as f64 - 0.5) * readout
}

/// Time offset from the frame midpoint of blur sample `k` (1-based) at pixel row `y`.
pub fn sample_offset(k: usize, y: usize, n_blur: usize, height: usize, fm: &FrameMotion) -> f64 {
    debug_assert!(k >= 1 && k <= n_blur.max(1));
    exposure_offset(k, n_blur, fm.exposure) + readout_offset(y, height, fm.readout)
}
