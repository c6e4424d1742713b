//! Analytic backward pass and the finite-difference harness that checks it.

mod chain;
pub mod check;
mod fd;
mod pixel;

use nalgebra::Vector4;

use crate::geometry::Vec3;
use crate::scene::SH_COEFFS;

pub use chain::{backward_all, backward_gaussians, grad_pose, grad_velocity, quat_grad};
pub use check::{CheckProblem, CheckSetup, ParamBlock};
pub use fd::{fd_check, FdOptions, FdReport};
pub use pixel::{backward_pixel, SplatPixelGrads};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianGrad {
    pub d_mu: Vec3,
    /// Gradient with respect to the raw (unnormalized) quaternion `(w, x, y, z)`.
    pub d_q: Vector4<f64>,
    pub d_s: Vec3,
    pub d_alpha_logit: f64,
    pub d_sh: [Vec3; SH_COEFFS],
}

impl Default for GaussianGrad {
    fn default() -> Self {
        GaussianGrad {
            d_mu: Vec3::zeros(),
            d_q: Vector4::zeros(),
            d_s: Vec3::zeros(),
            d_alpha_logit: 0.0,
            d_sh: [Vec3::zeros(); SH_COEFFS],
        }
    }
}

impl GaussianGrad {
    pub fn add(&mut self, o: &GaussianGrad) {
        self.d_mu += o.d_mu;
        self.d_q += o.d_q;
        self.d_s += o.d_s;
        self.d_alpha_logit += o.d_alpha_logit;
        for (a, b) in self.d_sh.iter_mut().zip(&o.d_sh) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_mu.iter().chain(self.d_q.iter()).chain(self.d_s.iter()).all(|v| v.is_finite())
            && self.d_alpha_logit.is_finite()
            && self.d_sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// Per-frame gradients. `d_p` and `d_rot` refer to the camera-to-world pose, with the
/// rotation perturbed on the right as `R exp(d_rot)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameGrad {
    pub d_p: Vec3,
    pub d_rot: Vec3,
    pub d_v: Vec3,
    pub d_w: Vec3,
}

impl Default for FrameGrad {
    fn default() -> Self {
        FrameGrad {
            d_p: Vec3::zeros(),
            d_rot: Vec3::zeros(),
            d_v: Vec3::zeros(),
            d_w: Vec3::zeros(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradBuffers {
    pub gaussians: Vec<GaussianGrad>,
    pub frame: FrameGrad,
}

impl GradBuffers {
    pub fn zeros(n_gaussians: usize) -> Self {
        GradBuffers {
            gaussians: vec![GaussianGrad::default(); n_gaussians],
            frame: FrameGrad::default(),
        }
    }
}
