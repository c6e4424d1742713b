//! Photometric loss and the pose anchoring penalty.

use crate::error::Result;
use crate::geometry::{so3_log, Pose, Vec3};
use crate::image::Image;

use super::metrics::ssim;

pub const L1_WEIGHT: f64 = 0.8;
pub const SSIM_WEIGHT: f64 = 0.2;

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs().sum()).sum();
    Ok(sum / (3 * a.data.len()) as f64)
}

/// `0.8 L1 + 0.2 (1 - SSIM)` between gamma-space images.
pub fn photometric_loss(rendered: &Image, reference: &Image) -> Result<f64> {
    Ok(L1_WEIGHT * l1(rendered, reference)? + SSIM_WEIGHT * (1.0 - ssim(rendered, reference)?))
}

/// Loss value plus its gradient with respect to `rendered`. SSIM is treated as a constant.
pub fn photometric_loss_grad(rendered: &Image, reference: &Image) -> Result<(f64, Image)> {
    let loss = photometric_loss(rendered, reference)?;
    let scale = L1_WEIGHT / (3 * rendered.data.len()) as f64;
    let grad = Image {
        data: rendered
            .data
            .iter()
            .zip(&reference.data)
            .map(|(a, b)| (a - b).map(|d| scale * sign(d)))
            .collect(),
        ..rendered.clone()
    };
    Ok((loss, grad))
}

fn sign(d: f64) -> f64 {
    if d > 0.0 {
        1.0
    } else if d < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyWeights {
    pub translation: f64,
    pub rotation: f64,
}

/// `lambda_p sum |p - p0|^2 + lambda_r sum |log(R0^T R)|^2` over paired poses.
pub fn pose_penalty<'a>(poses: impl IntoIterator<Item = &'a Pose>, anchors: &[Pose], w: &PenaltyWeights) -> f64 {
    poses
        .into_iter()
        .zip(anchors)
        .map(|(p, a)| {
            w.translation * (p.translation - a.translation).norm_squared()
                + w.rotation * so3_log(&(a.rotation.transpose() * p.rotation)).norm_squared()
        })
        .sum()
}

/// Gradient of one frame's penalty term as `(d_p, d_rot)`, with rotation perturbed as `R exp(d_rot)`.
pub fn pose_penalty_grad(pose: &Pose, anchor: &Pose, w: &PenaltyWeights) -> (Vec3, Vec3) {
    let phi = so3_log(&(anchor.rotation.transpose() * pose.rotation));
    (2.0 * w.translation * (pose.translation - anchor.translation), 2.0 * w.rotation * phi)
}
