//! Chain rule from pixel-space splat gradients to Gaussian, pose and velocity parameters.

use nalgebra::Vector4;

use crate::error::Result;
use crate::geometry::{quat_to_rotmat, Mat3, Quat, Vec3};
use crate::projection::{Jacobian, ProjectedGaussian};
use crate::rasterizer::RenderPass;
use crate::scene::{sh_basis_grad, sigmoid, Gaussian, Scene, SH_COEFFS};

use super::pixel::SplatPixelGrads;
use super::{FrameGrad, GaussianGrad};

/// Gradients of one splat's camera-space quantities.
#[derive(Debug, Clone, Copy)]
pub(crate) struct CameraGrads {
    /// `dL/d mean_cam` through projection, Jacobian and pixel velocity.
    pub mean: Vec3,
    pub cov: Mat3,
    /// `dL/du` with `u = w x mean_cam + v`.
    pub rel_vel: Vec3,
}

pub(crate) fn camera_grads(pg: &ProjectedGaussian, d: &SplatPixelGrads, fx: f64, fy: f64, v: &Vec3, w: &Vec3) -> CameraGrads {
    let j = pg.jac;
    let a = pg.conic;
    let g_cov_px = -(a * d.d_conic * a);
    let g_cov_px = 0.5 * (g_cov_px + g_cov_px.transpose());
    let cov = j.transpose() * g_cov_px * j;

    let m = pg.mean_cam;
    let u = w.cross(&m) + v;
    let g_j: Jacobian = 2.0 * g_cov_px * j * pg.cov_cam - d.d_vel_px * u.transpose();
    let rel_vel = -(j.transpose() * d.d_vel_px);

    let mut mean = j.transpose() * d.d_mean_px + rel_vel.cross(w);
    let iz = 1.0 / m.z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    mean.x += g_j[(0, 2)] * (-fx * iz2);
    mean.y += g_j[(1, 2)] * (-fy * iz2);
    mean.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * m.x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * m.y * iz3);
    CameraGrads { mean, cov, rel_vel }
}

/// Gradient with respect to the raw quaternion, given `dL/dR` for `R = R(q / |q|)`.
pub fn quat_grad(q: &Quat, g: &Mat3) -> Result<Vector4<f64>> {
    let n = q.norm();
    let Quat { w, x, y, z } = q.normalized()?;
    let dq = 2.0
        * Vector4::new(
            -z * g[(0, 1)] + y * g[(0, 2)] + z * g[(1, 0)] - x * g[(1, 2)] - y * g[(2, 0)] + x * g[(2, 1)],
            y * g[(0, 1)] + z * g[(0, 2)] + y * g[(1, 0)] - 2.0 * x * g[(1, 1)] - w * g[(1, 2)] + z * g[(2, 0)] + w * g[(2, 1)]
                - 2.0 * x * g[(2, 2)],
            -2.0 * y * g[(0, 0)] + x * g[(0, 1)] + w * g[(0, 2)] + x * g[(1, 0)] + z * g[(1, 2)] - w * g[(2, 0)] + z * g[(2, 1)]
                - 2.0 * y * g[(2, 2)],
            -2.0 * z * g[(0, 0)] - w * g[(0, 1)] + x * g[(0, 2)] + w * g[(1, 0)] - 2.0 * z * g[(1, 1)] + y * g[(1, 2)]
                + x * g[(2, 0)]
                + y * g[(2, 1)],
        );
    let unit = Vector4::new(w, x, y, z);
    Ok((dq - unit * unit.dot(&dq)) / n)
}

/// Gradients of one Gaussian's parameters given its camera-space gradients.
pub(crate) fn gaussian_grad(
    g: &Gaussian,
    pg: &ProjectedGaussian,
    d: &SplatPixelGrads,
    cam: &CameraGrads,
    pose_rotation: &Mat3,
) -> Result<GaussianGrad> {
    let mut dc = d.d_color;
    for c in 0..3 {
        if !pg.color_mask[c] {
            dc[c] = 0.0;
        }
    }
    let mut d_sh = [Vec3::zeros(); SH_COEFFS];
    for (out, y) in d_sh.iter_mut().zip(&pg.sh_basis) {
        *out = dc * *y;
    }

    // View direction depends on the mean through the normalized offset from the camera.
    let grads = sh_basis_grad(&pg.view_dir);
    let d_dir = grads.iter().zip(&g.sh).fold(Vec3::zeros(), |acc, (gy, c)| acc + gy * c.dot(&dc));
    let dir = pg.view_dir;
    let d_mu_color = (d_dir - dir * dir.dot(&d_dir)) / pg.view_dist;
    let d_mu = pose_rotation * cam.mean + d_mu_color;

    let g_cov = pose_rotation * cam.cov * pose_rotation.transpose();
    let g_cov = 0.5 * (g_cov + g_cov.transpose());
    let m = quat_to_rotmat(&g.rotation)?;
    let var = g.scale_logits.map(sigmoid);
    let g_m = 2.0 * g_cov * m * Mat3::from_diagonal(&var);
    let inner = m.transpose() * g_cov * m;
    let d_s = Vec3::from_fn(|i, _| inner[(i, i)] * var[i] * (1.0 - var[i]));
    let d_q = quat_grad(&g.rotation, &g_m)?;

    let o = pg.opacity;
    Ok(GaussianGrad {
        d_mu,
        d_q,
        d_s,
        d_alpha_logit: d.d_opacity * o * (1.0 - o),
        d_sh,
    })
}

/// Per-splat camera gradients, indexed like `pass.splats`.
pub(crate) fn all_camera_grads(pass: &RenderPass, pixel: &[SplatPixelGrads]) -> Vec<CameraGrads> {
    let fm = &pass.frame;
    pass.splats
        .iter()
        .zip(pixel)
        .map(|(pg, d)| camera_grads(pg, d, pass.intrinsics.fx, pass.intrinsics.fy, &fm.linear_velocity, &fm.angular_velocity))
        .collect()
}

/// World-space Gaussian gradients, indexed by scene position; culled splats get zeros.
pub fn backward_gaussians(scene: &Scene, pass: &RenderPass, pixel: &[SplatPixelGrads]) -> Result<Vec<GaussianGrad>> {
    let cams = all_camera_grads(pass, pixel);
    gaussians_from_camera(scene, pass, pixel, &cams)
}

fn gaussians_from_camera(scene: &Scene, pass: &RenderPass, pixel: &[SplatPixelGrads], cams: &[CameraGrads]) -> Result<Vec<GaussianGrad>> {
    let mut out = vec![GaussianGrad::default(); scene.len()];
    let r = pass.frame.pose.rotation;
    for ((pg, d), cam) in pass.splats.iter().zip(pixel).zip(cams) {
        out[pg.source] = gaussian_grad(&scene.gaussians[pg.source], pg, d, cam, &r)?;
    }
    Ok(out)
}

/// Approximate camera-pose gradients from the mean path only.
///
/// Returns `(d_p, d_rot)` for the camera-to-world pose, with the rotation perturbed as
/// `R exp(d_rot)`. The dependence of view-dependent color and of camera-space covariance
/// on the pose is left out.
pub fn grad_pose(pass: &RenderPass, pixel: &[SplatPixelGrads]) -> (Vec3, Vec3) {
    pose_from_camera(pass, &all_camera_grads(pass, pixel))
}

fn pose_from_camera(pass: &RenderPass, cams: &[CameraGrads]) -> (Vec3, Vec3) {
    // World-to-camera forms: translation t' = -R^T p, rotation R' = R^T.
    let mut d_t = Vec3::zeros();
    let mut d_eps = Vec3::zeros();
    for (pg, cam) in pass.splats.iter().zip(cams) {
        d_t += cam.mean;
        d_eps += pg.mean_cam.cross(&cam.mean);
    }
    let r = pass.frame.pose.rotation;
    let d_p = -(r * d_t);
    let d_rot = -d_eps;
    (d_p, d_rot)
}

/// Gradients with respect to the frame's linear and angular velocity.
pub fn grad_velocity(pass: &RenderPass, pixel: &[SplatPixelGrads]) -> (Vec3, Vec3) {
    velocity_from_camera(pass, &all_camera_grads(pass, pixel))
}

fn velocity_from_camera(pass: &RenderPass, cams: &[CameraGrads]) -> (Vec3, Vec3) {
    let mut d_v = Vec3::zeros();
    let mut d_w = Vec3::zeros();
    for (pg, cam) in pass.splats.iter().zip(cams) {
        d_v += cam.rel_vel;
        d_w += pg.mean_cam.cross(&cam.rel_vel);
    }
    (d_v, d_w)
}

/// All parameter gradients for one frame.
pub fn backward_all(scene: &Scene, pass: &RenderPass, pixel: &[SplatPixelGrads]) -> Result<super::GradBuffers> {
    let cams = all_camera_grads(pass, pixel);
    let gaussians = gaussians_from_camera(scene, pass, pixel, &cams)?;
    let (d_p, d_rot) = pose_from_camera(pass, &cams);
    let (d_v, d_w) = velocity_from_camera(pass, &cams);
    Ok(super::GradBuffers {
        gaussians,
        frame: FrameGrad { d_p, d_rot, d_v, d_w },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_exp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quat_grad_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let q = Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let w = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
            let an = quat_grad(&q, &w).unwrap();
            let h = 1e-6;
            for i in 0..4 {
                let mut a = q.as_vector();
                let mut b = q.as_vector();
                a[i] += h;
                b[i] -= h;
                let f = |v: Vector4<f64>| quat_to_rotmat(&Quat::from_vector(&v)).unwrap().component_mul(&w).sum();
                let fd = (f(a) - f(b)) / (2.0 * h);
                assert!((fd - an[i]).abs() < 1e-7 * (1.0 + fd.abs()), "component {i}: {fd} vs {}", an[i]);
            }
        }
    }

    #[test]
    fn pose_rotation_sign_matches_mean_perturbation() {
        // For the mean path alone, d_rot = sum g x mean_cam.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 4.0);
        let g = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let h = 1e-6;
        let delta = Vec3::new(0.3, -0.2, 0.5);
        // mean_cam(delta) = exp(-delta) m for R <- R exp(delta).
        let f = |t: f64| g.dot(&(so3_exp(&(-delta * t)) * m));
        let fd = (f(h) - f(-h)) / (2.0 * h);
        assert!((fd - g.cross(&m).dot(&delta)).abs() < 1e-8);
        assert!((g.cross(&m) + m.cross(&g)).norm() < 1e-15);
    }
}
