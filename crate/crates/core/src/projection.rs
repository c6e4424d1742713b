//! World -> camera -> pixel mapping of splats, the pinhole Jacobian, pixel
//! velocities induced by camera motion, and frustum culling.
//!
//! Only the pixel mean moves across blur samples; depth, pixel covariance and
//! color are evaluated once at the frame midpoint.

use nalgebra::{Matrix2, Matrix2x3, Vector2};
use rayon::prelude::*;

use crate::camera::{FrameMotion, Intrinsics, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::{Mat3, Pose, Vec3};
use crate::scene::{activate_color, sh_basis, sh_eval, Gaussian, Scene, SH_COEFFS};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;
pub type Jacobian = Matrix2x3<f64>;

/// Isotropic dilation added to every pixel covariance (pixels^2).
pub const COV_FLOOR: f64 = 0.3;

/// A splat expressed in camera coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraGaussian {
    pub mean: Vec3,
    pub cov: Mat3,
    /// Unit world-space direction from the camera center to the mean.
    pub dir: Vec3,
    pub dist: f64,
}

/// `mean = R^T (mu - p)`, `cov = R^T Sigma R`, plus the normalized viewing direction.
pub fn world_to_camera(g: &Gaussian, pose: &Pose) -> Result<CameraGaussian> {
    let offset = g.mean - pose.translation;
    let dist = offset.norm();
    if !(dist > 0.0) {
        return Err(Error::DegenerateDirection { index: 0 });
    }
    let rt = pose.rotation.transpose();
    let cov = g.covariance()?;
    Ok(CameraGaussian {
        mean: rt * offset,
        cov: rt * cov * pose.rotation,
        dir: offset / dist,
        dist,
    })
}

/// Jacobian of `mean_cam -> pixel` for the pinhole model.
pub fn projection_jacobian(mean_cam: &Vec3, k: &Intrinsics) -> Jacobian {
    let inv_z = 1.0 / mean_cam.z;
    Jacobian::new(
        k.fx * inv_z,
        0.0,
        -k.fx * mean_cam.x * inv_z * inv_z,
        0.0,
        k.fy * inv_z,
        -k.fy * mean_cam.y * inv_z * inv_z,
    )
}

/// Pixel mean, depth and (unfloored) pixel covariance, or `None` when closer than `d_min`.
pub fn project(mean_cam: &Vec3, cov_cam: &Mat3, k: &Intrinsics, d_min: f64) -> Option<(Vec2, f64, Mat2)> {
    let depth = mean_cam.z;
    if !(depth >= d_min) {
        return None;
    }
    let mean_px = Vec2::new(
        k.fx * mean_cam.x / depth + k.cx,
        k.fy * mean_cam.y / depth + k.cy,
    );
    let j = projection_jacobian(mean_cam, k);
    let cov = j * cov_cam * j.transpose();
    Some((mean_px, depth, 0.5 * (cov + cov.transpose())))
}

/// First-order pixel velocity `-J (w x mean + v)` at the frame midpoint.
pub fn pixel_velocity(mean_cam: &Vec3, v: &Vec3, w: &Vec3, jac: &Jacobian) -> Vec2 {
    -(jac * (w.cross(mean_cam) + v))
}

/// A splat in pixel space for one frame, plus what the backward pass needs.
#[derive(Debug, Clone)]
pub struct ProjectedGaussian {
    pub source: usize,
    pub mean_px: Vec2,
    pub depth: f64,
    /// Pixel covariance including [`COV_FLOOR`].
    pub cov_px: Mat2,
    /// Inverse of `cov_px`.
    pub conic: Mat2,
    pub color: Vec3,
    pub opacity: f64,
    pub vel_px: Vec2,
    pub(crate) mean_cam: Vec3,
    pub(crate) cov_cam: Mat3,
    pub(crate) jac: Jacobian,
    pub(crate) view_dir: Vec3,
    pub(crate) view_dist: f64,
    pub(crate) color_mask: [bool; 3],
    pub(crate) sh_basis: [f64; SH_COEFFS],
}

impl ProjectedGaussian {
    /// Bare splat for rasterizer tests; backward caches are zero.
    pub fn flat(source: usize, mean_px: Vec2, depth: f64, cov_px: Mat2, color: Vec3, opacity: f64, vel_px: Vec2) -> Self {
        let conic = cov_px.try_inverse().unwrap_or_else(Mat2::zeros);
        ProjectedGaussian {
            source,
            mean_px,
            depth,
            cov_px,
            conic,
            color,
            opacity,
            vel_px,
            mean_cam: Vec3::new(0.0, 0.0, depth),
            cov_cam: Mat3::zeros(),
            jac: Jacobian::zeros(),
            view_dir: Vec3::z(),
            view_dist: depth,
            color_mask: [true; 3],
            sh_basis: [0.0; SH_COEFFS],
        }
    }

    /// Pixel-space mean at time offset `dt`.
    #[inline]
    pub fn mean_at(&self, dt: f64) -> Vec2 {
        self.mean_px + self.vel_px * dt
    }
}

/// Keep a splat when it is in front of the near plane and its mean lies within the
/// image expanded by the cull margin plus the distance it travels during the frame.
pub fn cull(pg: &ProjectedGaussian, cfg: &RenderConfig, k: &Intrinsics, fm: &FrameMotion) -> bool {
    if !(pg.depth >= cfg.d_min) {
        return false;
    }
    let m = cfg.cull_margin + pg.vel_px.norm() * fm.max_offset();
    let (x, y) = (pg.mean_px.x, pg.mean_px.y);
    x >= -m && x <= k.width as f64 + m && y >= -m && y <= k.height as f64 + m
}

/// Project one splat; `None` when behind the near plane.
pub fn project_gaussian(
    index: usize,
    g: &Gaussian,
    fm: &FrameMotion,
    k: &Intrinsics,
    cfg: &RenderConfig,
) -> Result<Option<ProjectedGaussian>> {
    let cam = world_to_camera(g, &fm.pose).map_err(|e| match e {
        Error::DegenerateDirection { .. } => Error::DegenerateDirection { index },
        e => e,
    })?;
    let Some((mean_px, depth, cov)) = project(&cam.mean, &cam.cov, k, cfg.d_min) else {
        return Ok(None);
    };
    let cov_px = cov + Mat2::identity() * COV_FLOOR;
    let Some(conic) = cov_px.try_inverse() else {
        return Ok(None);
    };
    let jac = projection_jacobian(&cam.mean, k);
    let vel_px = pixel_velocity(&cam.mean, &fm.linear_velocity, &fm.angular_velocity, &jac);
    let basis = sh_basis(&cam.dir);
    let (color, color_mask) = activate_color(&sh_eval(&g.sh, &basis));
    Ok(Some(ProjectedGaussian {
        source: index,
        mean_px,
        depth,
        cov_px,
        conic: 0.5 * (conic + conic.transpose()),
        color,
        opacity: g.opacity(),
        vel_px,
        mean_cam: cam.mean,
        cov_cam: cam.cov,
        jac,
        view_dir: cam.dir,
        view_dist: cam.dist,
        color_mask,
        sh_basis: basis,
    }))
}

/// Project and cull every splat for one frame, preserving scene order.
pub fn project_scene(scene: &Scene, fm: &FrameMotion, k: &Intrinsics, cfg: &RenderConfig) -> Result<Vec<ProjectedGaussian>> {
    let projected: Vec<Result<Option<ProjectedGaussian>>> = crate::parallel::install(|| {
        scene
            .gaussians
            .par_iter()
            .enumerate()
            .map(|(i, g)| project_gaussian(i, g, fm, k, cfg))
            .collect()
    });
    let mut out = Vec::with_capacity(projected.len());
    for p in projected {
        if let Some(pg) = p? {
            if cull(&pg, cfg, k, fm) {
                out.push(pg);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::pose_at;
    use crate::geometry::{so3_exp, Quat};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intr(fx: f64, cx: f64) -> Intrinsics {
        Intrinsics::new(fx, fx, cx, cx, 64, 64).unwrap()
    }

    fn rvec(rng: &mut impl Rng, s: f64) -> Vec3 {
        Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    #[test]
    fn world_to_camera_examples() {
        let g = Gaussian::isotropic(Vec3::new(0.0, 0.0, 5.0), 0.5, 0.5, Vec3::repeat(0.5));
        let c = world_to_camera(&g, &Pose::identity()).unwrap();
        assert_eq!(c.mean, Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(c.dir, Vec3::z());

        let mut iso = g.clone();
        iso.scale_logits = Vec3::repeat(40.0);
        let pose = Pose::new(so3_exp(&Vec3::new(0.4, -1.1, 0.3)), Vec3::new(1.0, 2.0, -3.0));
        let c = world_to_camera(&iso, &pose).unwrap();
        assert!((c.cov - Mat3::identity()).amax() < 1e-12);
    }

    #[test]
    fn world_to_camera_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let pose = Pose::new(so3_exp(&rvec(&mut rng, 2.0)), rvec(&mut rng, 5.0));
            let g = Gaussian::isotropic(rvec(&mut rng, 5.0), 0.1, 0.5, Vec3::repeat(0.3));
            let c = world_to_camera(&g, &pose).unwrap();
            assert!((pose.transform_point(&c.mean) - g.mean).norm() < 1e-9);
            assert!((c.dir.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gaussian_at_camera_center_is_degenerate() {
        let g = Gaussian::isotropic(Vec3::zeros(), 0.5, 0.5, Vec3::repeat(0.5));
        assert!(matches!(world_to_camera(&g, &Pose::identity()), Err(Error::DegenerateDirection { .. })));
    }

    #[test]
    fn project_examples() {
        let k = intr(100.0, 32.0);
        let (m, d, _) = project(&Vec3::new(0.0, 0.0, 3.0), &Mat3::identity(), &k, 0.1).unwrap();
        assert_eq!(m, Vec2::new(32.0, 32.0));
        assert_eq!(d, 3.0);

        let k = intr(100.0, 0.0);
        let (m, d, _) = project(&Vec3::new(1.0, 0.0, 2.0), &Mat3::identity(), &k, 0.1).unwrap();
        assert_eq!(m, Vec2::new(50.0, 0.0));
        assert_eq!(d, 2.0);
        assert!(project(&Vec3::new(0.0, 0.0, 0.05), &Mat3::identity(), &k, 0.1).is_none());
    }

    #[test]
    fn jacobian_on_axis_is_diagonal() {
        let k = Intrinsics::new(100.0, 80.0, 0.0, 0.0, 64, 64).unwrap();
        let j = projection_jacobian(&Vec3::new(0.0, 0.0, 4.0), &k);
        assert_eq!(j, Jacobian::new(25.0, 0.0, 0.0, 0.0, 20.0, 0.0));
        let m = Vec3::new(0.3, -0.2, 2.5);
        let j1 = projection_jacobian(&m, &k);
        let j2 = projection_jacobian(&(m * 2.0), &k);
        assert!((j1 * 0.5 - j2).amax() < 1e-15);
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let k = Intrinsics::new(70.0, 90.0, 31.0, 29.0, 64, 64).unwrap();
        for _ in 0..50 {
            let m = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(1.0..6.0));
            let j = projection_jacobian(&m, &k);
            let h = 1e-6;
            for axis in 0..3 {
                let mut e = Vec3::zeros();
                e[axis] = h;
                let p = project(&(m + e), &Mat3::zeros(), &k, 0.01).unwrap().0;
                let q = project(&(m - e), &Mat3::zeros(), &k, 0.01).unwrap().0;
                let fd = (p - q) / (2.0 * h);
                let col = j.column(axis);
                let scale = col.norm().max(1.0);
                assert!((fd - col).norm() / scale < 1e-6, "axis {axis}: {fd:?} vs {col:?}");
            }
        }
    }

    #[test]
    fn pixel_velocity_examples() {
        let k = intr(100.0, 0.0);
        let m = Vec3::new(0.0, 0.0, 2.0);
        let j = projection_jacobian(&m, &k);
        assert_eq!(pixel_velocity(&m, &Vec3::zeros(), &Vec3::zeros(), &j), Vec2::zeros());
        assert_eq!(pixel_velocity(&m, &Vec3::x(), &Vec3::zeros(), &j), Vec2::new(-50.0, 0.0));
        // Moving straight at an on-axis splat leaves it in place.
        assert_eq!(pixel_velocity(&m, &Vec3::new(0.0, 0.0, 3.0), &Vec3::zeros(), &j), Vec2::zeros());
    }

    #[test]
    fn pixel_velocity_matches_trajectory_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = intr(80.0, 32.0);
        for _ in 0..20 {
            let pose = Pose::new(so3_exp(&rvec(&mut rng, 0.5)), rvec(&mut rng, 0.5));
            let cam_pt = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0));
            let world = pose.transform_point(&cam_pt);
            let fm = FrameMotion {
                linear_velocity: rvec(&mut rng, 2.0),
                angular_velocity: rvec(&mut rng, 2.0),
                ..FrameMotion::still(pose)
            };
            let px = |dt: f64| {
                let p = pose_at(&fm, dt);
                let c = p.rotation.transpose() * (world - p.translation);
                project(&c, &Mat3::zeros(), &k, 0.01).unwrap().0
            };
            let j = projection_jacobian(&cam_pt, &k);
            let v = pixel_velocity(&cam_pt, &fm.linear_velocity, &fm.angular_velocity, &j);
            let errs: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
                .iter()
                .map(|dt| ((px(*dt) - px(0.0)) / *dt - v).norm())
                .collect();
            // One-sided differences converge at first order.
            for w in errs.windows(2) {
                let order = (w[0] / w[1]).log2();
                assert!(order >= 0.9, "order {order} from {errs:?}");
            }
        }
    }

    #[test]
    fn pixel_velocity_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let k = intr(60.0, 32.0);
        for _ in 0..50 {
            let m = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..5.0));
            let j = projection_jacobian(&m, &k);
            let (v1, w1, v2, w2) = (rvec(&mut rng, 2.0), rvec(&mut rng, 2.0), rvec(&mut rng, 2.0), rvec(&mut rng, 2.0));
            let (a, b) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let lhs = pixel_velocity(&m, &(v1 * a + v2 * b), &(w1 * a + w2 * b), &j);
            let rhs = pixel_velocity(&m, &v1, &w1, &j) * a + pixel_velocity(&m, &v2, &w2, &j) * b;
            assert!((lhs - rhs).norm() < 1e-10 * (1.0 + lhs.norm()));
        }
    }

    #[test]
    fn projection_is_rigidly_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let k = intr(64.0, 32.0);
        let cfg = RenderConfig::default();
        for _ in 0..20 {
            let g = Gaussian {
                mean: Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(3.0..6.0)),
                rotation: Quat::from_axis_angle(&rvec(&mut rng, 2.0)),
                scale_logits: rvec(&mut rng, 2.0),
                ..Gaussian::isotropic(Vec3::zeros(), 0.1, 0.7, Vec3::repeat(0.4))
            };
            let fm = FrameMotion::still(Pose::identity());
            let a = project_gaussian(0, &g, &fm, &k, &cfg).unwrap().unwrap();

            let t = Pose::new(so3_exp(&rvec(&mut rng, 2.0)), rvec(&mut rng, 4.0));
            let qt = Quat::from_axis_angle(&crate::geometry::so3_log(&t.rotation));
            let rot = |q: &Quat| {
                let (a, b) = (qt, *q);
                Quat::new(
                    a.w * b.w - a.x * b.x - a.y * b.y - a.z * b.z,
                    a.w * b.x + a.x * b.w + a.y * b.z - a.z * b.y,
                    a.w * b.y - a.x * b.z + a.y * b.w + a.z * b.x,
                    a.w * b.z + a.x * b.y - a.y * b.x + a.z * b.w,
                )
            };
            let g2 = Gaussian {
                mean: t.transform_point(&g.mean),
                rotation: rot(&g.rotation),
                ..g.clone()
            };
            let fm2 = FrameMotion::still(t.compose(&fm.pose));
            let b = project_gaussian(0, &g2, &fm2, &k, &cfg).unwrap().unwrap();
            assert!((a.mean_px - b.mean_px).norm() < 1e-9);
            assert!((a.depth - b.depth).abs() < 1e-9);
            assert!((a.cov_px - b.cov_px).amax() < 1e-9);
        }
    }

    #[test]
    fn cull_examples() {
        let k = intr(64.0, 32.0);
        let cfg = RenderConfig {
            cull_margin: 2.0,
            ..Default::default()
        };
        let mut fm = FrameMotion::still(Pose::identity());
        let pg = ProjectedGaussian::flat(0, Vec2::new(32.0, 32.0), 10.0 * cfg.d_min, Mat2::identity(), Vec3::zeros(), 0.5, Vec2::zeros());
        assert!(cull(&pg, &cfg, &k, &fm));
        let near = ProjectedGaussian { depth: 0.5 * cfg.d_min, ..pg.clone() };
        assert!(!cull(&near, &cfg, &k, &fm));

        // 5 px left of the border: culled when still, kept when it sweeps into view.
        let outside = ProjectedGaussian { mean_px: Vec2::new(-5.0, 32.0), ..pg.clone() };
        assert!(!cull(&outside, &cfg, &k, &fm));
        fm.exposure = 0.1;
        let moving = ProjectedGaussian { vel_px: Vec2::new(120.0, 0.0), ..outside };
        // 120 px/s * 0.05 s = 6 px of travel, enough to reach the image.
        assert!(moving.mean_at(0.05).x > 0.0);
        assert!(cull(&moving, &cfg, &k, &fm));
    }
}
