//! Rotation and rigid-transform algebra used by the camera and projection code.

use nalgebra::{Matrix3, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Below this rotation angle the exponential and logarithm switch to Taylor series.
const SMALL_ANGLE: f64 = 1e-8;

/// Quaternion `(w, x, y, z)` used for splat orientations.
///
/// Values are kept close to unit norm by the optimizer; [`Quat::to_rotation`]
/// normalizes on the fly so slightly denormalized parameters still map to a
/// proper rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Quat {
    pub w: f64,
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<[f64; 4]> for Quat {
    fn from(v: [f64; 4]) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Quat> for [f64; 4] {
    fn from(q: Quat) -> Self {
        [q.w, q.x, q.y, q.z]
    }
}

impl Quat {
    pub const IDENTITY: Quat = Quat {
        w: 1.0,
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub fn new(w: f64, x: f64, y: f64, z: f64) -> Self {
        Quat { w, x, y, z }
    }

    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Quat::new(v[0], v[1], v[2], v[3])
    }

    pub fn norm(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.w.is_finite() && self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn normalized(&self) -> Result<Quat> {
        let n = self.norm();
        if !self.is_finite() || n == 0.0 {
            return Err(Error::invalid(format!("cannot normalize quaternion {self:?}")));
        }
        Ok(Quat::new(self.w / n, self.x / n, self.y / n, self.z / n))
    }

    /// Rotation by angle `|axis_angle|` about `axis_angle / |axis_angle|`.
    pub fn from_axis_angle(axis_angle: &Vec3) -> Quat {
        let theta = axis_angle.norm();
        if theta < SMALL_ANGLE {
            let h = 0.5 * axis_angle;
            return Quat::new(1.0, h.x, h.y, h.z).normalized().unwrap_or(Quat::IDENTITY);
        }
        let (s, c) = (0.5 * theta).sin_cos();
        let a = axis_angle * (s / theta);
        Quat::new(c, a.x, a.y, a.z)
    }

    /// Rotation matrix of the normalized quaternion.
    pub fn to_rotation(&self) -> Result<Mat3> {
        quat_to_rotmat(self)
    }
}

/// Rotation matrix of `q / |q|`.
pub fn quat_to_rotmat(q: &Quat) -> Result<Mat3> {
    let Quat { w, x, y, z } = q.normalized()?;
    Ok(Mat3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Skew-symmetric matrix `[v]x` with `[v]x * u == v.cross(u)`.
pub fn cross_matrix(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Exponential map from an axis-angle vector (radians) to a rotation matrix.
pub fn so3_exp(w: &Vec3) -> Mat3 {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = cross_matrix(w);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Mat3::identity() + k * a + k * k * b
}

/// Logarithm of a rotation matrix, returning the axis-angle vector with angle in `[0, pi]`.
pub fn so3_log(r: &Mat3) -> Vec3 {
    let cos = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos.acos();
    let vee = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    if theta < SMALL_ANGLE {
        return 0.5 * vee;
    }
    if std::f64::consts::PI - theta > 1e-6 {
        return vee * (theta / (2.0 * theta.sin()));
    }
    // Near pi the antisymmetric part vanishes; recover the axis from R + I = 2 a a^T.
    let b = (r + Mat3::identity()) * 0.5;
    let (i, _) = (0..3)
        .map(|i| (i, b[(i, i)]))
        .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
    let mut axis = b.column(i).into_owned() / b[(i, i)].max(0.0).sqrt().max(1e-300);
    axis.normalize_mut();
    if axis.dot(&vee) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rigid camera-to-world transform `x_world = rotation * x_cam + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Pose::identity()
    }
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Pose {
            rotation,
            translation,
        }
    }

    pub fn identity() -> Self {
        Pose::new(Mat3::identity(), Vec3::zeros())
    }

    /// Camera at `eye` looking at `target`; camera y axis points roughly along `-up` (image rows grow downward).
    pub fn look_at(eye: &Vec3, target: &Vec3, up: &Vec3) -> Result<Pose> {
        let forward = target - eye;
        if forward.norm() == 0.0 {
            return Err(Error::invalid("look_at: eye and target coincide"));
        }
        let z = forward.normalize();
        let x = z.cross(up);
        if x.norm() < 1e-12 {
            return Err(Error::invalid("look_at: up vector parallel to view direction"));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        Ok(Pose::new(Mat3::from_columns(&[x, y, z]), *eye))
    }

    /// World-to-camera rotation and translation `(R^T, -R^T p)`.
    pub fn world_to_camera(&self) -> (Mat3, Vec3) {
        let rt = self.rotation.transpose();
        let t = -(rt * self.translation);
        (rt, t)
    }

    pub fn inverse(&self) -> Pose {
        let (r, t) = self.world_to_camera();
        Pose::new(r, t)
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Re-orthonormalize the rotation (polar projection through SVD).
    pub fn orthonormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut r = u * vt;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * vt;
        }
        Pose::new(r, self.translation)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}
