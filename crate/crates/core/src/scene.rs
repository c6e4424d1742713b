//! Gaussian scene representation and the activations that turn raw parameters
//! into covariances, opacities and view-dependent colors.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::{Mat3, Quat, Vec3};

/// Number of real SH basis functions up to degree three.
pub const SH_COEFFS: usize = 16;

const SH_C0: f64 = 0.282_094_791_773_878_14;
const SH_C1: f64 = 0.488_602_511_902_919_9;
const SH_C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const SH_C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Offset added to the SH output before clamping, so zero coefficients give mid-gray.
pub const COLOR_OFFSET: f64 = 0.5;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Opacity from its logit.
pub fn opacity(alpha_logit: f64) -> f64 {
    sigmoid(alpha_logit)
}

/// World-space covariance `R(q) diag(sigmoid(s)) R(q)^T`.
pub fn covariance(q: &Quat, s: &Vec3) -> Result<Mat3> {
    let r = q.to_rotation()?;
    let d = Mat3::from_diagonal(&s.map(sigmoid));
    Ok(r * d * r.transpose())
}

/// Real SH basis (degree 3, Condon-Shortley phase) evaluated at `dir`.
///
/// The polynomials are evaluated as written; callers pass a unit vector.
pub fn sh_basis(dir: &Vec3) -> [f64; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    [
        SH_C0,
        -SH_C1 * y,
        SH_C1 * z,
        -SH_C1 * x,
        SH_C2[0] * x * y,
        SH_C2[1] * y * z,
        SH_C2[2] * (2.0 * zz - xx - yy),
        SH_C2[3] * x * z,
        SH_C2[4] * (xx - yy),
        SH_C3[0] * y * (3.0 * xx - yy),
        SH_C3[1] * x * y * z,
        SH_C3[2] * y * (4.0 * zz - xx - yy),
        SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        SH_C3[4] * x * (4.0 * zz - xx - yy),
        SH_C3[5] * z * (xx - yy),
        SH_C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Gradients of the basis polynomials of [`sh_basis`] with respect to `(x, y, z)`.
pub fn sh_basis_grad(dir: &Vec3) -> [Vec3; SH_COEFFS] {
    let (x, y, z) = (dir.x, dir.y, dir.z);
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let v = Vec3::new;
    [
        Vec3::zeros(),
        v(0.0, -SH_C1, 0.0),
        v(0.0, 0.0, SH_C1),
        v(-SH_C1, 0.0, 0.0),
        v(SH_C2[0] * y, SH_C2[0] * x, 0.0),
        v(0.0, SH_C2[1] * z, SH_C2[1] * y),
        v(-2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z),
        v(SH_C2[3] * z, 0.0, SH_C2[3] * x),
        v(2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y, 0.0),
        v(
            SH_C3[0] * 6.0 * x * y,
            SH_C3[0] * (3.0 * xx - 3.0 * yy),
            0.0,
        ),
        v(SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y),
        v(
            SH_C3[2] * (-2.0 * x * y),
            SH_C3[2] * (4.0 * zz - xx - 3.0 * yy),
            SH_C3[2] * 8.0 * y * z,
        ),
        v(
            SH_C3[3] * (-6.0 * x * z),
            SH_C3[3] * (-6.0 * y * z),
            SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy),
        ),
        v(
            SH_C3[4] * (4.0 * zz - 3.0 * xx - yy),
            SH_C3[4] * (-2.0 * x * y),
            SH_C3[4] * 8.0 * x * z,
        ),
        v(SH_C3[5] * 2.0 * x * z, SH_C3[5] * (-2.0 * y * z), SH_C3[5] * (xx - yy)),
        v(
            SH_C3[6] * (3.0 * xx - 3.0 * yy),
            SH_C3[6] * (-6.0 * x * y),
            0.0,
        ),
    ]
}

/// Raw (pre-activation) linear RGB seen from direction `dir`.
pub fn sh_color(sh: &[Vec3; SH_COEFFS], dir: &Vec3) -> Result<Vec3> {
    let n = dir.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid("sh_color: zero-length or non-finite direction"));
    }
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::invalid(format!("sh_color: direction norm {n} is not unit")));
    }
    Ok(sh_eval(sh, &sh_basis(dir)))
}

pub(crate) fn sh_eval(sh: &[Vec3; SH_COEFFS], basis: &[f64; SH_COEFFS]) -> Vec3 {
    sh.iter().zip(basis).fold(Vec3::zeros(), |acc, (c, b)| acc + c * *b)
}

/// Rasterization color: `max(raw + 0.5, 0)` per channel, plus the mask of unclamped channels.
pub fn activate_color(raw: &Vec3) -> (Vec3, [bool; 3]) {
    let mut out = Vec3::zeros();
    let mut mask = [false; 3];
    for c in 0..3 {
        let v = raw[c] + COLOR_OFFSET;
        if v > 0.0 {
            out[c] = v;
            mask[c] = true;
        }
    }
    (out, mask)
}

/// SH DC coefficient producing linear color `rgb` under [`activate_color`].
pub fn dc_for_color(rgb: &Vec3) -> Vec3 {
    (rgb - Vec3::repeat(COLOR_OFFSET)) / SH_C0
}

/// One splat: mean, orientation, scale logits, opacity logit and SH color.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "GaussianRecord", into = "GaussianRecord")]
pub struct Gaussian {
    pub mean: Vec3,
    pub rotation: Quat,
    pub scale_logits: Vec3,
    pub opacity_logit: f64,
    pub sh: [Vec3; SH_COEFFS],
}

impl Gaussian {
    /// Isotropic splat with a constant color.
    pub fn isotropic(mean: Vec3, variance: f64, opacity: f64, rgb: Vec3) -> Self {
        let s = logit(variance);
        let mut sh = [Vec3::zeros(); SH_COEFFS];
        sh[0] = dc_for_color(&rgb);
        Gaussian {
            mean,
            rotation: Quat::IDENTITY,
            scale_logits: Vec3::repeat(s),
            opacity_logit: logit(opacity),
            sh,
        }
    }

    pub fn covariance(&self) -> Result<Mat3> {
        covariance(&self.rotation, &self.scale_logits)
    }

    pub fn opacity(&self) -> f64 {
        opacity(self.opacity_logit)
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.rotation.is_finite()
            && self.scale_logits.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.sh.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

#[derive(Serialize, Deserialize)]
struct GaussianRecord {
    mu: [f64; 3],
    q: [f64; 4],
    s: [f64; 3],
    alpha_logit: f64,
    sh: Vec<[f64; 3]>,
}

impl From<Gaussian> for GaussianRecord {
    fn from(g: Gaussian) -> Self {
        GaussianRecord {
            mu: g.mean.into(),
            q: g.rotation.into(),
            s: g.scale_logits.into(),
            alpha_logit: g.opacity_logit,
            sh: g.sh.iter().map(|c| (*c).into()).collect(),
        }
    }
}

impl From<GaussianRecord> for Gaussian {
    fn from(r: GaussianRecord) -> Self {
        let mut sh = [Vec3::zeros(); SH_COEFFS];
        for (dst, src) in sh.iter_mut().zip(&r.sh) {
            *dst = Vector3::from(*src);
        }
        Gaussian {
            mean: r.mu.into(),
            rotation: r.q.into(),
            scale_logits: r.s.into(),
            opacity_logit: r.alpha_logit,
            sh,
        }
    }
}

/// Ordered collection of splats.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scene {
    pub gaussians: Vec<Gaussian>,
}

impl Scene {
    pub fn new(gaussians: Vec<Gaussian>) -> Self {
        Scene { gaussians }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    /// SHA-256 over the bit patterns of every parameter, in order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for g in &self.gaussians {
            let mut put = |v: f64| h.update(v.to_bits().to_le_bytes());
            g.mean.iter().for_each(|v| put(*v));
            [g.rotation.w, g.rotation.x, g.rotation.y, g.rotation.z]
                .iter()
                .for_each(|v| put(*v));
            g.scale_logits.iter().for_each(|v| put(*v));
            put(g.opacity_logit);
            g.sh.iter().flat_map(|c| c.iter()).for_each(|v| put(*v));
        }
        hex::encode(h.finalize())
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.gaussians.iter().position(|g| !g.is_finite()) {
            return Err(Error::invalid(format!("Gaussian {i} has non-finite parameters")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Associated Legendre polynomial P_l^m(x) with the Condon-Shortley phase.
    fn legendre(l: usize, m: usize, x: f64) -> f64 {
        let mut pmm = 1.0;
        let somx2 = ((1.0 - x) * (1.0 + x)).sqrt();
        let mut fact = 1.0;
        for _ in 0..m {
            pmm *= -fact * somx2;
            fact += 2.0;
        }
        if l == m {
            return pmm;
        }
        let mut pmmp1 = x * (2 * m + 1) as f64 * pmm;
        if l == m + 1 {
            return pmmp1;
        }
        let mut pll = 0.0;
        for ll in (m + 2)..=l {
            pll = ((2 * ll - 1) as f64 * x * pmmp1 - (ll + m - 1) as f64 * pmm) / (ll - m) as f64;
            pmm = pmmp1;
            pmmp1 = pll;
        }
        pll
    }

    fn factorial(n: usize) -> f64 {
        (1..=n).map(|k| k as f64).product()
    }

    /// Real SH from spherical coordinates, ordered m = -l..=l within each degree.
    fn sh_oracle(dir: &Vec3) -> [f64; SH_COEFFS] {
        let theta = dir.z.clamp(-1.0, 1.0).acos();
        let phi = dir.y.atan2(dir.x);
        let mut out = [0.0; SH_COEFFS];
        let mut i = 0;
        for l in 0..4usize {
            for m in -(l as i64)..=(l as i64) {
                let am = m.unsigned_abs() as usize;
                let k = ((2 * l + 1) as f64 / (4.0 * std::f64::consts::PI) * factorial(l - am)
                    / factorial(l + am))
                .sqrt();
                let p = legendre(l, am, theta.cos());
                out[i] = match m {
                    0 => k * p,
                    m if m > 0 => std::f64::consts::SQRT_2 * k * p * (m as f64 * phi).cos(),
                    m => std::f64::consts::SQRT_2 * k * p * ((-m) as f64 * phi).sin(),
                };
                i += 1;
            }
        }
        out
    }

    fn random_dir(rng: &mut impl Rng) -> Vec3 {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 {
                return v.normalize();
            }
        }
    }

    fn random_sh(rng: &mut impl Rng) -> [Vec3; SH_COEFFS] {
        let mut sh = [Vec3::zeros(); SH_COEFFS];
        for c in &mut sh {
            *c = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        sh
    }

    #[test]
    fn covariance_examples() {
        let c = covariance(&Quat::IDENTITY, &Vec3::zeros()).unwrap();
        assert!((c - Mat3::identity() * 0.5).amax() < 1e-15);
        let c = covariance(&Quat::IDENTITY, &Vec3::new(-20.0, 0.0, 20.0)).unwrap();
        assert!((c - Mat3::from_diagonal(&Vec3::new(0.0, 0.5, 1.0))).amax() < 1e-8);
    }

    #[test]
    fn covariance_eigenvalues_are_sigmoid_scales() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let q = Quat::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                .normalized()
                .unwrap();
            let s = Vec3::new(rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0));
            let c = covariance(&q, &s).unwrap();
            assert!((c - c.transpose()).amax() < 1e-15);
            let mut eig: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
            let mut want: Vec<f64> = s.iter().map(|v| sigmoid(*v)).collect();
            eig.sort_by(f64::total_cmp);
            want.sort_by(f64::total_cmp);
            for (a, b) in eig.iter().zip(&want) {
                assert!((a - b).abs() < 1e-9, "{eig:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn covariance_sign_invariant() {
        let q = Quat::new(0.3, -0.2, 0.9, 0.1);
        let s = Vec3::new(-1.0, 0.5, 2.0);
        let a = covariance(&q, &s).unwrap();
        let b = covariance(&Quat::new(-0.3, 0.2, -0.9, -0.1), &s).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn dc_only_color_is_isotropic() {
        let mut sh = [Vec3::zeros(); SH_COEFFS];
        sh[0] = Vec3::new(0.4, -0.2, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let c = sh_color(&sh, &random_dir(&mut rng)).unwrap();
            assert!((c - sh[0] * SH_C0).norm() < 1e-15);
        }
    }

    #[test]
    fn degree_one_z_is_odd() {
        let mut sh = [Vec3::zeros(); SH_COEFFS];
        sh[2] = Vec3::new(1.0, 1.0, 1.0);
        let up = sh_color(&sh, &Vec3::z()).unwrap();
        let down = sh_color(&sh, &-Vec3::z()).unwrap();
        assert!(up.x > 0.0 && down.x < 0.0);
        assert!((up + down).norm() < 1e-15);
    }

    #[test]
    fn zero_direction_rejected() {
        let sh = [Vec3::zeros(); SH_COEFFS];
        assert!(sh_color(&sh, &Vec3::zeros()).is_err());
    }

    #[test]
    fn basis_matches_legendre_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let d = random_dir(&mut rng);
            let a = sh_basis(&d);
            let b = sh_oracle(&d);
            for i in 0..SH_COEFFS {
                assert!((a[i] - b[i]).abs() < 1e-12, "basis {i}: {} vs {}", a[i], b[i]);
            }
        }
    }

    #[test]
    fn color_matches_oracle_with_random_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let sh = random_sh(&mut rng);
            let d = random_dir(&mut rng);
            let b = sh_oracle(&d);
            let want = sh.iter().zip(b.iter()).fold(Vec3::zeros(), |acc, (c, w)| acc + c * *w);
            assert!((sh_color(&sh, &d).unwrap() - want).norm() < 1e-11);
        }
    }

    #[test]
    fn basis_gradient_matches_central_differences() {
        let d = Vec3::new(0.3, -0.7, 0.5);
        let g = sh_basis_grad(&d);
        let h = 1e-6;
        for axis in 0..3 {
            let mut e = Vec3::zeros();
            e[axis] = h;
            let (p, m) = (sh_basis(&(d + e)), sh_basis(&(d - e)));
            for i in 0..SH_COEFFS {
                let fd = (p[i] - m[i]) / (2.0 * h);
                assert!((fd - g[i][axis]).abs() < 1e-8, "basis {i} axis {axis}");
            }
        }
    }

    #[test]
    fn opacity_examples() {
        assert_eq!(opacity(0.0), 0.5);
        assert!((opacity(20.0) - 1.0).abs() < 1e-8);
        assert!(opacity(-20.0).abs() < 1e-8);
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = Gaussian {
            mean: Vec3::new(rng.random(), rng.random(), rng.random()),
            rotation: Quat::new(0.1, 0.2, 0.3, 0.4).normalized().unwrap(),
            scale_logits: Vec3::new(-1.0 / 3.0, 0.1, 2.0),
            opacity_logit: std::f64::consts::E,
            sh: random_sh(&mut rng),
        };
        let scene = Scene::new(vec![g]);
        let text = serde_json::to_string(&scene).unwrap();
        assert!(text.contains("\"alpha_logit\""));
        let back: Scene = serde_json::from_str(&text).unwrap();
        assert_eq!(back.param_hash(), scene.param_hash());
    }

    proptest! {
        #[test]
        fn sh_color_is_linear(a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (t1, t2) = (random_sh(&mut rng), random_sh(&mut rng));
            let d = random_dir(&mut rng);
            let mut mix = [Vec3::zeros(); SH_COEFFS];
            for i in 0..SH_COEFFS {
                mix[i] = t1[i] * a + t2[i] * b;
            }
            let lhs = sh_color(&mix, &d).unwrap();
            let rhs = sh_color(&t1, &d).unwrap() * a + sh_color(&t2, &d).unwrap() * b;
            prop_assert!((lhs - rhs).norm() < 1e-10);
        }
    }
}
