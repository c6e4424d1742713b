//! Seeded corruption of poses and scenes.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, Pose, Vec3};
use crate::scene::Scene;
use crate::seed;

fn normal(sigma: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, sigma).map_err(|e| Error::invalid(format!("invalid noise level {sigma}: {e}")))
}

fn draw(rng: &mut impl Rng, n: &Normal<f64>) -> Vec3 {
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

/// Add `N(0, sigma_trans^2)` to every position axis and right-multiply every rotation by
/// `exp(N(0, sigma_rot^2) per axis)`. Deterministic per seed.
pub fn add_pose_noise(poses: &[Pose], sigma_trans: f64, sigma_rot: f64, seed: u64) -> Result<Vec<Pose>> {
    if !(sigma_trans >= 0.0 && sigma_rot >= 0.0) {
        return Err(Error::invalid("pose noise levels must be non-negative"));
    }
    let nt = normal(sigma_trans)?;
    let nr = normal(sigma_rot)?;
    let mut rng = seed::rng(seed, seed::NOISE);
    Ok(poses
        .iter()
        .map(|p| {
            let dt = draw(&mut rng, &nt);
            let dr = draw(&mut rng, &nr);
            if sigma_trans == 0.0 && sigma_rot == 0.0 {
                return *p;
            }
            Pose::new(p.rotation * so3_exp(&dr), p.translation + dt)
        })
        .collect())
}

/// Add zero-mean noise to camera-frame velocities with a per-axis standard deviation of
/// `relative` times each vector's norm. Deterministic per seed.
pub fn add_velocity_noise(velocities: &[(Vec3, Vec3)], relative: f64, seed: u64) -> Result<Vec<(Vec3, Vec3)>> {
    if !(relative >= 0.0 && relative.is_finite()) {
        return Err(Error::invalid("velocity noise level must be finite and non-negative"));
    }
    let unit = normal(1.0)?;
    let mut rng = seed::rng(seed, "velocity-noise");
    Ok(velocities
        .iter()
        .map(|(v, w)| {
            let dv = draw(&mut rng, &unit) * (relative * v.norm());
            let dw = draw(&mut rng, &unit) * (relative * w.norm());
            (v + dv, w + dw)
        })
        .collect())
}

/// Perturbation applied to a ground-truth scene to produce a training start point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenePerturbation {
    /// Mean offset standard deviation in scene units.
    pub mean: f64,
    /// Standard deviation added to the DC color coefficients.
    pub color: f64,
    /// Standard deviation added to the scale logits.
    pub scale: f64,
    /// Standard deviation added to the opacity logits.
    pub opacity: f64,
}

impl Default for ScenePerturbation {
    fn default() -> Self {
        ScenePerturbation {
            mean: 0.02,
            color: 0.3,
            scale: 0.2,
            opacity: 0.3,
        }
    }
}

/// Seeded Gaussian perturbation of every splat's mean, DC color, scales and opacity.
pub fn perturb_scene(scene: &Scene, amount: &ScenePerturbation, seed: u64) -> Result<Scene> {
    let n_mean = normal(amount.mean)?;
    let n_color = normal(amount.color)?;
    let n_scale = normal(amount.scale)?;
    let n_opacity = normal(amount.opacity)?;
    let mut rng = seed::rng(seed, "scene-perturbation");
    let mut out = scene.clone();
    for g in &mut out.gaussians {
        g.mean += draw(&mut rng, &n_mean);
        g.sh[0] += draw(&mut rng, &n_color);
        g.scale_logits += draw(&mut rng, &n_scale);
        g.opacity_logit += n_opacity.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::so3_log;

    fn poses(n: usize) -> Vec<Pose> {
        (0..n)
            .map(|i| Pose::new(so3_exp(&Vec3::new(0.01 * i as f64, 0.2, -0.1)), Vec3::new(i as f64, 1.0, -2.0)))
            .collect()
    }

    #[test]
    fn zero_noise_is_identity() {
        let p = poses(5);
        assert_eq!(add_pose_noise(&p, 0.0, 0.0, 3).unwrap(), p);
    }

    #[test]
    fn same_seed_same_noise() {
        let p = poses(5);
        assert_eq!(add_pose_noise(&p, 0.1, 0.01, 3).unwrap(), add_pose_noise(&p, 0.1, 0.01, 3).unwrap());
        assert_ne!(add_pose_noise(&p, 0.1, 0.01, 3).unwrap(), add_pose_noise(&p, 0.1, 0.01, 4).unwrap());
        assert!(add_pose_noise(&p, -0.1, 0.0, 3).is_err());
    }

    #[test]
    fn per_axis_variance_matches_sigma() {
        let (st, sr) = (0.05, 0.01);
        let base = vec![Pose::identity(); 10_000];
        let noisy = add_pose_noise(&base, st, sr, 11).unwrap();
        for axis in 0..3 {
            let t: Vec<f64> = noisy.iter().map(|p| p.translation[axis]).collect();
            let r: Vec<f64> = noisy.iter().map(|p| so3_log(&p.rotation)[axis]).collect();
            for (xs, sigma) in [(t, st), (r, sr)] {
                let m = xs.iter().sum::<f64>() / xs.len() as f64;
                let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
                assert!((var / (sigma * sigma) - 1.0).abs() < 0.1, "axis {axis}: {var}");
            }
        }
    }

    #[test]
    fn perturbation_is_seeded_and_changes_parameters() {
        let scene = crate::simkit::scenes::make_scene(crate::simkit::Recipe::GridWall, None, 1).unwrap();
        let a = perturb_scene(&scene, &ScenePerturbation::default(), 2).unwrap();
        assert_eq!(a, perturb_scene(&scene, &ScenePerturbation::default(), 2).unwrap());
        assert_ne!(a.param_hash(), scene.param_hash());
        let none = ScenePerturbation {
            mean: 0.0,
            color: 0.0,
            scale: 0.0,
            opacity: 0.0,
        };
        assert_eq!(perturb_scene(&scene, &none, 2).unwrap(), scene);
    }
}
