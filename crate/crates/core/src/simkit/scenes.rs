//! Procedural toy scenes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{so3_exp, so3_log, Mat3, Quat, Vec3};
use crate::scene::{dc_for_color, logit, Gaussian, Scene, SH_COEFFS};
use crate::seed;

/// Every splat mean lies inside `[-BOX_HALF, BOX_HALF]^3`.
pub const BOX_HALF: f64 = 5.0;
/// Largest per-axis standard deviation a recipe produces.
pub const MAX_SCALE: f64 = 0.5;
pub const MIN_SPLATS: usize = 200;
pub const MAX_SPLATS: usize = 2000;
pub const DEFAULT_CLOUD_SIZE: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    /// Checkered planar wall facing the canonical camera.
    GridWall,
    /// Tilted cube with striped faces.
    TexturedBox,
    /// Random anisotropic splats in a slab in front of the camera.
    RandomCloud,
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "grid-wall" => Ok(Recipe::GridWall),
            "textured-box" => Ok(Recipe::TexturedBox),
            "random-cloud" => Ok(Recipe::RandomCloud),
            other => Err(Error::UnknownRecipe(other.to_string())),
        }
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recipe::GridWall => "grid-wall",
            Recipe::TexturedBox => "textured-box",
            Recipe::RandomCloud => "random-cloud",
        })
    }
}

/// Build a recipe scene. `n_splats` applies to `random-cloud` only (default 500).
pub fn make_scene(recipe: Recipe, n_splats: Option<usize>, seed: u64) -> Result<Scene> {
    let mut rng = seed::rng(seed, seed::SCENE);
    let gaussians = match recipe {
        Recipe::GridWall => grid_wall(&mut rng),
        Recipe::TexturedBox => textured_box(&mut rng),
        Recipe::RandomCloud => {
            let n = n_splats.unwrap_or(DEFAULT_CLOUD_SIZE);
            if !(MIN_SPLATS..=MAX_SPLATS).contains(&n) {
                return Err(Error::invalid(format!(
                    "random-cloud size {n} outside {MIN_SPLATS}..={MAX_SPLATS}"
                )));
            }
            random_cloud(&mut rng, n)
        }
    };
    Ok(Scene::new(gaussians))
}

/// Parse a recipe name and build the scene.
pub fn make_scene_named(name: &str, n_splats: Option<usize>, seed: u64) -> Result<Scene> {
    make_scene(name.parse()?, n_splats, seed)
}

fn splat(mean: Vec3, rotation: &Mat3, std: Vec3, opacity: f64, rgb: Vec3) -> Gaussian {
    let mut sh = [Vec3::zeros(); SH_COEFFS];
    sh[0] = dc_for_color(&rgb.map(|c| c.clamp(0.0, 1.0)));
    Gaussian {
        mean,
        rotation: Quat::from_axis_angle(&so3_log(rotation)),
        scale_logits: std.map(|s| logit(s.min(MAX_SCALE).powi(2))),
        opacity_logit: logit(opacity),
        sh,
    }
}

fn jitter(rng: &mut impl Rng, amp: f64) -> f64 {
    rng.random_range(-amp..=amp)
}

fn random_color(rng: &mut impl Rng, lo: f64, hi: f64) -> Vec3 {
    Vec3::new(rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi))
}

fn grid_wall(rng: &mut impl Rng) -> Vec<Gaussian> {
    const N: usize = 24;
    const HALF: f64 = 3.0;
    const DEPTH: f64 = 4.0;
    let spacing = 2.0 * HALF / N as f64;
    let light = random_color(rng, 0.55, 0.9);
    let dark = random_color(rng, 0.1, 0.35);
    let line = Vec3::new(0.05, 0.05, 0.08);
    let std = Vec3::new(0.6 * spacing, 0.6 * spacing, 0.02);
    let mut out = Vec::with_capacity(N * N);
    for j in 0..N {
        for i in 0..N {
            let mean = Vec3::new(
                -HALF + (i as f64 + 0.5) * spacing + jitter(rng, 0.02),
                -HALF + (j as f64 + 0.5) * spacing + jitter(rng, 0.02),
                DEPTH + jitter(rng, 0.01),
            );
            let base = if i % 8 == 0 || j % 8 == 0 {
                line
            } else if (i / 4 + j / 4) % 2 == 0 {
                light
            } else {
                dark
            };
            let rgb = base + Vec3::new(jitter(rng, 0.05), jitter(rng, 0.05), jitter(rng, 0.05));
            out.push(splat(mean, &Mat3::identity(), std, 0.95, rgb));
        }
    }
    out
}

fn textured_box(rng: &mut impl Rng) -> Vec<Gaussian> {
    const N: usize = 10;
    const HALF: f64 = 1.0;
    let center = Vec3::new(0.0, 0.0, 3.2);
    let tilt = so3_exp(&Vec3::new(0.35, 0.6, 0.0));
    let spacing = 2.0 * HALF / N as f64;
    let std = Vec3::new(0.6 * spacing, 0.6 * spacing, 0.02);
    let e = [Vec3::x(), Vec3::y(), Vec3::z()];
    let mut out = Vec::with_capacity(6 * N * N);
    for axis in 0..3 {
        for sign in [1.0, -1.0] {
            let normal = e[axis] * sign;
            let (t1, t2) = if sign > 0.0 {
                (e[(axis + 1) % 3], e[(axis + 2) % 3])
            } else {
                (e[(axis + 2) % 3], e[(axis + 1) % 3])
            };
            let frame = tilt * Mat3::from_columns(&[t1, t2, normal]);
            let base = random_color(rng, 0.3, 0.9);
            let stripe = random_color(rng, 0.05, 0.3);
            for v in 0..N {
                for u in 0..N {
                    let a = -HALF + (u as f64 + 0.5) * spacing;
                    let b = -HALF + (v as f64 + 0.5) * spacing;
                    let local = t1 * a + t2 * b + normal * HALF;
                    let color = if ((u + 2 * v) / 2) % 3 == 0 { stripe } else { base };
                    let rgb = color + Vec3::new(jitter(rng, 0.04), jitter(rng, 0.04), jitter(rng, 0.04));
                    out.push(splat(center + tilt * local, &frame, std, 0.95, rgb));
                }
            }
        }
    }
    out
}

fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<Gaussian> {
    (0..n)
        .map(|_| {
            let mean = Vec3::new(rng.random_range(-2.5..2.5), rng.random_range(-1.5..1.5), rng.random_range(2.5..4.5));
            let axis = Vec3::new(jitter(rng, 1.0), jitter(rng, 1.0), jitter(rng, 1.0));
            let rotation = so3_exp(&(axis * std::f64::consts::PI));
            let std = Vec3::new(rng.random_range(0.04..0.15), rng.random_range(0.04..0.15), rng.random_range(0.04..0.15));
            let mut g = splat(mean, &rotation, std, rng.random_range(0.6..0.95), random_color(rng, 0.1, 0.9));
            for c in &mut g.sh[1..4] {
                *c = Vec3::new(jitter(rng, 0.03), jitter(rng, 0.03), jitter(rng, 0.03));
            }
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{FrameMotion, Intrinsics, RenderConfig};
    use crate::geometry::Pose;
    use crate::rasterizer::render_frame;

    #[test]
    fn recipes_are_deterministic_per_seed() {
        for r in [Recipe::GridWall, Recipe::TexturedBox, Recipe::RandomCloud] {
            let a = make_scene(r, None, 1).unwrap();
            let b = make_scene(r, None, 1).unwrap();
            assert_eq!(a.param_hash(), b.param_hash());
            assert_ne!(a.param_hash(), make_scene(r, None, 2).unwrap().param_hash());
        }
    }

    #[test]
    fn recipe_contracts() {
        for r in [Recipe::GridWall, Recipe::TexturedBox, Recipe::RandomCloud] {
            let s = make_scene(r, None, 3).unwrap();
            assert!((MIN_SPLATS..=MAX_SPLATS).contains(&s.len()), "{r}: {}", s.len());
            s.validate().unwrap();
            for g in &s.gaussians {
                assert!(g.mean.iter().all(|v| v.abs() <= BOX_HALF));
                let cov = g.covariance().unwrap();
                let max_var = cov.symmetric_eigenvalues().max();
                assert!(max_var.sqrt() <= MAX_SCALE + 1e-12);
            }
        }
        let cloud = make_scene(Recipe::RandomCloud, Some(500), 4).unwrap();
        assert_eq!(cloud.len(), 500);
    }

    #[test]
    fn bad_recipe_inputs() {
        assert!(make_scene_named("teapot", None, 0).is_err());
        assert!(make_scene(Recipe::RandomCloud, Some(10), 0).is_err());
        assert_eq!("textured-box".parse::<Recipe>().unwrap(), Recipe::TexturedBox);
        assert_eq!(Recipe::GridWall.to_string(), "grid-wall");
    }

    #[test]
    fn canonical_view_is_mostly_covered() {
        let k = Intrinsics::centered(64, 64, 1.25).unwrap();
        let cfg = RenderConfig::default();
        for r in [Recipe::GridWall, Recipe::TexturedBox, Recipe::RandomCloud] {
            let s = make_scene(r, None, 5).unwrap();
            let img = render_frame(&s, &FrameMotion::still(Pose::identity()), &k, &cfg).unwrap();
            let covered = img.data.iter().filter(|p| p.max() > 0.05).count();
            let frac = covered as f64 / img.data.len() as f64;
            assert!(frac >= 0.3, "{r}: {frac}");
        }
    }
}
