//! Brute-force reference renderer: every exposure sample of every row band is a full
//! re-projection of the scene at the exact sampled pose.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::{readout_offset, FrameMotion, Intrinsics, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{encode_gamma, ColorSpace, Image};
use crate::projection::project_scene;
use crate::rasterizer::RenderPass;
use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quadrature {
    /// Sample times at the centers of `n` equal sub-intervals of the exposure.
    Midpoint,
    /// `n` equally spaced times including both exposure ends, as the rasterizer samples.
    Endpoints,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleSpec {
    /// Starting number of exposure samples.
    pub n_pose_samples: usize,
    /// Rows sharing one readout time.
    pub rows_per_band: usize,
    /// Sample count beyond which doubling stops.
    pub max_pose_samples: usize,
    /// Largest max-abs change between successive doublings accepted as converged.
    pub tolerance: f64,
    pub quadrature: Quadrature,
}

impl Default for OracleSpec {
    fn default() -> Self {
        OracleSpec {
            n_pose_samples: 32,
            rows_per_band: 1,
            max_pose_samples: 512,
            tolerance: 1e-3,
            quadrature: Quadrature::Midpoint,
        }
    }
}

impl OracleSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_pose_samples == 0 || self.rows_per_band == 0 {
            return Err(Error::invalid("oracle: sample and band counts must be positive"));
        }
        if self.max_pose_samples < self.n_pose_samples {
            return Err(Error::invalid("oracle: max_pose_samples is below n_pose_samples"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("oracle: tolerance must be positive"));
        }
        Ok(())
    }
}

/// Exposure time offsets for `n` samples.
pub fn exposure_nodes(n: usize, exposure: f64, q: Quadrature) -> Vec<f64> {
    if n <= 1 || exposure == 0.0 {
        return vec![0.0];
    }
    match q {
        Quadrature::Midpoint => (0..n).map(|i| ((i as f64 + 0.5) / n as f64 - 0.5) * exposure).collect(),
        Quadrature::Endpoints => (0..n).map(|i| (i as f64 / (n - 1) as f64 - 0.5) * exposure).collect(),
    }
}

/// Readout offset shared by rows `y0..y1` (the offset at the band's center line).
fn band_offset(y0: usize, y1: usize, height: usize, readout: f64) -> f64 {
    if y1 - y0 == 1 {
        return readout_offset(y0, height, readout);
    }
    (0.5 * (y0 + y1) as f64 / height as f64 - 0.5) * readout
}

/// Linear-RGB oracle image with a fixed number of exposure samples.
pub fn oracle_linear(
    scene: &Scene,
    fm: &FrameMotion,
    k: &Intrinsics,
    cfg: &RenderConfig,
    n_pose_samples: usize,
    rows_per_band: usize,
    quadrature: Quadrature,
) -> Result<Image> {
    if scene.is_empty() {
        return Err(Error::invalid("cannot render an empty scene"));
    }
    if n_pose_samples == 0 || rows_per_band == 0 {
        return Err(Error::invalid("oracle: sample and band counts must be positive"));
    }
    cfg.validate()?;
    k.validate()?;
    fm.validate()?;
    let single = RenderConfig { n_blur: 1, ..*cfg };
    let nodes = exposure_nodes(n_pose_samples, fm.exposure, quadrature);
    let h = k.height;
    let bands: Vec<(usize, usize)> = if fm.readout == 0.0 {
        vec![(0, h)]
    } else {
        (0..h).step_by(rows_per_band).map(|y| (y, (y + rows_per_band).min(h))).collect()
    };
    let w = k.width;
    let rendered: Vec<Result<Vec<Vec3>>> = crate::parallel::install(|| {
        bands
            .par_iter()
            .map(|&(y0, y1)| {
                let r = band_offset(y0, y1, h, fm.readout);
                let mut mean = vec![Vec3::zeros(); (y1 - y0) * w];
                for (s, e) in nodes.iter().enumerate() {
                    let still = FrameMotion::still(fm.pose_at(e + r));
                    let projected = project_scene(scene, &still, k, &single)?;
                    let img = RenderPass::from_projected(projected, &still, k, &single).forward_rows(y0..y1);
                    for y in y0..y1 {
                        for x in 0..w {
                            let c = img.get(x, y);
                            let m = &mut mean[(y - y0) * w + x];
                            *m = if s == 0 { c } else { *m + (c - *m) / (s + 1) as f64 };
                        }
                    }
                }
                Ok(mean)
            })
            .collect()
    });
    let mut out = Image::new(w, h, ColorSpace::Linear);
    for (&(y0, y1), mean) in bands.iter().zip(rendered) {
        let mean = mean?;
        for y in y0..y1 {
            for x in 0..w {
                out.set(x, y, mean[(y - y0) * w + x]);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleImage {
    /// Gamma-encoded image.
    pub image: Image,
    /// Exposure samples used for `image`.
    pub n_pose_samples: usize,
    /// Max-abs change from the previous doubling (zero when no doubling was needed).
    pub residual: f64,
    pub converged: bool,
}

/// Gamma-encoded oracle image, doubling the sample count until successive results agree.
pub fn oracle_render(
    scene: &Scene,
    fm: &FrameMotion,
    k: &Intrinsics,
    cfg: &RenderConfig,
    spec: &OracleSpec,
) -> Result<OracleImage> {
    spec.validate()?;
    let render = |n: usize| -> Result<Image> {
        Ok(encode_gamma(
            &oracle_linear(scene, fm, k, cfg, n, spec.rows_per_band, spec.quadrature)?,
            cfg.gamma,
        ))
    };
    let mut n = spec.n_pose_samples;
    let mut image = render(n)?;
    if fm.exposure == 0.0 || !fm.has_motion() {
        return Ok(OracleImage {
            image,
            n_pose_samples: n,
            residual: 0.0,
            converged: true,
        });
    }
    loop {
        let next = render(2 * n)?;
        let residual = next.max_abs_diff(&image)?;
        n *= 2;
        image = next;
        if residual < spec.tolerance {
            return Ok(OracleImage {
                image,
                n_pose_samples: n,
                residual,
                converged: true,
            });
        }
        if 2 * n > spec.max_pose_samples {
            log::warn!(
                "oracle render did not converge: residual {residual:.3e} at {n} samples (tolerance {:.1e})",
                spec.tolerance
            );
            return Ok(OracleImage {
                image,
                n_pose_samples: n,
                residual,
                converged: false,
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use crate::rasterizer::render_frame;
    use crate::scene::Gaussian;
    use crate::simkit::scenes::{make_scene, Recipe};

    fn still_render(scene: &Scene, pose: Pose, k: &Intrinsics, cfg: &RenderConfig) -> Image {
        render_frame(scene, &FrameMotion::still(pose), k, cfg).unwrap()
    }

    #[test]
    fn nodes() {
        assert_eq!(exposure_nodes(2, 1.0, Quadrature::Midpoint), vec![-0.25, 0.25]);
        assert_eq!(exposure_nodes(3, 1.0, Quadrature::Endpoints), vec![-0.5, 0.0, 0.5]);
        assert_eq!(exposure_nodes(8, 0.0, Quadrature::Midpoint), vec![0.0]);
    }

    #[test]
    fn zero_motion_equals_static_render() {
        let scene = make_scene(Recipe::RandomCloud, Some(200), 1).unwrap();
        let k = Intrinsics::centered(32, 24, 1.25).unwrap();
        let cfg = RenderConfig::default();
        let fm = FrameMotion {
            exposure: 0.05,
            readout: 0.03,
            ..FrameMotion::still(Pose::identity())
        };
        let spec = OracleSpec {
            n_pose_samples: 4,
            ..Default::default()
        };
        let o = oracle_render(&scene, &fm, &k, &cfg, &spec).unwrap();
        assert!(o.converged);
        assert_eq!(o.image, still_render(&scene, Pose::identity(), &k, &cfg));
    }

    #[test]
    fn pure_rolling_shutter_row_shear_matches_first_order_prediction() {
        // A vertical bar of small splats on the optical axis.
        let scene = Scene::new(
            (0..41)
                .map(|i| {
                    let y = -1.0 + 0.05 * i as f64;
                    Gaussian::isotropic(Vec3::new(0.0, y, 4.0), 0.0015, 0.9, Vec3::repeat(0.8))
                })
                .collect(),
        );
        let k = Intrinsics::centered(48, 48, 1.25).unwrap();
        let cfg = RenderConfig {
            gamma: 1.0,
            ..Default::default()
        };
        let wy = 0.4;
        let fm = FrameMotion {
            angular_velocity: Vec3::new(0.0, wy, 0.0),
            readout: 0.05,
            ..FrameMotion::still(Pose::identity())
        };
        let o = oracle_render(&scene, &fm, &k, &cfg, &OracleSpec::default()).unwrap();
        let reference = still_render(&scene, Pose::identity(), &k, &cfg);
        let centroid = |img: &Image, y: usize| {
            let (mut s, mut sx) = (0.0, 0.0);
            for x in 0..img.width {
                let v = img.get(x, y).x;
                s += v;
                sx += v * (x as f64 + 0.5);
            }
            (s > 0.05).then(|| sx / s)
        };
        let mut rows = 0;
        for y in 0..k.height {
            let (Some(a), Some(b)) = (centroid(&o.image, y), centroid(&reference, y)) else {
                continue;
            };
            let predicted = -k.fx * wy * readout_offset(y, k.height, fm.readout);
            assert!((a - b - predicted).abs() < 0.5, "row {y}: {} vs {predicted}", a - b);
            rows += 1;
        }
        assert!(rows > 20);
    }

    #[test]
    fn converges_on_moderate_blur() {
        let scene = make_scene(Recipe::GridWall, None, 2).unwrap();
        let k = Intrinsics::centered(32, 32, 1.25).unwrap();
        let cfg = RenderConfig::default();
        let fm = FrameMotion {
            linear_velocity: Vec3::new(1.0, 0.2, 0.0),
            angular_velocity: Vec3::new(0.0, 0.1, 0.05),
            exposure: 0.05,
            ..FrameMotion::still(Pose::identity())
        };
        let o = oracle_render(&scene, &fm, &k, &cfg, &OracleSpec::default()).unwrap();
        assert!(o.converged, "residual {}", o.residual);
        assert!(o.residual < 1e-3);
    }

    #[test]
    fn matched_sampling_agrees_with_screen_space_method_for_fronto_parallel_splats() {
        let scene = Scene::new(
            [(0.04, 0.9, 0.2), (0.01, 0.6, 0.7), (0.002, 0.8, 0.4)]
                .iter()
                .map(|&(var, o, c)| Gaussian::isotropic(Vec3::new(0.0, 0.0, 3.0), var, o, Vec3::new(c, 1.0 - c, 0.5)))
                .collect(),
        );
        let k = Intrinsics::centered(32, 32, 1.25).unwrap();
        let cfg = RenderConfig::default();
        let fm = FrameMotion {
            linear_velocity: Vec3::new(0.6, -0.3, 0.0),
            exposure: 0.05,
            ..FrameMotion::still(Pose::identity())
        };
        let method = render_frame(&scene, &fm, &k, &cfg).unwrap();
        let oracle = encode_gamma(
            &oracle_linear(&scene, &fm, &k, &cfg, cfg.n_blur, 1, Quadrature::Endpoints).unwrap(),
            cfg.gamma,
        );
        let d = method.max_abs_diff(&oracle).unwrap();
        assert!(d < 1e-3, "{d}");
    }

    #[test]
    fn coarse_bands_approximate_exact_rows() {
        let scene = make_scene(Recipe::TexturedBox, None, 3).unwrap();
        let k = Intrinsics::centered(24, 24, 1.25).unwrap();
        let cfg = RenderConfig::default();
        let fm = FrameMotion {
            linear_velocity: Vec3::new(0.5, 0.0, 0.0),
            exposure: 0.02,
            readout: 0.04,
            ..FrameMotion::still(Pose::identity())
        };
        let a = oracle_linear(&scene, &fm, &k, &cfg, 4, 1, Quadrature::Midpoint).unwrap();
        let b = oracle_linear(&scene, &fm, &k, &cfg, 4, 4, Quadrature::Midpoint).unwrap();
        let d = a.max_abs_diff(&b).unwrap();
        assert!(d > 0.0 && d < 0.05, "{d}");
    }
}
