//! Reverse-mode blending: per-pixel gradients with respect to pixel-space splat quantities.

use rayon::prelude::*;

use crate::error::Result;
use crate::geometry::Vec3;
use crate::image::{gamma_derivative, Image};
use crate::projection::{Mat2, ProjectedGaussian, Vec2};
use crate::rasterizer::{footprint, pixel_center, Footprint, RenderPass, T_MIN};

/// Loss gradients with respect to one splat's pixel-space quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatPixelGrads {
    pub d_mean_px: Vec2,
    pub d_vel_px: Vec2,
    /// Gradient with respect to the conic (inverse pixel covariance).
    pub d_conic: Mat2,
    pub d_color: Vec3,
    pub d_opacity: f64,
}

impl Default for SplatPixelGrads {
    fn default() -> Self {
        SplatPixelGrads {
            d_mean_px: Vec2::zeros(),
            d_vel_px: Vec2::zeros(),
            d_conic: Mat2::zeros(),
            d_color: Vec3::zeros(),
            d_opacity: 0.0,
        }
    }
}

impl SplatPixelGrads {
    pub fn add(&mut self, o: &SplatPixelGrads) {
        self.d_mean_px += o.d_mean_px;
        self.d_vel_px += o.d_vel_px;
        self.d_conic += o.d_conic;
        self.d_color += o.d_color;
        self.d_opacity += o.d_opacity;
    }

    pub fn is_zero(&self) -> bool {
        *self == SplatPixelGrads::default()
    }
}

struct Contribution {
    slot: usize,
    f: Footprint,
    t: f64,
}

/// Reverse of one blended sample, with splats given in depth order and `out[i]` matching `splats[i]`.
fn backward_sample(
    pix: &Vec2,
    dl_dc: &Vec3,
    dt: f64,
    splats: &[&ProjectedGaussian],
    out: &mut [SplatPixelGrads],
    scratch: &mut Vec<Contribution>,
) {
    scratch.clear();
    let mut t = 1.0;
    for (slot, pg) in splats.iter().enumerate() {
        let Some(f) = footprint(pg, pix, dt) else {
            continue;
        };
        let next_t = t * (1.0 - f.alpha);
        if next_t < T_MIN {
            break;
        }
        scratch.push(Contribution { slot, f, t });
        t = next_t;
    }

    // Color contributed by everything behind the current splat.
    let mut behind = Vec3::zeros();
    for c in scratch.iter().rev() {
        let pg = splats[c.slot];
        let g = &mut out[c.slot];
        let weight = c.f.alpha * c.t;
        g.d_color += dl_dc * weight;
        let dl_dalpha = dl_dc.dot(&(pg.color * c.t - behind / (1.0 - c.f.alpha)));
        behind += pg.color * weight;
        if c.f.clipped {
            continue;
        }
        g.d_opacity += dl_dalpha * c.f.gauss;
        let dl_dgauss = dl_dalpha * pg.opacity * c.f.gauss;
        let d_mean = pg.conic * c.f.delta * dl_dgauss;
        g.d_mean_px += d_mean;
        g.d_vel_px += d_mean * dt;
        g.d_conic += c.f.delta * c.f.delta.transpose() * (-0.5 * dl_dgauss);
    }
}

/// Accumulate gradients of `blend_pixel(x, y, sorted, dt)` weighted by `dl_dc` into `out`.
pub fn backward_pixel(x: usize, y: usize, dl_dc: &Vec3, sorted: &[ProjectedGaussian], dt: f64, out: &mut [SplatPixelGrads]) {
    assert_eq!(sorted.len(), out.len());
    let refs: Vec<&ProjectedGaussian> = sorted.iter().collect();
    backward_sample(&pixel_center(x, y), dl_dc, dt, &refs, out, &mut Vec::new());
}

impl RenderPass {
    /// Per-splat pixel-space gradients given `dL/dC` for the linear (sample-averaged) image.
    ///
    /// The result is indexed like `self.splats`. Tiles are processed in parallel and their
    /// partial sums are added in tile order.
    pub fn backward(&self, d_linear: &Image) -> Result<Vec<SplatPixelGrads>> {
        let k = &self.intrinsics;
        d_linear.check_same_shape(&Image::new(k.width, k.height, d_linear.space))?;
        let inv_n = 1.0 / self.n_samples() as f64;
        let partials: Vec<Vec<SplatPixelGrads>> = crate::parallel::install(|| {
            (0..self.bins.lists.len())
                .into_par_iter()
                .map(|tile| {
                    let list: Vec<&ProjectedGaussian> = self.tile_splats(tile).collect();
                    let mut out = vec![SplatPixelGrads::default(); list.len()];
                    if list.is_empty() {
                        return out;
                    }
                    let mut scratch = Vec::new();
                    let (xs, ys) = self.tile_bounds(tile);
                    for y in ys {
                        let dts = self.row_offsets(y);
                        for x in xs.clone() {
                            let dl = d_linear.get(x, y) * inv_n;
                            if dl == Vec3::zeros() {
                                continue;
                            }
                            let pix = pixel_center(x, y);
                            for dt in &dts {
                                backward_sample(&pix, &dl, *dt, &list, &mut out, &mut scratch);
                            }
                        }
                    }
                    out
                })
                .collect()
        });
        let mut total = vec![SplatPixelGrads::default(); self.splats.len()];
        for (tile, part) in partials.iter().enumerate() {
            for (&idx, g) in self.bins.lists[tile].iter().zip(part) {
                total[idx as usize].add(g);
            }
        }
        Ok(total)
    }

    /// Like [`RenderPass::backward`] but starting from `dL/dC` of the gamma-encoded image.
    pub fn backward_gamma(&self, linear: &Image, d_gamma: &Image) -> Result<Vec<SplatPixelGrads>> {
        linear.check_same_shape(d_gamma)?;
        let gamma = self.config.gamma;
        let d_linear = Image {
            data: linear
                .data
                .iter()
                .zip(&d_gamma.data)
                .map(|(c, d)| Vec3::new(gamma_derivative(c.x, gamma) * d.x, gamma_derivative(c.y, gamma) * d.y, gamma_derivative(c.z, gamma) * d.z))
                .collect(),
            ..linear.clone()
        };
        self.backward(&d_linear)
    }
}
