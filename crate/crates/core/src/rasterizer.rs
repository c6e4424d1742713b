//! Tile-based front-to-back compositing with screen-space blur samples.
//!
//! A frame is projected once, depth-sorted once at the midpoint, and binned into
//! 16x16 tiles using bounding boxes that include the distance each splat sweeps
//! during the frame. Every pixel then averages `n_blur` blended samples in
//! linear RGB, each sample shifting the splat means by `dt * vel_px`.

use rayon::prelude::*;

use crate::camera::{sample_offset, FrameMotion, Intrinsics, RenderConfig};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::image::{encode_gamma, ColorSpace, Image};
use crate::projection::{project_scene, ProjectedGaussian, Vec2};
use crate::scene::Scene;

pub const TILE_SIZE: usize = 16;
/// Per-splat opacity ceiling.
pub const ALPHA_MAX: f64 = 0.999;
/// Contributions below this opacity are skipped.
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
/// Blending stops once transmittance would fall below this.
pub const T_MIN: f64 = 1e-4;

/// Evaluated footprint of one splat at one pixel sample.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Footprint {
    pub alpha: f64,
    pub gauss: f64,
    pub delta: Vec2,
    pub clipped: bool,
}

/// Center of pixel `(x, y)`.
#[inline]
pub fn pixel_center(x: usize, y: usize) -> Vec2 {
    Vec2::new(x as f64 + 0.5, y as f64 + 0.5)
}

#[inline]
pub(crate) fn footprint(pg: &ProjectedGaussian, pix: &Vec2, dt: f64) -> Option<Footprint> {
    let delta = pix - pg.mean_at(dt);
    let c = &pg.conic;
    let power = -0.5 * (c[(0, 0)] * delta.x * delta.x + 2.0 * c[(0, 1)] * delta.x * delta.y + c[(1, 1)] * delta.y * delta.y);
    if power > 0.0 {
        return None;
    }
    let gauss = power.exp();
    let raw = pg.opacity * gauss;
    if raw < ALPHA_MIN {
        return None;
    }
    let clipped = raw > ALPHA_MAX;
    Some(Footprint {
        alpha: if clipped { ALPHA_MAX } else { raw },
        gauss,
        delta,
        clipped,
    })
}

/// Front-to-back compositing of depth-ordered splats at one pixel sample.
pub(crate) fn blend<'a>(pix: &Vec2, dt: f64, splats: impl Iterator<Item = &'a ProjectedGaussian>) -> Vec3 {
    let mut color = Vec3::zeros();
    let mut t = 1.0;
    for pg in splats {
        let Some(f) = footprint(pg, pix, dt) else {
            continue;
        };
        let next_t = t * (1.0 - f.alpha);
        if next_t < T_MIN {
            break;
        }
        color += pg.color * (f.alpha * t);
        t = next_t;
    }
    color
}

/// Linear color of pixel `(x, y)` for splats already sorted by depth, with means shifted by `dt`.
pub fn blend_pixel(x: usize, y: usize, sorted: &[ProjectedGaussian], dt: f64) -> Vec3 {
    blend(&pixel_center(x, y), dt, sorted.iter())
}

/// Transmittance before each contributing splat at one pixel sample, front to back.
pub fn transmittance_sequence(x: usize, y: usize, sorted: &[ProjectedGaussian], dt: f64) -> Vec<f64> {
    let pix = pixel_center(x, y);
    let mut out = Vec::new();
    let mut t = 1.0;
    for pg in sorted {
        let Some(f) = footprint(pg, &pix, dt) else {
            continue;
        };
        let next_t = t * (1.0 - f.alpha);
        if next_t < T_MIN {
            break;
        }
        out.push(t);
        t = next_t;
    }
    out
}

/// Permutation ordering splats by ascending depth, ties by scene index.
pub fn depth_sort(splats: &[ProjectedGaussian]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..splats.len()).collect();
    order.sort_by(|&a, &b| {
        splats[a]
            .depth
            .total_cmp(&splats[b].depth)
            .then(splats[a].source.cmp(&splats[b].source))
    });
    order
}

/// Per-tile lists of splat indices (into the depth-sorted array), each in depth order.
#[derive(Debug, Clone)]
pub(crate) struct TileBins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

/// Radius in standard deviations beyond which a splat's opacity drops under [`ALPHA_MIN`].
fn cutoff_sigmas(opacity: f64) -> f64 {
    let a = opacity.min(ALPHA_MAX);
    let r2 = 2.0 * (a / ALPHA_MIN).ln();
    r2.max(9.0).sqrt()
}

fn bin_tiles(splats: &[ProjectedGaussian], k: &Intrinsics, max_dt: f64) -> TileBins {
    let tiles_x = k.width.div_ceil(TILE_SIZE);
    let tiles_y = k.height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (i, pg) in splats.iter().enumerate() {
        if pg.opacity < ALPHA_MIN {
            continue;
        }
        let r = cutoff_sigmas(pg.opacity);
        let hx = r * pg.cov_px[(0, 0)].sqrt() + pg.vel_px.x.abs() * max_dt + 1.0;
        let hy = r * pg.cov_px[(1, 1)].sqrt() + pg.vel_px.y.abs() * max_dt + 1.0;
        let (x0, x1) = (pg.mean_px.x - hx, pg.mean_px.x + hx);
        let (y0, y1) = (pg.mean_px.y - hy, pg.mean_px.y + hy);
        if !(x1 >= 0.0 && y1 >= 0.0 && x0 < k.width as f64 && y0 < k.height as f64) {
            continue;
        }
        let tx0 = (x0.max(0.0) as usize) / TILE_SIZE;
        let ty0 = (y0.max(0.0) as usize) / TILE_SIZE;
        let tx1 = ((x1 as usize) / TILE_SIZE).min(tiles_x - 1);
        let ty1 = ((y1 as usize) / TILE_SIZE).min(tiles_y - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    TileBins { tiles_x, lists }
}

/// One frame's projection, depth order and tile bins, shared by forward and backward passes.
#[derive(Debug, Clone)]
pub struct RenderPass {
    pub frame: FrameMotion,
    pub intrinsics: Intrinsics,
    pub config: RenderConfig,
    /// Visible splats in ascending depth order.
    pub splats: Vec<ProjectedGaussian>,
    pub(crate) bins: TileBins,
}

impl RenderPass {
    pub fn new(scene: &Scene, fm: &FrameMotion, k: &Intrinsics, cfg: &RenderConfig) -> Result<Self> {
        if scene.is_empty() {
            return Err(Error::invalid("cannot render an empty scene"));
        }
        cfg.validate()?;
        k.validate()?;
        fm.validate()?;
        let projected = project_scene(scene, fm, k, cfg)?;
        if projected.is_empty() {
            log::warn!("all {} splats culled; rendering background", scene.len());
        }
        Ok(Self::from_projected(projected, fm, k, cfg))
    }

    /// Build from already projected splats (any order).
    pub fn from_projected(
        projected: Vec<ProjectedGaussian>,
        fm: &FrameMotion,
        k: &Intrinsics,
        cfg: &RenderConfig,
    ) -> Self {
        let order = depth_sort(&projected);
        let mut slots: Vec<Option<ProjectedGaussian>> = projected.into_iter().map(Some).collect();
        let splats: Vec<ProjectedGaussian> = order.iter().map(|&i| slots[i].take().expect("permutation")).collect();
        let bins = bin_tiles(&splats, k, fm.max_offset());
        RenderPass {
            frame: *fm,
            intrinsics: *k,
            config: *cfg,
            splats,
            bins,
        }
    }

    pub(crate) fn tile_splats(&self, tile: usize) -> impl Iterator<Item = &ProjectedGaussian> + Clone {
        self.bins.lists[tile].iter().map(move |&i| &self.splats[i as usize])
    }

    pub(crate) fn tile_bounds(&self, tile: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let (tx, ty) = (tile % self.bins.tiles_x, tile / self.bins.tiles_x);
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (
            x0..(x0 + TILE_SIZE).min(self.intrinsics.width),
            y0..(y0 + TILE_SIZE).min(self.intrinsics.height),
        )
    }

    /// Samples per pixel. With zero exposure every sample lands at the same time, so one suffices.
    pub(crate) fn n_samples(&self) -> usize {
        if self.frame.exposure == 0.0 {
            1
        } else {
            self.config.n_blur.max(1)
        }
    }

    /// Sample time offsets for row `y`.
    pub(crate) fn row_offsets(&self, y: usize) -> Vec<f64> {
        let n = self.n_samples();
        (1..=n)
            .map(|k| sample_offset(k, y, n, self.intrinsics.height, &self.frame))
            .collect()
    }

    fn render_tile(&self, tile: usize, rows: &std::ops::Range<usize>) -> Vec<(usize, usize, Vec3)> {
        let (xs, ys) = self.tile_bounds(tile);
        let mut out = Vec::with_capacity(xs.len() * ys.len());
        for y in ys.start.max(rows.start)..ys.end.min(rows.end) {
            let dts = self.row_offsets(y);
            for x in xs.clone() {
                let pix = pixel_center(x, y);
                // Running mean: identical samples reproduce the single-sample value bit for bit.
                let mut mean = Vec3::zeros();
                for (k, dt) in dts.iter().enumerate() {
                    let c = blend(&pix, *dt, self.tile_splats(tile));
                    if k == 0 {
                        mean = c;
                    } else {
                        mean += (c - mean) / (k + 1) as f64;
                    }
                }
                out.push((x, y, mean));
            }
        }
        out
    }

    /// Linear-RGB image averaged over blur samples.
    pub fn forward(&self) -> Image {
        self.forward_rows(0..self.intrinsics.height)
    }

    /// Linear image with only `rows` filled in; other rows stay black.
    pub fn forward_rows(&self, rows: std::ops::Range<usize>) -> Image {
        let k = &self.intrinsics;
        let mut img = Image::new(k.width, k.height, ColorSpace::Linear);
        let tiles: Vec<usize> = (0..self.bins.lists.len())
            .filter(|&t| {
                let (_, ys) = self.tile_bounds(t);
                ys.start < rows.end && rows.start < ys.end
            })
            .collect();
        let parts: Vec<Vec<(usize, usize, Vec3)>> =
            crate::parallel::install(|| tiles.par_iter().map(|&t| self.render_tile(t, &rows)).collect());
        for part in parts {
            for (x, y, c) in part {
                img.set(x, y, c);
            }
        }
        img
    }
}

/// Render one frame to a linear-RGB image.
pub fn render_linear(scene: &Scene, fm: &FrameMotion, k: &Intrinsics, cfg: &RenderConfig) -> Result<Image> {
    Ok(RenderPass::new(scene, fm, k, cfg)?.forward())
}

/// Render one frame with blur and rolling shutter, then gamma-encode.
pub fn render_frame(scene: &Scene, fm: &FrameMotion, k: &Intrinsics, cfg: &RenderConfig) -> Result<Image> {
    let linear = render_linear(scene, fm, k, cfg)?;
    Ok(encode_gamma(&linear, cfg.gamma))
}
