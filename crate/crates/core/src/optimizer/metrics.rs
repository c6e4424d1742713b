//! Image quality metrics on gamma-space images in `[0, 1]`.

use serde::Serialize;

use crate::error::Result;
use crate::image::Image;

pub const PSNR_CAP: f64 = 99.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub psnr: f64,
    pub ssim: f64,
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let sum: f64 = a.data.iter().zip(&b.data).map(|(x, y)| (x - y).norm_squared()).sum();
    Ok(sum / (3 * a.data.len()) as f64)
}

/// `10 log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / e).log10()).min(PSNR_CAP))
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filter with valid borders.
fn filter(src: &[f64], w: usize, h: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let ow = w + 1 - n;
    let oh = h + 1 - n;
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..n).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    (out, ow, oh)
}

/// Mean SSIM over channels with an 11x11 Gaussian window (sigma 1.5) and valid borders.
/// Images smaller than the window use one window covering the whole image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b)?;
    let (w, h) = a.shape();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let x: Vec<f64> = a.data.iter().map(|p| p[ch]).collect();
        let y: Vec<f64> = b.data.iter().map(|p| p[ch]).collect();
        let (mx, my, sxx, syy, sxy) = if w >= SSIM_WINDOW && h >= SSIM_WINDOW {
            let k = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
            let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
            let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
            let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
            (filter(&x, w, h, &k).0, filter(&y, w, h, &k).0, filter(&xx, w, h, &k).0, filter(&yy, w, h, &k).0, filter(&xy, w, h, &k).0)
        } else {
            let n = x.len() as f64;
            let mean = |v: &[f64]| v.iter().sum::<f64>() / n;
            let (mx, my) = (mean(&x), mean(&y));
            let sxx = x.iter().map(|v| v * v).sum::<f64>() / n;
            let syy = y.iter().map(|v| v * v).sum::<f64>() / n;
            let sxy = x.iter().zip(&y).map(|(p, q)| p * q).sum::<f64>() / n;
            (vec![mx], vec![my], vec![sxx], vec![syy], vec![sxy])
        };
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

pub fn metrics(rendered: &Image, reference: &Image) -> Result<Metrics> {
    Ok(Metrics {
        psnr: psnr(rendered, reference)?,
        ssim: ssim(rendered, reference)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::image::ColorSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> Image {
        Image::from_fn(w, h, ColorSpace::Gamma, |_, _| Vec3::new(rng.random(), rng.random(), rng.random()))
    }

    #[test]
    fn psnr_examples() {
        let a = Image::filled(8, 8, ColorSpace::Gamma, Vec3::repeat(0.5));
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        let b = Image::filled(8, 8, ColorSpace::Gamma, Vec3::repeat(0.6));
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_direct_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (random_image(&mut rng, 13, 7), random_image(&mut rng, 13, 7));
        let mut sum = 0.0;
        for (p, q) in a.data.iter().zip(&b.data) {
            for c in 0..3 {
                sum += (p[c] - q[c]).powi(2);
            }
        }
        let want = 10.0 * (1.0 / (sum / (13.0 * 7.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = Image::new(4, 4, ColorSpace::Gamma);
        let b = Image::new(4, 5, ColorSpace::Gamma);
        assert!(psnr(&a, &b).is_err());
        assert!(ssim(&a, &b).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_image(&mut rng, 24, 20), random_image(&mut rng, 24, 20));
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!(ssim(&a, &b).unwrap() < 0.5);
    }

    #[test]
    fn ssim_of_constant_images_is_luminance_term() {
        let (u, v) = (0.3, 0.4);
        let a = Image::filled(16, 16, ColorSpace::Gamma, Vec3::repeat(u));
        let b = Image::filled(16, 16, ColorSpace::Gamma, Vec3::repeat(v));
        let c1 = 0.01f64.powi(2);
        let want = (2.0 * u * v + c1) / (u * u + v * v + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn window_is_normalized() {
        let w = gaussian_window(11, 1.5);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] - w[10]).abs() < 1e-18);
    }
}
