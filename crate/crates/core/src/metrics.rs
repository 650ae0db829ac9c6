//! Image quality measures: PSNR and single-scale SSIM.

use crate::codec::Image;
use crate::error::{Error, Result};

/// One evaluated pair.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityReport {
    pub psnr: f64,
    pub ssim: f64,
    pub bpp: f64,
}

/// 10 log10(255^2 / mse) over all samples of all channels; identical images
/// give +inf.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let n = a.samples().len() as f64;
    let mse: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

/// Mean local SSIM over all valid (fully interior) 11x11 windows, Gaussian
/// weighted with sigma 1.5; channels are averaged.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::param(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, image is {w}x{h}"
        )));
    }
    let kernel = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..a.channels() {
        total += plane_ssim(a.plane(c), b.plane(c), w, h, &kernel);
    }
    Ok(total / a.channels() as f64)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - mid;
            let dy = y as f64 - mid;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            k[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in k.iter_mut() {
        *v /= sum;
    }
    k
}

fn plane_ssim(a: &[u8], b: &[u8], w: usize, h: usize, kernel: &[f64]) -> f64 {
    let mut acc = 0.0;
    let mut windows = 0.0;
    for wy in 0..=(h - SSIM_WINDOW) {
        for wx in 0..=(w - SSIM_WINDOW) {
            let (mut ma, mut mb) = (0.0, 0.0);
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            let mut ki = 0;
            for y in wy..wy + SSIM_WINDOW {
                for x in wx..wx + SSIM_WINDOW {
                    let k = kernel[ki];
                    ki += 1;
                    let xa = a[y * w + x] as f64;
                    let xb = b[y * w + x] as f64;
                    ma += k * xa;
                    mb += k * xb;
                    va += k * xa * xa;
                    vb += k * xb * xb;
                    cov += k * xa * xb;
                }
            }
            va -= ma * ma;
            vb -= mb * mb;
            cov -= ma * mb;
            let s = ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            acc += s;
            windows += 1.0;
        }
    }
    acc / windows
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels() {
        return Err(Error::shape(format!(
            "image dims {}x{}x{} vs {}x{}x{}",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    Ok(())
}
