//! Image and flow quality metrics.

use blurwarp_tensor::Tensor;

use crate::error::{Error, Result};

/// Reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Contract(format!("metric inputs differ in shape: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    Ok(s / a.numel().max(1) as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range, capped at 99.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = taps.iter().sum();
    taps.map(|t| t / s)
}

/// Separable Gaussian filter keeping only fully covered windows.
fn filter_valid(x: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x0 in 0..ow {
            rows[y * ow + x0] = taps.iter().enumerate().map(|(k, t)| t * x[y * w + x0 + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y0 in 0..oh {
        for x0 in 0..ow {
            out[y0 * ow + x0] = taps.iter().enumerate().map(|(k, t)| t * rows[(y0 + k) * ow + x0]).sum();
        }
    }
    out
}

/// Structural similarity: 11×11 Gaussian window (σ = 1.5), unit dynamic
/// range, averaged over valid window positions and then over planes.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let [n, c, h, w] = a.dims4("ssim")?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Contract(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let taps = gaussian_taps();
    let plane = h * w;
    let mut total = 0.0;
    for p in 0..n * c {
        let xa: Vec<f64> = a.data()[p * plane..(p + 1) * plane].iter().map(|v| *v as f64).collect();
        let xb: Vec<f64> = b.data()[p * plane..(p + 1) * plane].iter().map(|v| *v as f64).collect();
        let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(s, t)| s * t).collect() };
        let mu_a = filter_valid(&xa, h, w, &taps);
        let mu_b = filter_valid(&xb, h, w, &taps);
        let aa = filter_valid(&prod(&xa, &xa), h, w, &taps);
        let bb = filter_valid(&prod(&xb, &xb), h, w, &taps);
        let ab = filter_valid(&prod(&xa, &xb), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (aa[i] - ma * ma, bb[i] - mb * mb, ab[i] - ma * mb);
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2)) / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / (n * c) as f64)
}

/// Mean endpoint error between two `[B, 2, H, W]` flows.
pub fn epe(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let [n, c, h, w] = a.dims4("epe")?;
    if c != 2 {
        return Err(Error::Contract(format!("flow must have 2 channels, got {c}")));
    }
    let plane = h * w;
    let (ad, bd) = (a.data(), b.data());
    let mut acc = 0.0;
    for i in 0..n {
        let o = 2 * i * plane;
        for p in 0..plane {
            let du = ad[o + p] as f64 - bd[o + p] as f64;
            let dv = ad[o + plane + p] as f64 - bd[o + plane + p] as f64;
            acc += du.hypot(dv);
        }
    }
    Ok(acc / (n * plane).max(1) as f64)
}
