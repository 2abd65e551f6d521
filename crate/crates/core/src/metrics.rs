//! Frame comparison: MSE, PSNR and SSIM.
//!
//! MSE and PSNR use the RGB channels scaled to `[0, 1]`; alpha is ignored.
//! SSIM works on luminance with an 11x11 Gaussian window (sigma 1.5) over all
//! fully contained window positions.

use alloc::format;
use alloc::vec::Vec;

use crate::render::Frame;
use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_size(a: &Frame, b: &Frame) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) || a.rgba.len() != b.rgba.len() {
        return Err(Error::domain("frame comparison", format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    if a.rgba.is_empty() {
        return Err(Error::domain("frame comparison", "empty frames"));
    }
    Ok(())
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_size(a, b)?;
    let mut sum = 0.0;
    for (pa, pb) in a.rgba.chunks_exact(4).zip(b.rgba.chunks_exact(4)) {
        for c in 0..3 {
            let d = (pa[c] as f64 - pb[c] as f64) / 255.0;
            sum += d * d;
        }
    }
    Ok(sum / (3 * a.rgba.len() / 4) as f64)
}

/// `10 log10(1 / MSE)`; identical frames give `+inf`.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * libm::log10(1.0 / m) })
}

fn luminance(f: &Frame) -> Vec<f64> {
    f.rgba.chunks_exact(4).map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64).collect()
}

fn gaussian_1d() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, wi) in w.iter_mut().enumerate() {
        let x = i as f64 - c;
        *wi = libm::exp(-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering: output is `(w-10) x (h-10)`.
fn filter(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = Vec::with_capacity(ow * h);
    for y in 0..h {
        let r = &img[y * w..(y + 1) * w];
        for x in 0..ow {
            rows.push(k.iter().zip(&r[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum::<f64>());
        }
    }
    let mut out = Vec::with_capacity(ow * oh);
    for y in 0..oh {
        for x in 0..ow {
            out.push((0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum::<f64>());
        }
    }
    out
}

/// Mean structural similarity of the luminance channels, in `[-1, 1]`.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_size(a, b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::domain("SSIM", format!("frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}")));
    }
    let x = luminance(a);
    let y = luminance(b);
    let k = gaussian_1d();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter(&x, w, h, &k);
    let my = filter(&y, w, h, &k);
    let sxx = filter(&prod(&x, &x), w, h, &k);
    let syy = filter(&prod(&y, &y), w, h, &k);
    let sxy = filter(&prod(&x, &y), w, h, &k);
    let c1 = (SSIM_K1 * 255.0) * (SSIM_K1 * 255.0);
    let c2 = (SSIM_K2 * 255.0) * (SSIM_K2 * 255.0);
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}
