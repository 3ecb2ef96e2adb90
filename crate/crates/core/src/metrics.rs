//! PSNR and SSIM.

use crate::error::{shape_err, Result};
use crate::tensor::{Real, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: Real = 1.5;
pub const SSIM_K1: Real = 0.01;
pub const SSIM_K2: Real = 0.03;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<Real> {
    if a.shape() != b.shape() {
        return shape_err("mse", format!("{} vs {}", a.shape(), b.shape()));
    }
    let s: Real = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as Real)
}

/// `10 * log10(peak^2 / MSE)` in dB; `+inf` when the inputs are identical.
pub fn psnr(a: &Tensor, b: &Tensor, peak: Real) -> Result<Real> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(Real::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Normalised 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: Real) -> Vec<Real> {
    let c = (size as Real - 1.0) / 2.0;
    let mut w: Vec<Real> = (0..size)
        .map(|i| {
            let d = i as Real - c;
            (-(d * d) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: Real = w.iter().sum();
    for v in &mut w {
        *v /= s;
    }
    w
}

/// Separable valid-mode filtering of an `h`×`w` plane.
fn filter_valid(plane: &[Real], h: usize, w: usize, taps: &[Real]) -> Vec<Real> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().zip(&src[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over every valid 11×11 Gaussian window (sigma 1.5, K1 0.01,
/// K2 0.03, peak 1), averaged across all channel planes.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<Real> {
    let s = a.shape();
    if s != b.shape() {
        return shape_err("ssim", format!("{} vs {}", s, b.shape()));
    }
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return shape_err("ssim", format!("{s} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let x = a.plane(n, c);
            let y = b.plane(n, c);
            let xx: Vec<Real> = x.iter().map(|v| v * v).collect();
            let yy: Vec<Real> = y.iter().map(|v| v * v).collect();
            let xy: Vec<Real> = x.iter().zip(y).map(|(p, q)| p * q).collect();
            let mx = filter_valid(x, s.h, s.w, &taps);
            let my = filter_valid(y, s.h, s.w, &taps);
            let exx = filter_valid(&xx, s.h, s.w, &taps);
            let eyy = filter_valid(&yy, s.h, s.w, &taps);
            let exy = filter_valid(&xy, s.h, s.w, &taps);
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (ux, uy) = (mx[i], my[i]);
                let vx = exx[i] - ux * ux;
                let vy = eyy[i] - uy * uy;
                let cov = exy[i] - ux * uy;
                acc += ((2.0 * ux * uy + c1) * (2.0 * cov + c2))
                    / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
            }
            total += acc / mx.len() as Real;
        }
    }
    Ok(total / (s.n * s.c) as Real)
}
