use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::Grid;

/// Reported in place of an infinite PSNR (identical images).
pub const PSNR_CAP: f64 = 99.0;

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn window() -> [f64; WIN] {
    let mut w = [0.0; WIN];
    let half = (WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = libm::exp(-d * d / (2.0 * SIGMA * SIGMA));
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filtering restricted to centres whose window fits.
fn filter_valid(x: &[f64], grid: Grid, w: &[f64; WIN]) -> Vec<f64> {
    let (h, wd) = (grid.height, grid.width);
    let (oh, ow) = (h - WIN + 1, wd - WIN + 1);
    let mut rows = alloc::vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..WIN).map(|k| w[k] * x[r * wd + c + k]).sum();
        }
    }
    let mut out = alloc::vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..WIN).map(|k| w[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

/// Mean structural similarity over all pixels whose 11x11 Gaussian window
/// (sigma 1.5) lies inside the image. Multi-channel stacks are averaged.
pub fn ssim(u: &[f64], v: &[f64], grid: Grid, data_range: f64) -> Result<f64> {
    if u.len() != v.len() || grid.len() == 0 || u.len() % grid.len() != 0 {
        return Err(Error::Shape("SSIM needs two images of the same shape".into()));
    }
    if grid.height < WIN || grid.width < WIN {
        return Err(Error::Shape("SSIM needs images of at least 11x11 pixels".into()));
    }
    if !(data_range > 0.0) {
        return Err(Error::Config("data range must be positive".into()));
    }
    let w = window();
    let (c1, c2) = ((K1 * data_range).powi(2), (K2 * data_range).powi(2));
    let n = grid.len();
    let mut total = 0.0;
    let planes = u.len() / n;
    for (a, b) in u.chunks_exact(n).zip(v.chunks_exact(n)) {
        let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mu_a = filter_valid(a, grid, &w);
        let mu_b = filter_valid(b, grid, &w);
        let aa = filter_valid(&prod(a, a), grid, &w);
        let bb = filter_valid(&prod(b, b), grid, &w);
        let ab = filter_valid(&prod(a, b), grid, &w);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / planes as f64)
}

/// `10 log10(range^2 / MSE)`; `+inf` for identical images.
pub fn psnr(u: &[f64], v: &[f64], data_range: f64) -> Result<f64> {
    if u.len() != v.len() || u.is_empty() {
        return Err(Error::Shape("PSNR needs two images of the same shape".into()));
    }
    let mse = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / u.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * libm::log10(data_range * data_range / mse))
}
