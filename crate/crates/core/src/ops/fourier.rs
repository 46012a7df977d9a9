use alloc::vec;
use alloc::vec::Vec;

use super::{check_len, LinearOperator};
use crate::error::{Error, Result};
use crate::group::cos_sin_fraction;
use crate::rng::SeededRng;

/// Unnormalized DFT of a complex sequence; the inverse carries the `1/n`.
pub fn dft_1d(re: &[f64], im: &[f64], inverse: bool) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let twiddle: Vec<(f64, f64)> = (0..n).map(|j| cos_sin_fraction(j, n)).collect();
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let (mut ar, mut ai) = (0.0, 0.0);
        for j in 0..n {
            let (c, s) = twiddle[(j * k) % n];
            let s = sign * s;
            ar += re[j] * c - im[j] * s;
            ai += re[j] * s + im[j] * c;
        }
        out_re[k] = ar;
        out_im[k] = ai;
    }
    if inverse {
        let inv = 1.0 / n as f64;
        out_re.iter_mut().chain(out_im.iter_mut()).for_each(|v| *v *= inv);
    }
    (out_re, out_im)
}

/// Row-subsampled unitary 2D DFT on `(2, h, w)` real/imaginary images.
/// Unmeasured rows of k-space are returned as zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierOp {
    pub height: usize,
    pub width: usize,
    /// One entry per k-space row (frequency index along the first axis), 0 or 1.
    pub rows: Vec<f64>,
    tw_h: Vec<(f64, f64)>,
    tw_w: Vec<(f64, f64)>,
}

impl FourierOp {
    pub fn new(height: usize, width: usize, rows: Vec<f64>) -> Result<Self> {
        check_len(&rows, height)?;
        if rows.iter().any(|r| *r != 0.0 && *r != 1.0) {
            return Err(Error::Config("k-space row mask must be 0/1".into()));
        }
        let tw = |n: usize| (0..n).map(|j| cos_sin_fraction(j, n)).collect();
        Ok(Self { height, width, rows, tw_h: tw(height), tw_w: tw(width) })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![1.0; height]).expect("full mask is valid")
    }

    pub fn range_mask(&self) -> Vec<f64> {
        let plane: Vec<f64> =
            self.rows.iter().flat_map(|r| core::iter::repeat(*r).take(self.width)).collect();
        plane.iter().chain(plane.iter()).copied().collect()
    }

    /// Unitary 2D transform of the `(2, h, w)` array `x`.
    fn transform(&self, x: &[f64], inverse: bool) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let sign = if inverse { 1.0 } else { -1.0 };
        let (re, im) = x.split_at(h * w);
        // along rows (width axis)
        let mut tr = vec![0.0; h * w];
        let mut ti = vec![0.0; h * w];
        for r in 0..h {
            for k in 0..w {
                let (mut ar, mut ai) = (0.0, 0.0);
                for j in 0..w {
                    let (c, s) = self.tw_w[(j * k) % w];
                    let s = sign * s;
                    let (xr, xi) = (re[r * w + j], im[r * w + j]);
                    ar += xr * c - xi * s;
                    ai += xr * s + xi * c;
                }
                tr[r * w + k] = ar;
                ti[r * w + k] = ai;
            }
        }
        // along columns (height axis)
        let scale = 1.0 / libm::sqrt((h * w) as f64);
        let mut out = vec![0.0; 2 * h * w];
        for k in 0..h {
            for j in 0..h {
                let (c, s) = self.tw_h[(j * k) % h];
                let s = sign * s;
                for col in 0..w {
                    let (xr, xi) = (tr[j * w + col], ti[j * w + col]);
                    out[k * w + col] += xr * c - xi * s;
                    out[h * w + k * w + col] += xr * s + xi * c;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        out
    }
}

impl LinearOperator for FourierOp {
    fn domain_shape(&self) -> Vec<usize> {
        vec![2, self.height, self.width]
    }

    fn range_shape(&self) -> Vec<usize> {
        vec![2, self.height, self.width]
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(x, 2 * self.height * self.width)?;
        let mut y = self.transform(x, false);
        for (v, m) in y.iter_mut().zip(self.range_mask()) {
            *v *= m;
        }
        Ok(y)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_len(y, 2 * self.height * self.width)?;
        let masked: Vec<f64> = y.iter().zip(self.range_mask()).map(|(v, m)| v * m).collect();
        Ok(self.transform(&masked, true))
    }
}

/// Variable-density row sampling: a fully sampled low-frequency band plus
/// rows drawn without replacement with Gaussian density in frequency distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskConfig {
    /// Fraction of rows measured in total.
    pub fraction: f64,
    /// Fraction of rows in the always-sampled central band.
    pub center_fraction: f64,
    /// Standard deviation of the density, as a fraction of the row count.
    pub spread: f64,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self { fraction: 0.2, center_fraction: 0.04, spread: 1.0 / 6.0 }
    }
}

pub fn variable_density_mask(rows: usize, cfg: &MaskConfig, rng: &mut SeededRng) -> Result<Vec<f64>> {
    if !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) || cfg.center_fraction < 0.0 || cfg.spread <= 0.0 {
        return Err(Error::Config("invalid k-space mask parameters".into()));
    }
    let target = (libm::round(cfg.fraction * rows as f64) as usize).clamp(1, rows);
    let band = (libm::ceil(cfg.center_fraction * rows as f64) as usize).min(target);
    let dist = |k: usize| k.min(rows - k) as f64;
    let mut order: Vec<usize> = (0..rows).collect();
    order.sort_by(|a, b| dist(*a).partial_cmp(&dist(*b)).unwrap().then(a.cmp(b)));
    let mut mask = vec![0.0; rows];
    for &k in order.iter().take(band) {
        mask[k] = 1.0;
    }
    let sd = cfg.spread * rows as f64;
    let mut weights: Vec<f64> = (0..rows)
        .map(|k| if mask[k] == 1.0 { 0.0 } else { libm::exp(-dist(k) * dist(k) / (2.0 * sd * sd)) })
        .collect();
    for _ in band..target {
        let total: f64 = weights.iter().sum();
        let mut u = rng.uniform() * total;
        let mut pick = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
        for (k, w) in weights.iter().enumerate() {
            if *w > 0.0 && u < *w {
                pick = k;
                break;
            }
            u -= w;
        }
        mask[pick] = 1.0;
        weights[pick] = 0.0;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_has_flat_spectrum() {
        let n = 8;
        let op = FourierOp::full(n, n);
        let mut x = vec![0.0; 2 * n * n];
        x[0] = 1.0;
        let y = op.apply(&x).unwrap();
        for i in 0..n * n {
            let modulus = libm::hypot(y[i], y[n * n + i]);
            assert!((modulus - 1.0 / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn full_mask_is_unitary() {
        let op = FourierOp::full(6, 5);
        let mut rng = SeededRng::new(1);
        let x: Vec<f64> = (0..60).map(|_| rng.normal()).collect();
        let y = op.apply(&x).unwrap();
        let nx: f64 = x.iter().map(|v| v * v).sum();
        let ny: f64 = y.iter().map(|v| v * v).sum();
        assert!((nx - ny).abs() < 1e-10 * nx);
        let back = op.adjoint(&y).unwrap();
        assert!(back.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn matches_1d_transform_along_each_axis() {
        let (h, w) = (4, 3);
        let op = FourierOp::full(h, w);
        let mut rng = SeededRng::new(2);
        let x: Vec<f64> = (0..2 * h * w).map(|_| rng.normal()).collect();
        let y = op.apply(&x).unwrap();
        // independent oracle: direct double sum
        for k1 in 0..h {
            for k2 in 0..w {
                let (mut ar, mut ai) = (0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let phase = -2.0 * core::f64::consts::PI
                            * ((k1 * r) as f64 / h as f64 + (k2 * c) as f64 / w as f64);
                        let (co, si) = (libm::cos(phase), libm::sin(phase));
                        let (xr, xi) = (x[r * w + c], x[h * w + r * w + c]);
                        ar += xr * co - xi * si;
                        ai += xr * si + xi * co;
                    }
                }
                let s = 1.0 / libm::sqrt((h * w) as f64);
                assert!((y[k1 * w + k2] - s * ar).abs() < 1e-12);
                assert!((y[h * w + k1 * w + k2] - s * ai).abs() < 1e-12);
            }
        }
        let (re, im) = dft_1d(&[1.0, 2.0, 3.0], &[0.0; 3], false);
        let (back, back_im) = dft_1d(&re, &im, true);
        assert!((back[2] - 3.0).abs() < 1e-12 && back_im[1].abs() < 1e-12);
    }

    #[test]
    fn adjoint_identity_with_mask() {
        let mut rng = SeededRng::new(3);
        let mask = variable_density_mask(16, &MaskConfig::default(), &mut rng).unwrap();
        let op = FourierOp::new(16, 16, mask).unwrap();
        let x: Vec<f64> = (0..512).map(|_| rng.normal()).collect();
        let v: Vec<f64> = (0..512).map(|_| rng.normal()).collect();
        let lhs: f64 = op.apply(&x).unwrap().iter().zip(&v).map(|(a, b)| a * b).sum();
        let rhs: f64 = op.adjoint(&v).unwrap().iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn mask_has_requested_rows_and_center() {
        let mut rng = SeededRng::new(4);
        let mask = variable_density_mask(64, &MaskConfig::default(), &mut rng).unwrap();
        assert_eq!(mask.iter().filter(|m| **m == 1.0).count(), 13);
        assert_eq!(mask[0], 1.0);
        assert_eq!(mask[1], 1.0);
        assert_eq!(mask[63], 1.0);
        let again = variable_density_mask(64, &MaskConfig::default(), &mut SeededRng::new(4)).unwrap();
        assert_eq!(mask, again);
    }
}
