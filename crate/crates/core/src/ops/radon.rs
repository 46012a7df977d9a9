use alloc::vec;
use alloc::vec::Vec;

use super::fourier::dft_1d;
use super::{check_len, LinearOperator};
use crate::error::{Error, Result};

/// Parallel-beam geometry on an `n x n` image with unit pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonGeometry {
    pub n: usize,
    pub n_views: usize,
    pub n_detectors: usize,
    /// `k * pi / n_views`, strictly increasing in `[0, pi)`.
    pub angles: Vec<f64>,
}

impl RadonGeometry {
    /// `n_detectors` defaults to `ceil(n * sqrt(2))`.
    pub fn new(n: usize, n_views: usize, n_detectors: Option<usize>) -> Result<Self> {
        if n == 0 || n_views == 0 {
            return Err(Error::Config("Radon geometry needs a positive size and view count".into()));
        }
        let n_detectors =
            n_detectors.unwrap_or_else(|| libm::ceil(n as f64 * core::f64::consts::SQRT_2) as usize);
        let angles = (0..n_views)
            .map(|k| core::f64::consts::PI * k as f64 / n_views as f64)
            .collect();
        Ok(Self { n, n_views, n_detectors, angles })
    }
}

const STEP: f64 = 0.5;

/// Ray-driven projector: each line integral is a Riemann sum of bilinear
/// samples taken every half pixel. The adjoint scatters with the same weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RadonOp {
    pub geometry: RadonGeometry,
    half_len: f64,
}

impl RadonOp {
    pub fn new(geometry: RadonGeometry) -> Self {
        let reach = geometry.n as f64 * core::f64::consts::FRAC_1_SQRT_2 + 1.0;
        let half_len = STEP * libm::ceil(reach / STEP);
        Self { geometry, half_len }
    }

    /// Calls `visit(pixel, weight)` for every bilinear contribution of ray `(view, det)`.
    fn trace(&self, view: usize, det: usize, mut visit: impl FnMut(usize, f64)) {
        let n = self.geometry.n;
        let c = (n as f64 - 1.0) / 2.0;
        let theta = self.geometry.angles[view];
        let (sn, cs) = (libm::sin(theta), libm::cos(theta));
        let s = det as f64 - (self.geometry.n_detectors as f64 - 1.0) / 2.0;
        let samples = (2.0 * self.half_len / STEP) as usize + 1;
        for k in 0..samples {
            let t = -self.half_len + STEP * k as f64;
            let x = s * cs - t * sn;
            let y = s * sn + t * cs;
            let col = x + c;
            let row = c - y;
            let (r0, c0) = (libm::floor(row), libm::floor(col));
            let (fr, fc) = (row - r0, col - c0);
            let (r0, c0) = (r0 as i64, c0 as i64);
            for (dr, dc, w) in [
                (0, 0, (1.0 - fr) * (1.0 - fc)),
                (0, 1, (1.0 - fr) * fc),
                (1, 0, fr * (1.0 - fc)),
                (1, 1, fr * fc),
            ] {
                let (r, cc) = (r0 + dr, c0 + dc);
                if w == 0.0 || r < 0 || cc < 0 || r >= n as i64 || cc >= n as i64 {
                    continue;
                }
                visit(r as usize * n + cc as usize, STEP * w);
            }
        }
    }

    /// Filtered backprojection: Ram-Lak filtering of each view in the
    /// detector-frequency domain, backprojection, scaling by `pi / n_views`.
    pub fn fbp(&self, sinogram: &[f64]) -> Result<Vec<f64>> {
        check_len(sinogram, self.range_len())?;
        let nd = self.geometry.n_detectors;
        let len = (2 * nd).next_power_of_two();
        // spatial Ram-Lak kernel on the circular grid, unit detector spacing
        let mut h = vec![0.0; len];
        h[0] = 0.25;
        for k in 1..len / 2 {
            if k % 2 == 1 {
                let v = -1.0 / (core::f64::consts::PI * core::f64::consts::PI * (k * k) as f64);
                h[k] = v;
                h[len - k] = v;
            }
        }
        let (h_re, h_im) = dft_1d(&h, &vec![0.0; len], false);
        let mut filtered = vec![0.0; sinogram.len()];
        for (view, row) in sinogram.chunks_exact(nd).enumerate() {
            let mut re = vec![0.0; len];
            re[..nd].copy_from_slice(row);
            let (mut fr, mut fi) = dft_1d(&re, &vec![0.0; len], false);
            for i in 0..len {
                let (a, b) = (fr[i], fi[i]);
                fr[i] = a * h_re[i] - b * h_im[i];
                fi[i] = a * h_im[i] + b * h_re[i];
            }
            let (out, _) = dft_1d(&fr, &fi, true);
            filtered[view * nd..(view + 1) * nd].copy_from_slice(&out[..nd]);
        }
        let mut img = self.adjoint(&filtered)?;
        let scale = core::f64::consts::PI / self.geometry.n_views as f64;
        img.iter_mut().for_each(|v| *v *= scale);
        Ok(img)
    }
}

impl LinearOperator for RadonOp {
    fn domain_shape(&self) -> Vec<usize> {
        vec![1, self.geometry.n, self.geometry.n]
    }

    fn range_shape(&self) -> Vec<usize> {
        vec![1, self.geometry.n_views, self.geometry.n_detectors]
    }

    fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        check_len(u, self.domain_len())?;
        let nd = self.geometry.n_detectors;
        let mut out = vec![0.0; self.range_len()];
        for view in 0..self.geometry.n_views {
            for det in 0..nd {
                let mut acc = 0.0;
                self.trace(view, det, |p, w| acc += w * u[p]);
                out[view * nd + det] = acc;
            }
        }
        Ok(out)
    }

    fn adjoint(&self, s: &[f64]) -> Result<Vec<f64>> {
        check_len(s, self.range_len())?;
        let nd = self.geometry.n_detectors;
        let mut out = vec![0.0; self.domain_len()];
        for view in 0..self.geometry.n_views {
            for det in 0..nd {
                let v = s[view * nd + det];
                if v == 0.0 {
                    continue;
                }
                self.trace(view, det, |p, w| out[p] += w * v);
            }
        }
        Ok(out)
    }
}
