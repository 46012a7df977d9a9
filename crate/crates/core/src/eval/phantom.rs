use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PhantomKind {
    /// A horizontally elongated body ellipse with `count` inner ellipses
    /// whose orientations stay within `orientation_spread` degrees of the
    /// horizontal, so the training set has a preferred orientation.
    Ellipses { count: (usize, usize), intensity: (f64, f64), orientation_spread: f64 },
    /// Sum of `count` Gaussian bumps of width `bandwidth` pixels, tapered
    /// smoothly to zero at the inscribed circle.
    SmoothBlobs { count: usize, bandwidth: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomSpec {
    pub kind: PhantomKind,
    pub size: usize,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn ellipses(size: usize, seed: u64) -> Self {
        Self {
            kind: PhantomKind::Ellipses { count: (3, 7), intensity: (0.1, 0.5), orientation_spread: 20.0 },
            size,
            seed,
        }
    }
}

/// Images in `[0, 1]`, zero outside the disk inscribed in the grid (so that
/// rotations about the centre never clip content). Image `i` depends only
/// on the seed and `i`.
pub fn generate_phantoms(spec: &PhantomSpec, n_images: usize) -> Result<Vec<Vec<f64>>> {
    if spec.size < 4 {
        return Err(Error::Config("phantoms need at least 4x4 pixels".into()));
    }
    (0..n_images)
        .map(|i| {
            let mut rng = SeededRng::derive(spec.seed, i as u64);
            match spec.kind {
                PhantomKind::Ellipses { count, intensity, orientation_spread } => {
                    if count.0 > count.1 || intensity.0 > intensity.1 {
                        return Err(Error::Config("phantom ranges must be ordered".into()));
                    }
                    Ok(ellipses(spec.size, count, intensity, orientation_spread, &mut rng))
                }
                PhantomKind::SmoothBlobs { count, bandwidth } => {
                    if !(bandwidth > 0.0) {
                        return Err(Error::Config("blob bandwidth must be positive".into()));
                    }
                    Ok(blobs(spec.size, count, bandwidth, &mut rng))
                }
            }
        })
        .collect()
}

/// Pixel centres in units of the inscribed radius, y up.
fn coords(n: usize) -> impl Iterator<Item = (usize, f64, f64)> {
    let c = (n as f64 - 1.0) / 2.0;
    let r = n as f64 / 2.0 - 1.0;
    (0..n * n).map(move |i| (i, ((i % n) as f64 - c) / r, (c - (i / n) as f64) / r))
}

fn ellipses(n: usize, count: (usize, usize), intensity: (f64, f64), spread: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    // (cx, cy, a, b, angle, value)
    let mut shapes = vec![(0.0, 0.0, rng.range(0.8, 0.92), rng.range(0.5, 0.65), rng.range(-0.05, 0.05), rng.range(0.3, 0.5))];
    let k = count.0 + rng.below(count.1 - count.0 + 1);
    for _ in 0..k {
        let a = rng.range(0.08, 0.35);
        let b = a * rng.range(0.3, 0.8);
        let cx = rng.range(-0.5, 0.5);
        let cy = rng.range(-0.3, 0.3);
        let angle = rng.range(-spread, spread).to_radians();
        let sign = if rng.uniform() < 0.3 { -1.0 } else { 1.0 };
        shapes.push((cx, cy, a, b, angle, sign * rng.range(intensity.0, intensity.1)));
    }
    for (i, x, y) in coords(n) {
        if x * x + y * y > 1.0 {
            continue;
        }
        let mut v = 0.0;
        for &(cx, cy, a, b, angle, value) in &shapes {
            let (s, c) = (libm::sin(angle), libm::cos(angle));
            let (dx, dy) = (x - cx, y - cy);
            let (ex, ey) = ((c * dx + s * dy) / a, (-s * dx + c * dy) / b);
            let rho2 = ex * ex + ey * ey;
            if rho2 <= 1.0 {
                // smooth intensity profile inside each ellipse
                v += value * (1.0 - 0.3 * rho2);
            }
        }
        img[i] = v.clamp(0.0, 1.0);
    }
    img
}

fn blobs(n: usize, count: usize, bandwidth: f64, rng: &mut SeededRng) -> Vec<f64> {
    let mut img = vec![0.0; n * n];
    let r = n as f64 / 2.0 - 1.0;
    let bw = bandwidth / r;
    let centres: Vec<(f64, f64, f64)> = (0..count)
        .map(|_| {
            let rho = 0.7 * libm::sqrt(rng.uniform());
            let phi = rng.range(0.0, 2.0 * core::f64::consts::PI);
            (rho * libm::cos(phi), rho * libm::sin(phi), rng.range(0.3, 1.0))
        })
        .collect();
    for (i, x, y) in coords(n) {
        if x * x + y * y > 1.0 {
            continue;
        }
        let v: f64 = centres
            .iter()
            .map(|(cx, cy, h)| h * libm::exp(-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * bw * bw)))
            .sum();
        // C1 taper so the support edge is smooth as well
        let taper = (1.0 - (x * x + y * y)).powi(2);
        img[i] = v * taper;
    }
    let peak = img.iter().copied().fold(0.0, f64::max);
    if peak > 1.0 {
        img.iter_mut().for_each(|v| *v /= peak);
    }
    img
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_deterministic() {
        let spec = PhantomSpec::ellipses(32, 3);
        assert!(generate_phantoms(&spec, 0).unwrap().is_empty());
        assert_eq!(generate_phantoms(&spec, 4).unwrap(), generate_phantoms(&spec, 4).unwrap());
        let other = PhantomSpec { seed: 4, ..spec };
        assert_ne!(generate_phantoms(&spec, 1).unwrap(), generate_phantoms(&other, 1).unwrap());
    }

    #[test]
    fn values_in_unit_interval_and_inside_disk() {
        for kind in [
            PhantomSpec::ellipses(24, 1).kind,
            PhantomKind::SmoothBlobs { count: 6, bandwidth: 3.0 },
        ] {
            let spec = PhantomSpec { kind, size: 24, seed: 9 };
            for img in generate_phantoms(&spec, 1000).unwrap() {
                assert!(img.iter().all(|v| (0.0..=1.0).contains(v)));
                assert_eq!(img[0], 0.0);
                assert_eq!(img[23], 0.0);
                assert!(img.iter().any(|v| *v > 0.0));
            }
        }
    }
}
