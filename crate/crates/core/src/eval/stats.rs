use alloc::vec::Vec;

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Summary of the values left after dropping the top and bottom tails.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrimmedSummary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

/// Drops `floor(fraction * n)` values from each end, then summarizes.
pub fn trimmed(values: &[f64], fraction: f64) -> TrimmedSummary {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let cut = libm::floor(fraction * v.len() as f64) as usize;
    let kept = if 2 * cut < v.len() { &v[cut..v.len() - cut] } else { &v[0..0] };
    let mean = if kept.is_empty() { f64::NAN } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    TrimmedSummary {
        count: kept.len(),
        mean,
        min: kept.first().copied().unwrap_or(f64::NAN),
        q25: quantile(kept, 0.25),
        median: quantile(kept, 0.5),
        q75: quantile(kept, 0.75),
        max: kept.last().copied().unwrap_or(f64::NAN),
    }
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to whichever spread
/// measure is non-zero.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 1.0;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = libm::sqrt(values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64);
    let mut s = values.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let iqr = (quantile(&s, 0.75) - quantile(&s, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return 1e-3,
    };
    0.9 * spread * libm::pow(n as f64, -0.2)
}

/// Gaussian kernel density estimate on `points` evenly spaced abscissae
/// spanning the data range padded by three bandwidths.
pub fn gaussian_kde(values: &[f64], points: usize) -> Vec<(f64, f64)> {
    if values.is_empty() || points == 0 {
        return Vec::new();
    }
    let h = silverman_bandwidth(values);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let norm = 1.0 / (values.len() as f64 * h * libm::sqrt(2.0 * core::f64::consts::PI));
    (0..points)
        .map(|i| {
            let x = if points == 1 { (lo + hi) / 2.0 } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 };
            let d: f64 = values.iter().map(|v| libm::exp(-0.5 * ((x - v) / h).powi(2))).sum();
            (x, norm * d)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trimming_drops_tails() {
        let v: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let s = trimmed(&v, 0.05);
        assert_eq!(s.count, 18);
        assert_eq!(s.min, 1.0);
        assert_eq!(s.max, 18.0);
        assert!((s.mean - 9.5).abs() < 1e-12);
        assert!((s.median - 9.5).abs() < 1e-12);
        assert!(trimmed(&[], 0.05).mean.is_nan());
    }

    #[test]
    fn kde_integrates_to_one() {
        let v = [0.1, 0.4, 0.45, 0.5, 0.9, 0.2];
        let pts = gaussian_kde(&v, 400);
        let dx = pts[1].0 - pts[0].0;
        let area: f64 = pts.iter().map(|p| p.1).sum::<f64>() * dx;
        assert!((area - 1.0).abs() < 0.01, "{area}");
    }
}
