use alloc::vec::Vec;

use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    None,
    /// Photon-counting CT: `y = -ln(max(n / N_in, eta)) / mu` with
    /// `n ~ Poisson(N_in exp(-mu R u))`.
    LowDosePoisson { photons: f64, mu: f64, eta: f64, noiseless: bool },
    /// Additive i.i.d. Gaussian noise on measured entries (both real and
    /// imaginary parts for k-space data).
    Gaussian { sigma: f64 },
}

impl NoiseModel {
    pub fn low_dose() -> Self {
        Self::LowDosePoisson { photons: 1e4, mu: 0.02, eta: 1e-8, noiseless: false }
    }
}

/// Poisson draw: sequential inversion for small means, rounded normal
/// approximation (clamped at zero) from 30 upward.
pub fn poisson(lambda: f64, rng: &mut SeededRng) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    if lambda >= 30.0 {
        return libm::round(lambda + libm::sqrt(lambda) * rng.normal()).max(0.0);
    }
    let u = rng.uniform();
    let mut p = libm::exp(-lambda);
    let mut cdf = p;
    let mut k = 0.0;
    while u > cdf && k < 1000.0 {
        k += 1.0;
        p *= lambda / k;
        cdf += p;
    }
    k
}

pub fn simulate_lowdose_ct(
    sinogram: &[f64],
    photons: f64,
    mu: f64,
    eta: f64,
    noiseless: bool,
    rng: &mut SeededRng,
) -> Vec<f64> {
    sinogram
        .iter()
        .map(|&s| {
            let mean = photons * libm::exp(-mu * s);
            let counts = if noiseless { mean } else { poisson(mean, rng) };
            -libm::log((counts / photons).max(eta)) / mu
        })
        .collect()
}
