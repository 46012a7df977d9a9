//! Forward operators `A` with exact adjoints, data-term gradients and
//! measurement simulators.

mod fourier;
mod noise;
mod radon;

pub use fourier::{dft_1d, variable_density_mask, FourierOp, MaskConfig};
pub use noise::{poisson, simulate_lowdose_ct, NoiseModel};
pub use radon::{RadonGeometry, RadonOp};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Linear map between flat real arrays with a known shape on either side.
pub trait LinearOperator: Send + Sync {
    fn domain_shape(&self) -> Vec<usize>;
    fn range_shape(&self) -> Vec<usize>;
    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>>;

    fn domain_len(&self) -> usize {
        self.domain_shape().iter().product()
    }

    fn range_len(&self) -> usize {
        self.range_shape().iter().product()
    }
}

pub(crate) fn check_len(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(Error::Length { expected, got: x.len() });
    }
    Ok(())
}

/// The forward operators used by the experiments.
#[derive(Debug, Clone, PartialEq)]
pub enum ForwardOperator {
    /// Denoising: `A = I` on `(channels, h, w)` images.
    Identity { shape: [usize; 3] },
    /// Pixel mask, shared by all channels.
    Inpainting { shape: [usize; 3], mask: Vec<f64> },
    Fourier(FourierOp),
    Radon(RadonOp),
}

impl ForwardOperator {
    pub fn identity(channels: usize, h: usize, w: usize) -> Self {
        Self::Identity { shape: [channels, h, w] }
    }

    pub fn inpainting(channels: usize, h: usize, w: usize, mask: Vec<f64>) -> Result<Self> {
        check_len(&mask, h * w)?;
        Ok(Self::Inpainting { shape: [channels, h, w], mask })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Identity { .. } => "identity",
            Self::Inpainting { .. } => "inpainting",
            Self::Fourier(_) => "fourier",
            Self::Radon(_) => "radon",
        }
    }

    /// `A A^T` restricted to the range is `diag(mask)` for the masking operators.
    pub fn range_mask(&self) -> Option<Vec<f64>> {
        match self {
            Self::Identity { shape } => Some(vec![1.0; shape.iter().product()]),
            Self::Inpainting { shape, mask } => {
                Some((0..shape[0]).flat_map(|_| mask.iter().copied()).collect())
            }
            Self::Fourier(f) => Some(f.range_mask()),
            Self::Radon(_) => None,
        }
    }
}

impl LinearOperator for ForwardOperator {
    fn domain_shape(&self) -> Vec<usize> {
        match self {
            Self::Identity { shape } | Self::Inpainting { shape, .. } => shape.to_vec(),
            Self::Fourier(f) => f.domain_shape(),
            Self::Radon(r) => r.domain_shape(),
        }
    }

    fn range_shape(&self) -> Vec<usize> {
        match self {
            Self::Identity { shape } | Self::Inpainting { shape, .. } => shape.to_vec(),
            Self::Fourier(f) => f.range_shape(),
            Self::Radon(r) => r.range_shape(),
        }
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Identity { shape } => {
                check_len(x, shape.iter().product())?;
                Ok(x.to_vec())
            }
            Self::Inpainting { shape, mask } => {
                check_len(x, shape.iter().product())?;
                let n = mask.len();
                Ok(x.iter().enumerate().map(|(i, v)| v * mask[i % n]).collect())
            }
            Self::Fourier(f) => f.apply(x),
            Self::Radon(r) => r.apply(x),
        }
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        match self {
            // both are self-adjoint
            Self::Identity { .. } | Self::Inpainting { .. } => self.apply(y),
            Self::Fourier(f) => f.adjoint(y),
            Self::Radon(r) => r.adjoint(y),
        }
    }
}

/// `factor * A`. Learned schemes are fed a unit-norm operator so that the
/// raw data gradient neither explodes nor vanishes through the iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledOperator<O> {
    pub inner: O,
    pub factor: f64,
}

impl<O: LinearOperator> ScaledOperator<O> {
    /// `A / |A|`, with the norm from `iterations` power-iteration steps.
    pub fn normalized(inner: O, iterations: usize, seed: u64) -> Result<Self> {
        let norm_sq = operator_norm_sq(&inner, iterations, seed)?;
        if !(norm_sq > 0.0) {
            return Err(Error::Config("cannot normalise an operator with zero norm".into()));
        }
        Ok(Self { inner, factor: 1.0 / libm::sqrt(norm_sq) })
    }
}

impl<O: LinearOperator> LinearOperator for ScaledOperator<O> {
    fn domain_shape(&self) -> Vec<usize> {
        self.inner.domain_shape()
    }

    fn range_shape(&self) -> Vec<usize> {
        self.inner.range_shape()
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.inner.apply(x)?;
        y.iter_mut().for_each(|v| *v *= self.factor);
        Ok(y)
    }

    fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.inner.adjoint(y)?;
        x.iter_mut().for_each(|v| *v *= self.factor);
        Ok(x)
    }
}

/// `A^T (A u - y)`, the gradient of `E(u) = 1/2 |A u - y|^2`.
pub fn data_grad(op: &dyn LinearOperator, u: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_len(y, op.range_len())?;
    let mut r = op.apply(u)?;
    r.iter_mut().zip(y).for_each(|(a, b)| *a -= b);
    op.adjoint(&r)
}

/// `E(u) = 1/2 |A u - y|^2`.
pub fn data_discrepancy(op: &dyn LinearOperator, u: &[f64], y: &[f64]) -> Result<f64> {
    check_len(y, op.range_len())?;
    let r = op.apply(u)?;
    Ok(0.5 * r.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
}

/// Power-iteration estimate of `|A|^2 = lambda_max(A^T A)`.
pub fn operator_norm_sq(op: &dyn LinearOperator, iterations: usize, seed: u64) -> Result<f64> {
    let mut rng = SeededRng::new(seed);
    let mut x: Vec<f64> = (0..op.domain_len()).map(|_| rng.normal()).collect();
    let mut lambda = 0.0;
    for _ in 0..iterations.max(1) {
        let norm = libm::sqrt(x.iter().map(|v| v * v).sum());
        if norm == 0.0 {
            return Ok(0.0);
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let y = op.adjoint(&op.apply(&x)?)?;
        lambda = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        x = y;
    }
    Ok(lambda)
}

/// Draws noisy measurements `y = N(A u)`.
pub fn simulate_measurement(
    op: &ForwardOperator,
    u: &[f64],
    noise: &NoiseModel,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    let clean = op.apply(u)?;
    match noise {
        NoiseModel::None => Ok(clean),
        NoiseModel::LowDosePoisson { photons, mu, eta, noiseless } => {
            if !matches!(op, ForwardOperator::Radon(_)) {
                return Err(Error::Config(format!(
                    "low-dose noise needs a Radon operator, got {}",
                    op.name()
                )));
            }
            Ok(simulate_lowdose_ct(&clean, *photons, *mu, *eta, *noiseless, rng))
        }
        NoiseModel::Gaussian { sigma } => {
            let mask = op.range_mask();
            Ok(clean
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    let e = sigma * rng.normal();
                    match &mask {
                        Some(m) => v + m[i] * e,
                        None => v + e,
                    }
                })
                .collect())
        }
    }
}
