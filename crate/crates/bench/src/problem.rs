//! Forward problems, datasets and reconstructions shared by the commands.

use equirecon_core::eval::{generate_phantoms, psnr, ssim, PhantomSpec, PSNR_CAP};
use equirecon_core::group::Grid;
use equirecon_core::learned_recon::{unrolled_forward, TrainingPair, UnrolledNet};
use equirecon_core::ops::{
    operator_norm_sq, simulate_measurement, variable_density_mask, FourierOp, ForwardOperator, LinearOperator,
    MaskConfig, NoiseModel, RadonGeometry, RadonOp, ScaledOperator,
};
use equirecon_core::rng::SeededRng;
use equirecon_core::variational::{proximal_gradient, Functional, ProxSolverConfig};

use crate::config::{Baseline, ExperimentConfig, Problem};
use crate::error::Result;

/// Named random streams derived from the experiment seed, so that changing
/// one part of a run (say the test-set size) never reshuffles another.
pub mod streams {
    pub const TRAIN_IMAGES: u64 = 1;
    pub const TEST_IMAGES: u64 = 2;
    pub const TRAIN_NOISE: u64 = 3;
    pub const TEST_NOISE: u64 = 4;
    pub const TEST_ANGLES: u64 = 5;
    pub const INIT: u64 = 6;
    pub const MASK: u64 = 7;
    pub const TRAIN_ORDER: u64 = 8;
    pub const VALIDATION_IMAGES: u64 = 9;
    pub const VALIDATION_NOISE: u64 = 10;
    pub const DEMO: u64 = 11;
}

pub fn sub_seed(seed: u64, stream: u64) -> u64 {
    SeededRng::derive(seed, stream).next_u64()
}

pub struct ProblemSetup {
    pub problem: Problem,
    pub op: ForwardOperator,
    /// `A / |A|`, the operator the learned reconstructions work with;
    /// measurements are rescaled by the same factor before entering a net.
    pub net_op: ScaledOperator<ForwardOperator>,
    pub noise: NoiseModel,
    /// Image channels seen by the network (2 for MRI).
    pub channels: usize,
    pub grid: Grid,
}

impl ProblemSetup {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let n = cfg.image_size;
        let grid = Grid::square(n);
        let mut mask_rng = SeededRng::derive(cfg.seed, streams::MASK);
        let (op, noise, channels) = match cfg.problem {
            Problem::Ct => {
                let detectors = (cfg.ct.detectors > 0).then_some(cfg.ct.detectors);
                let geometry = RadonGeometry::new(n, cfg.ct.views, detectors)?;
                let noise = NoiseModel::LowDosePoisson {
                    photons: cfg.ct.photons,
                    mu: cfg.ct.mu,
                    eta: cfg.ct.eta,
                    noiseless: false,
                };
                (ForwardOperator::Radon(RadonOp::new(geometry)), noise, 1)
            }
            Problem::Mri => {
                let mask_cfg = MaskConfig {
                    fraction: cfg.mri.fraction,
                    center_fraction: cfg.mri.center_fraction,
                    spread: cfg.mri.spread,
                };
                let rows = variable_density_mask(n, &mask_cfg, &mut mask_rng)?;
                (ForwardOperator::Fourier(FourierOp::new(n, n, rows)?), NoiseModel::Gaussian { sigma: cfg.mri.sigma }, 2)
            }
            Problem::Denoise => {
                (ForwardOperator::identity(1, n, n), NoiseModel::Gaussian { sigma: cfg.denoise_sigma }, 1)
            }
            Problem::Inpaint => {
                let mask = (0..n * n).map(|_| if mask_rng.uniform() < cfg.inpaint_keep { 1.0 } else { 0.0 }).collect();
                (ForwardOperator::inpainting(1, n, n, mask)?, NoiseModel::Gaussian { sigma: cfg.inpaint_sigma }, 1)
            }
        };
        let net_op = ScaledOperator::normalized(op.clone(), 100, sub_seed(cfg.seed, streams::MASK))?;
        Ok(Self { problem: cfg.problem, op, net_op, noise, channels, grid })
    }

    /// Embeds a real image into the operator domain (zero imaginary part for MRI).
    pub fn embed(&self, image: &[f64]) -> Vec<f64> {
        let mut u = image.to_vec();
        u.resize(self.channels * image.len(), 0.0);
        u
    }

    /// The image that metrics are computed on: the modulus for MRI.
    pub fn display(&self, u: &[f64]) -> Vec<f64> {
        if self.channels == 2 {
            let (re, im) = u.split_at(u.len() / 2);
            re.iter().zip(im).map(|(a, b)| a.hypot(*b)).collect()
        } else {
            u.to_vec()
        }
    }

    pub fn measure(&self, image: &[f64], rng: &mut SeededRng) -> Result<Vec<f64>> {
        Ok(simulate_measurement(&self.op, &self.embed(image), &self.noise, rng)?)
    }

    /// Ground-truth images with measurements; pair `i` draws its noise from
    /// its own stream. Measurements are already rescaled for [`Self::net_op`].
    pub fn pairs(&self, images: &[Vec<f64>], noise_seed: u64) -> Result<Vec<TrainingPair>> {
        images
            .iter()
            .enumerate()
            .map(|(i, img)| {
                let mut rng = SeededRng::derive(noise_seed, i as u64);
                let y = self.measure(img, &mut rng)?;
                Ok(TrainingPair { target: self.embed(img), measurement: self.net_measurement(&y) })
            })
            .collect()
    }

    /// A raw measurement expressed for [`Self::net_op`].
    pub fn net_measurement(&self, y: &[f64]) -> Vec<f64> {
        y.iter().map(|v| v * self.net_op.factor).collect()
    }

    pub fn baseline(&self, which: Baseline, y: &[f64], cfg: &ExperimentConfig) -> Result<Vec<f64>> {
        match (which, &self.op) {
            (Baseline::Adjoint, ForwardOperator::Radon(radon)) => Ok(radon.fbp(y)?),
            (Baseline::Adjoint, op) => Ok(op.adjoint(y)?),
            (Baseline::Tv, op) => {
                let norm = operator_norm_sq(op, 50, sub_seed(cfg.seed, streams::MASK))?;
                let functional = Functional::Tv { weight: cfg.evaluation.tv_weight };
                let prox = ProxSolverConfig { max_iters: cfg.evaluation.tv_prox_iterations, ..ProxSolverConfig::default() };
                let zero = vec![0.0; op.domain_len()];
                let run = proximal_gradient(
                    op,
                    y,
                    &functional,
                    &[1.0 / norm],
                    cfg.evaluation.tv_iterations,
                    &zero,
                    self.grid,
                    &prox,
                )?;
                Ok(run.image)
            }
        }
    }
}

pub fn phantoms(cfg: &ExperimentConfig, stream: u64, count: usize) -> Result<Vec<Vec<f64>>> {
    let spec = PhantomSpec { kind: cfg.phantom, size: cfg.image_size, seed: sub_seed(cfg.seed, stream) };
    Ok(generate_phantoms(&spec, count)?)
}

/// Learned reconstruction from a raw measurement.
pub fn reconstruct(net: &UnrolledNet, setup: &ProblemSetup, y: &[f64]) -> Result<Vec<f64>> {
    Ok(unrolled_forward(net, &setup.net_measurement(y), &setup.net_op)?)
}

/// `(SSIM, PSNR)` against the ground truth with data range 1; PSNR is capped
/// so identical images stay representable in CSV.
pub fn score(setup: &ProblemSetup, reconstruction: &[f64], truth: &[f64]) -> Result<(f64, f64)> {
    let x = setup.display(reconstruction);
    let s = ssim(&x, truth, setup.grid, 1.0)?;
    let p = psnr(&x, truth, 1.0)?.min(PSNR_CAP);
    Ok((s, p))
}
