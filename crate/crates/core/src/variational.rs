//! Total variation, its proximal map, the proximal gradient method and the
//! inpainting demonstration of end-to-end non-equivariance.
//!
//! The discrete TV averages the isotropic magnitude over all four
//! forward/backward difference pairings. A single forward-difference stencil
//! is not invariant under quarter turns (a diagonal and an anti-diagonal pair
//! of pixels get different values); the averaged stencil maps onto itself,
//! so for square grids TV and its prox commute exactly with 90° rotations.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::{rotate_image, Grid};
use crate::ops::{data_discrepancy, data_grad, ForwardOperator, LinearOperator};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Functional {
    Zero,
    Tv { weight: f64 },
}

impl Functional {
    pub fn value(&self, u: &[f64], grid: Grid) -> Result<f64> {
        match self {
            Self::Zero => Ok(0.0),
            Self::Tv { weight } => Ok(weight * tv_value(u, grid)?),
        }
    }

    /// `prox_{tau J}(u)`.
    pub fn prox(&self, u: &[f64], grid: Grid, tau: f64, cfg: &ProxSolverConfig) -> Result<Vec<f64>> {
        match self {
            Self::Zero => Ok(u.to_vec()),
            Self::Tv { weight } => Ok(prox_tv(u, grid, tau * weight, cfg)?.image),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProxSolverConfig {
    pub max_iters: usize,
    /// Dual step in units of the unit-spacing gradient bound; at most 0.25.
    pub step: f64,
    /// Stop once the relative change of the dual variable drops below this.
    pub tol: f64,
}

impl Default for ProxSolverConfig {
    fn default() -> Self {
        Self { max_iters: 200, step: 0.24, tol: 1e-7 }
    }
}

impl ProxSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step <= 0.25) {
            return Err(Error::Config("dual step must lie in (0, 0.25]".into()));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Config("prox tolerance must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxOutcome {
    pub image: Vec<f64>,
    pub iterations: usize,
    /// Relative dual change at the last iteration.
    pub dual_change: f64,
}

// The four stencils: (forward in x?, forward in y?).
const STENCILS: [(bool, bool); 4] = [(true, true), (true, false), (false, true), (false, false)];

fn planes(u: &[f64], grid: Grid) -> Result<usize> {
    let n = grid.len();
    if n == 0 || u.len() % n != 0 {
        return Err(Error::Shape("image length is not a multiple of the grid size".into()));
    }
    Ok(u.len() / n)
}

/// One-sided difference along columns (`axis_x`) or rows, zero where the
/// neighbour would fall off the grid (replicate boundary).
fn diff(u: &[f64], grid: Grid, axis_x: bool, forward: bool, out: &mut [f64]) {
    let (h, w) = (grid.height, grid.width);
    for (plane, o) in u.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                o[i] = match (axis_x, forward) {
                    (true, true) if c + 1 < w => plane[i + 1] - plane[i],
                    (true, false) if c >= 1 => plane[i] - plane[i - 1],
                    (false, true) if r + 1 < h => plane[i + w] - plane[i],
                    (false, false) if r >= 1 => plane[i] - plane[i - w],
                    _ => 0.0,
                };
            }
        }
    }
}

/// Adds the adjoint of `diff` applied to `p` into `out`, times `alpha`.
fn diff_adjoint_add(p: &[f64], grid: Grid, axis_x: bool, forward: bool, alpha: f64, out: &mut [f64]) {
    let (h, w) = (grid.height, grid.width);
    for (q, o) in p.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let v = match (axis_x, forward) {
                    (true, true) => {
                        (if c >= 1 { q[i - 1] } else { 0.0 }) - (if c + 1 < w { q[i] } else { 0.0 })
                    }
                    (true, false) => {
                        (if c >= 1 { q[i] } else { 0.0 }) - (if c + 1 < w { q[i + 1] } else { 0.0 })
                    }
                    (false, true) => {
                        (if r >= 1 { q[i - w] } else { 0.0 }) - (if r + 1 < h { q[i] } else { 0.0 })
                    }
                    (false, false) => {
                        (if r >= 1 { q[i] } else { 0.0 }) - (if r + 1 < h { q[i + w] } else { 0.0 })
                    }
                };
                o[i] += alpha * v;
            }
        }
    }
}

/// Isotropic discrete total variation, summed over channel planes.
pub fn tv_value(u: &[f64], grid: Grid) -> Result<f64> {
    planes(u, grid)?;
    let mut dx = vec![0.0; u.len()];
    let mut dy = vec![0.0; u.len()];
    let mut total = 0.0;
    for (fx, fy) in STENCILS {
        diff(u, grid, true, fx, &mut dx);
        diff(u, grid, false, fy, &mut dy);
        total += dx.iter().zip(&dy).map(|(a, b)| libm::sqrt(a * a + b * b)).sum::<f64>();
    }
    Ok(total / 4.0)
}

/// `argmin_v 1/2 |u - v|^2 + tau TV(v)` by projected gradient on the dual.
pub fn prox_tv(u: &[f64], grid: Grid, tau: f64, cfg: &ProxSolverConfig) -> Result<ProxOutcome> {
    planes(u, grid)?;
    cfg.validate()?;
    if !(tau >= 0.0) {
        return Err(Error::Config("prox weight must be non-negative".into()));
    }
    if tau == 0.0 {
        return Ok(ProxOutcome { image: u.to_vec(), iterations: 0, dual_change: 0.0 });
    }
    let len = u.len();
    // p[2k] / p[2k+1]: x / y components for stencil k; K = D / 4, |K|^2 <= 2
    let mut p = vec![vec![0.0; len]; 8];
    let mut gx = vec![0.0; len];
    let mut d = vec![0.0; len];
    let sigma = 4.0 * cfg.step / tau;
    let primal = |p: &[Vec<f64>]| {
        let mut v = u.to_vec();
        for (k, (fx, fy)) in STENCILS.iter().enumerate() {
            diff_adjoint_add(&p[2 * k], grid, true, *fx, -tau / 4.0, &mut v);
            diff_adjoint_add(&p[2 * k + 1], grid, false, *fy, -tau / 4.0, &mut v);
        }
        v
    };
    let mut iterations = 0;
    let mut dual_change = 0.0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let v = primal(&p);
        let (mut delta, mut size) = (0.0, 0.0);
        for (k, (fx, fy)) in STENCILS.iter().enumerate() {
            diff(&v, grid, true, *fx, &mut gx);
            diff(&v, grid, false, *fy, &mut d);
            let (px, py) = p.split_at_mut(2 * k + 1);
            let (px, py) = (&mut px[2 * k], &mut py[0]);
            for i in 0..len {
                let qx = px[i] + sigma * gx[i] / 4.0;
                let qy = py[i] + sigma * d[i] / 4.0;
                let scale = libm::sqrt(qx * qx + qy * qy).max(1.0);
                let (qx, qy) = (qx / scale, qy / scale);
                delta += (qx - px[i]).powi(2) + (qy - py[i]).powi(2);
                size += qx * qx + qy * qy;
                px[i] = qx;
                py[i] = qy;
            }
        }
        dual_change = if size > 0.0 { libm::sqrt(delta / size) } else { 0.0 };
        if dual_change <= cfg.tol {
            break;
        }
    }
    Ok(ProxOutcome { image: primal(&p), iterations, dual_change })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProximalGradientRun {
    pub image: Vec<f64>,
    /// `E(u) + J(u)` for the starting point and after every iteration.
    pub objective: Vec<f64>,
}

/// `u <- prox_{tau_i J}(u - tau_i grad E(u))` for `it` iterations. `steps`
/// holds either one step size used throughout, or one per iteration.
pub fn proximal_gradient(
    op: &dyn LinearOperator,
    y: &[f64],
    functional: &Functional,
    steps: &[f64],
    it: usize,
    u0: &[f64],
    grid: Grid,
    cfg: &ProxSolverConfig,
) -> Result<ProximalGradientRun> {
    if steps.is_empty() || (steps.len() != 1 && steps.len() != it) {
        return Err(Error::Config("need one step size or one per iteration".into()));
    }
    if steps.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::Config("step sizes must be positive".into()));
    }
    let objective_at = |u: &[f64]| -> Result<f64> {
        Ok(data_discrepancy(op, u, y)? + functional.value(u, grid)?)
    };
    let mut u = u0.to_vec();
    let mut objective = vec![objective_at(&u)?];
    for i in 0..it {
        let tau = if steps.len() == 1 { steps[0] } else { steps[i] };
        let g = data_grad(op, &u, y)?;
        let v: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a - tau * b).collect();
        u = functional.prox(&v, grid, tau, cfg)?;
        objective.push(objective_at(&u)?);
    }
    Ok(ProximalGradientRun { image: u, objective })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InpaintingDemoConfig {
    pub reg_weight: f64,
    pub iterations: usize,
    pub prox: ProxSolverConfig,
}

impl Default for InpaintingDemoConfig {
    fn default() -> Self {
        Self { reg_weight: 0.1, iterations: 500, prox: ProxSolverConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InpaintingDemoReport {
    /// `Phi(A u)`.
    pub reconstruction: Vec<f64>,
    /// `Phi(A R u)`.
    pub rotated_reconstruction: Vec<f64>,
    /// `|Phi(A R u) - R Phi(A u)| / |R Phi(A u)|`, zero when both vanish.
    pub discrepancy: f64,
}

/// TV-regularised inpainting of `u` and of its rotation by `degrees`, with the
/// same pixel mask, compared after rotating the first result.
pub fn tv_inpainting_demo(
    u: &[f64],
    grid: Grid,
    mask: &[f64],
    degrees: f64,
    cfg: &InpaintingDemoConfig,
) -> Result<InpaintingDemoReport> {
    let op = ForwardOperator::inpainting(1, grid.height, grid.width, mask.to_vec())?;
    let functional = Functional::Tv { weight: cfg.reg_weight };
    let solve = |img: &[f64]| -> Result<Vec<f64>> {
        let y = op.apply(img)?;
        let zero = vec![0.0; img.len()];
        // |A|^2 = 1 for a 0/1 mask
        Ok(proximal_gradient(&op, &y, &functional, &[1.0], cfg.iterations, &zero, grid, &cfg.prox)?.image)
    };
    let reconstruction = solve(u)?;
    let rotated_reconstruction = solve(&rotate_image(u, grid, degrees))?;
    let reference = rotate_image(&reconstruction, grid, degrees);
    let den = libm::sqrt(reference.iter().map(|v| v * v).sum::<f64>());
    let num = libm::sqrt(
        rotated_reconstruction.iter().zip(&reference).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
    );
    let discrepancy = if den > 0.0 { num / den } else if num > 0.0 { f64::INFINITY } else { 0.0 };
    Ok(InpaintingDemoReport { reconstruction, rotated_reconstruction, discrepancy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn norm(v: &[f64]) -> f64 {
        libm::sqrt(v.iter().map(|x| x * x).sum())
    }

    fn interior_random(n: usize, rng: &mut SeededRng) -> Vec<f64> {
        (0..n * n)
            .map(|i| {
                let (r, c) = (i / n, i % n);
                if r == 0 || c == 0 || r == n - 1 || c == n - 1 { 0.0 } else { rng.uniform() }
            })
            .collect()
    }

    #[test]
    fn tv_examples() {
        let g = Grid::square(4);
        assert_eq!(tv_value(&[0.7; 16], g).unwrap(), 0.0);
        let h = 0.3;
        let step: Vec<f64> = (0..16).map(|i| if i % 4 >= 2 { h } else { 0.0 }).collect();
        assert!((tv_value(&step, g).unwrap() - 4.0 * h).abs() < 1e-14);
        let mut rng = SeededRng::new(1);
        let u: Vec<f64> = (0..16).map(|_| rng.normal()).collect();
        let scaled: Vec<f64> = u.iter().map(|v| -2.5 * v).collect();
        assert!((tv_value(&scaled, g).unwrap() - 2.5 * tv_value(&u, g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn single_forward_stencil_would_not_be_rotation_invariant() {
        // two pixels on a diagonal versus the anti-diagonal
        let g = Grid::square(4);
        let mut diag = vec![0.0; 16];
        diag[5] = 1.0;
        diag[10] = 1.0;
        let rot = rotate_image(&diag, g, 90.0);
        let forward_only = |u: &[f64]| {
            let mut dx = vec![0.0; 16];
            let mut dy = vec![0.0; 16];
            diff(u, g, true, true, &mut dx);
            diff(u, g, false, true, &mut dy);
            dx.iter().zip(&dy).map(|(a, b)| libm::sqrt(a * a + b * b)).sum::<f64>()
        };
        assert!((forward_only(&diag) - forward_only(&rot)).abs() > 0.5);
        assert!((tv_value(&diag, g).unwrap() - tv_value(&rot, g).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn difference_adjoints() {
        let g = Grid::new(5, 4);
        let mut rng = SeededRng::new(2);
        for axis_x in [true, false] {
            for forward in [true, false] {
                let u: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
                let p: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
                let mut du = vec![0.0; 40];
                diff(&u, g, axis_x, forward, &mut du);
                let mut dtp = vec![0.0; 40];
                diff_adjoint_add(&p, g, axis_x, forward, 1.0, &mut dtp);
                let lhs: f64 = du.iter().zip(&p).map(|(a, b)| a * b).sum();
                let rhs: f64 = u.iter().zip(&dtp).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn prox_trivial_cases() {
        let g = Grid::square(5);
        let cfg = ProxSolverConfig::default();
        let mut rng = SeededRng::new(3);
        let u: Vec<f64> = (0..25).map(|_| rng.normal()).collect();
        assert_eq!(prox_tv(&u, g, 0.0, &cfg).unwrap().image, u);
        let c = vec![0.4; 25];
        assert_eq!(prox_tv(&c, g, 3.0, &cfg).unwrap().image, c);
        assert!(prox_tv(&u, g, -1.0, &cfg).is_err());
        let bad = ProxSolverConfig { step: 0.3, ..cfg };
        assert!(prox_tv(&u, g, 1.0, &bad).is_err());
    }

    #[test]
    fn prox_commutes_with_quarter_turns() {
        let g = Grid::square(16);
        let mut rng = SeededRng::new(4);
        let u: Vec<f64> = (0..256).map(|_| rng.normal()).collect();
        let cfg = ProxSolverConfig::default();
        let p = prox_tv(&u, g, 0.5, &cfg).unwrap().image;
        for deg in [90.0, 180.0, 270.0] {
            let lhs = prox_tv(&rotate_image(&u, g, deg), g, 0.5, &cfg).unwrap().image;
            let rhs = rotate_image(&p, g, deg);
            let err: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
            assert!(norm(&err) / norm(&p) <= 1e-6);
        }
    }

    #[test]
    fn tv_rotation_invariance_interior() {
        let g = Grid::square(12);
        let mut rng = SeededRng::new(5);
        let u = interior_random(12, &mut rng);
        let t = tv_value(&u, g).unwrap();
        let r = tv_value(&rotate_image(&u, g, 90.0), g).unwrap();
        assert!((t - r).abs() / t <= 1e-10);
    }

    #[test]
    fn converged_prox_certificate() {
        let g = Grid::square(8);
        let mut rng = SeededRng::new(6);
        let u: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
        let cfg = ProxSolverConfig { max_iters: 20_000, step: 0.24, tol: 1e-9 };
        let out = prox_tv(&u, g, 0.3, &cfg).unwrap();
        assert!(out.dual_change <= cfg.tol);
        // prox lowers the prox objective relative to nearby perturbations
        let obj = |v: &[f64]| {
            0.5 * u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                + 0.3 * tv_value(v, g).unwrap()
        };
        let best = obj(&out.image);
        for _ in 0..20 {
            let pert: Vec<f64> = out.image.iter().map(|v| v + 1e-3 * rng.normal()).collect();
            assert!(obj(&pert) >= best - 1e-7);
        }
    }

    #[test]
    fn identity_gradient_step_lands_on_data() {
        let g = Grid::square(4);
        let op = ForwardOperator::identity(1, 4, 4);
        let y: Vec<f64> = (0..16).map(|i| i as f64 / 7.0).collect();
        let run = proximal_gradient(
            &op, &y, &Functional::Zero, &[1.0], 1, &[0.0; 16], g, &ProxSolverConfig::default(),
        )
        .unwrap();
        assert_eq!(run.image, y);
    }

    #[test]
    fn objective_non_increasing_on_inpainting() {
        let n = 16;
        let g = Grid::square(n);
        let mut rng = SeededRng::new(7);
        let u = interior_random(n, &mut rng);
        let mask: Vec<f64> = (0..n * n).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
        let op = ForwardOperator::inpainting(1, n, n, mask).unwrap();
        let y = op.apply(&u).unwrap();
        let cfg = ProxSolverConfig { max_iters: 3000, step: 0.24, tol: 1e-10 };
        let run = proximal_gradient(
            &op, &y, &Functional::Tv { weight: 0.1 }, &[1.0], 50, &vec![0.0; n * n], g, &cfg,
        )
        .unwrap();
        for w in run.objective.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn fixed_point_is_kept() {
        let n = 8;
        let g = Grid::square(n);
        let mut rng = SeededRng::new(8);
        let y: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let op = ForwardOperator::identity(1, n, n);
        let cfg = ProxSolverConfig { max_iters: 20_000, step: 0.24, tol: 1e-12 };
        // for A = I and step 1 the minimiser is prox(y), which is a fixed point
        let star = prox_tv(&y, g, 0.2, &cfg).unwrap().image;
        let run =
            proximal_gradient(&op, &y, &Functional::Tv { weight: 0.2 }, &[1.0], 3, &star, g, &cfg)
                .unwrap();
        let err: Vec<f64> = run.image.iter().zip(&star).map(|(a, b)| a - b).collect();
        assert!(norm(&err) <= 1e-6 * norm(&star));
    }

    #[test]
    fn demo_identity_mask_is_equivariant_and_zero_is_zero() {
        let n = 16;
        let g = Grid::square(n);
        let mut rng = SeededRng::new(9);
        let u = interior_random(n, &mut rng);
        let cfg = InpaintingDemoConfig { iterations: 20, ..Default::default() };
        let rep = tv_inpainting_demo(&u, g, &vec![1.0; n * n], 90.0, &cfg).unwrap();
        assert!(rep.discrepancy <= 1e-6);
        let zero = tv_inpainting_demo(&vec![0.0; n * n], g, &vec![1.0; n * n], 90.0, &cfg).unwrap();
        assert_eq!(zero.discrepancy, 0.0);
    }

    #[test]
    fn demo_random_mask_breaks_equivariance() {
        let n = 16;
        let g = Grid::square(n);
        let mut rng = SeededRng::new(10);
        let u = interior_random(n, &mut rng);
        let mask: Vec<f64> = (0..n * n).map(|_| if rng.uniform() < 0.5 { 1.0 } else { 0.0 }).collect();
        let cfg = InpaintingDemoConfig { iterations: 30, ..Default::default() };
        let rep = tv_inpainting_demo(&u, g, &mask, 90.0, &cfg).unwrap();
        assert!(rep.discrepancy > 0.01, "{}", rep.discrepancy);
    }
}
