//! Bases for convolution kernels satisfying `k(Rx) = pi_out(R) k(x) pi_in(R)^{-1}`.
//!
//! Kernels are stored row-major with shape `(dim_out, dim_in, s, s)`. The
//! production route averages over the group (a projector for quarter-turn
//! groups) and orthonormalizes its range; the irrep route solves the
//! constraint per irrep pair and conjugates by the change of basis. Both
//! routes must span the same space.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::group::{irrep_dim, rotate_plane, CyclicGroup, Grid, PlanarIsometry, Representation};

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub rep_in: Representation,
    pub rep_out: Representation,
    pub size: usize,
}

impl KernelSpec {
    pub fn new(rep_in: Representation, rep_out: Representation, size: usize) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Config(format!("filter size must be odd, got {size}")));
        }
        if rep_in.group != rep_out.group {
            return Err(Error::GroupMismatch(rep_in.group.order(), rep_out.group.order()));
        }
        Ok(Self { rep_in, rep_out, size })
    }

    pub fn group(&self) -> CyclicGroup {
        self.rep_in.group
    }

    /// Dimension of the unconstrained kernel space.
    pub fn kernel_len(&self) -> usize {
        self.rep_out.dim() * self.rep_in.dim() * self.size * self.size
    }

    /// Whether the group acts on the filter grid by exact permutations.
    pub fn is_exact(&self) -> bool {
        self.group().all_on_grid()
    }
}

/// Orthonormal basis of constraint-satisfying kernels.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    pub spec: KernelSpec,
    /// `count` kernels of length `spec.kernel_len()`, concatenated.
    pub elements: Vec<f64>,
    pub count: usize,
}

impl KernelBasis {
    pub fn element(&self, b: usize) -> &[f64] {
        let n = self.spec.kernel_len();
        &self.elements[b * n..(b + 1) * n]
    }

    /// `sum_b w_b * basis_b`.
    pub fn expand(&self, weights: &[f64]) -> Result<Vec<f64>> {
        if weights.len() != self.count {
            return Err(Error::Length { expected: self.count, got: weights.len() });
        }
        let n = self.spec.kernel_len();
        let mut out = vec![0.0; n];
        for (b, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, e) in out.iter_mut().zip(self.element(b)) {
                *o += w * e;
            }
        }
        Ok(out)
    }

    /// Adjoint of [`expand`](Self::expand): coefficients `<kernel, basis_b>`.
    pub fn coefficients(&self, kernel: &[f64]) -> Vec<f64> {
        (0..self.count).map(|b| dot(self.element(b), kernel)).collect()
    }

    /// Orthogonal projector onto the span, `sum_b basis_b basis_b^T`.
    pub fn span_projector(&self) -> DMatrix<f64> {
        let n = self.spec.kernel_len();
        let b = DMatrix::from_column_slice(n, self.count, &self.elements);
        &b * b.transpose()
    }
}

/// `expand_kernel` as a free function.
pub fn expand_kernel(basis: &KernelBasis, weights: &[f64]) -> Result<Vec<f64>> {
    basis.expand(weights)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(T_k K)(x) = pi_out(R_k)^{-1} K(R_k x) pi_in(R_k)`.
pub fn transform_kernel(spec: &KernelSpec, k: usize, kernel: &[f64]) -> Result<Vec<f64>> {
    let g = spec.group();
    let (d_out, d_in, s) = (spec.rep_out.dim(), spec.rep_in.dim(), spec.size);
    let taps = s * s;
    let grid = Grid::square(s);
    // sampling K at R x means moving the plane by R^{-1}
    let inv = PlanarIsometry::rotation_only(g.inverse(k), g)?;
    let mut rotated = Vec::with_capacity(kernel.len());
    for plane in kernel.chunks_exact(taps) {
        rotated.extend(rotate_plane(plane, grid, &inv).0);
    }
    let a = spec.rep_out.matrix(k)?.transpose();
    let b = spec.rep_in.matrix(k)?;
    Ok(mix_channels(&rotated, &a, &b, d_out, d_in, taps))
}

/// `out[:, :, tap] = A * K[:, :, tap] * B` for every tap.
fn mix_channels(
    kernel: &[f64],
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    d_out: usize,
    d_in: usize,
    taps: usize,
) -> Vec<f64> {
    let mut tmp = vec![0.0; kernel.len()];
    // tmp = K * B
    for o in 0..d_out {
        for i in 0..d_in {
            let dst = (o * d_in + i) * taps;
            for j in 0..d_in {
                let w = b[(j, i)];
                if w == 0.0 {
                    continue;
                }
                let src = (o * d_in + j) * taps;
                for t in 0..taps {
                    tmp[dst + t] += kernel[src + t] * w;
                }
            }
        }
    }
    let mut out = vec![0.0; kernel.len()];
    for o in 0..d_out {
        for j in 0..d_out {
            let w = a[(o, j)];
            if w == 0.0 {
                continue;
            }
            for i in 0..d_in {
                let dst = (o * d_in + i) * taps;
                let src = (j * d_in + i) * taps;
                for t in 0..taps {
                    out[dst + t] += w * tmp[src + t];
                }
            }
        }
    }
    out
}

/// Group average `(1/m) sum_k T_k`, applied to one kernel.
pub fn apply_projector(spec: &KernelSpec, kernel: &[f64]) -> Result<Vec<f64>> {
    let m = spec.group().order();
    let mut acc = vec![0.0; kernel.len()];
    for k in 0..m {
        for (a, t) in acc.iter_mut().zip(transform_kernel(spec, k, kernel)?) {
            *a += t;
        }
    }
    let inv = 1.0 / m as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// Dense matrix of the group-averaging map on the kernel space.
///
/// For quarter-turn groups this is the orthogonal projector onto the
/// constraint-satisfying kernels; otherwise the interpolated rotations make
/// it only approximately so.
pub fn equivariance_projector(spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let n = spec.kernel_len();
    let mut p = DMatrix::zeros(n, n);
    let mut unit = vec![0.0; n];
    for j in 0..n {
        unit[j] = 1.0;
        let col = apply_projector(spec, &unit)?;
        p.column_mut(j).copy_from_slice(&col);
        unit[j] = 0.0;
    }
    Ok(p)
}

/// Largest deviation `|K(R x) - pi_out(R) K(x) pi_in(R)^{-1}|` over the group.
pub fn constraint_residual(spec: &KernelSpec, kernel: &[f64]) -> Result<f64> {
    let g = spec.group();
    let (d_out, d_in, s) = (spec.rep_out.dim(), spec.rep_in.dim(), spec.size);
    let taps = s * s;
    let grid = Grid::square(s);
    let mut worst: f64 = 0.0;
    for k in 0..g.order() {
        let inv = PlanarIsometry::rotation_only(g.inverse(k), g)?;
        let mut lhs = Vec::with_capacity(kernel.len());
        for plane in kernel.chunks_exact(taps) {
            lhs.extend(rotate_plane(plane, grid, &inv).0);
        }
        let a = spec.rep_out.matrix(k)?;
        let b = spec.rep_in.matrix(k)?.transpose();
        let rhs = mix_channels(kernel, &a, &b, d_out, d_in, taps);
        for (l, r) in lhs.iter().zip(&rhs) {
            worst = worst.max((l - r).abs());
        }
    }
    Ok(worst)
}

/// Orthonormal basis of the range of a symmetric idempotent `pi`.
///
/// Columns `pi e_0, pi e_1, ...` are taken in index order and kept when
/// they add a new direction; modified Gram-Schmidt is run twice per column.
fn range_basis(pi: &DMatrix<f64>) -> (Vec<f64>, usize) {
    let n = pi.nrows();
    let rank = libm::round(pi.trace()).max(0.0) as usize;
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(rank);
    for j in 0..n {
        if basis.len() == rank {
            break;
        }
        let mut v: Vec<f64> = pi.column(j).iter().copied().collect();
        let norm0 = libm::sqrt(dot(&v, &v));
        if norm0 < 1e-9 {
            continue;
        }
        for _ in 0..2 {
            for b in &basis {
                let c = dot(&v, b);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let norm = libm::sqrt(dot(&v, &v));
        if norm <= 1e-6 * norm0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        basis.push(v);
    }
    let count = basis.len();
    (basis.concat(), count)
}

/// Spectral projector onto eigenvalues `>= 0.5` of the symmetrized averaging map.
fn spectral_projector(p: DMatrix<f64>) -> DMatrix<f64> {
    let n = p.nrows();
    let sym = (&p + p.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut out = DMatrix::zeros(n, n);
    for (idx, lambda) in eig.eigenvalues.iter().enumerate() {
        if *lambda >= 0.5 {
            let v = eig.eigenvectors.column(idx);
            out += &v * v.transpose();
        }
    }
    out
}

fn basis_from_projector(spec: &KernelSpec) -> Result<(Vec<f64>, usize)> {
    let p = equivariance_projector(spec)?;
    let pi = if spec.is_exact() { p } else { spectral_projector(p) };
    let (mut elements, count) = range_basis(&pi);
    if spec.is_exact() {
        // Averaging once more makes every element invariant up to rounding.
        let n = spec.kernel_len();
        for b in 0..count {
            let v = apply_projector(spec, &elements[b * n..(b + 1) * n])?;
            elements[b * n..(b + 1) * n].copy_from_slice(&v);
        }
    }
    Ok((elements, count))
}

/// Basis from the range of the group-averaging projector.
pub fn kernel_basis_nullspace(spec: &KernelSpec) -> Result<KernelBasis> {
    let (elements, count) = basis_from_projector(spec)?;
    Ok(KernelBasis { spec: spec.clone(), elements, count })
}

/// Basis assembled from per-irrep-pair solutions, conjugated by the
/// change-of-basis matrices of the input and output representations.
pub fn kernel_basis_irrep(spec: &KernelSpec) -> Result<KernelBasis> {
    let g = spec.group();
    let m = g.order();
    let (irr_in, q_in) = spec.rep_in.decomposition();
    let (irr_out, q_out) = spec.rep_out.decomposition();
    let expand = |list: &[(crate::group::Irrep, usize)]| -> Vec<(usize, usize)> {
        // (freq, offset) per irrep copy
        let mut out = Vec::new();
        let mut at = 0;
        for (ir, mult) in list {
            for _ in 0..*mult {
                out.push((ir.freq, at));
                at += irrep_dim(m, ir.freq);
            }
        }
        out
    };
    let ins = expand(&irr_in);
    let outs = expand(&irr_out);
    let (d_out, d_in, s) = (spec.rep_out.dim(), spec.rep_in.dim(), spec.size);
    let taps = s * s;
    let n = spec.kernel_len();
    let mut elements = Vec::new();
    let mut count = 0;
    for &(fo, oo) in &outs {
        for &(fi, oi) in &ins {
            let block = KernelSpec::new(
                Representation::irrep(g, fi)?,
                Representation::irrep(g, fo)?,
                s,
            )?;
            let (bel, bcount) = basis_from_projector(&block)?;
            let (bo, bi) = (irrep_dim(m, fo), irrep_dim(m, fi));
            for e in bel.chunks_exact(bo * bi * taps) {
                // embed in irrep coordinates, then K = Q_out K~ Q_in^T
                let mut tilde = vec![0.0; n];
                for a in 0..bo {
                    for b in 0..bi {
                        let src = (a * bi + b) * taps;
                        let dst = ((oo + a) * d_in + oi + b) * taps;
                        tilde[dst..dst + taps].copy_from_slice(&e[src..src + taps]);
                    }
                }
                elements.extend(mix_channels(&tilde, &q_out, &q_in.transpose(), d_out, d_in, taps));
            }
            count += bcount;
        }
    }
    Ok(KernelBasis { spec: spec.clone(), elements, count })
}
