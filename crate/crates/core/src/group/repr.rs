use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{cos_sin_fraction, CyclicGroup};
use crate::error::{Error, Result};

/// A real irreducible representation of `Z_m`, identified by its frequency.
///
/// Frequency 0 is the trivial representation, `m/2` (even `m`) the sign
/// representation, and every other `0 < f < m/2` a 2x2 rotation block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Irrep {
    pub freq: usize,
}

pub fn irrep_dim(m: usize, freq: usize) -> usize {
    if freq == 0 || 2 * freq == m {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReprKind {
    Trivial,
    Regular,
    Irrep(Irrep),
    /// `Q * blockdiag(irreps with multiplicity) * Q^T`; `Q = I` when absent.
    DirectSum {
        irreps: Vec<(Irrep, usize)>,
        change_of_basis: Option<DMatrix<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub group: CyclicGroup,
    pub kind: ReprKind,
}

impl Representation {
    pub fn trivial(group: CyclicGroup) -> Self {
        Self { group, kind: ReprKind::Trivial }
    }

    pub fn regular(group: CyclicGroup) -> Self {
        Self { group, kind: ReprKind::Regular }
    }

    pub fn irrep(group: CyclicGroup, freq: usize) -> Result<Self> {
        if 2 * freq > group.order() {
            return Err(Error::InvalidRepresentation(format!(
                "frequency {freq} exceeds m/2 for Z_{}",
                group.order()
            )));
        }
        Ok(Self { group, kind: ReprKind::Irrep(Irrep { freq }) })
    }

    pub fn direct_sum(
        group: CyclicGroup,
        irreps: Vec<(Irrep, usize)>,
        change_of_basis: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let m = group.order();
        if irreps.iter().any(|(ir, _)| 2 * ir.freq > m) {
            return Err(Error::InvalidRepresentation("irrep frequency exceeds m/2".into()));
        }
        let dim: usize = irreps.iter().map(|(ir, mult)| irrep_dim(m, ir.freq) * mult).sum();
        if dim == 0 {
            return Err(Error::InvalidRepresentation("empty direct sum".into()));
        }
        if let Some(q) = &change_of_basis {
            if q.nrows() != dim || q.ncols() != dim {
                return Err(Error::InvalidRepresentation(format!(
                    "change of basis is {}x{}, expected {dim}x{dim}",
                    q.nrows(),
                    q.ncols()
                )));
            }
            let defect = (q.transpose() * q - DMatrix::identity(dim, dim)).amax();
            if defect > 1e-10 {
                return Err(Error::InvalidRepresentation(format!(
                    "change of basis is not orthogonal (defect {defect:e})"
                )));
            }
        }
        Ok(Self { group, kind: ReprKind::DirectSum { irreps, change_of_basis } })
    }

    pub fn dim(&self) -> usize {
        let m = self.group.order();
        match &self.kind {
            ReprKind::Trivial => 1,
            ReprKind::Regular => m,
            ReprKind::Irrep(ir) => irrep_dim(m, ir.freq),
            ReprKind::DirectSum { irreps, .. } => {
                irreps.iter().map(|(ir, mult)| irrep_dim(m, ir.freq) * mult).sum()
            }
        }
    }

    /// Whether every matrix of the representation is a permutation matrix.
    pub fn is_permutation(&self) -> bool {
        match &self.kind {
            ReprKind::Trivial | ReprKind::Regular => true,
            ReprKind::Irrep(ir) => ir.freq == 0,
            ReprKind::DirectSum { irreps, change_of_basis } => {
                change_of_basis.is_none() && irreps.iter().all(|(ir, _)| ir.freq == 0)
            }
        }
    }

    pub fn is_trivial(&self) -> bool {
        match &self.kind {
            ReprKind::Trivial => true,
            ReprKind::Regular => self.group.order() == 1,
            ReprKind::Irrep(ir) => ir.freq == 0,
            ReprKind::DirectSum { irreps, .. } => {
                irreps.len() == 1 && irreps[0] == (Irrep { freq: 0 }, 1)
            }
        }
    }

    /// Short textual tag, stable across runs: `trivial`, `regular`, `irrep1`, `sum`.
    pub fn tag(&self) -> alloc::string::String {
        match &self.kind {
            ReprKind::Trivial => "trivial".into(),
            ReprKind::Regular => "regular".into(),
            ReprKind::Irrep(ir) => format!("irrep{}", ir.freq),
            ReprKind::DirectSum { .. } => "sum".into(),
        }
    }

    /// Matrix of group element `k`.
    pub fn matrix(&self, k: usize) -> Result<DMatrix<f64>> {
        self.group.check(k)?;
        let m = self.group.order();
        Ok(match &self.kind {
            ReprKind::Trivial => DMatrix::from_element(1, 1, 1.0),
            ReprKind::Regular => {
                DMatrix::from_fn(m, m, |i, j| if i == (j + k) % m { 1.0 } else { 0.0 })
            }
            ReprKind::Irrep(ir) => irrep_matrix(m, ir.freq, k),
            ReprKind::DirectSum { irreps, change_of_basis } => {
                let d = blockdiag_irreps(m, irreps, k);
                match change_of_basis {
                    Some(q) => q * d * q.transpose(),
                    None => d,
                }
            }
        })
    }

    /// For permutation representations, `perm[j]` is the image index of basis vector `j`.
    pub fn permutation(&self, k: usize) -> Option<Vec<usize>> {
        let m = self.group.order();
        match &self.kind {
            ReprKind::Regular => Some((0..m).map(|j| (j + k) % m).collect()),
            ReprKind::Trivial => Some(alloc::vec![0]),
            _ if self.is_permutation() => Some((0..self.dim()).collect()),
            _ => None,
        }
    }

    /// Decomposition into irreps together with the orthogonal change of basis.
    pub fn decomposition(&self) -> (Vec<(Irrep, usize)>, DMatrix<f64>) {
        let m = self.group.order();
        match &self.kind {
            ReprKind::Trivial => (alloc::vec![(Irrep { freq: 0 }, 1)], DMatrix::identity(1, 1)),
            ReprKind::Regular => decompose_regular(m),
            ReprKind::Irrep(ir) => {
                let d = irrep_dim(m, ir.freq);
                (alloc::vec![(*ir, 1)], DMatrix::identity(d, d))
            }
            ReprKind::DirectSum { irreps, change_of_basis } => {
                let d = self.dim();
                (
                    irreps.clone(),
                    change_of_basis.clone().unwrap_or_else(|| DMatrix::identity(d, d)),
                )
            }
        }
    }
}

pub(crate) fn irrep_matrix(m: usize, freq: usize, k: usize) -> DMatrix<f64> {
    if freq == 0 {
        DMatrix::from_element(1, 1, 1.0)
    } else if 2 * freq == m {
        DMatrix::from_element(1, 1, if k % 2 == 0 { 1.0 } else { -1.0 })
    } else {
        let (c, s) = cos_sin_fraction((freq * k) % m, m);
        DMatrix::from_row_slice(2, 2, &[c, -s, s, c])
    }
}

fn blockdiag_irreps(m: usize, irreps: &[(Irrep, usize)], k: usize) -> DMatrix<f64> {
    let dim: usize = irreps.iter().map(|(ir, mult)| irrep_dim(m, ir.freq) * mult).sum();
    let mut out = DMatrix::zeros(dim, dim);
    let mut at = 0;
    for (ir, mult) in irreps {
        let block = irrep_matrix(m, ir.freq, k);
        let d = block.nrows();
        for _ in 0..*mult {
            out.view_mut((at, at), (d, d)).copy_from(&block);
            at += d;
        }
    }
    out
}

/// Real Fourier decomposition of the regular representation of `Z_m`.
///
/// Returns the irreps (trivial, rotation blocks `f = 1..ceil(m/2)-1`, sign
/// for even `m`) and the orthogonal `Q` with `regular(k) = Q D(k) Q^T`.
pub fn decompose_regular(m: usize) -> (Vec<(Irrep, usize)>, DMatrix<f64>) {
    let mut irreps = alloc::vec![(Irrep { freq: 0 }, 1)];
    let mut q = DMatrix::zeros(m, m);
    let mf = m as f64;
    for j in 0..m {
        q[(j, 0)] = 1.0 / libm::sqrt(mf);
    }
    let mut col = 1;
    let scale = libm::sqrt(2.0 / mf);
    for f in 1..m.div_ceil(2) {
        irreps.push((Irrep { freq: f }, 1));
        for j in 0..m {
            let (c, s) = cos_sin_fraction((f * j) % m, m);
            q[(j, col)] = scale * c;
            q[(j, col + 1)] = scale * s;
        }
        col += 2;
    }
    if m % 2 == 0 && m > 1 {
        irreps.push((Irrep { freq: m / 2 }, 1));
        for j in 0..m {
            q[(j, col)] = if j % 2 == 0 { 1.0 } else { -1.0 } / libm::sqrt(mf);
        }
    }
    (irreps, q)
}
