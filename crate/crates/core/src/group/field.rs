use alloc::vec;
use alloc::vec::Vec;

use super::{CyclicGroup, PlanarIsometry, Representation};
use crate::error::{Error, Result};

/// Spatial extent of a field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
}

impl Grid {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn square(n: usize) -> Self {
        Self { height: n, width: n }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered list of `(representation, multiplicity)` blocks describing how
/// the channels of a field transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldType {
    pub blocks: Vec<(Representation, usize)>,
}

impl FieldType {
    pub fn new(blocks: Vec<(Representation, usize)>) -> Self {
        Self { blocks }
    }

    pub fn single(rep: Representation, multiplicity: usize) -> Self {
        Self { blocks: vec![(rep, multiplicity)] }
    }

    pub fn channels(&self) -> usize {
        self.blocks.iter().map(|(r, n)| r.dim() * n).sum()
    }

    pub fn num_fields(&self) -> usize {
        self.blocks.iter().map(|(_, n)| n).sum()
    }

    /// One `(representation, first channel)` entry per individual field.
    pub fn fields(&self) -> Vec<(&Representation, usize)> {
        let mut out = Vec::with_capacity(self.num_fields());
        let mut at = 0;
        for (rep, n) in &self.blocks {
            for _ in 0..*n {
                out.push((rep, at));
                at += rep.dim();
            }
        }
        out
    }

    /// Field index owning each channel.
    pub fn channel_to_field(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.channels());
        for (i, (rep, _)) in self.fields().into_iter().enumerate() {
            out.extend(core::iter::repeat(i).take(rep.dim()));
        }
        out
    }

    pub fn concat(&self, other: &FieldType) -> FieldType {
        let mut blocks = self.blocks.clone();
        blocks.extend(other.blocks.iter().cloned());
        FieldType { blocks }
    }
}

/// A multi-channel image whose channel blocks carry representations.
///
/// `data` is row-major with shape `(channels, height, width)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureField {
    pub field_type: FieldType,
    pub grid: Grid,
    pub data: Vec<f64>,
    /// Set once an interpolated (non-permutation) action has been applied.
    pub approximate: bool,
}

impl FeatureField {
    pub fn new(field_type: FieldType, grid: Grid, data: Vec<f64>) -> Result<Self> {
        let expected = field_type.channels() * grid.len();
        if data.len() != expected {
            return Err(Error::Length { expected, got: data.len() });
        }
        Ok(Self { field_type, grid, data, approximate: false })
    }

    pub fn zeros(field_type: FieldType, grid: Grid) -> Self {
        let n = field_type.channels() * grid.len();
        Self { field_type, grid, data: vec![0.0; n], approximate: false }
    }

    pub fn channels(&self) -> usize {
        self.field_type.channels()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Moves a single-channel plane by `g`: `out(p) = src(g^{-1} p)`.
///
/// Quarter-turn rotations with integer translations permute pixels exactly
/// (quarter turns need a square grid); everything else is bilinear
/// resampling with zero extension. Returns whether the exact path was used.
/// Rotation is about the grid center `((H-1)/2, (W-1)/2)`.
pub fn rotate_plane(src: &[f64], grid: Grid, g: &PlanarIsometry) -> (Vec<f64>, bool) {
    let (h, w) = (grid.height, grid.width);
    let mut out = vec![0.0; h * w];
    let quarter = if g.group.is_on_grid(g.rotation) {
        Some((4 * g.rotation / g.group.order()) % 4)
    } else {
        None
    };
    let exact = match quarter {
        Some(q) => g.is_exact() && (q % 2 == 0 || h == w),
        None => false,
    };
    if exact {
        let q = quarter.unwrap_or(0);
        let tx = 2 * libm::round(g.translation[0]) as i64;
        let ty = 2 * libm::round(g.translation[1]) as i64;
        let (hm, wm) = (h as i64 - 1, w as i64 - 1);
        for r in 0..h {
            for c in 0..w {
                // doubled coordinates relative to the center, y up
                let mut x = 2 * c as i64 - wm - tx;
                let mut y = hm - 2 * r as i64 - ty;
                // inverse rotation: q clockwise quarter turns
                for _ in 0..q {
                    let nx = y;
                    y = -x;
                    x = nx;
                }
                let sc = x + wm;
                let sr = hm - y;
                if sc < 0 || sr < 0 || sc > 2 * wm || sr > 2 * hm {
                    continue;
                }
                out[r * w + c] = src[(sr / 2) as usize * w + (sc / 2) as usize];
            }
        }
        return (out, true);
    }
    let inv = g.inverse();
    let cy = (h as f64 - 1.0) / 2.0;
    let cx = (w as f64 - 1.0) / 2.0;
    for r in 0..h {
        for c in 0..w {
            let p = inv.apply([c as f64 - cx, cy - r as f64]);
            out[r * w + c] = bilinear(src, grid, cy - p[1], p[0] + cx);
        }
    }
    (out, false)
}

/// Counter-clockwise rotation by `degrees` about the grid center.
///
/// Multiples of 90 degrees (after reduction mod 360) go through the exact
/// permutation path; other angles are bilinear with zero fill.
pub fn rotate_image(src: &[f64], grid: Grid, degrees: f64) -> Vec<f64> {
    let reduced = degrees - 360.0 * libm::floor(degrees / 360.0);
    let quarter = reduced / 90.0;
    if quarter == libm::round(quarter) && (grid.height == grid.width || (quarter as usize) % 2 == 0) {
        let z4 = CyclicGroup::new(4).expect("order 4 is valid");
        let g = PlanarIsometry::rotation_only(quarter as usize % 4, z4).expect("element in range");
        return rotate_plane(src, grid, &g).0;
    }
    let theta = reduced.to_radians();
    let (s, c) = (libm::sin(theta), libm::cos(theta));
    let cy = (grid.height as f64 - 1.0) / 2.0;
    let cx = (grid.width as f64 - 1.0) / 2.0;
    let mut out = vec![0.0; grid.len()];
    for r in 0..grid.height {
        for col in 0..grid.width {
            let (x, y) = (col as f64 - cx, cy - r as f64);
            // inverse rotation of the target point
            let (sx, sy) = (c * x + s * y, -s * x + c * y);
            out[r * grid.width + col] = bilinear(src, grid, cy - sy, sx + cx);
        }
    }
    out
}

/// Bilinear sample at fractional `(row, col)`, zero outside the grid.
pub fn bilinear(src: &[f64], grid: Grid, row: f64, col: f64) -> f64 {
    let r0 = libm::floor(row);
    let c0 = libm::floor(col);
    let fr = row - r0;
    let fc = col - c0;
    let (r0, c0) = (r0 as i64, c0 as i64);
    let at = |r: i64, c: i64| -> f64 {
        if r < 0 || c < 0 || r >= grid.height as i64 || c >= grid.width as i64 {
            0.0
        } else {
            src[r as usize * grid.width + c as usize]
        }
    };
    let mut v = 0.0;
    if fr < 1.0 && fc < 1.0 {
        v += (1.0 - fr) * (1.0 - fc) * at(r0, c0);
    }
    if fc > 0.0 {
        v += (1.0 - fr) * fc * at(r0, c0 + 1);
    }
    if fr > 0.0 {
        v += fr * (1.0 - fc) * at(r0 + 1, c0);
        if fc > 0.0 {
            v += fr * fc * at(r0 + 1, c0 + 1);
        }
    }
    v
}

/// Induced action `[g f](x) = pi(R) f(g^{-1} x)` on every channel block.
pub fn act_on_field(g: &PlanarIsometry, f: &FeatureField) -> Result<FeatureField> {
    let n = f.grid.len();
    let mut moved = Vec::with_capacity(f.data.len());
    let mut exact = true;
    for c in 0..f.channels() {
        let (plane, e) = rotate_plane(f.channel(c), f.grid, g);
        exact &= e;
        moved.extend(plane);
    }
    let mut out = vec![0.0; f.data.len()];
    for (rep, start) in f.field_type.fields() {
        if rep.group != g.group {
            return Err(Error::GroupMismatch(rep.group.order(), g.group.order()));
        }
        let d = rep.dim();
        if let Some(perm) = rep.permutation(g.rotation) {
            for j in 0..d {
                let dst = (start + perm[j]) * n;
                out[dst..dst + n].copy_from_slice(&moved[(start + j) * n..(start + j + 1) * n]);
            }
        } else {
            let mat = rep.matrix(g.rotation)?;
            for i in 0..d {
                let dst = &mut out[(start + i) * n..(start + i + 1) * n];
                for j in 0..d {
                    let a = mat[(i, j)];
                    if a == 0.0 {
                        continue;
                    }
                    let src = &moved[(start + j) * n..(start + j + 1) * n];
                    for (o, s) in dst.iter_mut().zip(src) {
                        *o += a * s;
                    }
                }
            }
        }
    }
    Ok(FeatureField {
        field_type: f.field_type.clone(),
        grid: f.grid,
        data: out,
        approximate: f.approximate || !exact,
    })
}
