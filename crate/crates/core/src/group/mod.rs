//! The cyclic rotation groups `Z_m`, the planar isometries `R^2 x| Z_m` and
//! their representations on vectors and on multi-channel feature fields.

mod field;
mod repr;

pub use field::{act_on_field, bilinear, rotate_image, rotate_plane, FeatureField, FieldType, Grid};
pub use repr::{decompose_regular, irrep_dim, Irrep, ReprKind, Representation};

use crate::error::{Error, Result};

/// `Z_m`: rotations by `2*pi*k/m`, `k = 0..m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CyclicGroup {
    order: usize,
}

impl CyclicGroup {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("group order must be positive".into()));
        }
        Ok(Self { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn compose(&self, a: usize, b: usize) -> usize {
        (a + b) % self.order
    }

    pub fn inverse(&self, k: usize) -> usize {
        (self.order - k % self.order) % self.order
    }

    pub fn check(&self, k: usize) -> Result<()> {
        if k < self.order {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: k, order: self.order })
        }
    }

    /// Rotation angle of element `k` in radians.
    pub fn angle(&self, k: usize) -> f64 {
        2.0 * core::f64::consts::PI * (k % self.order) as f64 / self.order as f64
    }

    /// Whether element `k` is a multiple of a quarter turn, i.e. maps the
    /// pixel grid onto itself.
    pub fn is_on_grid(&self, k: usize) -> bool {
        (4 * (k % self.order)) % self.order == 0
    }

    /// Whether every element of the group maps the pixel grid onto itself.
    pub fn all_on_grid(&self) -> bool {
        matches!(self.order, 1 | 2 | 4)
    }

    pub fn rotation(&self, k: usize) -> [[f64; 2]; 2] {
        let (c, s) = cos_sin_fraction(k % self.order, self.order);
        [[c, -s], [s, c]]
    }
}

/// `(cos, sin)` of `2*pi*num/den`, exact whenever the angle is a multiple of 90 degrees.
pub fn cos_sin_fraction(num: usize, den: usize) -> (f64, f64) {
    let num = num % den;
    if (4 * num) % den == 0 {
        match 4 * num / den {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        }
    } else {
        let a = 2.0 * core::f64::consts::PI * num as f64 / den as f64;
        (libm::cos(a), libm::sin(a))
    }
}

/// An element `(t, R)` of `R^2 x| Z_m`, acting as `x -> R x + t`.
///
/// Coordinates are in pixels with `x` pointing right and `y` pointing up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanarIsometry {
    pub translation: [f64; 2],
    pub rotation: usize,
    pub group: CyclicGroup,
}

impl PlanarIsometry {
    pub fn new(translation: [f64; 2], rotation: usize, group: CyclicGroup) -> Result<Self> {
        group.check(rotation)?;
        Ok(Self { translation, rotation, group })
    }

    pub fn identity(group: CyclicGroup) -> Self {
        Self { translation: [0.0, 0.0], rotation: 0, group }
    }

    pub fn rotation_only(rotation: usize, group: CyclicGroup) -> Result<Self> {
        Self::new([0.0, 0.0], rotation, group)
    }

    /// Group product `(t1, R1)(t2, R2) = (t1 + R1 t2, R1 R2)`.
    pub fn compose(&self, other: &PlanarIsometry) -> Result<PlanarIsometry> {
        if self.group != other.group {
            return Err(Error::GroupMismatch(self.group.order(), other.group.order()));
        }
        let r = self.group.rotation(self.rotation);
        let t = other.translation;
        Ok(PlanarIsometry {
            translation: [
                self.translation[0] + r[0][0] * t[0] + r[0][1] * t[1],
                self.translation[1] + r[1][0] * t[0] + r[1][1] * t[1],
            ],
            rotation: self.group.compose(self.rotation, other.rotation),
            group: self.group,
        })
    }

    pub fn inverse(&self) -> PlanarIsometry {
        let inv = self.group.inverse(self.rotation);
        let r = self.group.rotation(inv);
        let t = self.translation;
        PlanarIsometry {
            translation: [
                -(r[0][0] * t[0] + r[0][1] * t[1]),
                -(r[1][0] * t[0] + r[1][1] * t[1]),
            ],
            rotation: inv,
            group: self.group,
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.group.rotation(self.rotation);
        [
            r[0][0] * p[0] + r[0][1] * p[1] + self.translation[0],
            r[1][0] * p[0] + r[1][1] * p[1] + self.translation[1],
        ]
    }

    /// On-grid rotation and integer translation: the action on a square grid
    /// is a permutation of pixels.
    pub fn is_exact(&self) -> bool {
        self.group.is_on_grid(self.rotation)
            && self.translation.iter().all(|t| libm::round(*t) == *t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(m: usize) -> CyclicGroup {
        CyclicGroup::new(m).unwrap()
    }

    #[test]
    fn inverse_pair_composes_to_identity() {
        let g = z(4);
        let a = PlanarIsometry::rotation_only(1, g).unwrap();
        let b = PlanarIsometry::rotation_only(3, g).unwrap();
        let c = a.compose(&b).unwrap();
        assert_eq!(c.rotation, 0);
        assert_eq!(c.translation, [0.0, 0.0]);
    }

    #[test]
    fn translations_add() {
        let g = z(1);
        let a = PlanarIsometry::new([1.0, 0.0], 0, g).unwrap();
        let b = PlanarIsometry::new([0.0, 1.0], 0, g).unwrap();
        assert_eq!(a.compose(&b).unwrap().translation, [1.0, 1.0]);
    }

    #[test]
    fn rotation_then_translation_uses_homogeneous_product() {
        let g = z(4);
        let a = PlanarIsometry::new([0.0, 0.0], 1, g).unwrap();
        let b = PlanarIsometry::new([1.0, 0.0], 0, g).unwrap();
        let c = a.compose(&b).unwrap();
        assert_eq!(c.translation, [0.0, 1.0]);
        assert_eq!(c.rotation, 1);
    }

    #[test]
    fn mismatched_groups_are_rejected() {
        let a = PlanarIsometry::identity(z(4));
        let b = PlanarIsometry::identity(z(2));
        assert_eq!(a.compose(&b), Err(Error::GroupMismatch(4, 2)));
    }

    #[test]
    fn inverse_is_two_sided() {
        let g = z(8);
        let a = PlanarIsometry::new([2.5, -1.0], 3, g).unwrap();
        for c in [a.compose(&a.inverse()).unwrap(), a.inverse().compose(&a).unwrap()] {
            assert_eq!(c.rotation, 0);
            assert!(c.translation.iter().all(|t| t.abs() < 1e-12));
        }
    }

    #[test]
    fn on_grid_detection() {
        assert!(z(4).all_on_grid());
        assert!(z(8).is_on_grid(2));
        assert!(!z(8).is_on_grid(1));
        assert!(!z(3).is_on_grid(1));
        assert_eq!(z(4).rotation(1), [[0.0, -1.0], [1.0, 0.0]]);
    }
}
