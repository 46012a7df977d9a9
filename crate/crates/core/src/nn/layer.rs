use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::conv::{conv2d_forward, ConvGeom};
use crate::error::{Error, Result};
use crate::group::{FeatureField, FieldType, Grid, Representation};
use crate::rng::SeededRng;
use crate::steerable::{kernel_basis_nullspace, KernelBasis, KernelSpec};

/// Memoizes bases by `(rep_in, rep_out, size)`.
#[derive(Debug, Clone, Default)]
pub struct BasisCache {
    bases: Vec<KernelBasis>,
}

impl BasisCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get_or_build(&mut self, spec: &KernelSpec) -> Result<usize> {
        if let Some(i) = self.bases.iter().position(|b| &b.spec == spec) {
            return Ok(i);
        }
        self.bases.push(kernel_basis_nullspace(spec)?);
        Ok(self.bases.len() - 1)
    }

    pub fn get(&self, i: usize) -> &KernelBasis {
        &self.bases[i]
    }
}

/// One `(output field, input field)` block of a steerable kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionBlock {
    pub basis: usize,
    pub weight_offset: usize,
    pub out_channel: usize,
    pub d_out: usize,
    pub in_channel: usize,
    pub d_in: usize,
}

/// Coefficient-to-kernel map of a steerable layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionLayout {
    pub bases: Vec<KernelBasis>,
    pub blocks: Vec<ExpansionBlock>,
    pub c_out: usize,
    pub c_in: usize,
    pub size: usize,
    pub num_weights: usize,
}

impl ExpansionLayout {
    pub fn kernel_len(&self) -> usize {
        self.c_out * self.c_in * self.size * self.size
    }

    pub fn expand(&self, weights: &[f64]) -> Vec<f64> {
        let taps = self.size * self.size;
        let mut kernel = vec![0.0; self.kernel_len()];
        for blk in &self.blocks {
            let basis = &self.bases[blk.basis];
            let w = &weights[blk.weight_offset..blk.weight_offset + basis.count];
            for (bi, wb) in w.iter().enumerate() {
                if *wb == 0.0 {
                    continue;
                }
                let e = basis.element(bi);
                for o in 0..blk.d_out {
                    for i in 0..blk.d_in {
                        let dst = ((blk.out_channel + o) * self.c_in + blk.in_channel + i) * taps;
                        let src = (o * blk.d_in + i) * taps;
                        for t in 0..taps {
                            kernel[dst + t] += wb * e[src + t];
                        }
                    }
                }
            }
        }
        kernel
    }

    /// Adjoint of [`expand`](Self::expand).
    pub fn contract(&self, d_kernel: &[f64]) -> Vec<f64> {
        let taps = self.size * self.size;
        let mut out = vec![0.0; self.num_weights];
        for blk in &self.blocks {
            let basis = &self.bases[blk.basis];
            for bi in 0..basis.count {
                let e = basis.element(bi);
                let mut acc = 0.0;
                for o in 0..blk.d_out {
                    for i in 0..blk.d_in {
                        let src = ((blk.out_channel + o) * self.c_in + blk.in_channel + i) * taps;
                        let eo = (o * blk.d_in + i) * taps;
                        for t in 0..taps {
                            acc += d_kernel[src + t] * e[eo + t];
                        }
                    }
                }
                out[blk.weight_offset + bi] = acc;
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Parameterization {
    /// Weights are the kernel entries themselves.
    Free,
    Steerable(ExpansionLayout),
}

/// Stride-1 "same" convolution between typed feature fields, with one bias
/// per output field broadcast across that field's channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_type: FieldType,
    pub out_type: FieldType,
    pub size: usize,
    pub param: Parameterization,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Bias slot of each output channel; `None` for fields (non-trivial
    /// irreps) whose only invariant offset is zero.
    pub bias_map: Vec<Option<usize>>,
}

fn bias_slots(out_type: &FieldType) -> (usize, Vec<Option<usize>>) {
    let mut map = Vec::with_capacity(out_type.channels());
    let mut slots = 0;
    for (rep, _) in out_type.fields() {
        let slot = if rep.is_permutation() {
            slots += 1;
            Some(slots - 1)
        } else {
            None
        };
        map.extend(core::iter::repeat(slot).take(rep.dim()));
    }
    (slots, map)
}

impl ConvLayer {
    /// Unconstrained layer; every field must be trivial.
    pub fn ordinary(in_type: FieldType, out_type: FieldType, size: usize) -> Result<Self> {
        if size % 2 == 0 {
            return Err(Error::Config(format!("filter size must be odd, got {size}")));
        }
        if in_type.blocks.iter().chain(&out_type.blocks).any(|(r, _)| !r.is_trivial()) {
            return Err(Error::UnsupportedRepresentation(
                "ordinary layers take trivial fields only".into(),
            ));
        }
        let n = out_type.channels() * in_type.channels() * size * size;
        let (slots, bias_map) = bias_slots(&out_type);
        Ok(Self {
            bias: vec![0.0; slots],
            bias_map,
            weights: vec![0.0; n],
            in_type,
            out_type,
            size,
            param: Parameterization::Free,
        })
    }

    /// Layer whose kernel is confined to the equivariant subspace.
    pub fn steerable(
        in_type: FieldType,
        out_type: FieldType,
        size: usize,
        cache: &mut BasisCache,
    ) -> Result<Self> {
        let mut local = Vec::new();
        let mut index = Vec::new();
        let mut blocks = Vec::new();
        let mut offset = 0;
        for (rep_out, oc) in out_type.fields() {
            for (rep_in, ic) in in_type.fields() {
                let spec = KernelSpec::new(rep_in.clone(), rep_out.clone(), size)?;
                let global = cache.get_or_build(&spec)?;
                let basis = match index.iter().position(|g| *g == global) {
                    Some(b) => b,
                    None => {
                        index.push(global);
                        local.push(cache.get(global).clone());
                        local.len() - 1
                    }
                };
                blocks.push(ExpansionBlock {
                    basis,
                    weight_offset: offset,
                    out_channel: oc,
                    d_out: rep_out.dim(),
                    in_channel: ic,
                    d_in: rep_in.dim(),
                });
                offset += local[basis].count;
            }
        }
        let layout = ExpansionLayout {
            bases: local,
            blocks,
            c_out: out_type.channels(),
            c_in: in_type.channels(),
            size,
            num_weights: offset,
        };
        let (slots, bias_map) = bias_slots(&out_type);
        Ok(Self {
            bias: vec![0.0; slots],
            bias_map,
            weights: vec![0.0; offset],
            in_type,
            out_type,
            size,
            param: Parameterization::Steerable(layout),
        })
    }

    pub fn geom(&self, grid: Grid) -> ConvGeom {
        ConvGeom {
            c_in: self.in_type.channels(),
            c_out: self.out_type.channels(),
            height: grid.height,
            width: grid.width,
            size: self.size,
        }
    }

    /// Realized kernel `(c_out, c_in, s, s)`.
    pub fn kernel(&self) -> Vec<f64> {
        match &self.param {
            Parameterization::Free => self.weights.clone(),
            Parameterization::Steerable(layout) => layout.expand(&self.weights),
        }
    }

    pub fn channel_bias(&self) -> Vec<f64> {
        self.bias_map.iter().map(|f| f.map_or(0.0, |f| self.bias[f])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Equivalent unconstrained layer with the same realized kernel.
    ///
    /// Every field is flattened into trivial channels; the field-shared
    /// biases become per-channel biases with repeated values.
    pub fn to_ordinary(&self) -> Result<ConvLayer> {
        let g = crate::group::CyclicGroup::new(1)?;
        let trivial = |c: usize| FieldType::single(Representation::trivial(g), c);
        let mut out = ConvLayer::ordinary(
            trivial(self.in_type.channels()),
            trivial(self.out_type.channels()),
            self.size,
        )?;
        out.weights = self.kernel();
        out.bias = self.channel_bias();
        Ok(out)
    }

    /// He initialization: realized kernel entries get variance `2 / fan_in`
    /// with `fan_in = c_in * s^2`; biases start at zero.
    pub fn he_init(&mut self, rng: &mut SeededRng) {
        let fan_in = (self.in_type.channels() * self.size * self.size) as f64;
        let target = 2.0 / fan_in;
        match &self.param {
            Parameterization::Free => {
                let sd = libm::sqrt(target);
                self.weights.iter_mut().for_each(|w| *w = sd * rng.normal());
            }
            Parameterization::Steerable(layout) => {
                let taps = self.size * self.size;
                for blk in &layout.blocks {
                    let count = layout.bases[blk.basis].count;
                    if count == 0 {
                        continue;
                    }
                    // an orthonormal basis spreads unit coefficient variance
                    // over count/len of the block entries on average
                    let len = (blk.d_out * blk.d_in * taps) as f64;
                    let sd = libm::sqrt(target * len / count as f64);
                    for w in &mut self.weights[blk.weight_offset..blk.weight_offset + count] {
                        *w = sd * rng.normal();
                    }
                }
            }
        }
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }

    pub fn zero(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = 0.0);
        self.bias.iter_mut().for_each(|b| *b = 0.0);
    }
}

/// Field-level convolution.
pub fn conv2d(f: &FeatureField, layer: &ConvLayer) -> Result<FeatureField> {
    if f.field_type.channels() != layer.in_type.channels() {
        return Err(Error::Shape(format!(
            "field has {} channels, layer expects {}",
            f.field_type.channels(),
            layer.in_type.channels()
        )));
    }
    let bias = layer.channel_bias();
    let data = conv2d_forward(&f.data, &layer.kernel(), Some(&bias), &layer.geom(f.grid));
    Ok(FeatureField {
        field_type: layer.out_type.clone(),
        grid: f.grid,
        data,
        approximate: f.approximate,
    })
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Pointwise leaky ReLU; only valid on fields whose representations act by permutations.
pub fn leaky_relu(f: &FeatureField) -> Result<FeatureField> {
    if let Some((rep, _)) = f.field_type.blocks.iter().find(|(r, _)| !r.is_permutation()) {
        return Err(Error::UnsupportedRepresentation(format!(
            "pointwise nonlinearity on {} field breaks equivariance",
            rep.tag()
        )));
    }
    let mut out = f.clone();
    out.data.iter_mut().for_each(|v| *v = leaky(*v));
    Ok(out)
}

/// Scalar function applied to vector norms, with its derivative.
#[derive(Debug, Clone, Copy)]
pub struct NormFn {
    pub value: fn(f64) -> f64,
    pub derivative: fn(f64) -> f64,
}

impl NormFn {
    pub fn identity() -> Self {
        Self { value: |r| r, derivative: |_| 1.0 }
    }

    /// Smooth gate `r -> r^2 / (1 + r^2)`.
    pub fn squash() -> Self {
        Self { value: |r| r * r / (1.0 + r * r), derivative: |r| 2.0 * r / ((1.0 + r * r) * (1.0 + r * r)) }
    }
}

/// Per pixel and per field, `v -> v * phi(|v|)`.
pub fn norm_nonlinearity(f: &FeatureField, phi: NormFn) -> FeatureField {
    let n = f.grid.len();
    let mut out = f.clone();
    for (rep, start) in f.field_type.fields() {
        let d = rep.dim();
        for p in 0..n {
            let r = libm::sqrt((0..d).map(|j| f.data[(start + j) * n + p].powi(2)).sum());
            let scale = (phi.value)(r);
            for j in 0..d {
                out.data[(start + j) * n + p] = f.data[(start + j) * n + p] * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{act_on_field, CyclicGroup, PlanarIsometry};

    fn z(m: usize) -> CyclicGroup {
        CyclicGroup::new(m).unwrap()
    }

    fn random(ft: FieldType, n: usize, seed: u64) -> FeatureField {
        let mut rng = SeededRng::new(seed);
        let len = ft.channels() * n * n;
        FeatureField::new(ft, Grid::square(n), (0..len).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn equivariant_layer_commutes_with_quarter_turns() {
        let g = z(4);
        let mut cache = BasisCache::new();
        let tin = FieldType::new(vec![
            (Representation::trivial(g), 2),
            (Representation::regular(g), 1),
        ]);
        let tout = FieldType::new(vec![
            (Representation::regular(g), 2),
            (Representation::irrep(g, 1).unwrap(), 1),
        ]);
        let mut layer = ConvLayer::steerable(tin.clone(), tout, 3, &mut cache).unwrap();
        let mut rng = SeededRng::new(5);
        layer.he_init(&mut rng);
        layer.bias.iter_mut().for_each(|b| *b = rng.normal());
        let f = random(tin, 9, 6);
        for k in 0..4 {
            let rot = PlanarIsometry::rotation_only(k, g).unwrap();
            let lhs = conv2d(&act_on_field(&rot, &f).unwrap(), &layer).unwrap();
            let rhs = act_on_field(&rot, &conv2d(&f, &layer).unwrap()).unwrap();
            let err = lhs.data.iter().zip(&rhs.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12, "k={k}: {err}");
        }
    }

    #[test]
    fn leaky_relu_values_and_type_check() {
        let g = z(4);
        let f = FeatureField::new(
            FieldType::single(Representation::trivial(g), 1),
            Grid::new(1, 3),
            vec![1.0, -1.0, 0.0],
        )
        .unwrap();
        assert_eq!(leaky_relu(&f).unwrap().data, vec![1.0, -0.01, 0.0]);
        let bad = FeatureField::zeros(
            FieldType::single(Representation::irrep(g, 1).unwrap(), 1),
            Grid::square(2),
        );
        assert!(matches!(leaky_relu(&bad), Err(Error::UnsupportedRepresentation(_))));
    }

    #[test]
    fn norm_nonlinearity_examples() {
        let g = z(4);
        let ft = FieldType::single(Representation::irrep(g, 1).unwrap(), 1);
        let f = FeatureField::new(ft.clone(), Grid::new(1, 2), vec![3.0, 0.0, 4.0, 0.0]).unwrap();
        let out = norm_nonlinearity(&f, NormFn::identity());
        assert_eq!(out.data, vec![15.0, 0.0, 20.0, 0.0]);
        let f = random(ft, 5, 7);
        for k in 0..4 {
            let rot = PlanarIsometry::rotation_only(k, g).unwrap();
            let lhs = norm_nonlinearity(&act_on_field(&rot, &f).unwrap(), NormFn::squash());
            let rhs = act_on_field(&rot, &norm_nonlinearity(&f, NormFn::squash())).unwrap();
            let err = lhs.data.iter().zip(&rhs.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12);
        }
    }

    #[test]
    fn he_init_matches_target_variance() {
        let g = z(4);
        let mut cache = BasisCache::new();
        let t = FieldType::single(Representation::trivial(g), 1);
        for layer in [
            ConvLayer::ordinary(t.clone(), t.clone(), 3).unwrap(),
            ConvLayer::steerable(t.clone(), FieldType::single(Representation::regular(g), 1), 3, &mut cache)
                .unwrap(),
        ] {
            let mut layer = layer;
            let mut rng = SeededRng::new(11);
            let (mut sum, mut sq, mut n) = (0.0, 0.0, 0.0);
            for _ in 0..10_000 {
                layer.he_init(&mut rng);
                for v in layer.kernel() {
                    sum += v;
                    sq += v * v;
                    n += 1.0;
                }
            }
            let var = sq / n - (sum / n).powi(2);
            assert!((var / (2.0 / 9.0) - 1.0).abs() < 0.2, "variance {var}");
        }
    }

    #[test]
    fn he_init_is_deterministic() {
        let g = z(4);
        let mut cache = BasisCache::new();
        let r = FieldType::single(Representation::regular(g), 2);
        let mut a = ConvLayer::steerable(r.clone(), r.clone(), 3, &mut cache).unwrap();
        let mut b = a.clone();
        a.he_init(&mut SeededRng::new(3));
        b.he_init(&mut SeededRng::new(3));
        assert_eq!(a, b);
    }

    #[test]
    fn trivial_group_matches_ordinary_dimension() {
        let g = z(1);
        let mut cache = BasisCache::new();
        let tin = FieldType::single(Representation::trivial(g), 3);
        let tout = FieldType::single(Representation::trivial(g), 4);
        let st = ConvLayer::steerable(tin.clone(), tout.clone(), 3, &mut cache).unwrap();
        let or = ConvLayer::ordinary(tin, tout, 3).unwrap();
        assert_eq!(st.weights.len(), or.weights.len());
        assert_eq!(st.weights.len(), 3 * 4 * 9);
    }

    #[test]
    fn expansion_contract_is_adjoint() {
        let g = z(4);
        let mut cache = BasisCache::new();
        let r = FieldType::single(Representation::regular(g), 2);
        let layer = ConvLayer::steerable(FieldType::single(Representation::trivial(g), 1), r, 3, &mut cache)
            .unwrap();
        let Parameterization::Steerable(layout) = &layer.param else { panic!() };
        let mut rng = SeededRng::new(8);
        let w: Vec<f64> = (0..layout.num_weights).map(|_| rng.normal()).collect();
        let dk: Vec<f64> = (0..layout.kernel_len()).map(|_| rng.normal()).collect();
        let lhs: f64 = layout.expand(&w).iter().zip(&dk).map(|(a, b)| a * b).sum();
        let rhs: f64 = layout.contract(&dk).iter().zip(&w).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn zero_dimensional_basis_gives_empty_weights() {
        // sign -> trivial at a single center pixel has no equivariant kernel
        let g = z(2);
        let mut cache = BasisCache::new();
        let mut layer = ConvLayer::steerable(
            FieldType::single(Representation::irrep(g, 1).unwrap(), 1),
            FieldType::single(Representation::trivial(g), 1),
            1,
            &mut cache,
        )
        .unwrap();
        assert!(layer.weights.is_empty());
        layer.he_init(&mut SeededRng::new(1));
        assert!(layer.kernel().iter().all(|v| *v == 0.0));
    }
}
