//! Reverse-mode differentiation over the closed set of operations used by
//! the reconstruction networks.
//!
//! Values are recorded in evaluation order; [`Tape::backward`] walks the
//! record once in reverse, accumulating vector-Jacobian products.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU32, Ordering};

use super::conv::{conv2d_backward, conv2d_forward, ConvGeom};
use super::layer::{leaky, ConvLayer, ExpansionLayout, NormFn, Parameterization, LEAKY_SLOPE};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::ops::LinearOperator;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a recorded value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u32,
    index: usize,
}

enum Op<'a> {
    Leaf,
    Expand { coef: Var, layout: &'a ExpansionLayout },
    ChannelBias { bias: Var, map: &'a [Option<usize>] },
    Conv { input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom },
    LeakyRelu(Var),
    NormNonlinearity { x: Var, dims: Vec<usize>, phi: NormFn },
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize, len: usize },
    Apply { x: Var, op: &'a dyn LinearOperator },
    Adjoint { x: Var, op: &'a dyn LinearOperator },
    SquaredNorm { x: Var, scale: f64 },
}

struct Node<'a> {
    value: Tensor,
    op: Op<'a>,
}

pub struct Tape<'a> {
    id: u32,
    nodes: Vec<Node<'a>>,
}

/// Gradients of every recorded value with respect to the backward root.
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of length `len` when nothing reached it.
    pub fn take_or_zero(&mut self, v: Var, len: usize) -> Vec<f64> {
        match self.grads.get_mut(v.index).and_then(|g| g.take()) {
            Some(t) if v.tape == self.tape => t.data,
            _ => vec![0.0; len],
        }
    }
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor, op: Op<'a>) -> Var {
        self.nodes.push(Node { value, op });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Unrecorded(format!("variable {} of tape {}", v.index, v.tape)));
        }
        Ok(())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn expand(&mut self, coef: Var, layout: &'a ExpansionLayout) -> Result<Var> {
        self.check(coef)?;
        let k = layout.expand(&self.value(coef).data);
        let t = Tensor::new(vec![layout.c_out, layout.c_in, layout.size, layout.size], k)?;
        Ok(self.push(t, Op::Expand { coef, layout }))
    }

    pub fn channel_bias(&mut self, bias: Var, map: &'a [Option<usize>]) -> Result<Var> {
        self.check(bias)?;
        let b = &self.value(bias).data;
        let data = map.iter().map(|f| f.map_or(0.0, |f| b[f])).collect();
        Ok(self.push(Tensor::new(vec![map.len()], data)?, Op::ChannelBias { bias, map }))
    }

    pub fn conv(&mut self, input: Var, kernel: Var, bias: Option<Var>, geom: ConvGeom) -> Result<Var> {
        self.check(input)?;
        self.check(kernel)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let x = self.value(input);
        if x.len() != geom.c_in * geom.height * geom.width {
            return Err(Error::Shape(format!(
                "conv input has {} entries, geometry expects {}",
                x.len(),
                geom.c_in * geom.height * geom.width
            )));
        }
        let out = conv2d_forward(
            &x.data,
            &self.value(kernel).data,
            bias.map(|b| self.value(b).data.as_slice()),
            &geom,
        );
        let t = Tensor::image(geom.c_out, geom.height, geom.width, out)?;
        Ok(self.push(t, Op::Conv { input, kernel, bias, geom }))
    }

    /// Records a typed convolution layer with its parameters as leaves.
    /// Returns `(output, weights leaf, bias leaf)`.
    pub fn conv_layer(&mut self, input: Var, layer: &'a ConvLayer) -> Result<(Var, Var, Var)> {
        self.check(input)?;
        let shape = &self.value(input).shape;
        if shape.len() != 3 {
            return Err(Error::Shape("convolution input must be (channels, height, width)".into()));
        }
        let grid = crate::group::Grid::new(shape[1], shape[2]);
        let w = self.leaf(Tensor::new(vec![layer.weights.len()], layer.weights.clone())?);
        let b = self.leaf(Tensor::new(vec![layer.bias.len()], layer.bias.clone())?);
        let kernel = match &layer.param {
            Parameterization::Free => w,
            Parameterization::Steerable(layout) => self.expand(w, layout)?,
        };
        let cb = self.channel_bias(b, &layer.bias_map)?;
        let out = self.conv(input, kernel, Some(cb), layer.geom(grid))?;
        Ok((out, w, b))
    }

    pub fn leaky_relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let mut t = self.value(x).clone();
        t.data.iter_mut().for_each(|v| *v = leaky(*v));
        Ok(self.push(t, Op::LeakyRelu(x)))
    }

    /// `v -> v * phi(|v|)` per pixel over consecutive channel groups of sizes `dims`.
    pub fn norm_nonlinearity(&mut self, x: Var, dims: Vec<usize>, phi: NormFn) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        if dims.iter().sum::<usize>() != xv.channels() {
            return Err(Error::Shape("field dimensions do not cover the channels".into()));
        }
        let n = xv.plane();
        let mut t = xv.clone();
        let mut at = 0;
        for d in &dims {
            for p in 0..n {
                let r = libm::sqrt((0..*d).map(|j| xv.data[(at + j) * n + p].powi(2)).sum());
                let s = (phi.value)(r);
                for j in 0..*d {
                    t.data[(at + j) * n + p] *= s;
                }
            }
            at += d;
        }
        Ok(self.push(t, Op::NormNonlinearity { x, dims, phi }))
    }

    fn binary(&mut self, a: Var, b: Var, sign: f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::Shape(format!("operands have {} and {} entries", ta.len(), tb.len())));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| x + sign * y).collect();
        Tensor::new(ta.shape.clone(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, 1.0)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.binary(a, b, -1.0)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn scale(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.check(x)?;
        let mut t = self.value(x).clone();
        t.data.iter_mut().for_each(|v| *v *= alpha);
        Ok(self.push(t, Op::Scale(x, alpha)))
    }

    /// Channel-wise concatenation of `(c_i, h, w)` stacks.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let mut channels = 0;
        let mut spatial: Option<Vec<usize>> = None;
        let mut data = Vec::new();
        for x in xs {
            self.check(*x)?;
            let t = self.value(*x);
            let sp = t.shape[1..].to_vec();
            match &spatial {
                None => spatial = Some(sp),
                Some(s) if *s != sp => return Err(Error::Shape("concat of mismatched grids".into())),
                _ => {}
            }
            channels += t.channels();
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![channels];
        shape.extend(spatial.unwrap_or_default());
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(xs.to_vec())))
    }

    /// Channels `start..start + len` of an image stack.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if start + len > t.channels() {
            return Err(Error::Shape(format!("slice {start}+{len} of {} channels", t.channels())));
        }
        let n = t.plane();
        let mut shape = t.shape.clone();
        shape[0] = len;
        let data = t.data[start * n..(start + len) * n].to_vec();
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice { x, start, len }))
    }

    pub fn apply(&mut self, x: Var, op: &'a dyn LinearOperator) -> Result<Var> {
        self.check(x)?;
        let y = op.apply(&self.value(x).data)?;
        Ok(self.push(Tensor::new(op.range_shape(), y)?, Op::Apply { x, op }))
    }

    pub fn adjoint(&mut self, x: Var, op: &'a dyn LinearOperator) -> Result<Var> {
        self.check(x)?;
        let y = op.adjoint(&self.value(x).data)?;
        Ok(self.push(Tensor::new(op.domain_shape(), y)?, Op::Adjoint { x, op }))
    }

    /// Scalar `scale * |x|^2`.
    pub fn squared_norm(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.check(x)?;
        let v = scale * self.value(x).data.iter().map(|v| v * v).sum::<f64>();
        Ok(self.push(Tensor::scalar(v), Op::SquaredNorm { x, scale }))
    }

    /// Vector-Jacobian products of `root` (seeded with `seed`) for every node.
    pub fn backward(&self, root: Var, seed: &Tensor) -> Result<Gradients> {
        self.check(root)?;
        if seed.len() != self.value(root).len() {
            return Err(Error::Shape("seed does not match root".into()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.index] = Some(seed.clone());
        for idx in (0..=root.index).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Expand { coef, layout } => {
                    accumulate(&mut grads, *coef, layout.contract(&g.data), &self.nodes);
                }
                Op::ChannelBias { bias, map } => {
                    let mut d = vec![0.0; self.value(*bias).len()];
                    for (c, f) in map.iter().enumerate() {
                        if let Some(f) = f {
                            d[*f] += g.data[c];
                        }
                    }
                    accumulate(&mut grads, *bias, d, &self.nodes);
                }
                Op::Conv { input, kernel, bias, geom } => {
                    let (dx, dk, db) = conv2d_backward(
                        &self.value(*input).data,
                        &self.value(*kernel).data,
                        &g.data,
                        geom,
                    );
                    accumulate(&mut grads, *input, dx, &self.nodes);
                    accumulate(&mut grads, *kernel, dk, &self.nodes);
                    if let Some(b) = bias {
                        accumulate(&mut grads, *b, db, &self.nodes);
                    }
                }
                Op::LeakyRelu(x) => {
                    // derivative at exactly 0 is the negative slope
                    let d = self
                        .value(*x)
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(v, gv)| if *v > 0.0 { *gv } else { LEAKY_SLOPE * gv })
                        .collect();
                    accumulate(&mut grads, *x, d, &self.nodes);
                }
                Op::NormNonlinearity { x, dims, phi } => {
                    let xv = self.value(*x);
                    let n = xv.plane();
                    let mut d = vec![0.0; xv.len()];
                    let mut at = 0;
                    for dim in dims {
                        for p in 0..n {
                            let idx = |j: usize| (at + j) * n + p;
                            let r2: f64 = (0..*dim).map(|j| xv.data[idx(j)].powi(2)).sum();
                            let r = libm::sqrt(r2);
                            let s = (phi.value)(r);
                            let vg: f64 = (0..*dim).map(|j| xv.data[idx(j)] * g.data[idx(j)]).sum();
                            let radial = if r > 0.0 { (phi.derivative)(r) * vg / r } else { 0.0 };
                            for j in 0..*dim {
                                d[idx(j)] = s * g.data[idx(j)] + radial * xv.data[idx(j)];
                            }
                        }
                        at += dim;
                    }
                    accumulate(&mut grads, *x, d, &self.nodes);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.data.clone(), &self.nodes);
                    accumulate(&mut grads, *b, g.data.clone(), &self.nodes);
                }
                Op::Sub(a, b) => {
                    let neg = g.data.iter().map(|v| -v).collect();
                    accumulate(&mut grads, *a, g.data.clone(), &self.nodes);
                    accumulate(&mut grads, *b, neg, &self.nodes);
                }
                Op::Scale(x, alpha) => {
                    accumulate(&mut grads, *x, g.data.iter().map(|v| alpha * v).collect(), &self.nodes);
                }
                Op::Concat(xs) => {
                    let mut at = 0;
                    for x in xs {
                        let len = self.value(*x).len();
                        accumulate(&mut grads, *x, g.data[at..at + len].to_vec(), &self.nodes);
                        at += len;
                    }
                }
                Op::Slice { x, start, len } => {
                    let xv = self.value(*x);
                    let n = xv.plane();
                    let mut d = vec![0.0; xv.len()];
                    d[start * n..(start + len) * n].copy_from_slice(&g.data);
                    accumulate(&mut grads, *x, d, &self.nodes);
                }
                Op::Apply { x, op } => {
                    accumulate(&mut grads, *x, op.adjoint(&g.data)?, &self.nodes);
                }
                Op::Adjoint { x, op } => {
                    accumulate(&mut grads, *x, op.apply(&g.data)?, &self.nodes);
                }
                Op::SquaredNorm { x, scale } => {
                    let s = 2.0 * scale * g.data[0];
                    let d = self.value(*x).data.iter().map(|v| s * v).collect();
                    accumulate(&mut grads, *x, d, &self.nodes);
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { tape: self.id, grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Vec<f64>, nodes: &[Node<'_>]) {
    match &mut grads[v.index] {
        Some(t) => t.data.iter_mut().zip(&d).for_each(|(a, b)| *a += b),
        slot @ None => {
            *slot = Some(Tensor { shape: nodes[v.index].value.shape.clone(), data: d });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{CyclicGroup, FieldType, Representation};
    use crate::nn::layer::BasisCache;
    use crate::rng::SeededRng;

    #[test]
    fn scalar_least_squares_gradient() {
        let (w, x, y) = (1.5, 2.0, 0.5);
        let mut tape = Tape::new();
        let wv = tape.leaf(Tensor::new(vec![1], vec![w]).unwrap());
        let xv = tape.leaf(Tensor::new(vec![1], vec![x]).unwrap());
        let yv = tape.leaf(Tensor::new(vec![1], vec![y]).unwrap());
        // w * x as a 1x1 convolution
        let geom = ConvGeom { c_in: 1, c_out: 1, height: 1, width: 1, size: 1 };
        let x3 = tape.leaf(Tensor::image(1, 1, 1, vec![x]).unwrap());
        let wx = tape.conv(x3, wv, None, geom).unwrap();
        let y3 = tape.leaf(Tensor::image(1, 1, 1, vec![y]).unwrap());
        let r = tape.sub(wx, y3).unwrap();
        let loss = tape.squared_norm(r, 0.5).unwrap();
        let grads = tape.backward(loss, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(wv).unwrap().data[0], (w * x - y) * x);
        let _ = (xv, yv);
    }

    #[test]
    fn zero_seed_gives_zero_gradients() {
        let g = CyclicGroup::new(4).unwrap();
        let mut cache = BasisCache::new();
        let mut layer = ConvLayer::steerable(
            FieldType::single(Representation::trivial(g), 1),
            FieldType::single(Representation::regular(g), 1),
            3,
            &mut cache,
        )
        .unwrap();
        layer.he_init(&mut SeededRng::new(1));
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::image(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap());
        let (y, w, b) = tape.conv_layer(x, &layer).unwrap();
        let a = tape.leaky_relu(y).unwrap();
        let loss = tape.squared_norm(a, 1.0).unwrap();
        let grads = tape.backward(loss, &Tensor::scalar(0.0)).unwrap();
        assert!(grads.get(w).unwrap().data.iter().all(|v| *v == 0.0));
        assert!(grads.get(b).unwrap().data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn foreign_variables_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let va = a.leaf(Tensor::scalar(1.0));
        let _ = b.leaf(Tensor::scalar(1.0));
        assert!(matches!(b.scale(va, 2.0), Err(Error::Unrecorded(_))));
        assert!(matches!(b.backward(va, &Tensor::scalar(1.0)), Err(Error::Unrecorded(_))));
    }
}
