//! Unrolled learned proximal gradient networks.
//!
//! Each iteration feeds `(u, s, grad E(u))` through a prox block
//! `K_project ∘ (id + φ ∘ K_intermediate) ∘ K_lift` and reads back the new
//! image and memory. The equivariant variant carries regular-representation
//! fields in its hidden layers; the ordinary variant uses the same number of
//! plain channels.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::{CyclicGroup, FieldType, Grid, Representation};
use crate::nn::conv::conv2d_forward;
use crate::nn::{adam_step, leaky, AdamConfig, AdamState, BasisCache, ConvLayer, Tape, Tensor, Var};
use crate::ops::LinearOperator;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ordinary,
    Equivariant { m: usize },
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Self::Ordinary => "ordinary".into(),
            Self::Equivariant { m } => format!("equivariant-m{m}"),
        }
    }

    /// Group order (1 for the ordinary variant).
    pub fn order(&self) -> usize {
        match self {
            Self::Ordinary => 1,
            Self::Equivariant { m } => *m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetConfig {
    pub variant: Variant,
    /// Image channels: 1 for CT, 2 (real, imaginary) for MRI.
    pub channels: usize,
    pub memory: usize,
    /// Hidden channel count `|H| * n_channels`.
    pub width: usize,
    pub iterations: usize,
    pub size: usize,
}

impl NetConfig {
    pub fn new(variant: Variant, channels: usize) -> Self {
        Self { variant, channels, memory: 5, width: 96, iterations: 8, size: 3 }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.variant.order();
        if m == 0 {
            return Err(Error::Config("group order must be positive".into()));
        }
        if self.width == 0 || self.width % m != 0 {
            return Err(Error::Config(format!(
                "width {} is not divisible by the group order {m}",
                self.width
            )));
        }
        if self.channels == 0 || self.size % 2 == 0 {
            return Err(Error::Config("need at least one channel and an odd filter size".into()));
        }
        Ok(())
    }

    fn block_input(&self) -> usize {
        2 * self.channels + self.memory
    }

    fn block_output(&self) -> usize {
        self.channels + self.memory
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProxBlock {
    pub lift: ConvLayer,
    pub intermediate: ConvLayer,
    pub project: ConvLayer,
}

impl ProxBlock {
    fn layers(&self) -> [&ConvLayer; 3] {
        [&self.lift, &self.intermediate, &self.project]
    }

    fn layers_mut(&mut self) -> [&mut ConvLayer; 3] {
        [&mut self.lift, &mut self.intermediate, &mut self.project]
    }

    /// `(u, s, g) -> (u', s')` on `(channels, h, w)` stacks.
    pub fn apply(&self, u: &[f64], s: &[f64], g: &[f64], grid: Grid) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = grid.len();
        let c_in = self.lift.in_type.channels();
        let c_out = self.project.out_type.channels();
        // c_in = 2c + memory, c_out = c + memory
        let c = c_in - c_out;
        let memory = c_out - c;
        if u.len() != c * n || g.len() != c * n || s.len() != memory * n {
            return Err(Error::Shape(format!(
                "block expects {c} image and {memory} memory channels on {}x{}",
                grid.height, grid.width
            )));
        }
        let mut z = Vec::with_capacity(c_in * n);
        z.extend_from_slice(u);
        z.extend_from_slice(s);
        z.extend_from_slice(g);
        let run = |layer: &ConvLayer, x: &[f64]| {
            conv2d_forward(x, &layer.kernel(), Some(&layer.channel_bias()), &layer.geom(grid))
        };
        let mut h = run(&self.lift, &z);
        let branch = run(&self.intermediate, &h);
        h.iter_mut().zip(&branch).for_each(|(a, b)| *a += leaky(*b));
        let mut out = run(&self.project, &h);
        let s_new = out.split_off(c * n);
        Ok((out, s_new))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrolledNet {
    pub config: NetConfig,
    pub blocks: Vec<ProxBlock>,
}

/// Builds the architecture with He-initialised lift/project layers and a
/// zero intermediate layer in every block.
pub fn init_network(config: &NetConfig, rng: &mut SeededRng) -> Result<UnrolledNet> {
    let mut net = build_network(config)?;
    for block in &mut net.blocks {
        block.lift.he_init(rng);
        block.intermediate.zero();
        block.project.he_init(rng);
    }
    Ok(net)
}

/// The architecture with all parameters zero.
pub fn build_network(config: &NetConfig) -> Result<UnrolledNet> {
    config.validate()?;
    let m = config.variant.order();
    let group = CyclicGroup::new(m)?;
    let trivial = |c: usize| FieldType::single(Representation::trivial(group), c);
    let (t_in, t_out) = (trivial(config.block_input()), trivial(config.block_output()));
    let mut cache = BasisCache::new();
    let mut blocks = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let block = match config.variant {
            Variant::Ordinary => {
                let hidden = trivial(config.width);
                ProxBlock {
                    lift: ConvLayer::ordinary(t_in.clone(), hidden.clone(), config.size)?,
                    intermediate: ConvLayer::ordinary(hidden.clone(), hidden.clone(), config.size)?,
                    project: ConvLayer::ordinary(hidden, t_out.clone(), config.size)?,
                }
            }
            Variant::Equivariant { .. } => {
                let hidden = FieldType::single(Representation::regular(group), config.width / m);
                ProxBlock {
                    lift: ConvLayer::steerable(t_in.clone(), hidden.clone(), config.size, &mut cache)?,
                    intermediate: ConvLayer::steerable(
                        hidden.clone(),
                        hidden.clone(),
                        config.size,
                        &mut cache,
                    )?,
                    project: ConvLayer::steerable(hidden, t_out.clone(), config.size, &mut cache)?,
                }
            }
        };
        blocks.push(block);
    }
    Ok(UnrolledNet { config: *config, blocks })
}

const LAYER_NAMES: [&str; 3] = ["lift", "intermediate", "project"];

impl UnrolledNet {
    pub fn num_params(&self) -> usize {
        self.blocks.iter().flat_map(|b| b.layers()).map(|l| l.num_params()).sum()
    }

    /// Named parameter vectors in a fixed order: per block and layer, the
    /// weights then the biases.
    pub fn parameters(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, layer) in LAYER_NAMES.iter().zip(block.layers()) {
                out.push((format!("block{i}.{name}.weights"), layer.weights.as_slice()));
                out.push((format!("block{i}.{name}.bias"), layer.bias.as_slice()));
            }
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            for layer in block.layers_mut() {
                out.push(layer.weights.as_mut_slice());
                out.push(layer.bias.as_mut_slice());
            }
        }
        out
    }

    /// Overwrites the parameter vector `index` (order of [`Self::parameters`]).
    pub fn set_parameter(&mut self, index: usize, values: &[f64]) -> Result<()> {
        let mut params = self.parameters_mut();
        let slot = params
            .get_mut(index)
            .ok_or_else(|| Error::Config(format!("no parameter slot {index}")))?;
        if slot.len() != values.len() {
            return Err(Error::Length { expected: slot.len(), got: values.len() });
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    /// The same function written with unconstrained convolutions.
    pub fn to_ordinary(&self) -> Result<UnrolledNet> {
        let blocks = self
            .blocks
            .iter()
            .map(|b| {
                Ok(ProxBlock {
                    lift: b.lift.to_ordinary()?,
                    intermediate: b.intermediate.to_ordinary()?,
                    project: b.project.to_ordinary()?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let config = NetConfig { variant: Variant::Ordinary, ..self.config };
        Ok(UnrolledNet { config, blocks })
    }

    fn grid_for(&self, op: &dyn LinearOperator, y: &[f64]) -> Result<Grid> {
        let shape = op.domain_shape();
        if shape.len() != 3 || shape[0] != self.config.channels {
            return Err(Error::Shape(format!(
                "operator domain {shape:?} does not hold {}-channel images",
                self.config.channels
            )));
        }
        if y.len() != op.range_len() {
            return Err(Error::Length { expected: op.range_len(), got: y.len() });
        }
        Ok(Grid::new(shape[1], shape[2]))
    }
}

/// `Phi(y)`: `u, s <- 0`, then one prox block per iteration fed with
/// `grad E(u) = A^T (A u - y)`.
pub fn unrolled_forward(net: &UnrolledNet, y: &[f64], op: &dyn LinearOperator) -> Result<Vec<f64>> {
    let grid = net.grid_for(op, y)?;
    let n = grid.len();
    let mut u = vec![0.0; net.config.channels * n];
    let mut s = vec![0.0; net.config.memory * n];
    for block in &net.blocks {
        let g = crate::ops::data_grad(op, &u, y)?;
        let (u2, s2) = block.apply(&u, &s, &g, grid)?;
        u = u2;
        s = s2;
    }
    Ok(u)
}

/// Records `Phi(y)` on `tape`. Returns the output and the parameter leaves
/// in the order of [`UnrolledNet::parameters`].
pub fn record_forward<'a>(
    net: &'a UnrolledNet,
    tape: &mut Tape<'a>,
    y: &[f64],
    op: &'a dyn LinearOperator,
) -> Result<(Var, Vec<Var>)> {
    let grid = net.grid_for(op, y)?;
    let (h, w) = (grid.height, grid.width);
    let (c, mem) = (net.config.channels, net.config.memory);
    let y_var = tape.leaf(Tensor::new(op.range_shape(), y.to_vec())?);
    let mut u = tape.leaf(Tensor::zeros(vec![c, h, w]));
    let mut s = tape.leaf(Tensor::zeros(vec![mem, h, w]));
    let mut leaves = Vec::with_capacity(6 * net.blocks.len());
    for block in &net.blocks {
        let au = tape.apply(u, op)?;
        let r = tape.sub(au, y_var)?;
        let g = tape.adjoint(r, op)?;
        let z = tape.concat(&[u, s, g])?;
        let (lifted, w0, b0) = tape.conv_layer(z, &block.lift)?;
        let (branch, w1, b1) = tape.conv_layer(lifted, &block.intermediate)?;
        let act = tape.leaky_relu(branch)?;
        let hidden = tape.add(lifted, act)?;
        let (out, w2, b2) = tape.conv_layer(hidden, &block.project)?;
        u = tape.slice(out, 0, c)?;
        s = tape.slice(out, c, mem)?;
        leaves.extend([w0, b0, w1, b1, w2, b2]);
    }
    Ok((u, leaves))
}

/// Loss `|target - Phi(y)|^2` and its gradient for every parameter vector.
pub fn loss_and_gradients(
    net: &UnrolledNet,
    target: &[f64],
    y: &[f64],
    op: &dyn LinearOperator,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let (out, leaves) = record_forward(net, &mut tape, y, op)?;
    let shape = tape.value(out).shape.clone();
    let t = tape.leaf(Tensor::new(shape, target.to_vec())?);
    let diff = tape.sub(out, t)?;
    let loss = tape.squared_norm(diff, 1.0)?;
    let value = tape.value(loss).data[0];
    let mut grads = tape.backward(loss, &Tensor::scalar(1.0))?;
    let sizes: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
    let out = leaves.iter().zip(&sizes).map(|(v, n)| grads.take_or_zero(*v, *n)).collect();
    Ok((value, out))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingConfig {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub log_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { iterations: 20_000, adam: AdamConfig::default(), seed: 0, log_every: 100 }
    }
}

/// A ground-truth image with its measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub target: Vec<f64>,
    pub measurement: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// `(iteration, loss)` for every logged iteration, plus the last one.
    pub losses: Vec<(usize, f64)>,
    pub state: AdamState,
}

/// Minibatch-1 Adam on the squared reconstruction error. `progress` is
/// called with every logged `(iteration, loss)`.
pub fn train(
    net: &mut UnrolledNet,
    data: &[TrainingPair],
    op: &dyn LinearOperator,
    cfg: &TrainingConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<TrainingReport> {
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.iterations == 0 || cfg.log_every == 0 {
        return Err(Error::Config("iteration count and logging interval must be positive".into()));
    }
    let sizes: Vec<usize> = net.parameters().iter().map(|(_, p)| p.len()).collect();
    let mut state = AdamState::new(cfg.adam, &sizes);
    let mut rng = SeededRng::derive(cfg.seed, 0x7261_696e);
    let mut losses = Vec::new();
    for it in 0..cfg.iterations {
        let pair = rng.below(data.len());
        let (loss, grads) = loss_and_gradients(net, &data[pair].target, &data[pair].measurement, op)?;
        if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { loss, iteration: it, pair });
        }
        if it % cfg.log_every == 0 || it + 1 == cfg.iterations {
            losses.push((it, loss));
            progress(it, loss);
        }
        adam_step(&mut net.parameters_mut(), &grads, &mut state)?;
    }
    Ok(TrainingReport { losses, state })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{act_on_field, FeatureField, PlanarIsometry};
    use crate::ops::ForwardOperator;

    fn small(variant: Variant, width: usize, iterations: usize) -> NetConfig {
        NetConfig { width, iterations, ..NetConfig::new(variant, 1) }
    }

    fn randomize(net: &mut UnrolledNet, rng: &mut SeededRng) {
        for block in &mut net.blocks {
            for layer in block.layers_mut() {
                layer.he_init(rng);
                layer.bias.iter_mut().for_each(|b| *b = 0.1 * rng.normal());
            }
        }
    }

    fn rot(plane: &[f64], n: usize, k: usize) -> Vec<f64> {
        let z4 = CyclicGroup::new(4).unwrap();
        let g = PlanarIsometry::rotation_only(k, z4).unwrap();
        let c = plane.len() / (n * n);
        let f = FeatureField::new(
            FieldType::single(Representation::trivial(z4), c),
            Grid::square(n),
            plane.to_vec(),
        )
        .unwrap();
        act_on_field(&g, &f).unwrap().data
    }

    #[test]
    fn widths_and_divisibility() {
        let mut rng = SeededRng::new(0);
        let eq = init_network(&NetConfig::new(Variant::Equivariant { m: 4 }, 1), &mut rng).unwrap();
        assert_eq!(eq.blocks.len(), 8);
        assert_eq!(eq.blocks[0].lift.out_type.num_fields(), 24);
        assert_eq!(eq.blocks[0].lift.out_type.channels(), 96);
        let ord = build_network(&NetConfig::new(Variant::Ordinary, 1)).unwrap();
        assert_eq!(ord.blocks[0].lift.out_type.channels(), 96);
        assert!(eq.num_params() < ord.num_params());
        let bad = NetConfig { width: 10, ..NetConfig::new(Variant::Equivariant { m: 4 }, 1) };
        assert!(build_network(&bad).is_err());
        assert!(eq.blocks.iter().all(|b| b.intermediate.weights.iter().all(|w| *w == 0.0)));
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = small(Variant::Equivariant { m: 4 }, 8, 2);
        let a = init_network(&cfg, &mut SeededRng::new(5)).unwrap();
        let b = init_network(&cfg, &mut SeededRng::new(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let n = 8;
        let net = build_network(&small(Variant::Ordinary, 4, 3)).unwrap();
        let op = ForwardOperator::identity(1, n, n);
        let y: Vec<f64> = (0..n * n).map(|i| i as f64).collect();
        assert!(unrolled_forward(&net, &y, &op).unwrap().iter().all(|v| *v == 0.0));
        let none = build_network(&small(Variant::Ordinary, 4, 0)).unwrap();
        assert!(unrolled_forward(&none, &y, &op).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn zero_intermediate_block_is_affine() {
        let n = 6;
        let grid = Grid::square(n);
        let mut rng = SeededRng::new(1);
        let net = init_network(&small(Variant::Ordinary, 4, 1), &mut rng).unwrap();
        let block = &net.blocks[0];
        let rand = |c: usize, rng: &mut SeededRng| (0..c * n * n).map(|_| rng.normal()).collect::<Vec<_>>();
        let (u1, s1, g1) = (rand(1, &mut rng), rand(5, &mut rng), rand(1, &mut rng));
        let (u2, s2, g2) = (rand(1, &mut rng), rand(5, &mut rng), rand(1, &mut rng));
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 0.3 * x + 0.7 * y).collect::<Vec<_>>();
        let (a, _) = block.apply(&u1, &s1, &g1, grid).unwrap();
        let (b, _) = block.apply(&u2, &s2, &g2, grid).unwrap();
        let (c, _) = block.apply(&mix(&u1, &u2), &mix(&s1, &s2), &mix(&g1, &g2), grid).unwrap();
        for i in 0..a.len() {
            assert!((c[i] - (0.3 * a[i] + 0.7 * b[i])).abs() < 1e-12);
        }
        assert!(block.apply(&u1, &s1[..10], &g1, grid).is_err());
    }

    #[test]
    fn equivariant_block_commutes_with_quarter_turns() {
        let n = 7;
        let grid = Grid::square(n);
        let mut rng = SeededRng::new(2);
        let mut net = build_network(&small(Variant::Equivariant { m: 4 }, 8, 1)).unwrap();
        randomize(&mut net, &mut rng);
        let block = &net.blocks[0];
        let rand = |c: usize, rng: &mut SeededRng| (0..c * n * n).map(|_| rng.normal()).collect::<Vec<_>>();
        let (u, s, g) = (rand(1, &mut rng), rand(5, &mut rng), rand(1, &mut rng));
        let (u1, s1) = block.apply(&u, &s, &g, grid).unwrap();
        for k in 1..4 {
            let (u2, s2) = block.apply(&rot(&u, n, k), &rot(&s, n, k), &rot(&g, n, k), grid).unwrap();
            let (ru, rs) = (rot(&u1, n, k), rot(&s1, n, k));
            let err = u2.iter().zip(&ru).chain(s2.iter().zip(&rs)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-12, "k={k}: {err}");
        }
    }

    #[test]
    fn denoising_network_is_equivariant() {
        let n = 8;
        let mut rng = SeededRng::new(3);
        let mut net = build_network(&small(Variant::Equivariant { m: 4 }, 8, 2)).unwrap();
        randomize(&mut net, &mut rng);
        let op = ForwardOperator::identity(1, n, n);
        let y: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let out = unrolled_forward(&net, &y, &op).unwrap();
        let out_r = unrolled_forward(&net, &rot(&y, n, 1), &op).unwrap();
        let err = out_r.iter().zip(rot(&out, n, 1)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err <= 1e-12, "{err}");
    }

    #[test]
    fn tape_and_plain_forward_agree() {
        let n = 6;
        let mut rng = SeededRng::new(4);
        let mut net = build_network(&small(Variant::Equivariant { m: 2 }, 4, 2)).unwrap();
        randomize(&mut net, &mut rng);
        let op = ForwardOperator::identity(1, n, n);
        let y: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let plain = unrolled_forward(&net, &y, &op).unwrap();
        let mut tape = Tape::new();
        let (out, leaves) = record_forward(&net, &mut tape, &y, &op).unwrap();
        assert_eq!(leaves.len(), net.parameters().len());
        let taped = &tape.value(out).data;
        assert!(plain.iter().zip(taped).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ordinary_copy_reproduces_equivariant_net() {
        let n = 8;
        let mut rng = SeededRng::new(5);
        let mut net = build_network(&small(Variant::Equivariant { m: 4 }, 8, 2)).unwrap();
        randomize(&mut net, &mut rng);
        let ord = net.to_ordinary().unwrap();
        assert_eq!(ord.config.variant, Variant::Ordinary);
        let op = ForwardOperator::identity(1, n, n);
        let y: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let a = unrolled_forward(&net, &y, &op).unwrap();
        let b = unrolled_forward(&ord, &y, &op).unwrap();
        assert!(a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12));
    }

    #[test]
    fn zero_target_zero_net_stays_put() {
        let n = 6;
        let mut net = build_network(&small(Variant::Ordinary, 4, 2)).unwrap();
        let before = net.clone();
        let op = ForwardOperator::identity(1, n, n);
        let data = vec![TrainingPair { target: vec![0.0; n * n], measurement: vec![0.0; n * n] }];
        let cfg = TrainingConfig { iterations: 5, log_every: 1, ..Default::default() };
        let report = train(&mut net, &data, &op, &cfg, |_, _| {}).unwrap();
        assert!(report.losses.iter().all(|(_, l)| *l == 0.0));
        assert_eq!(net, before);
    }

    #[test]
    fn overfits_single_pair_and_is_reproducible() {
        let n = 8;
        let mut rng = SeededRng::new(6);
        let target: Vec<f64> = (0..n * n).map(|_| rng.uniform()).collect();
        let measurement: Vec<f64> = target.iter().map(|v| v + 0.1 * rng.normal()).collect();
        let data = vec![TrainingPair { target, measurement }];
        let op = ForwardOperator::identity(1, n, n);
        let cfg = TrainingConfig {
            iterations: 2000,
            adam: AdamConfig { lr: 1e-3, ..Default::default() },
            seed: 1,
            log_every: 100,
        };
        let run = |seed: u64| {
            let mut net =
                init_network(&small(Variant::Equivariant { m: 4 }, 8, 2), &mut SeededRng::new(seed))
                    .unwrap();
            train(&mut net, &data, &op, &cfg, |_, _| {}).unwrap()
        };
        let a = run(7);
        let (first, last) = (a.losses[0].1, a.losses.last().unwrap().1);
        assert!(last < 0.1 * first, "{first} -> {last}");
        assert_eq!(a.losses, run(7).losses);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = build_network(&small(Variant::Ordinary, 4, 1)).unwrap();
        let op = ForwardOperator::identity(1, 4, 4);
        assert!(train(&mut net, &[], &op, &TrainingConfig::default(), |_, _| {}).is_err());
    }
}
