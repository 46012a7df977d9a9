//! The two illustrative demos and file-based reconstruction.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use equirecon_core::eval::{generate_phantoms, psnr, PhantomSpec};
use equirecon_core::group::{rotate_image, CyclicGroup, FieldType, Grid, Representation};
use equirecon_core::nn::conv::conv2d_forward;
use equirecon_core::nn::{adam_step, leaky, AdamConfig, AdamState, BasisCache, ConvLayer, Tape, Tensor};
use equirecon_core::ops::LinearOperator;
use equirecon_core::rng::SeededRng;
use equirecon_core::variational::{tv_inpainting_demo, InpaintingDemoConfig, ProxSolverConfig};

use crate::checkpoint;
use crate::config::{ExperimentConfig, VariantKind};
use crate::error::{BenchError, Result};
use crate::problem::{reconstruct, streams, sub_seed, ProblemSetup};
use crate::tensor_io::{read_pgm, read_tensor, write_pgm, write_tensor};

/// `project(leaky(lift(x)))` on single-channel images.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFilter {
    pub lift: ConvLayer,
    pub project: ConvLayer,
}

impl DemoFilter {
    /// `width` hidden channels; for the equivariant variant these form
    /// `width / 4` regular fields of the quarter-turn group.
    pub fn new(kind: VariantKind, width: usize, size: usize, rng: &mut SeededRng) -> Result<Self> {
        let (mut lift, mut project) = match kind {
            VariantKind::Ordinary => {
                let z1 = CyclicGroup::new(1)?;
                let t = |c| FieldType::single(Representation::trivial(z1), c);
                (ConvLayer::ordinary(t(1), t(width), size)?, ConvLayer::ordinary(t(width), t(1), size)?)
            }
            VariantKind::Equivariant => {
                let z4 = CyclicGroup::new(4)?;
                if width % 4 != 0 {
                    return Err(BenchError::Config(format!("fig1 width {width} is not a multiple of 4")));
                }
                let t = FieldType::single(Representation::trivial(z4), 1);
                let hidden = FieldType::single(Representation::regular(z4), width / 4);
                let mut cache = BasisCache::new();
                (
                    ConvLayer::steerable(t.clone(), hidden.clone(), size, &mut cache)?,
                    ConvLayer::steerable(hidden, t, size, &mut cache)?,
                )
            }
        };
        lift.he_init(rng);
        project.he_init(rng);
        Ok(Self { lift, project })
    }

    pub fn apply(&self, x: &[f64], grid: Grid) -> Vec<f64> {
        let run = |layer: &ConvLayer, x: &[f64]| {
            conv2d_forward(x, &layer.kernel(), Some(&layer.channel_bias()), &layer.geom(grid))
        };
        let h: Vec<f64> = run(&self.lift, x).into_iter().map(leaky).collect();
        run(&self.project, &h)
    }

    /// Mean squared error against `clean` and its gradient for
    /// `[lift weights, lift bias, project weights, project bias]`.
    fn loss_and_gradients(&self, noisy: &[f64], clean: &[f64], grid: Grid) -> Result<(f64, Vec<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::image(1, grid.height, grid.width, noisy.to_vec())?);
        let (h, w0, b0) = tape.conv_layer(x, &self.lift)?;
        let a = tape.leaky_relu(h)?;
        let (out, w1, b1) = tape.conv_layer(a, &self.project)?;
        let target = tape.leaf(Tensor::image(1, grid.height, grid.width, clean.to_vec())?);
        let diff = tape.sub(out, target)?;
        let loss = tape.squared_norm(diff, 1.0 / grid.len() as f64)?;
        let value = tape.value(loss).data[0];
        let mut grads = tape.backward(loss, &Tensor::scalar(1.0))?;
        let sizes = [self.lift.weights.len(), self.lift.bias.len(), self.project.weights.len(), self.project.bias.len()];
        let leaves = [w0, b0, w1, b1];
        Ok((value, leaves.iter().zip(sizes).map(|(v, n)| grads.take_or_zero(*v, n)).collect()))
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.lift.weights, &mut self.lift.bias, &mut self.project.weights, &mut self.project.bias]
    }
}

/// Horizontal stripes: constant along rows, periodic down the columns.
pub fn stripe_image(n: usize, period: f64) -> Vec<f64> {
    (0..n * n)
        .map(|i| 0.5 + 0.35 * (2.0 * std::f64::consts::PI * (i / n) as f64 / period).sin())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Row {
    pub variant: &'static str,
    pub noisy_psnr: f64,
    pub train_psnr: f64,
    pub rotated_psnr: f64,
}

/// Trains one small filter per variant on a single noisy stripe image and
/// scores it on that pair and on the pair rotated by 90 degrees.
pub fn demo_fig1(cfg: &ExperimentConfig, out: Option<&Path>, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<Fig1Row>> {
    cfg.validate()?;
    let f = &cfg.fig1;
    let grid = Grid::square(f.size);
    let clean = stripe_image(f.size, f.period);
    let mut noise_rng = SeededRng::derive(sub_seed(cfg.seed, streams::DEMO), 0);
    let noisy: Vec<f64> = clean.iter().map(|v| v + f.sigma * noise_rng.normal()).collect();
    let rot_clean = rotate_image(&clean, grid, 90.0);
    let rot_noisy = rotate_image(&noisy, grid, 90.0);
    let mut images = vec![
        ("clean".to_string(), clean.clone()),
        ("noisy".to_string(), noisy.clone()),
        ("rotated_clean".to_string(), rot_clean.clone()),
        ("rotated_noisy".to_string(), rot_noisy.clone()),
    ];
    let mut rows = Vec::new();
    for (k, kind) in [VariantKind::Ordinary, VariantKind::Equivariant].into_iter().enumerate() {
        let mut init = SeededRng::derive(sub_seed(cfg.seed, streams::DEMO), 1 + k as u64);
        let mut filter = DemoFilter::new(kind, f.width, 3, &mut init)?;
        let sizes: Vec<usize> = filter.params_mut().iter().map(|p| p.len()).collect();
        let adam = AdamConfig { lr: f.learning_rate, ..AdamConfig::default() };
        let mut state = AdamState::new(adam, &sizes);
        for it in 0..f.iterations {
            let (loss, grads) = filter.loss_and_gradients(&noisy, &clean, grid)?;
            if !loss.is_finite() {
                return Err(equirecon_core::Error::NonFinite { loss, iteration: it, pair: 0 }.into());
            }
            if it % 250 == 0 || it + 1 == f.iterations {
                log(&format!("fig1 {}: iteration {it} mse {loss:.6e}", kind.name()));
            }
            adam_step(&mut filter.params_mut(), &grads, &mut state)?;
        }
        let train_out = filter.apply(&noisy, grid);
        let rot_out = filter.apply(&rot_noisy, grid);
        rows.push(Fig1Row {
            variant: kind.name(),
            noisy_psnr: psnr(&noisy, &clean, 1.0)?,
            train_psnr: psnr(&train_out, &clean, 1.0)?,
            rotated_psnr: psnr(&rot_out, &rot_clean, 1.0)?,
        });
        images.push((format!("{}_train", kind.name()), train_out));
        images.push((format!("{}_rotated", kind.name()), rot_out));
    }
    if let Some(dir) = out {
        let dir = dir.join("fig1");
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        for (name, img) in &images {
            write_tensor(&dir.join(format!("{name}.etn")), &[f.size, f.size], img)?;
            write_pgm(&dir.join(format!("{name}.pgm")), f.size, f.size, img)?;
        }
        let mut text = String::from("variant,noisy_psnr,train_psnr,rotated_psnr,rotation_loss_db\n");
        for r in &rows {
            let _ = writeln!(
                text,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.variant,
                r.noisy_psnr,
                r.train_psnr,
                r.rotated_psnr,
                r.train_psnr - r.rotated_psnr
            );
        }
        let path = dir.join("fig1.csv");
        fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Row {
    /// `masked` or the `identity` control.
    pub case: &'static str,
    pub angle_deg: f64,
    pub discrepancy: f64,
}

/// TV inpainting of a phantom and of its rotation with the same pixel mask:
/// the masked problem is not equivariant even though TV is.
pub fn demo_fig2(cfg: &ExperimentConfig, out: Option<&Path>, log: &(dyn Fn(&str) + Sync)) -> Result<Vec<Fig2Row>> {
    cfg.validate()?;
    let g = &cfg.fig2;
    let grid = Grid::square(g.size);
    let spec = PhantomSpec::ellipses(g.size, sub_seed(cfg.seed, streams::DEMO));
    let u = generate_phantoms(&spec, 1)?.remove(0);
    let mut mask_rng = SeededRng::derive(sub_seed(cfg.seed, streams::MASK), 2);
    let mask: Vec<f64> = (0..grid.len()).map(|_| if mask_rng.uniform() < g.keep { 1.0 } else { 0.0 }).collect();
    let demo = InpaintingDemoConfig {
        reg_weight: g.reg_weight,
        iterations: g.iterations,
        prox: ProxSolverConfig { max_iters: g.prox_iterations, ..ProxSolverConfig::default() },
    };
    let mut rows = Vec::new();
    let mut images = vec![("ground_truth".to_string(), u.clone()), ("mask".to_string(), mask.clone())];
    for (case, m) in [("masked", mask.clone()), ("identity", vec![1.0; grid.len()])] {
        log(&format!("fig2: {case} problem, {} degrees", g.angle));
        let report = tv_inpainting_demo(&u, grid, &m, g.angle, &demo)?;
        rows.push(Fig2Row { case, angle_deg: g.angle, discrepancy: report.discrepancy });
        images.push((format!("{case}_reconstruction"), report.reconstruction));
        images.push((format!("{case}_rotated_reconstruction"), report.rotated_reconstruction));
    }
    if let Some(dir) = out {
        let dir = dir.join("fig2");
        fs::create_dir_all(&dir).map_err(|e| BenchError::io(&dir, e))?;
        for (name, img) in &images {
            write_tensor(&dir.join(format!("{name}.etn")), &[g.size, g.size], img)?;
            write_pgm(&dir.join(format!("{name}.pgm")), g.size, g.size, img)?;
        }
        let mut text = String::from("case,angle_deg,discrepancy\n");
        for r in &rows {
            let _ = writeln!(text, "{},{:.6},{:.10e}", r.case, r.angle_deg, r.discrepancy);
        }
        let path = dir.join("fig2.csv");
        fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    }
    Ok(rows)
}

/// Reconstructs from a file with a trained checkpoint. A `.pgm` input is
/// treated as a ground-truth image and measured first (with noise seeded by
/// `seed`); an `.etn` input must already be a measurement. The result is
/// written as `.etn` (full operator-domain tensor) or `.pgm` (display image).
pub fn reconstruct_file(dir: &Path, input: &Path, output: &Path, seed: Option<u64>) -> Result<()> {
    let ck = checkpoint::load(dir)?;
    let mut cfg = ck.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let setup = ProblemSetup::new(&cfg)?;
    let ext = |p: &Path| p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    let y = match ext(input).as_deref() {
        Some("pgm") => {
            let img = read_pgm(input)?;
            if (img.height, img.width) != (setup.grid.height, setup.grid.width) {
                return Err(BenchError::Config(format!(
                    "image is {}x{}, the checkpoint expects {}x{}",
                    img.height, img.width, setup.grid.height, setup.grid.width
                )));
            }
            setup.measure(&img.data, &mut SeededRng::derive(sub_seed(cfg.seed, streams::DEMO), 99))?
        }
        _ => {
            let (shape, data) = read_tensor(input)?;
            if shape != setup.op.range_shape() {
                return Err(BenchError::Config(format!(
                    "measurement has shape {shape:?}, the operator produces {:?}",
                    setup.op.range_shape()
                )));
            }
            data
        }
    };
    let x = reconstruct(&ck.net, &setup, &y)?;
    match ext(output).as_deref() {
        Some("pgm") => write_pgm(output, setup.grid.width, setup.grid.height, &setup.display(&x)),
        _ => write_tensor(output, &setup.op.domain_shape(), &x),
    }
}
