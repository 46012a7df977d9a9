//! The rotation-robustness harness: train each variant on each training-set
//! size, evaluate on an upright and a randomly rotated copy of the test set,
//! and write per-image metrics plus trimmed summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use equirecon_core::eval::{gaussian_kde, trimmed, TrimmedSummary};
use equirecon_core::group::{rotate_image, CyclicGroup};
use equirecon_core::learned_recon::{
    build_network, init_network, train, unrolled_forward, NetConfig, TrainingConfig, TrainingPair, UnrolledNet, Variant,
};
use equirecon_core::rng::SeededRng;

use crate::checkpoint;
use crate::config::{Baseline, ExperimentConfig, VariantKind};
use crate::error::{BenchError, Result};
use crate::problem::{phantoms, reconstruct, score, streams, sub_seed, ProblemSetup};

pub const CSV_HEADER: &str = "image_id,variant,m,train_size,orientation,angle_deg,ssim,psnr";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub image_id: usize,
    pub variant: String,
    pub m: usize,
    pub train_size: usize,
    pub rotated: bool,
    pub angle_deg: f64,
    pub ssim: f64,
    pub psnr: f64,
}

impl MetricsRecord {
    pub fn orientation(&self) -> &'static str {
        if self.rotated {
            "rotated"
        } else {
            "upright"
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.8},{:.6}",
            self.image_id,
            self.variant,
            self.m,
            self.train_size,
            self.orientation(),
            self.angle_deg,
            self.ssim,
            self.psnr
        )
    }

    fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return None;
        }
        Some(Self {
            image_id: f[0].parse().ok()?,
            variant: f[1].to_string(),
            m: f[2].parse().ok()?,
            train_size: f[3].parse().ok()?,
            rotated: match f[4] {
                "upright" => false,
                "rotated" => true,
                _ => return None,
            },
            angle_deg: f[5].parse().ok()?,
            ssim: f[6].parse().ok()?,
            psnr: f[7].parse().ok()?,
        })
    }

    fn group_key(&self) -> (String, usize, usize, &'static str) {
        (self.variant.clone(), self.m, self.train_size, self.orientation())
    }
}

pub fn write_metrics_csv(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut text = String::from(CSV_HEADER);
    text.push('\n');
    for r in records {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(BenchError::format(path, "unexpected metrics CSV header"));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| MetricsRecord::parse(l).ok_or_else(|| BenchError::format(path, format!("bad row {l:?}"))))
        .collect()
}

/// One summary row per `(variant, m, train_size, orientation)` group, in
/// order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub variant: String,
    pub m: usize,
    pub train_size: usize,
    pub orientation: &'static str,
    pub ssim: TrimmedSummary,
    pub psnr: TrimmedSummary,
}

pub fn group_records(records: &[MetricsRecord]) -> Vec<((String, usize, usize, &'static str), Vec<&MetricsRecord>)> {
    let mut groups: Vec<((String, usize, usize, &'static str), Vec<&MetricsRecord>)> = Vec::new();
    for r in records {
        let key = r.group_key();
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r),
            None => groups.push((key, vec![r])),
        }
    }
    groups
}

pub fn summarize(records: &[MetricsRecord], trim: f64) -> Vec<GroupSummary> {
    group_records(records)
        .into_iter()
        .map(|((variant, m, train_size, orientation), rows)| {
            let ssim: Vec<f64> = rows.iter().map(|r| r.ssim).collect();
            let psnr: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
            GroupSummary { variant, m, train_size, orientation, ssim: trimmed(&ssim, trim), psnr: trimmed(&psnr, trim) }
        })
        .collect()
}

pub const SUMMARY_HEADER: &str = "variant,m,train_size,orientation,count,\
ssim_mean,ssim_min,ssim_q25,ssim_median,ssim_q75,ssim_max,\
psnr_mean,psnr_min,psnr_q25,psnr_median,psnr_q75,psnr_max";

pub fn write_summary_csv(path: &Path, summaries: &[GroupSummary]) -> Result<()> {
    let mut text = String::from(SUMMARY_HEADER);
    text.push('\n');
    for s in summaries {
        let _ = write!(text, "{},{},{},{},{}", s.variant, s.m, s.train_size, s.orientation, s.ssim.count);
        for t in [&s.ssim, &s.psnr] {
            for v in [t.mean, t.min, t.q25, t.median, t.q75, t.max] {
                let _ = write!(text, ",{v:.8}");
            }
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// How a test image is reconstructed.
#[derive(Clone, Copy)]
pub enum Method<'a> {
    Net(&'a UnrolledNet),
    Baseline(Baseline),
}

/// Labels attached to every row of an evaluation.
#[derive(Debug, Clone)]
pub struct RowLabel {
    pub variant: String,
    pub m: usize,
    pub train_size: usize,
}

/// Test-set rotation angles in `[0, 360)`, one independent draw per image.
pub fn test_angle(seed: u64, image: usize) -> f64 {
    360.0 * SeededRng::derive(sub_seed(seed, streams::TEST_ANGLES), image as u64).uniform()
}

/// Evaluates `method` on every test image, upright and rotated. Images are
/// processed in parallel; rows come back in image order.
pub fn evaluate(
    setup: &ProblemSetup,
    method: Method<'_>,
    cfg: &ExperimentConfig,
    images: &[Vec<f64>],
    label: &RowLabel,
    rotated: bool,
) -> Result<Vec<MetricsRecord>> {
    let noise_seed = sub_seed(cfg.seed, streams::TEST_NOISE);
    let per_image: Vec<Vec<MetricsRecord>> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut rows = Vec::with_capacity(2);
            let mut cases = vec![(false, 0.0, img.clone())];
            if rotated {
                let angle = test_angle(cfg.seed, i);
                cases.push((true, angle, rotate_image(img, setup.grid, angle)));
            }
            for (k, (is_rotated, angle, truth)) in cases.into_iter().enumerate() {
                let mut rng = SeededRng::derive(noise_seed, (2 * i + k) as u64);
                let y = setup.measure(&truth, &mut rng)?;
                let x = match method {
                    Method::Net(net) => reconstruct(net, setup, &y)?,
                    Method::Baseline(b) => setup.baseline(b, &y, cfg)?,
                };
                let (ssim, psnr) = score(setup, &x, &truth)?;
                rows.push(MetricsRecord {
                    image_id: i,
                    variant: label.variant.clone(),
                    m: label.m,
                    train_size: label.train_size,
                    rotated: is_rotated,
                    angle_deg: angle,
                    ssim,
                    psnr,
                });
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

pub fn net_config(cfg: &ExperimentConfig, variant: Variant, channels: usize) -> NetConfig {
    NetConfig {
        variant,
        channels,
        memory: cfg.network.memory,
        width: cfg.network.width,
        iterations: cfg.network.iterations,
        size: cfg.network.filter_size,
    }
}

fn variant_of(kind: VariantKind, m: usize) -> Variant {
    match kind {
        VariantKind::Ordinary => Variant::Ordinary,
        VariantKind::Equivariant => Variant::Equivariant { m },
    }
}

fn run_name(kind: VariantKind, train_size: usize) -> String {
    format!("{}-n{train_size}", kind.name())
}

/// Initialises and trains one network. The initial weights and the sampling
/// order depend only on the seed, the variant and `tag`.
pub fn train_one(
    cfg: &ExperimentConfig,
    setup: &ProblemSetup,
    variant: Variant,
    data: &[TrainingPair],
    tag: u64,
    log: &(dyn Fn(&str) + Sync),
) -> Result<(UnrolledNet, Vec<(usize, f64)>)> {
    let stream = 2 * tag + u64::from(variant != Variant::Ordinary);
    let mut init_rng = SeededRng::derive(sub_seed(cfg.seed, streams::INIT), stream);
    let mut net = init_network(&net_config(cfg, variant, setup.channels), &mut init_rng)?;
    let tcfg = TrainingConfig {
        iterations: cfg.training.iterations,
        adam: cfg.training.adam,
        seed: SeededRng::derive(sub_seed(cfg.seed, streams::TRAIN_ORDER), stream).next_u64(),
        log_every: cfg.training.log_every,
    };
    let name = variant.name();
    let report = train(&mut net, data, &setup.net_op, &tcfg, |it, loss| {
        log(&format!("{name}: iteration {it} loss {loss:.6e}"))
    })?;
    Ok((net, report.losses))
}

fn write_losses(path: &Path, losses: &[(usize, f64)]) -> Result<()> {
    let mut text = String::from("iteration,loss\n");
    for (it, loss) in losses {
        let _ = writeln!(text, "{it},{loss:.12e}");
    }
    fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub summaries: Vec<GroupSummary>,
    pub metrics_csv: PathBuf,
    pub summary_csv: PathBuf,
}

/// Trains every configured variant on every training-set size and saves the
/// checkpoints under `out/checkpoints/<variant>-n<size>`.
pub fn train_all(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<()> {
    run(cfg, false, log).map(|_| ())
}

/// The full experiment. If training aborts, the rows gathered so far are
/// still written before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<ExperimentOutput> {
    run(cfg, true, log)
}

fn run(cfg: &ExperimentConfig, with_evaluation: bool, log: &(dyn Fn(&str) + Sync)) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out = &cfg.out;
    create_dir(out)?;
    create_dir(&out.join("checkpoints"))?;
    create_dir(&out.join("losses"))?;
    cfg.write_resolved(out)?;
    let setup = ProblemSetup::new(cfg)?;
    let max_train = *cfg.train_sizes.iter().max().unwrap();
    let train_images = phantoms(cfg, streams::TRAIN_IMAGES, max_train)?;
    let data = setup.pairs(&train_images, sub_seed(cfg.seed, streams::TRAIN_NOISE))?;
    let test_images = if with_evaluation { phantoms(cfg, streams::TEST_IMAGES, cfg.test_size)? } else { Vec::new() };

    let metrics_csv = out.join("metrics.csv");
    let summary_csv = out.join("summary.csv");
    let mut records = Vec::new();
    let flush = |records: &[MetricsRecord]| -> Result<Vec<GroupSummary>> {
        if !with_evaluation {
            return Ok(Vec::new());
        }
        write_metrics_csv(&metrics_csv, records)?;
        let summaries = summarize(records, cfg.evaluation.trim);
        write_summary_csv(&summary_csv, &summaries)?;
        Ok(summaries)
    };
    if with_evaluation {
        for &b in &cfg.evaluation.baselines {
            let name = if b == Baseline::Adjoint && cfg.problem == crate::config::Problem::Ct { "fbp" } else { b.name() };
            log(&format!("evaluating baseline {name}"));
            let label = RowLabel { variant: name.into(), m: 1, train_size: 0 };
            records.extend(evaluate(&setup, Method::Baseline(b), cfg, &test_images, &label, true)?);
        }
        flush(&records)?;
    }
    for &size in &cfg.train_sizes {
        for &kind in &cfg.variants {
            let variant = variant_of(kind, cfg.m);
            log(&format!("training {} on {size} pairs", variant.name()));
            let (net, losses) = match train_one(cfg, &setup, variant, &data[..size], size as u64, log) {
                Ok(v) => v,
                Err(e) => {
                    flush(&records)?;
                    return Err(e);
                }
            };
            let name = run_name(kind, size);
            write_losses(&out.join("losses").join(format!("{name}.csv")), &losses)?;
            checkpoint::save(&out.join("checkpoints").join(&name), &net, cfg, size)?;
            if with_evaluation {
                log(&format!("evaluating {name}"));
                let label = RowLabel { variant: kind.name().into(), m: variant.order(), train_size: size };
                records.extend(evaluate(&setup, Method::Net(&net), cfg, &test_images, &label, true)?);
                flush(&records)?;
            }
        }
    }
    let summaries = flush(&records)?;
    Ok(ExperimentOutput { records, summaries, metrics_csv, summary_csv })
}

/// Evaluates a saved checkpoint on the test set of its own configuration
/// (with `seed` overriding the stored seed when given).
pub fn evaluate_checkpoint(dir: &Path, out: &Path, seed: Option<u64>) -> Result<Vec<MetricsRecord>> {
    let ck = checkpoint::load(dir)?;
    let mut cfg = ck.config;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    create_dir(out)?;
    let setup = ProblemSetup::new(&cfg)?;
    let images = phantoms(&cfg, streams::TEST_IMAGES, cfg.test_size)?;
    let kind = if ck.net.config.variant == Variant::Ordinary { "ordinary" } else { "equivariant" };
    let label = RowLabel { variant: kind.into(), m: ck.net.config.variant.order(), train_size: ck.train_size };
    let records = evaluate(&setup, Method::Net(&ck.net), &cfg, &images, &label, true)?;
    write_metrics_csv(&out.join("evaluation.csv"), &records)?;
    write_summary_csv(&out.join("evaluation_summary.csv"), &summarize(&records, cfg.evaluation.trim))?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub m: usize,
    /// All group elements act exactly on the pixel grid.
    pub exact: bool,
    pub num_params: usize,
    pub ordinary_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub records: Vec<MetricsRecord>,
    pub entries: Vec<SweepEntry>,
}

/// Trains the equivariant variant for each group order on one fixed
/// training set and scores it on an upright validation set.
pub fn sweep_group_order(cfg: &ExperimentConfig, log: &(dyn Fn(&str) + Sync)) -> Result<SweepOutput> {
    cfg.validate()?;
    create_dir(&cfg.out)?;
    cfg.write_resolved(&cfg.out)?;
    let setup = ProblemSetup::new(cfg)?;
    let train_images = phantoms(cfg, streams::TRAIN_IMAGES, cfg.sweep.train_size)?;
    let data = setup.pairs(&train_images, sub_seed(cfg.seed, streams::TRAIN_NOISE))?;
    let validation = phantoms(cfg, streams::VALIDATION_IMAGES, cfg.sweep.validation_size)?;
    let validation_pairs = setup.pairs(&validation, sub_seed(cfg.seed, streams::VALIDATION_NOISE))?;
    let ordinary_params = build_network(&net_config(cfg, Variant::Ordinary, setup.channels))?.num_params();
    let mut records = Vec::new();
    let mut entries = Vec::new();
    for &m in &cfg.sweep.m_values {
        let variant = Variant::Equivariant { m };
        let exact = CyclicGroup::new(m)?.all_on_grid();
        log(&format!("sweep: training m = {m} ({})", if exact { "exact" } else { "approximate action" }));
        let (net, _) = train_one(cfg, &setup, variant, &data, 0x5eed, log)?;
        entries.push(SweepEntry { m, exact, num_params: net.num_params(), ordinary_params });
        let rows: Vec<MetricsRecord> = validation_pairs
            .par_iter()
            .enumerate()
            .map(|(i, pair)| {
                let x = unrolled_forward(&net, &pair.measurement, &setup.net_op)?;
                let (ssim, psnr) = score(&setup, &x, &validation[i])?;
                Ok(MetricsRecord {
                    image_id: i,
                    variant: "equivariant".into(),
                    m,
                    train_size: cfg.sweep.train_size,
                    rotated: false,
                    angle_deg: 0.0,
                    ssim,
                    psnr,
                })
            })
            .collect::<Result<_>>()?;
        records.extend(rows);
        write_metrics_csv(&cfg.out.join("sweep_m.csv"), &records)?;
    }
    let mut text = String::from("m,exact,num_params,ordinary_params\n");
    for e in &entries {
        let _ = writeln!(text, "{},{},{},{}", e.m, e.exact, e.num_params, e.ordinary_params);
    }
    let path = cfg.out.join("sweep_m_params.csv");
    fs::write(&path, text).map_err(|e| BenchError::io(&path, e))?;
    write_summary_csv(&cfg.out.join("sweep_m_summary.csv"), &summarize(&records, cfg.evaluation.trim))?;
    Ok(SweepOutput { records, entries })
}

/// Kernel density estimates of `metric` (`ssim` or `psnr`) for every group
/// of a metrics CSV, as `variant,m,train_size,orientation,x,density` rows.
pub fn plot_data(input: &Path, output: &Path, metric: &str, points: usize) -> Result<()> {
    let records = read_metrics_csv(input)?;
    let pick = match metric {
        "ssim" => |r: &MetricsRecord| r.ssim,
        "psnr" => |r: &MetricsRecord| r.psnr,
        other => return Err(BenchError::Config(format!("unknown metric {other:?} (ssim or psnr)"))),
    };
    let mut text = String::from("variant,m,train_size,orientation,x,density\n");
    for ((variant, m, size, orientation), rows) in group_records(&records) {
        let values: Vec<f64> = rows.iter().map(|r| pick(r)).collect();
        for (x, y) in gaussian_kde(&values, points) {
            let _ = writeln!(text, "{variant},{m},{size},{orientation},{x:.8},{y:.8}");
        }
    }
    fs::write(output, text).map_err(|e| BenchError::io(output, e))
}
