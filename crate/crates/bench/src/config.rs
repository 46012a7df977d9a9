//! Experiment configuration: an INI file of `key = value` lines under
//! `[section]` headers. Every key is optional; unknown sections or keys are
//! rejected. [`ExperimentConfig::render`] writes the fully resolved
//! configuration, which parses back to the same value.

use std::path::{Path, PathBuf};

use equirecon_core::eval::PhantomKind;
use equirecon_core::nn::AdamConfig;

use crate::error::{BenchError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Problem {
    Ct,
    Mri,
    Denoise,
    Inpaint,
}

impl Problem {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ct => "ct",
            Self::Mri => "mri",
            Self::Denoise => "denoise",
            Self::Inpaint => "inpaint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Ordinary,
    Equivariant,
}

impl VariantKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Ordinary => "ordinary",
            Self::Equivariant => "equivariant",
        }
    }
}

/// Classical reconstructions reported next to the learned ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Baseline {
    /// FBP for CT, `A^T y` otherwise.
    Adjoint,
    /// TV-regularised proximal gradient.
    Tv,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Self::Adjoint => "adjoint",
            Self::Tv => "tv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSection {
    pub width: usize,
    pub iterations: usize,
    pub memory: usize,
    pub filter_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub iterations: usize,
    pub adam: AdamConfig,
    pub log_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtSection {
    pub views: usize,
    /// 0 selects `ceil(n sqrt 2)`.
    pub detectors: usize,
    pub photons: f64,
    pub mu: f64,
    pub eta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MriSection {
    pub fraction: f64,
    pub center_fraction: f64,
    pub spread: f64,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSection {
    pub baselines: Vec<Baseline>,
    pub tv_weight: f64,
    pub tv_iterations: usize,
    pub tv_prox_iterations: usize,
    pub trim: f64,
    pub kde_points: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSection {
    pub m_values: Vec<usize>,
    pub train_size: usize,
    pub validation_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig1Section {
    pub size: usize,
    pub width: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub sigma: f64,
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Section {
    pub size: usize,
    pub keep: f64,
    pub angle: f64,
    pub reg_weight: f64,
    pub iterations: usize,
    pub prox_iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Problem,
    pub variants: Vec<VariantKind>,
    pub m: usize,
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub image_size: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub phantom: PhantomKind,
    pub network: NetworkSection,
    pub training: TrainingSection,
    pub ct: CtSection,
    pub mri: MriSection,
    pub denoise_sigma: f64,
    pub inpaint_keep: f64,
    pub inpaint_sigma: f64,
    pub evaluation: EvaluationSection,
    pub sweep: SweepSection,
    pub fig1: Fig1Section,
    pub fig2: Fig2Section,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: Problem::Ct,
            variants: vec![VariantKind::Ordinary, VariantKind::Equivariant],
            m: 4,
            train_sizes: vec![10, 50],
            test_size: 100,
            image_size: 64,
            seed: 0,
            out: PathBuf::from("out"),
            phantom: PhantomKind::Ellipses { count: (3, 7), intensity: (0.1, 0.5), orientation_spread: 20.0 },
            network: NetworkSection { width: 96, iterations: 8, memory: 5, filter_size: 3 },
            training: TrainingSection { iterations: 20_000, adam: AdamConfig::default(), log_every: 100 },
            ct: CtSection { views: 10, detectors: 0, photons: 1e4, mu: 0.02, eta: 1e-8 },
            mri: MriSection { fraction: 0.2, center_fraction: 0.04, spread: 1.0 / 6.0, sigma: 0.01 },
            denoise_sigma: 0.1,
            inpaint_keep: 0.5,
            inpaint_sigma: 0.0,
            evaluation: EvaluationSection {
                baselines: vec![Baseline::Adjoint],
                tv_weight: 0.05,
                tv_iterations: 100,
                tv_prox_iterations: 50,
                trim: 0.05,
                kde_points: 200,
            },
            sweep: SweepSection { m_values: vec![1, 2, 3, 4, 6, 8], train_size: 10, validation_size: 20 },
            fig1: Fig1Section { size: 32, width: 16, iterations: 8000, learning_rate: 1e-2, sigma: 0.1, period: 6.0 },
            fig2: Fig2Section { size: 64, keep: 0.5, angle: 90.0, reg_weight: 0.1, iterations: 500, prox_iterations: 200 },
        }
    }
}

fn bad(section: &str, key: &str, value: &str, what: &str) -> BenchError {
    BenchError::Config(format!("[{section}] {key} = {value:?}: expected {what}"))
}

fn parse_num<T: std::str::FromStr>(s: &str, k: &str, v: &str, what: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad(s, k, v, what))
}

fn parse_list<T: std::str::FromStr>(s: &str, k: &str, v: &str, what: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| bad(s, k, v, what)))
        .collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let ini = ini::Ini::load_from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        for (section, props) in ini.iter() {
            for (key, value) in props.iter() {
                match section {
                    Some(s) => cfg.set(s, key, value)?,
                    None => {
                        return Err(BenchError::Config(format!("key {key:?} appears before any section")))
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn set(&mut self, s: &str, k: &str, v: &str) -> Result<()> {
        let int = |what| -> Result<usize> { parse_num(s, k, v, what) };
        let real = || -> Result<f64> { parse_num(s, k, v, "a number") };
        match (s, k) {
            ("experiment", "problem") => {
                self.problem = match v.trim() {
                    "ct" => Problem::Ct,
                    "mri" => Problem::Mri,
                    "denoise" => Problem::Denoise,
                    "inpaint" => Problem::Inpaint,
                    _ => return Err(bad(s, k, v, "ct, mri, denoise or inpaint")),
                }
            }
            ("experiment", "variants") => {
                self.variants = v
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| match t {
                        "ordinary" => Ok(VariantKind::Ordinary),
                        "equivariant" => Ok(VariantKind::Equivariant),
                        _ => Err(bad(s, k, v, "a list of ordinary/equivariant")),
                    })
                    .collect::<Result<_>>()?
            }
            ("experiment", "m") => self.m = int("a positive integer")?,
            ("experiment", "train_sizes") => self.train_sizes = parse_list(s, k, v, "a list of sizes")?,
            ("experiment", "test_size") => self.test_size = int("an integer")?,
            ("experiment", "image_size") => self.image_size = int("an integer")?,
            ("experiment", "seed") => self.seed = parse_num(s, k, v, "an unsigned integer")?,
            ("experiment", "out") => self.out = PathBuf::from(v.trim()),
            ("phantom", "kind") => {
                self.phantom = match v.trim() {
                    "ellipses" => Self::default().phantom,
                    "blobs" => PhantomKind::SmoothBlobs { count: 6, bandwidth: 4.0 },
                    _ => return Err(bad(s, k, v, "ellipses or blobs")),
                }
            }
            ("phantom", key) => self.set_phantom(s, key, v)?,
            ("network", "width") => self.network.width = int("an integer")?,
            ("network", "iterations") => self.network.iterations = int("an integer")?,
            ("network", "memory") => self.network.memory = int("an integer")?,
            ("network", "filter_size") => self.network.filter_size = int("an odd integer")?,
            ("training", "iterations") => self.training.iterations = int("an integer")?,
            ("training", "learning_rate") => self.training.adam.lr = real()?,
            ("training", "beta1") => self.training.adam.beta1 = real()?,
            ("training", "beta2") => self.training.adam.beta2 = real()?,
            ("training", "epsilon") => self.training.adam.eps = real()?,
            ("training", "log_every") => self.training.log_every = int("an integer")?,
            ("ct", "views") => self.ct.views = int("an integer")?,
            ("ct", "detectors") => self.ct.detectors = int("an integer")?,
            ("ct", "photons") => self.ct.photons = real()?,
            ("ct", "mu") => self.ct.mu = real()?,
            ("ct", "eta") => self.ct.eta = real()?,
            ("mri", "fraction") => self.mri.fraction = real()?,
            ("mri", "center_fraction") => self.mri.center_fraction = real()?,
            ("mri", "spread") => self.mri.spread = real()?,
            ("mri", "sigma") => self.mri.sigma = real()?,
            ("denoise", "sigma") => self.denoise_sigma = real()?,
            ("inpaint", "keep") => self.inpaint_keep = real()?,
            ("inpaint", "sigma") => self.inpaint_sigma = real()?,
            ("evaluation", "baselines") => {
                self.evaluation.baselines = v
                    .split(',')
                    .map(str::trim)
                    .filter(|t| !t.is_empty())
                    .map(|t| match t {
                        "adjoint" => Ok(Baseline::Adjoint),
                        "tv" => Ok(Baseline::Tv),
                        _ => Err(bad(s, k, v, "a list of adjoint/tv")),
                    })
                    .collect::<Result<_>>()?
            }
            ("evaluation", "tv_weight") => self.evaluation.tv_weight = real()?,
            ("evaluation", "tv_iterations") => self.evaluation.tv_iterations = int("an integer")?,
            ("evaluation", "tv_prox_iterations") => self.evaluation.tv_prox_iterations = int("an integer")?,
            ("evaluation", "trim") => self.evaluation.trim = real()?,
            ("evaluation", "kde_points") => self.evaluation.kde_points = int("an integer")?,
            ("sweep", "m_values") => self.sweep.m_values = parse_list(s, k, v, "a list of group orders")?,
            ("sweep", "train_size") => self.sweep.train_size = int("an integer")?,
            ("sweep", "validation_size") => self.sweep.validation_size = int("an integer")?,
            ("fig1", "size") => self.fig1.size = int("an integer")?,
            ("fig1", "width") => self.fig1.width = int("an integer")?,
            ("fig1", "iterations") => self.fig1.iterations = int("an integer")?,
            ("fig1", "learning_rate") => self.fig1.learning_rate = real()?,
            ("fig1", "sigma") => self.fig1.sigma = real()?,
            ("fig1", "period") => self.fig1.period = real()?,
            ("fig2", "size") => self.fig2.size = int("an integer")?,
            ("fig2", "keep") => self.fig2.keep = real()?,
            ("fig2", "angle") => self.fig2.angle = real()?,
            ("fig2", "reg_weight") => self.fig2.reg_weight = real()?,
            ("fig2", "iterations") => self.fig2.iterations = int("an integer")?,
            ("fig2", "prox_iterations") => self.fig2.prox_iterations = int("an integer")?,
            _ => return Err(BenchError::Config(format!("unknown key [{s}] {k}"))),
        }
        Ok(())
    }

    fn set_phantom(&mut self, s: &str, k: &str, v: &str) -> Result<()> {
        let real = || -> Result<f64> { parse_num(s, k, v, "a number") };
        match (&mut self.phantom, k) {
            (PhantomKind::Ellipses { count, .. }, "count_min") => count.0 = parse_num(s, k, v, "an integer")?,
            (PhantomKind::Ellipses { count, .. }, "count_max") => count.1 = parse_num(s, k, v, "an integer")?,
            (PhantomKind::Ellipses { intensity, .. }, "intensity_min") => intensity.0 = real()?,
            (PhantomKind::Ellipses { intensity, .. }, "intensity_max") => intensity.1 = real()?,
            (PhantomKind::Ellipses { orientation_spread, .. }, "orientation_spread") => {
                *orientation_spread = real()?
            }
            (PhantomKind::SmoothBlobs { count, .. }, "blobs") => *count = parse_num(s, k, v, "an integer")?,
            (PhantomKind::SmoothBlobs { bandwidth, .. }, "bandwidth") => *bandwidth = real()?,
            _ => {
                return Err(BenchError::Config(format!(
                    "unknown key [phantom] {k} (for this phantom kind; set `kind` first)"
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(BenchError::Config(m.into()));
        if self.variants.is_empty() {
            return fail("at least one variant is required");
        }
        if self.m == 0 || self.sweep.m_values.iter().any(|m| *m == 0) {
            return fail("group orders must be positive");
        }
        if self.train_sizes.is_empty() || self.train_sizes.iter().any(|n| *n == 0) {
            return fail("training-set sizes must be positive");
        }
        if self.image_size < 11 {
            return fail("image_size must be at least 11 (SSIM window)");
        }
        if self.network.filter_size % 2 == 0 || self.network.width == 0 {
            return fail("network needs a positive width and an odd filter size");
        }
        if self.training.iterations == 0 || self.training.log_every == 0 {
            return fail("training iterations and log_every must be positive");
        }
        let a = &self.training.adam;
        if !(a.lr > 0.0) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return fail("invalid Adam hyperparameters");
        }
        if self.ct.views == 0 || !(self.ct.photons > 0.0) || !(self.ct.mu > 0.0) || !(self.ct.eta > 0.0) {
            return fail("invalid CT geometry or dose");
        }
        let probability = |p: f64| p > 0.0 && p <= 1.0;
        if !probability(self.mri.fraction) || !probability(self.inpaint_keep) || !probability(self.fig2.keep) {
            return fail("sampling fractions must lie in (0, 1]");
        }
        if [self.mri.sigma, self.denoise_sigma, self.inpaint_sigma, self.fig1.sigma].iter().any(|s| !(*s >= 0.0)) {
            return fail("noise levels must be non-negative");
        }
        if !(0.0..0.5).contains(&self.evaluation.trim) {
            return fail("trim fraction must lie in [0, 0.5)");
        }
        if self.sweep.train_size == 0 {
            return fail("sweep train_size must be positive");
        }
        if self.fig1.size < 11 || self.fig1.width == 0 || !(self.fig1.learning_rate > 0.0) || !(self.fig1.period > 0.0) {
            return fail("invalid fig1 settings");
        }
        if self.fig2.size < 4 || !(self.fig2.reg_weight >= 0.0) {
            return fail("invalid fig2 settings");
        }
        Ok(())
    }

    /// The resolved configuration as INI text, in a fixed key order.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in entries {
                out.push_str(&format!("{k} = {v}\n"));
            }
            out.push('\n');
        };
        let names = |v: &[VariantKind]| v.iter().map(|x| x.name()).collect::<Vec<_>>().join(", ");
        section(
            "experiment",
            vec![
                ("problem", self.problem.name().into()),
                ("variants", names(&self.variants)),
                ("m", self.m.to_string()),
                ("train_sizes", join(&self.train_sizes)),
                ("test_size", self.test_size.to_string()),
                ("image_size", self.image_size.to_string()),
                ("seed", self.seed.to_string()),
                ("out", self.out.display().to_string()),
            ],
        );
        let phantom = match self.phantom {
            PhantomKind::Ellipses { count, intensity, orientation_spread } => vec![
                ("kind", "ellipses".into()),
                ("count_min", count.0.to_string()),
                ("count_max", count.1.to_string()),
                ("intensity_min", intensity.0.to_string()),
                ("intensity_max", intensity.1.to_string()),
                ("orientation_spread", orientation_spread.to_string()),
            ],
            PhantomKind::SmoothBlobs { count, bandwidth } => vec![
                ("kind", "blobs".into()),
                ("blobs", count.to_string()),
                ("bandwidth", bandwidth.to_string()),
            ],
        };
        section("phantom", phantom);
        let n = &self.network;
        section(
            "network",
            vec![
                ("width", n.width.to_string()),
                ("iterations", n.iterations.to_string()),
                ("memory", n.memory.to_string()),
                ("filter_size", n.filter_size.to_string()),
            ],
        );
        let t = &self.training;
        section(
            "training",
            vec![
                ("iterations", t.iterations.to_string()),
                ("learning_rate", t.adam.lr.to_string()),
                ("beta1", t.adam.beta1.to_string()),
                ("beta2", t.adam.beta2.to_string()),
                ("epsilon", t.adam.eps.to_string()),
                ("log_every", t.log_every.to_string()),
            ],
        );
        let c = &self.ct;
        section(
            "ct",
            vec![
                ("views", c.views.to_string()),
                ("detectors", c.detectors.to_string()),
                ("photons", c.photons.to_string()),
                ("mu", c.mu.to_string()),
                ("eta", c.eta.to_string()),
            ],
        );
        let r = &self.mri;
        section(
            "mri",
            vec![
                ("fraction", r.fraction.to_string()),
                ("center_fraction", r.center_fraction.to_string()),
                ("spread", r.spread.to_string()),
                ("sigma", r.sigma.to_string()),
            ],
        );
        section("denoise", vec![("sigma", self.denoise_sigma.to_string())]);
        section(
            "inpaint",
            vec![("keep", self.inpaint_keep.to_string()), ("sigma", self.inpaint_sigma.to_string())],
        );
        let e = &self.evaluation;
        section(
            "evaluation",
            vec![
                ("baselines", e.baselines.iter().map(|b| b.name()).collect::<Vec<_>>().join(", ")),
                ("tv_weight", e.tv_weight.to_string()),
                ("tv_iterations", e.tv_iterations.to_string()),
                ("tv_prox_iterations", e.tv_prox_iterations.to_string()),
                ("trim", e.trim.to_string()),
                ("kde_points", e.kde_points.to_string()),
            ],
        );
        let w = &self.sweep;
        section(
            "sweep",
            vec![
                ("m_values", join(&w.m_values)),
                ("train_size", w.train_size.to_string()),
                ("validation_size", w.validation_size.to_string()),
            ],
        );
        let f = &self.fig1;
        section(
            "fig1",
            vec![
                ("size", f.size.to_string()),
                ("width", f.width.to_string()),
                ("iterations", f.iterations.to_string()),
                ("learning_rate", f.learning_rate.to_string()),
                ("sigma", f.sigma.to_string()),
                ("period", f.period.to_string()),
            ],
        );
        let g = &self.fig2;
        section(
            "fig2",
            vec![
                ("size", g.size.to_string()),
                ("keep", g.keep.to_string()),
                ("angle", g.angle.to_string()),
                ("reg_weight", g.reg_weight.to_string()),
                ("iterations", g.iterations.to_string()),
                ("prox_iterations", g.prox_iterations.to_string()),
            ],
        );
        out
    }

    pub fn write_resolved(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("resolved_config.ini");
        std::fs::write(&path, self.render()).map_err(|e| BenchError::io(&path, e))?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(ExperimentConfig::parse("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn render_round_trips() {
        let text = "[experiment]\nproblem = mri\nvariants = equivariant\ntrain_sizes = 3, 7\nseed = 11\n\
                    [phantom]\nkind = blobs\nbandwidth = 2.5\n[training]\nlearning_rate = 0.003\n\
                    [evaluation]\nbaselines = adjoint, tv\n[sweep]\nm_values = 1, 4\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.problem, Problem::Mri);
        assert_eq!(cfg.train_sizes, vec![3, 7]);
        assert_eq!(cfg.phantom, PhantomKind::SmoothBlobs { count: 6, bandwidth: 2.5 });
        assert_eq!(ExperimentConfig::parse(&cfg.render()).unwrap(), cfg);
        let d = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::parse(&d.render()).unwrap(), d);
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "[experiment]\nfoo = 1\n",
            "[nowhere]\nx = 1\n",
            "[experiment]\nproblem = pet\n",
            "[experiment]\ntrain_sizes = 0\n",
            "[experiment]\nm = two\n",
            "[network]\nfilter_size = 4\n",
            "[phantom]\nbandwidth = 3\n",
            "[evaluation]\ntrim = 0.6\n",
            "seed = 3\n",
        ] {
            let err = ExperimentConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }
}
