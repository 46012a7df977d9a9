use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use equirecon::config::ExperimentConfig;
use equirecon::error::{BenchError, Result};
use equirecon::{demos, experiment, tensor_io};
use equirecon_core::group::{CyclicGroup, Representation};
use equirecon_core::steerable::{kernel_basis_irrep, kernel_basis_nullspace, KernelSpec};

#[derive(Parser)]
#[command(name = "equirecon", version, about = "Rotation-equivariant learned reconstruction experiments")]
struct Cli {
    /// Experiment config (INI); defaults are used for anything not set.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured variant and training-set size; save checkpoints.
    Train,
    /// Reconstruct one image or measurement with a trained checkpoint.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `.pgm` ground-truth image (measured first) or `.etn` measurement.
        #[arg(long)]
        input: PathBuf,
        /// `.etn` or `.pgm` output.
        #[arg(long)]
        output: PathBuf,
    },
    /// Evaluate a checkpoint on the upright and rotated test sets.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train, evaluate and summarise all variants and training-set sizes.
    Experiment,
    /// Train the equivariant variant for each group order in `[sweep] m_values`.
    SweepM,
    /// Reproduce one of the illustrative figures.
    Demo {
        #[arg(value_enum)]
        which: Demo,
    },
    /// Write a steerable kernel basis as a `(count, d_out, d_in, s, s)` tensor.
    Basis {
        #[arg(long, default_value_t = 4)]
        m: usize,
        /// `trivial`, `regular` or `irrepK`.
        #[arg(long, default_value = "trivial")]
        rep_in: String,
        #[arg(long, default_value = "regular")]
        rep_out: String,
        #[arg(long, default_value_t = 3)]
        size: usize,
        #[arg(long, value_enum, default_value_t = BasisMethod::Nullspace)]
        method: BasisMethod,
        #[arg(long)]
        output: PathBuf,
    },
    /// Kernel density estimates of a metric for every group of a metrics CSV.
    Plotdata {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "ssim")]
        metric: String,
        /// Defaults to `[evaluation] kde_points`.
        #[arg(long)]
        points: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Demo {
    Fig1,
    Fig2,
}

#[derive(Clone, Copy, ValueEnum)]
enum BasisMethod {
    Nullspace,
    Irrep,
}

fn parse_rep(name: &str, group: CyclicGroup) -> Result<Representation> {
    match name {
        "trivial" => Ok(Representation::trivial(group)),
        "regular" => Ok(Representation::regular(group)),
        _ => {
            let freq = name
                .strip_prefix("irrep")
                .and_then(|k| k.parse().ok())
                .ok_or_else(|| BenchError::Config(format!("unknown representation {name:?}")))?;
            Ok(Representation::irrep(group, freq)?)
        }
    }
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}


fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| BenchError::Config(format!("cannot start {n} threads: {e}")))?;
    }
    // every command validates the config, even those that use little of it
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Train => experiment::train_all(&cfg, &log),
        Command::Experiment => {
            let result = experiment::run_experiment(&cfg, &log)?;
            println!("{}", result.metrics_csv.display());
            println!("{}", result.summary_csv.display());
            Ok(())
        }
        Command::SweepM => {
            let result = experiment::sweep_group_order(&cfg, &log)?;
            for e in &result.entries {
                let tier = if e.exact { "exact" } else { "approximate" };
                println!("m={} {tier} params={} (ordinary {})", e.m, e.num_params, e.ordinary_params);
            }
            Ok(())
        }
        Command::Evaluate { checkpoint } => {
            let out = cfg.out;
            let rows = experiment::evaluate_checkpoint(checkpoint, &out, cli.seed)?;
            println!("{} rows written to {}", rows.len(), out.join("evaluation.csv").display());
            Ok(())
        }
        Command::Reconstruct { checkpoint, input, output } => {
            demos::reconstruct_file(checkpoint, input, output, cli.seed)
        }
        Command::Demo { which } => {
            std::fs::create_dir_all(&cfg.out).map_err(|e| BenchError::io(&cfg.out, e))?;
            cfg.write_resolved(&cfg.out)?;
            match which {
                Demo::Fig1 => {
                    for r in demos::demo_fig1(&cfg, Some(&cfg.out), &log)? {
                        println!(
                            "{}: noisy {:.3} dB, train {:.6} dB, rotated {:.6} dB",
                            r.variant, r.noisy_psnr, r.train_psnr, r.rotated_psnr
                        );
                    }
                }
                Demo::Fig2 => {
                    for r in demos::demo_fig2(&cfg, Some(&cfg.out), &log)? {
                        println!("{} ({} deg): discrepancy {:.3e}", r.case, r.angle_deg, r.discrepancy);
                    }
                }
            }
            Ok(())
        }
        Command::Basis { m, rep_in, rep_out, size, method, output } => {
            let group = CyclicGroup::new(*m)?;
            let spec = KernelSpec::new(parse_rep(rep_in, group)?, parse_rep(rep_out, group)?, *size)?;
            let basis = match method {
                BasisMethod::Nullspace => kernel_basis_nullspace(&spec)?,
                BasisMethod::Irrep => kernel_basis_irrep(&spec)?,
            };
            let shape = [basis.count, spec.rep_out.dim(), spec.rep_in.dim(), *size, *size];
            tensor_io::write_tensor(output, &shape, &basis.elements)?;
            println!("{} basis elements{}", basis.count, if spec.is_exact() { "" } else { " (interpolated action)" });
            Ok(())
        }
        Command::Plotdata { input, output, metric, points } => {
            let points = match points {
                Some(p) => *p,
                None => cfg.evaluation.kde_points,
            };
            experiment::plot_data(input, output, metric, points)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

