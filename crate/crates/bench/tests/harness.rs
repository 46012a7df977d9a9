use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use equirecon::config::{ExperimentConfig, VariantKind};
use equirecon::experiment::{
    read_metrics_csv, run_experiment, sweep_group_order, test_angle, CSV_HEADER, SUMMARY_HEADER,
};
use equirecon_core::eval::trimmed;

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("equirecon-harness-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    dir
}

const TINY: &str = "[experiment]\nimage_size = 16\ntrain_sizes = 2, 3\ntest_size = 4\n\
[network]\nwidth = 4\niterations = 2\nmemory = 2\n[training]\niterations = 4\nlog_every = 2\n\
learning_rate = 0.001\n[ct]\nviews = 4\n[sweep]\nm_values = 1, 2, 4\ntrain_size = 2\nvalidation_size = 3\n";

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(TINY).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

fn quiet(_: &str) {}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn experiment_is_byte_deterministic() {
    let (a, b) = (scratch("det-a"), scratch("det-b"));
    let mut cfg_a = tiny(&a);
    let mut cfg_b = tiny(&b);
    // the output path is part of the resolved config; keep it identical
    cfg_a.out = a.clone();
    cfg_b.out = b.clone();
    run_experiment(&cfg_a, &quiet).unwrap();
    run_experiment(&cfg_b, &quiet).unwrap();
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), fb.len());
    for ((pa, da), (pb, db)) in fa.iter().zip(&fb) {
        assert_eq!(pa, pb);
        if pa.extension().is_some_and(|e| e == "ini") {
            continue;
        }
        assert!(da == db, "{} differs between reruns", pa.display());
    }
    assert!(fa.iter().any(|(p, _)| p.ends_with("checkpoints/equivariant-n3/manifest.txt")));
    let mut other = tiny(&scratch("det-c"));
    other.seed = 1;
    run_experiment(&other, &quiet).unwrap();
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(other.out.join("metrics.csv")).unwrap());
    for d in [a, b, other.out] {
        fs::remove_dir_all(d).unwrap();
    }
}

#[test]
fn metrics_schema_and_summary_recomputation() {
    let dir = scratch("summary");
    let cfg = tiny(&dir);
    let out = run_experiment(&cfg, &quiet).unwrap();
    let text = fs::read_to_string(&out.metrics_csv).unwrap();
    assert_eq!(text.lines().next(), Some(CSV_HEADER));
    let rows = read_metrics_csv(&out.metrics_csv).unwrap();
    // baseline + 2 variants x 2 sizes, each upright and rotated
    assert_eq!(rows.len(), (1 + 4) * 2 * cfg.test_size);
    for r in &rows {
        assert!((-1.0..=1.0).contains(&r.ssim) && r.psnr.is_finite());
        if r.rotated {
            assert!((0.0..360.0).contains(&r.angle_deg));
            assert!((r.angle_deg - test_angle(cfg.seed, r.image_id)).abs() < 1e-6);
        } else {
            assert_eq!(r.angle_deg, 0.0);
        }
    }
    let summary = fs::read_to_string(&out.summary_csv).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some(SUMMARY_HEADER));
    let mut groups = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let mine: Vec<&equirecon::experiment::MetricsRecord> = rows
            .iter()
            .filter(|r| r.variant == f[0] && r.m.to_string() == f[1] && r.train_size.to_string() == f[2] && r.orientation() == f[3])
            .collect();
        assert!(!mine.is_empty());
        // independent recomputation: sort, drop floor(5% n) from each end
        for (offset, pick) in [(5usize, 0usize), (11, 1)] {
            let mut v: Vec<f64> = mine.iter().map(|r| if pick == 0 { r.ssim } else { r.psnr }).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let cut = (0.05 * v.len() as f64).floor() as usize;
            let kept = &v[cut..v.len() - cut];
            let mean = kept.iter().sum::<f64>() / kept.len() as f64;
            let reported: f64 = f[offset].parse().unwrap();
            assert!((reported - mean).abs() < 1e-6, "{line}");
            assert_eq!(f[4].parse::<usize>().unwrap(), kept.len());
            let median: f64 = f[offset + 3].parse().unwrap();
            assert!((median - trimmed(&v, 0.05).median).abs() < 1e-6);
        }
        groups += 1;
    }
    assert_eq!(groups, 10);
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn empty_test_set_gives_header_only_csv() {
    let dir = scratch("empty");
    let mut cfg = tiny(&dir);
    cfg.test_size = 0;
    cfg.train_sizes = vec![1];
    cfg.variants = vec![VariantKind::Equivariant];
    run_experiment(&cfg, &quiet).unwrap();
    assert_eq!(fs::read_to_string(dir.join("metrics.csv")).unwrap(), format!("{CSV_HEADER}\n"));
    assert_eq!(fs::read_to_string(dir.join("summary.csv")).unwrap(), format!("{SUMMARY_HEADER}\n"));
    assert!(dir.join("resolved_config.ini").exists());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn sweep_bookkeeping() {
    let dir = scratch("sweep");
    let cfg = tiny(&dir);
    let out = sweep_group_order(&cfg, &quiet).unwrap();
    assert_eq!(out.records.len(), cfg.sweep.m_values.len() * cfg.sweep.validation_size);
    let written = read_metrics_csv(&dir.join("sweep_m.csv")).unwrap();
    let lines = |v: &[equirecon::experiment::MetricsRecord]| v.iter().map(|r| r.csv_line()).collect::<Vec<_>>();
    assert_eq!(lines(&written), lines(&out.records));
    let m1 = &out.entries[0];
    assert_eq!(m1.m, 1);
    assert_eq!(m1.num_params, m1.ordinary_params);
    assert!(out.entries.iter().all(|e| e.exact));
    assert!(out.entries[2].num_params < m1.num_params);
    let mut odd = tiny(&scratch("sweep-odd"));
    odd.sweep.m_values = vec![3];
    odd.network.width = 6;
    let flagged = sweep_group_order(&odd, &quiet).unwrap();
    assert!(!flagged.entries[0].exact);
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_dir_all(&odd.out).unwrap();
}

fn cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_equirecon")).args(args).output().unwrap()
}

#[test]
fn cli_exit_codes_and_partial_flush() {
    let dir = scratch("cli");
    fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.ini");
    fs::write(&bad, "[experiment]\nproblem = pet\n").unwrap();
    let out = cli(&["--config", bad.to_str().unwrap(), "experiment"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(cli(&["no-such-command"]).status.code(), Some(2));

    // a huge learning rate drives the weights to overflow
    let boom = dir.join("boom.ini");
    fs::write(&boom, TINY.replace("learning_rate = 0.001", "learning_rate = 1e300")).unwrap();
    let run_dir = dir.join("boom");
    let out = cli(&["--config", boom.to_str().unwrap(), "--out", run_dir.to_str().unwrap(), "experiment"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics_csv(&run_dir.join("metrics.csv")).unwrap();
    assert!(!rows.is_empty() && rows.iter().all(|r| r.variant == "fbp"));
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn cli_basis_train_reconstruct_evaluate_plotdata() {
    let dir = scratch("cli-flow");
    fs::create_dir_all(&dir).unwrap();
    let basis = dir.join("basis.etn");
    let out = cli(&["basis", "--m", "4", "--rep-in", "trivial", "--rep-out", "regular", "--output", basis.to_str().unwrap()]);
    assert!(out.status.success());
    let (shape, data) = equirecon::tensor_io::read_tensor(&basis).unwrap();
    assert_eq!(shape, vec![9, 4, 1, 3, 3]);
    assert_eq!(data.len(), 9 * 36);

    let cfg_path = dir.join("tiny.ini");
    fs::write(&cfg_path, TINY.replace("train_sizes = 2, 3", "train_sizes = 2")).unwrap();
    let run = dir.join("run");
    let base = ["--config", cfg_path.to_str().unwrap(), "--out", run.to_str().unwrap(), "--threads", "2"];
    assert!(cli(&[&base[..], &["train"]].concat()).status.success());
    let ckpt = run.join("checkpoints").join("equivariant-n2");
    assert!(ckpt.join("manifest.txt").exists());

    let pgm = dir.join("in.pgm");
    let img: Vec<f64> = (0..256).map(|i| ((i % 16) as f64 / 15.0) * 0.5).collect();
    equirecon::tensor_io::write_pgm(&pgm, 16, 16, &img).unwrap();
    let recon = dir.join("out.etn");
    let out = cli(&["reconstruct", "--checkpoint", ckpt.to_str().unwrap(), "--input", pgm.to_str().unwrap(), "--output", recon.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(equirecon::tensor_io::read_tensor(&recon).unwrap().0, vec![1, 16, 16]);

    let eval_dir = dir.join("eval");
    let out = cli(&["--out", eval_dir.to_str().unwrap(), "evaluate", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_metrics_csv(&eval_dir.join("evaluation.csv")).unwrap();
    assert_eq!(rows.len(), 8);

    let kde = dir.join("kde.csv");
    let out = cli(&["plotdata", "--input", eval_dir.join("evaluation.csv").to_str().unwrap(), "--output", kde.to_str().unwrap(), "--points", "25"]);
    assert!(out.status.success());
    let text = fs::read_to_string(&kde).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 25);
    fs::remove_dir_all(&dir).unwrap();
}
