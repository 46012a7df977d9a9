use equirecon_core::eval::{psnr, ssim};
use equirecon_core::group::Grid;

fn pair(k: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = Vec::with_capacity(n * n);
    let mut v = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            let (rf, cf) = (r as f64, c as f64);
            let a = 0.5 + 0.4 * (0.37 * (k + 1) as f64 * rf + 0.23 * cf).sin();
            u.push(a);
            v.push(0.9 * a + 0.05 + 0.08 * (0.51 * rf - 0.29 * (k + 2) as f64 * cf).cos());
        }
    }
    (u, v)
}

#[test]
fn agrees_with_reference_values() {
    let text = include_str!("fixtures/metrics_reference.txt");
    let mut checked = 0;
    for line in text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let f: Vec<&str> = line.split_whitespace().collect();
        let (k, n): (usize, usize) = (f[0].parse().unwrap(), f[1].parse().unwrap());
        let (want_ssim, want_psnr): (f64, f64) = (f[2].parse().unwrap(), f[3].parse().unwrap());
        let (u, v) = pair(k, n);
        let got_ssim = ssim(&u, &v, Grid::square(n), 1.0).unwrap();
        let got_psnr = psnr(&u, &v, 1.0).unwrap();
        assert!((got_ssim - want_ssim).abs() <= 1e-6, "pair {k}: {got_ssim} vs {want_ssim}");
        assert!((got_psnr - want_psnr).abs() <= 1e-6, "pair {k}: {got_psnr} vs {want_psnr}");
        checked += 1;
    }
    assert_eq!(checked, 10);
}
