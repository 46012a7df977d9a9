//! Stride-1, zero-padded "same" cross-correlation and its adjoints.

use alloc::vec;
use alloc::vec::Vec;

/// Static geometry of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub c_out: usize,
    pub height: usize,
    pub width: usize,
    pub size: usize,
}

impl ConvGeom {
    fn pixels(&self) -> usize {
        self.height * self.width
    }

    fn rows(&self) -> usize {
        self.c_in * self.size * self.size
    }
}

fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (h, w, s) = (g.height, g.width, g.size);
    let half = (s / 2) as isize;
    let n = g.pixels();
    let mut cols = vec![0.0; g.rows() * n];
    for ci in 0..g.c_in {
        let plane = &input[ci * n..(ci + 1) * n];
        for a in 0..s {
            for b in 0..s {
                let row = (ci * s + a) * s + b;
                let dst = &mut cols[row * n..(row + 1) * n];
                let dr = a as isize - half;
                let dc = b as isize - half;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let (c_lo, c_hi) = valid_cols(w, dc);
                    let src_row = &plane[sr as usize * w..(sr as usize + 1) * w];
                    let drow = &mut dst[r * w..(r + 1) * w];
                    for c in c_lo..c_hi {
                        drow[c] = src_row[(c as isize + dc) as usize];
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let (h, w, s) = (g.height, g.width, g.size);
    let half = (s / 2) as isize;
    let n = g.pixels();
    for ci in 0..g.c_in {
        for a in 0..s {
            for b in 0..s {
                let row = (ci * s + a) * s + b;
                let src = &cols[row * n..(row + 1) * n];
                let dr = a as isize - half;
                let dc = b as isize - half;
                for r in 0..h {
                    let sr = r as isize + dr;
                    if sr < 0 || sr >= h as isize {
                        continue;
                    }
                    let (c_lo, c_hi) = valid_cols(w, dc);
                    let base = ci * n + sr as usize * w;
                    for c in c_lo..c_hi {
                        out[base + (c as isize + dc) as usize] += src[r * w + c];
                    }
                }
            }
        }
    }
}

fn valid_cols(w: usize, dc: isize) -> (usize, usize) {
    let lo = if dc < 0 { (-dc) as usize } else { 0 };
    let hi = if dc > 0 { w.saturating_sub(dc as usize) } else { w };
    (lo.min(w), hi)
}

/// `C (m x n) = alpha * A (m x k) * B (k x n) + beta * C`, all row-major,
/// with optional transposition of `A` or `B` via strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover m*k, k*n and m*n elements for the given strides.
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `out[co, p] = sum_{ci, a, b} K[co, ci, a, b] * in[ci, p + (a, b) - s/2] + bias[co]`.
pub fn conv2d_forward(input: &[f64], kernel: &[f64], bias: Option<&[f64]>, g: &ConvGeom) -> Vec<f64> {
    let n = g.pixels();
    let cols = im2col(input, g);
    let mut out = vec![0.0; g.c_out * n];
    if let Some(bias) = bias {
        for (co, b) in bias.iter().enumerate() {
            out[co * n..(co + 1) * n].iter_mut().for_each(|v| *v = *b);
        }
    }
    gemm(g.c_out, g.rows(), n, kernel, false, &cols, false, 1.0, &mut out);
    out
}

/// Gradients `(d input, d kernel, d bias)` of the forward map for upstream `grad_out`.
pub fn conv2d_backward(
    input: &[f64],
    kernel: &[f64],
    grad_out: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = g.pixels();
    let cols = im2col(input, g);
    let mut d_kernel = vec![0.0; g.c_out * g.rows()];
    gemm(g.c_out, n, g.rows(), grad_out, false, &cols, true, 0.0, &mut d_kernel);
    let mut d_cols = vec![0.0; g.rows() * n];
    gemm(g.rows(), g.c_out, n, kernel, true, grad_out, false, 0.0, &mut d_cols);
    let mut d_input = vec![0.0; g.c_in * n];
    col2im_add(&d_cols, g, &mut d_input);
    let d_bias = grad_out.chunks_exact(n).map(|c| c.iter().sum()).collect();
    (d_input, d_kernel, d_bias)
}
