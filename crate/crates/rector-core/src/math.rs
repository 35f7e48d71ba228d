//! Small dense linear-algebra and scalar-math helpers.
//!
//! Matrices are row-major `Vec<f64>` slices with explicit dimensions.
//! Scalar transcendentals go through `libm` so the crate stays
//! `no_std`-compatible.

use alloc::vec;
use alloc::vec::Vec;

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn log2(x: f64) -> f64 {
    libm::log2(x)
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}

pub fn round(x: f64) -> f64 {
    libm::round(x)
}

pub fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn l2_norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

/// out = M x, with M a rows x cols row-major matrix.
pub fn mat_vec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    let mut out = vec![0.0; rows];
    for r in 0..rows {
        let row = &m[r * cols..(r + 1) * cols];
        out[r] = dot(row, x);
    }
    out
}

/// out += M^T x, with M a rows x cols row-major matrix and x of length rows.
pub fn add_mat_t_vec(out: &mut [f64], m: &[f64], rows: usize, cols: usize, x: &[f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), rows);
    debug_assert_eq!(out.len(), cols);
    for r in 0..rows {
        let xr = x[r];
        if xr == 0.0 {
            continue;
        }
        let row = &m[r * cols..(r + 1) * cols];
        for c in 0..cols {
            out[c] += row[c] * xr;
        }
    }
}

/// out += a b^T, with out a len(a) x len(b) row-major matrix.
pub fn add_outer(out: &mut [f64], a: &[f64], b: &[f64]) {
    debug_assert_eq!(out.len(), a.len() * b.len());
    let cols = b.len();
    for r in 0..a.len() {
        let ar = a[r];
        if ar == 0.0 {
            continue;
        }
        let row = &mut out[r * cols..(r + 1) * cols];
        for c in 0..cols {
            row[c] += ar * b[c];
        }
    }
}

pub fn add_scaled(out: &mut [f64], v: &[f64], scale: f64) {
    debug_assert_eq!(out.len(), v.len());
    for i in 0..out.len() {
        out[i] += v[i] * scale;
    }
}

/// Numerically conventional softmax (max-shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| exp(l - max)).collect();
    let sum: f64 = out.iter().sum();
    for w in out.iter_mut() {
        *w /= sum;
    }
    out
}

/// Least-squares slope of y over x.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx: f64 = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my: f64 = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}
