//! Independent oracles shared by the integration tests. Nothing here calls
//! into the code paths it is used to check.

#![allow(dead_code)]

use mpx_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Value of a binary16 pattern from the textbook field formula.
pub fn half_value(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let e = i32::from((bits >> 10) & 0x1F);
    let f = f64::from(bits & 0x03FF);
    match e {
        0 => sign * f * 2f64.powi(-24),
        31 if f == 0.0 => sign * f64::INFINITY,
        31 => f64::NAN,
        _ => sign * (1.0 + f / 1024.0) * 2f64.powi(e - 15),
    }
}

/// Finite non-negative binary16 values, indexed by pattern.
pub fn positive_grid() -> Vec<f64> {
    (0..=0x7BFFu16).map(half_value).collect()
}

/// Nearest binary16 pattern by search over the grid, ties to the even
/// pattern, overflow past the rounding threshold to infinity.
pub fn half_nearest(grid: &[f64], v: f64) -> u16 {
    if v.is_nan() {
        return 0x7E00;
    }
    let sign: u16 = if v.is_sign_negative() { 0x8000 } else { 0 };
    let a = v.abs();
    // Halfway between MAX (65504) and the next grid step (65536).
    if a >= 65520.0 {
        return sign | 0x7C00;
    }
    let hi = grid.partition_point(|&g| g <= a);
    let below = hi - 1;
    if hi == grid.len() {
        return sign | below as u16;
    }
    let (d_lo, d_hi) = (a - grid[below], grid[hi] - a);
    let pick = if d_lo < d_hi {
        below
    } else if d_hi < d_lo {
        hi
    } else if below % 2 == 0 {
        below
    } else {
        hi
    };
    sign | pick as u16
}

/// Textbook triple loop: `x (m x k)` times `w (n x k)` transposed.
pub fn dense_gemm(x: &Tensor, w: &Tensor) -> Tensor {
    let (m, k) = x.shape();
    let n = w.rows();
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        for c in 0..n {
            let mut acc = 0.0;
            for i in 0..k {
                acc += x.get(r, i) * w.get(c, i);
            }
            out[r * n + c] = acc;
        }
    }
    Tensor::new(m, n, out).unwrap()
}

/// Normwise relative error `max|a - b| / max|b|`.
pub fn rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = b.as_slice().iter().fold(0.0f64, |m, y| m.max(y.abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Pairwise dominance over `(snr, cost)`: higher SNR and lower cost are
/// better.
pub fn brute_force_dominated(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .enumerate()
        .map(|(i, &(s, c))| {
            points.iter().enumerate().any(|(j, &(s2, c2))| {
                j != i && s2 >= s && c2 <= c && (s2 > s || c2 < c)
            })
        })
        .collect()
}

/// Seeded uniform tensor in `[lo, hi)`.
pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Seeded tensor whose rows and column blocks have very different ranges.
pub fn heavy_range(rows: usize, cols: usize, block: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let magnitudes: Vec<f64> = (0..rows * cols.div_ceil(block))
        .map(|_| 10f64.powf(rng.random_range(-2.0..1.5)))
        .collect();
    let per_row = cols.div_ceil(block);
    Tensor::from_fn(rows, cols, |r, c| {
        magnitudes[r * per_row + c / block] * rng.random_range(-1.0..1.0)
    })
}
