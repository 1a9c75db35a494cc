//! Colour-transfer oracles: a Cramer-rule normal-equation fit and
//! planted-solution samples.

use super::rng;
use facegen_core::color::PixelSample;
use facegen_core::Image;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// The conversion written out from its defining equations.
pub fn ycbcr_by_definition([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    [y, 0.5 + (b - y) * 0.564, 0.5 + (r - y) * 0.713]
}

pub type M3 = [[f64; 3]; 3];

pub fn det(m: &M3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// `A = (Y Xᵀ)(X Xᵀ)⁻¹` via Cramer's rule on the normal equations.
pub fn normal_equation_fit(s: &PixelSample<f64>) -> M3 {
    let mut xx = [[0.0; 3]; 3];
    let mut yx = [[0.0; 3]; 3];
    for (x, y) in s.x.iter().zip(&s.y) {
        for i in 0..3 {
            for j in 0..3 {
                xx[i][j] += x[i] * x[j];
                yx[i][j] += y[i] * x[j];
            }
        }
    }
    let d = det(&xx);
    let mut a = [[0.0; 3]; 3];
    // Row r of A solves xx · a_rᵀ = yx_rᵀ (xx is symmetric).
    for r in 0..3 {
        for c in 0..3 {
            let mut m = xx;
            for k in 0..3 {
                m[k][c] = yx[r][k];
            }
            a[r][c] = det(&m) / d;
        }
    }
    a
}

pub fn planted_matrix(seed: u64) -> M3 {
    let mut r = rng(seed);
    let mut a = [[0.0; 3]; 3];
    for (i, row) in a.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 1.0 } else { 0.0 } + r.random_range(-0.08..0.08);
        }
    }
    a
}

pub fn mul(a: &M3, x: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| a[i][0] * x[0] + a[i][1] * x[1] + a[i][2] * x[2])
}

pub fn mid_image(seed: u64, h: usize, w: usize) -> Image<f64> {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _, _| r.random_range(0.3..0.7))
}

/// Sample with `Y = A₀ X` exactly, straight in YCbCr.
pub fn planted_sample(seed: u64, n: usize, a0: &M3, noise: f64) -> PixelSample<f64> {
    let mut r = rng(seed);
    let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
    let x: Vec<[f64; 3]> = (0..n).map(|_| ycbcr_by_definition([0, 1, 2].map(|_| r.random_range(0.0..1.0)))).collect();
    let y = x
        .iter()
        .map(|&p| {
            let q = mul(a0, p);
            if noise > 0.0 {
                q.map(|v| v + normal.sample(&mut r))
            } else {
                q
            }
        })
        .collect();
    PixelSample {
        x,
        y,
        positions: vec![(0, 0); n],
    }
}

