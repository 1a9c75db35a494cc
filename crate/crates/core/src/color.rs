//! Linear colour transfer in full-range BT.601 YCbCr.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::Image;

pub const KR: f64 = 0.299;
pub const KG: f64 = 0.587;
pub const KB: f64 = 0.114;
pub const CB_SCALE: f64 = 0.564;
pub const CR_SCALE: f64 = 0.713;

/// Fewest sampled pixels accepted by [`fit_color_transform`].
pub const MIN_SAMPLES: usize = 9;

pub fn rgb_to_ycbcr_pixel<T: Real>([r, g, b]: [T; 3]) -> [T; 3] {
    let half = T::lit(0.5);
    let y = T::lit(KR) * r + T::lit(KG) * g + T::lit(KB) * b;
    [y, half + (b - y) * T::lit(CB_SCALE), half + (r - y) * T::lit(CR_SCALE)]
}

/// Algebraic inverse of [`rgb_to_ycbcr_pixel`]; no clamping.
pub fn ycbcr_to_rgb_pixel<T: Real>([y, cb, cr]: [T; 3]) -> [T; 3] {
    let half = T::lit(0.5);
    let b = y + (cb - half) / T::lit(CB_SCALE);
    let r = y + (cr - half) / T::lit(CR_SCALE);
    let g = (y - T::lit(KR) * r - T::lit(KB) * b) / T::lit(KG);
    [r, g, b]
}

pub fn rgb_to_ycbcr<T: Real>(image: &Image<T>) -> Image<T> {
    map_pixels(image, rgb_to_ycbcr_pixel)
}

/// Converts back to RGB and clamps to `[0, 1]`, returning how many values
/// were clamped.
pub fn ycbcr_to_rgb<T: Real>(image: &Image<T>) -> (Image<T>, usize) {
    let raw = map_pixels(image, ycbcr_to_rgb_pixel);
    let clamped = raw
        .as_slice()
        .iter()
        .filter(|&&v| v < T::zero() || v > T::one())
        .count();
    (raw.clamp01(), clamped)
}

fn map_pixels<T: Real>(image: &Image<T>, f: impl Fn([T; 3]) -> [T; 3]) -> Image<T> {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            out.set_pixel(y, x, f(image.pixel(y, x)));
        }
    }
    out
}

/// Corresponding YCbCr pixels: columns of `X` (generated) and `Y` (reference).
#[derive(Debug, Clone, PartialEq)]
pub struct PixelSample<T> {
    pub x: Vec<[T; 3]>,
    pub y: Vec<[T; 3]>,
    /// `(row, col)` of each sampled pair.
    pub positions: Vec<(usize, usize)>,
}

impl<T> PixelSample<T> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// `(top, left, height, width)` of the centred window covering `region` of each
/// dimension.
pub fn central_window(height: usize, width: usize, region: f64) -> (usize, usize, usize, usize) {
    let side = |n: usize| ((region * n as f64).round() as usize).clamp(1, n);
    let (wh, ww) = (side(height), side(width));
    ((height - wh) / 2, (width - ww) / 2, wh, ww)
}

/// Draws `n` distinct positions from the central window using a ChaCha8 stream
/// seeded with `seed`.
pub fn sample_pixel_pairs<T: Real>(
    target: &Image<T>,
    reference: &Image<T>,
    n: usize,
    region: f64,
    seed: u64,
) -> Result<PixelSample<T>> {
    target.check_same_dims(reference)?;
    if !(region > 0.0 && region <= 1.0) {
        return Err(Error::InvalidArgument(format!("region must lie in (0, 1], got {region}")));
    }
    let (top, left, wh, ww) = central_window(target.height(), target.width(), region);
    if n > wh * ww {
        return Err(Error::InvalidArgument(format!(
            "cannot draw {n} pixels from a {wh}x{ww} window"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, wh * ww, n);
    let mut sample = PixelSample {
        x: Vec::with_capacity(n),
        y: Vec::with_capacity(n),
        positions: Vec::with_capacity(n),
    };
    for i in picks.iter() {
        let (r, c) = (top + i / ww, left + i % ww);
        sample.x.push(rgb_to_ycbcr_pixel(target.pixel(r, c)));
        sample.y.push(rgb_to_ycbcr_pixel(reference.pixel(r, c)));
        sample.positions.push((r, c));
    }
    Ok(sample)
}

/// `f(x) = A x` on YCbCr pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorTransform<T> {
    pub matrix: [[T; 3]; 3],
    /// `‖Y − A X‖²_F` on the fitting sample.
    pub residual: T,
    pub samples: usize,
}

impl<T: Real> ColorTransform<T> {
    pub fn identity() -> Self {
        let mut matrix = [[T::zero(); 3]; 3];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = T::one();
        }
        ColorTransform {
            matrix,
            residual: T::zero(),
            samples: 0,
        }
    }

    pub fn from_matrix(matrix: [[T; 3]; 3]) -> Self {
        ColorTransform {
            matrix,
            residual: T::zero(),
            samples: 0,
        }
    }

    pub fn apply_pixel(&self, p: [T; 3]) -> [T; 3] {
        std::array::from_fn(|r| (0..3).map(|c| self.matrix[r][c] * p[c]).sum())
    }

    pub fn to_json(&self) -> Result<String> {
        let matrix: Vec<Vec<f64>> = self.matrix.iter().map(|r| r.iter().map(|v| v.as_f64()).collect()).collect();
        let doc = serde_json::json!({
            "space": "ycbcr-bt601-full",
            "matrix": matrix,
            "residual": self.residual.as_f64(),
            "samples": self.samples,
        });
        serde_json::to_string_pretty(&doc).map_err(|e| Error::InvalidArgument(e.to_string()))
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// `‖Y − A X‖²_F`.
pub fn color_objective<T: Real>(matrix: &[[T; 3]; 3], sample: &PixelSample<T>) -> T {
    let t = ColorTransform::from_matrix(*matrix);
    sample
        .x
        .iter()
        .zip(&sample.y)
        .map(|(&x, y)| {
            let p = t.apply_pixel(x);
            (0..3).map(|c| (y[c] - p[c]) * (y[c] - p[c])).sum::<T>()
        })
        .sum()
}

/// Least-squares `A = argmin ‖Y − A X‖²_F`, i.e. `A = Y Xᵀ (X Xᵀ)⁻¹`, solved by
/// Householder QR of the `n × 3` design `Xᵀ` rather than by forming `X Xᵀ`.
pub fn fit_color_transform<T: Real>(sample: &PixelSample<T>) -> Result<ColorTransform<T>> {
    let n = sample.len();
    if n != sample.y.len() {
        return Err(Error::Shape(format!("{} X columns vs {} Y columns", n, sample.y.len())));
    }
    if n < MIN_SAMPLES {
        return Err(Error::IllPosed(format!("{n} samples; at least {MIN_SAMPLES} are needed")));
    }
    // Column-major design (3 columns of length n) and three right-hand sides.
    let mut m: Vec<Vec<T>> = (0..3).map(|c| sample.x.iter().map(|p| p[c]).collect()).collect();
    let mut rhs: Vec<Vec<T>> = (0..3).map(|c| sample.y.iter().map(|p| p[c]).collect()).collect();
    let col_norm = |v: &[T]| v.iter().map(|&a| a * a).sum::<T>().sqrt();
    let scale = m.iter().map(|c| col_norm(c)).fold(T::zero(), T::max);
    if !(scale > T::zero()) || !scale.is_finite() {
        return Err(Error::IllPosed("sample pixels are all zero or non-finite".into()));
    }
    let tol = T::epsilon().sqrt() * scale;
    let mut diag = [T::zero(); 3];
    for k in 0..3 {
        let norm = col_norm(&m[k][k..]);
        if norm <= tol {
            return Err(Error::IllPosed(
                "sampled colours are (nearly) linearly dependent; try a larger sampling region".into(),
            ));
        }
        let alpha = if m[k][k] > T::zero() { -norm } else { norm };
        // v = x - alpha e1, stored in place of column k
        m[k][k] -= alpha;
        let vnorm2: T = m[k][k..].iter().map(|&a| a * a).sum();
        let (left, right) = m.split_at_mut(k + 1);
        let v = &left[k][k..];
        for col in right.iter_mut().chain(rhs.iter_mut()) {
            let dot: T = v.iter().zip(&col[k..]).map(|(&a, &b)| a * b).sum();
            let f = T::lit(2.0) * dot / vnorm2;
            for (c, &vi) in col[k..].iter_mut().zip(v) {
                *c -= f * vi;
            }
        }
        diag[k] = alpha;
    }
    let mut matrix = [[T::zero(); 3]; 3];
    for (r, b) in rhs.iter().enumerate() {
        // R a = (Qᵀ y)[0..3]; R has diag on the diagonal and m[j][i] above it.
        let mut a = [T::zero(); 3];
        for i in (0..3).rev() {
            let mut s = b[i];
            for j in i + 1..3 {
                s -= m[j][i] * a[j];
            }
            a[i] = s / diag[i];
        }
        matrix[r] = a;
    }
    if matrix.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::IllPosed("non-finite solution".into()));
    }
    let residual = color_objective(&matrix, sample);
    Ok(ColorTransform {
        matrix,
        residual,
        samples: n,
    })
}

/// Per pixel: to YCbCr, multiply by `A`, back to RGB, clamp.
pub fn apply_color_transform<T: Real>(image: &Image<T>, t: &ColorTransform<T>) -> Image<T> {
    map_pixels(image, |p| {
        let q = ycbcr_to_rgb_pixel(t.apply_pixel(rgb_to_ycbcr_pixel(p)));
        q.map(|v| v.max(T::zero()).min(T::one()))
    })
}
