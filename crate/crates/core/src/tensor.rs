//! Dense channel-planar rasters: feature maps and RGB images.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A `channels × height × width` real tensor stored channel-planar, row-major
/// within each plane.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::filled(channels, height, width, T::zero())
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: T) -> Self {
        FeatureMap {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        FeatureMap {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: T) {
        let i = self.index(c, y, x);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: T) {
        for v in &mut self.data {
            *v *= alpha;
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&v| v * v).sum()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Converts the element type, e.g. `f32` weights into an `f64` network.
    pub fn cast<U: Real>(&self) -> FeatureMap<U> {
        FeatureMap {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .map(|&v| U::lit(v.as_f64()))
                .collect(),
        }
    }
}

/// An `H × W × 3` RGB raster. Pixel values of generated and loaded images lie
/// in `[0, 1]`; the same type also carries image-space gradients, which are
/// unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    map: FeatureMap<T>,
}

impl<T: Real> Image<T> {
    pub const CHANNELS: usize = 3;

    pub fn filled(height: usize, width: usize, value: T) -> Self {
        Image {
            map: FeatureMap::filled(3, height, width, value),
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, T::zero())
    }

    /// `f(y, x, channel)`
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        Image {
            map: FeatureMap::from_fn(3, height, width, |c, y, x| f(y, x, c)),
        }
    }

    /// Builds an image from interleaved `[r, g, b, r, g, b, ...]` row-major data.
    pub fn from_interleaved(height: usize, width: usize, rgb: &[T]) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(Error::Shape(format!(
                "{} interleaved values for a {height}x{width} RGB image",
                rgb.len()
            )));
        }
        Ok(Self::from_fn(height, width, |y, x, c| rgb[(y * width + x) * 3 + c]))
    }

    pub fn from_map(map: FeatureMap<T>) -> Result<Self> {
        if map.channels() != 3 {
            return Err(Error::Shape(format!(
                "an image needs 3 channels, got {}",
                map.channels()
            )));
        }
        Ok(Image { map })
    }

    pub fn to_interleaved(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.map.len());
        for y in 0..self.height() {
            for x in 0..self.width() {
                for c in 0..3 {
                    out.push(self.get(y, x, c));
                }
            }
        }
        out
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.map.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.map.width()
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.map.get(c, y, x)
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        self.map.set(c, y, x, v)
    }

    pub fn pixel(&self, y: usize, x: usize) -> [T; 3] {
        [self.get(y, x, 0), self.get(y, x, 1), self.get(y, x, 2)]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, p: [T; 3]) {
        for (c, v) in p.into_iter().enumerate() {
            self.set(y, x, c, v);
        }
    }

    pub fn as_map(&self) -> &FeatureMap<T> {
        &self.map
    }

    pub fn as_map_mut(&mut self) -> &mut FeatureMap<T> {
        &mut self.map
    }

    pub fn into_map(self) -> FeatureMap<T> {
        self.map
    }

    pub fn as_slice(&self) -> &[T] {
        self.map.as_slice()
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        self.map.as_mut_slice()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Image { map: self.map.map(f) }
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.max(T::zero()).min(T::one()))
    }

    pub fn all_finite(&self) -> bool {
        self.map.all_finite()
    }

    pub fn in_unit_range(&self) -> bool {
        self.as_slice()
            .iter()
            .all(|&v| v >= T::zero() && v <= T::one())
    }

    /// Sum of squared per-value differences.
    pub fn squared_error(&self, other: &Self) -> Result<T> {
        self.check_same_dims(other)?;
        Ok(self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum())
    }

    pub fn check_same_dims(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Shape(format!(
                "image {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }

    /// Left-right mirror.
    pub fn flip_horizontal(&self) -> Self {
        let w = self.width();
        Self::from_fn(self.height(), w, |y, x, c| self.get(y, w - 1 - x, c))
    }

    pub fn cast<U: Real>(&self) -> Image<U> {
        Image { map: self.map.cast() }
    }
}
