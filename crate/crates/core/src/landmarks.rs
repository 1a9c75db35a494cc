//! 68-point facial landmark sets.

use crate::error::{Error, Result};

pub const LANDMARK_COUNT: usize = 68;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }
}

/// Exactly 68 `(x, y)` pixel positions in the usual 68-point face layout
/// (jaw 0–16, brows 17–26, nose 27–35, eyes 36–47, mouth 48–67; zero-based).
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<Point>,
}

impl LandmarkSet {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        if points.len() != LANDMARK_COUNT {
            return Err(Error::InvalidArgument(format!(
                "a landmark set has {LANDMARK_COUNT} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(Error::NonFinite("landmark coordinate".into()));
        }
        Ok(LandmarkSet { points })
    }

    /// From `[x1, y1, x2, y2, ...]`.
    pub fn from_flat(coords: &[f64]) -> Result<Self> {
        if coords.len() != 2 * LANDMARK_COUNT {
            return Err(Error::InvalidArgument(format!(
                "expected {} coordinates, got {}",
                2 * LANDMARK_COUNT,
                coords.len()
            )));
        }
        Self::new(coords.chunks_exact(2).map(|c| Point::new(c[0], c[1])).collect())
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn get(&self, index: usize) -> Point {
        self.points[index]
    }

    /// Checks every point lies within `[-margin, w-1+margin] × [-margin, h-1+margin]`.
    pub fn check_bounds(&self, height: usize, width: usize, margin: f64) -> Result<()> {
        let (xmax, ymax) = (width as f64 - 1.0 + margin, height as f64 - 1.0 + margin);
        match self
            .points
            .iter()
            .position(|p| p.x < -margin || p.y < -margin || p.x > xmax || p.y > ymax)
        {
            Some(i) => Err(Error::InvalidArgument(format!(
                "landmark {} at ({}, {}) lies outside the {height}x{width} image",
                i + 1,
                self.points[i].x,
                self.points[i].y
            ))),
            None => Ok(()),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        LandmarkSet {
            points: self.points.iter().map(|p| Point::new(p.x * s, p.y * s)).collect(),
        }
    }

    /// Landmarks of the horizontally mirrored image: x is reflected about the
    /// image centre and indices are relabelled so that, e.g., the left eye
    /// corner of the mirrored face keeps the left-eye index.
    pub fn flip_horizontal(&self, width: usize) -> Self {
        let w = width as f64 - 1.0;
        let perm = mirror_permutation();
        LandmarkSet {
            points: perm
                .iter()
                .map(|&src| {
                    let p = self.points[src];
                    Point::new(w - p.x, p.y)
                })
                .collect(),
        }
    }
}

/// `perm[i]` is the index whose mirror image lands at index `i`.
pub fn mirror_permutation() -> [usize; LANDMARK_COUNT] {
    let mut perm: [usize; LANDMARK_COUNT] = std::array::from_fn(|i| i);
    let mut swap = |a: usize, b: usize| {
        perm[a] = b;
        perm[b] = a;
    };
    for i in 0..8 {
        swap(i, 16 - i);
    }
    for i in 0..5 {
        swap(17 + i, 26 - i);
    }
    swap(31, 35);
    swap(32, 34);
    for (a, b) in [(36, 45), (37, 44), (38, 43), (39, 42), (40, 47), (41, 46)] {
        swap(a, b);
    }
    for (a, b) in [(48, 54), (49, 53), (50, 52), (55, 59), (56, 58)] {
        swap(a, b);
    }
    for (a, b) in [(60, 64), (61, 63), (65, 67)] {
        swap(a, b);
    }
    perm
}
