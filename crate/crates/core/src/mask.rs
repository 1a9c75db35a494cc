//! Binary attribute masks built from expanded landmark hulls.
//!
//! Pixel `(x, y)` is the unit cell centred on integer coordinates `(x, y)`. A
//! hull covers a pixel when the closed cell meets the closed polygon, so every
//! landmark of a group lands on a covered pixel even with zero margin.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::landmarks::{LandmarkSet, Point, LANDMARK_COUNT};
use crate::scalar::Real;
use crate::tensor::Image;

const EPS: f64 = 1e-9;

/// `H × W` binary mask, identical across the three colour channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut m = Self::empty(height, width);
        for y in 0..height {
            for x in 0..width {
                m.data[y * width + x] = f(y, x);
            }
        }
        m
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.data[y * self.width + x] = on;
    }

    /// Mask value as a real: 1 inside, 0 outside (any channel).
    pub fn value<T: Real>(&self, y: usize, x: usize) -> T {
        if self.get(y, x) {
            T::one()
        } else {
            T::zero()
        }
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.check_dims(other.dims())?;
        Ok(Mask {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    pub fn check_dims(&self, dims: (usize, usize)) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!("mask {:?} vs {:?}", self.dims(), dims)));
        }
        Ok(())
    }

    /// `image ⊗ M`.
    pub fn apply<T: Real>(&self, image: &Image<T>) -> Result<Image<T>> {
        self.check_dims(image.dims())?;
        Ok(Image::from_fn(self.height, self.width, |y, x, c| {
            image.get(y, x, c) * self.value(y, x)
        }))
    }

    /// Zeroes every gradient entry where the mask is off.
    pub fn restrict<T: Real>(&self, grad: &mut Image<T>) -> Result<()> {
        self.check_dims(grad.dims())?;
        for y in 0..self.height {
            for x in 0..self.width {
                if !self.get(y, x) {
                    grad.set_pixel(y, x, [T::zero(); 3]);
                }
            }
        }
        Ok(())
    }

    /// Binary PGM (P5), 255 inside.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&b| if b { 255u8 } else { 0 }));
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

#[inline]
fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Counter-clockwise convex hull (in a y-up frame) by Andrew's monotone chain.
/// Duplicate and collinear boundary points are dropped.
pub fn convex_hull(points: &[Point]) -> Result<Vec<Point>> {
    if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(Error::NonFinite("hull input point".into()));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::DegenerateHull(format!("{} distinct point(s)", pts.len())));
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    if hull.len() < 3 {
        return Err(Error::DegenerateHull("all points are collinear".into()));
    }
    Ok(hull)
}

/// Keeps the part of `poly` with `sign * (y - level) >= 0`.
fn clip_horizontal(poly: &[Point], level: f64, sign: f64) -> Vec<Point> {
    let inside = |p: &Point| sign * (p.y - level) >= -EPS;
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (ia, ib) = (inside(&a), inside(&b));
        if ia {
            out.push(a);
        }
        if ia != ib && (b.y - a.y).abs() > 0.0 {
            let t = (level - a.y) / (b.y - a.y);
            out.push(Point::new(a.x + t * (b.x - a.x), level));
        }
    }
    out
}

/// Covered pixels of a convex polygon (boundary inclusive), by scanning the
/// one-pixel band around each row.
pub fn rasterize_convex(poly: &[Point], height: usize, width: usize) -> Mask {
    let mut mask = Mask::empty(height, width);
    if poly.is_empty() || width == 0 {
        return mask;
    }
    for y in 0..height {
        let yc = y as f64;
        let band = clip_horizontal(&clip_horizontal(poly, yc - 0.5, 1.0), yc + 0.5, -1.0);
        if band.is_empty() {
            continue;
        }
        let (lo, hi) = band
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| (lo.min(p.x), hi.max(p.x)));
        let x0 = (lo - 0.5 - EPS).ceil().max(0.0);
        let x1 = (hi + 0.5 + EPS).floor().min(width as f64 - 1.0);
        if x0 > x1 {
            continue;
        }
        for x in x0 as usize..=x1 as usize {
            mask.set(y, x, true);
        }
    }
    mask
}

/// Morphological dilation by a Euclidean disk of `radius` pixels.
pub fn dilate(mask: &Mask, radius: f64) -> Mask {
    if radius <= 0.0 {
        return mask.clone();
    }
    let r = radius.floor() as isize;
    let r2 = radius * radius + EPS;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|&(dy, dx)| (dy * dy + dx * dx) as f64 <= r2)
        .collect();
    let (h, w) = (mask.height as isize, mask.width as isize);
    let mut out = Mask::empty(mask.height, mask.width);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(y as usize, x as usize) {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y + dy, x + dx);
                if ny >= 0 && ny < h && nx >= 0 && nx < w {
                    out.set(ny as usize, nx as usize, true);
                }
            }
        }
    }
    out
}

/// Rasterizes `hull` and dilates the result by `margin`, clipped to `dims`.
/// A hull entirely outside the image yields an empty mask.
pub fn expand_and_rasterize(hull: &[Point], margin: f64, dims: (usize, usize)) -> Result<Mask> {
    if !(margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be >= 0, got {margin}")));
    }
    // Parts of the hull beyond the border still seed the dilation.
    let pad = margin.ceil() as usize;
    let (h, w) = dims;
    let shifted: Vec<Point> = hull
        .iter()
        .map(|p| Point::new(p.x + pad as f64, p.y + pad as f64))
        .collect();
    let big = dilate(&rasterize_convex(&shifted, h + 2 * pad, w + 2 * pad), margin);
    Ok(Mask::from_fn(h, w, |y, x| big.get(y + pad, x + pad)))
}

/// Disk of `radius` around `center`, always including the pixel(s) whose cell
/// holds the centre.
fn disk_mask(center: Point, radius: f64, dims: (usize, usize)) -> Mask {
    let seed = rasterize_convex(&[center], dims.0, dims.1);
    let r2 = radius * radius + EPS;
    Mask::from_fn(dims.0, dims.1, |y, x| {
        let (dx, dy) = (x as f64 - center.x, y as f64 - center.y);
        seed.get(y, x) || dx * dx + dy * dy <= r2
    })
}

/// Attribute name → zero-based landmark indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeLandmarkMap {
    groups: BTreeMap<String, Vec<usize>>,
}

const DEFAULT_MAP: &str = include_str!("../data/attribute_landmarks.csv");

impl AttributeLandmarkMap {
    pub fn new(groups: BTreeMap<String, Vec<usize>>) -> Result<Self> {
        for (name, idx) in &groups {
            if idx.is_empty() {
                return Err(Error::InvalidArgument(format!("attribute `{name}` has no landmarks")));
            }
            if let Some(bad) = idx.iter().find(|&&i| i >= LANDMARK_COUNT) {
                return Err(Error::InvalidArgument(format!(
                    "attribute `{name}` references landmark {} (valid 1..={LANDMARK_COUNT})",
                    bad + 1
                )));
            }
        }
        Ok(AttributeLandmarkMap { groups })
    }

    /// The shipped table for the six demonstrated attributes.
    pub fn default_map() -> Self {
        Self::parse(DEFAULT_MAP).expect("bundled attribute map parses")
    }

    /// Parses `attribute,i1;i2;...` lines with one-based indices. A leading
    /// `attribute,...` header and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, list) = line.split_once(',').ok_or_else(|| {
                Error::InvalidArgument(format!("line {}: expected `attribute,i1;i2;...`", lineno + 1))
            })?;
            let name = name.trim();
            if lineno == 0 && name.eq_ignore_ascii_case("attribute") {
                continue;
            }
            let idx = list
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| match s.parse::<usize>() {
                    Ok(i) if i >= 1 => Ok(i - 1),
                    _ => Err(Error::InvalidArgument(format!(
                        "line {}: bad landmark index `{s}`",
                        lineno + 1
                    ))),
                })
                .collect::<Result<Vec<_>>>()?;
            groups.insert(name.to_string(), idx);
        }
        Self::new(groups)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn get(&self, attribute: &str) -> Option<&[usize]> {
        self.groups.get(attribute).map(Vec::as_slice)
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }
}

/// Margin used when none is given: 12 px at 224×224, proportional otherwise.
pub fn default_margin(height: usize, width: usize) -> f64 {
    12.0 * height.min(width) as f64 / 224.0
}

/// Union of the expanded hull masks of every requested attribute.
pub fn build_mask<S: AsRef<str>>(
    attributes: &[S],
    landmarks: &LandmarkSet,
    map: &AttributeLandmarkMap,
    margin: f64,
    dims: (usize, usize),
) -> Result<Mask> {
    let unknown: Vec<String> = attributes
        .iter()
        .map(AsRef::as_ref)
        .filter(|a| map.get(a).is_none())
        .map(str::to_string)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownAttribute(unknown));
    }
    let mut mask = Mask::empty(dims.0, dims.1);
    for attr in attributes {
        let idx = map.get(attr.as_ref()).expect("checked above");
        let pts: Vec<Point> = idx.iter().map(|&i| landmarks.get(i)).collect();
        let part = match convex_hull(&pts) {
            Ok(hull) => expand_and_rasterize(&hull, margin, dims)?,
            Err(Error::DegenerateHull(_)) => {
                let n = pts.len() as f64;
                let c = pts.iter().fold(Point::default(), |acc, p| Point::new(acc.x + p.x / n, acc.y + p.y / n));
                disk_mask(c, margin, dims)
            }
            Err(e) => return Err(e),
        };
        mask = mask.union(&part)?;
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn square_with_center_drops_interior() {
        let hull = convex_hull(&pts(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.), (0.5, 0.5)])).unwrap();
        assert_eq!(hull, pts(&[(0., 0.), (1., 0.), (1., 1.), (0., 1.)]));
    }

    #[test]
    fn triangle_is_its_own_hull() {
        let hull = convex_hull(&pts(&[(3., 1.), (0., 0.), (1., 4.)])).unwrap();
        assert_eq!(hull.len(), 3);
        let area2: f64 = (0..3).map(|i| cross(Point::default(), hull[i], hull[(i + 1) % 3])).sum();
        assert!(area2 > 0.0, "hull must be counter-clockwise");
    }

    #[test]
    fn degenerate_hulls() {
        assert!(matches!(convex_hull(&pts(&[(0., 0.), (1., 1.)])), Err(Error::DegenerateHull(_))));
        assert!(matches!(
            convex_hull(&pts(&[(0., 0.), (1., 1.), (2., 2.), (1., 1.)])),
            Err(Error::DegenerateHull(_))
        ));
        assert!(matches!(convex_hull(&pts(&[(0., 0.), (0., 0.), (0., 0.)])), Err(Error::DegenerateHull(_))));
    }

    #[test]
    fn axis_aligned_square_margin_zero() {
        let hull = convex_hull(&pts(&[(2., 2.), (5., 2.), (5., 5.), (2., 5.)])).unwrap();
        let m = expand_and_rasterize(&hull, 0.0, (8, 8)).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(m.get(y, x), (2..=5).contains(&y) && (2..=5).contains(&x), "({x},{y})");
            }
        }
    }

    #[test]
    fn dilating_full_mask_is_identity() {
        let full = Mask::full(6, 7);
        assert_eq!(dilate(&full, 3.0), full);
    }

    #[test]
    fn single_pixel_dilation_is_a_disk() {
        let mut m = Mask::empty(11, 11);
        m.set(5, 5, true);
        let d = dilate(&m, 3.0);
        for y in 0..11i32 {
            for x in 0..11i32 {
                let inside = (y - 5).pow(2) + (x - 5).pow(2) <= 9;
                assert_eq!(d.get(y as usize, x as usize), inside);
            }
        }
        assert_eq!(d.count(), 29);
    }

    #[test]
    fn hull_off_image_gives_empty_mask() {
        let hull = convex_hull(&pts(&[(100., 100.), (110., 100.), (105., 110.)])).unwrap();
        assert!(expand_and_rasterize(&hull, 2.0, (10, 10)).unwrap().is_empty());
        assert!(expand_and_rasterize(&hull, -1.0, (10, 10)).is_err());
    }

    #[test]
    fn hull_just_off_image_still_reaches_in_through_margin() {
        let hull = convex_hull(&pts(&[(-4., 2.), (-2., 2.), (-3., 5.)])).unwrap();
        let m = expand_and_rasterize(&hull, 3.0, (10, 10)).unwrap();
        assert!(m.get(3, 0));
        assert!(!m.get(3, 2));
    }

    #[test]
    fn map_parsing() {
        let m = AttributeLandmarkMap::parse("attribute,landmarks\nglasses,37;38;46\n# c\nnose,31").unwrap();
        assert_eq!(m.get("glasses"), Some(&[36, 37, 45][..]));
        assert!(AttributeLandmarkMap::parse("x,0").is_err());
        assert!(AttributeLandmarkMap::parse("x,69").is_err());
        assert!(AttributeLandmarkMap::parse("x,").is_err());
        let d = AttributeLandmarkMap::default_map();
        assert_eq!(d.attributes().count(), 6);
    }

    #[test]
    fn pgm_header() {
        let mut m = Mask::empty(2, 3);
        m.set(1, 2, true);
        let pgm = m.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 6..], &[0, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn apply_and_restrict() {
        let m = Mask::from_fn(2, 2, |y, x| y == x);
        let img = Image::<f64>::filled(2, 2, 0.7);
        let masked = m.apply(&img).unwrap();
        assert_eq!(masked.pixel(0, 0), [0.7; 3]);
        assert_eq!(masked.pixel(0, 1), [0.0; 3]);
        let mut g = Image::<f64>::filled(2, 2, -2.0);
        m.restrict(&mut g).unwrap();
        assert_eq!(g.pixel(1, 0), [0.0; 3]);
        assert_eq!(g.pixel(1, 1), [-2.0; 3]);
    }
}
