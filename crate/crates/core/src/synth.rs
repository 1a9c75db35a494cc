//! Seeded cartoon faces with landmarks and attribute scores.
//!
//! Used for demos and tests where real aligned face data is unavailable.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::guided::CorpusEntry;
use crate::landmarks::{LandmarkSet, Point};
use crate::scalar::Real;
use crate::tensor::Image;

/// Attribute names every synthetic face is scored on.
pub const ATTRIBUTES: [&str; 7] = [
    "with-glasses",
    "smiling",
    "mouth-open",
    "mouth-closed",
    "big-nose",
    "pointy-nose",
    "male",
];

/// Identity parameters and attribute scores of one face.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceParams {
    pub skin: [f64; 3],
    pub background: [f64; 3],
    pub hair: [f64; 3],
    pub face_width: f64,
    pub eye_spacing: f64,
    pub shift: (f64, f64),
    pub tilt: f64,
    pub scores: BTreeMap<String, f64>,
}

impl FaceParams {
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        let tone = u(0.35, 0.9);
        let skin = [tone, tone * u(0.7, 0.85), tone * u(0.55, 0.7)];
        let background = [u(0.1, 0.9), u(0.1, 0.9), u(0.1, 0.9)];
        let hair = [u(0.0, 0.5), u(0.0, 0.35), u(0.0, 0.25)];
        let face_width = u(0.32, 0.4);
        let eye_spacing = u(0.14, 0.18);
        let shift = (u(-0.04, 0.04), u(-0.03, 0.03));
        let tilt = u(-0.08, 0.08);
        let mut scores = BTreeMap::new();
        for name in ATTRIBUTES {
            let mag = u(0.2, 2.0);
            let s = if u(0.0, 1.0) < 0.5 { -mag } else { mag };
            scores.insert(name.to_string(), s);
        }
        let open = scores["mouth-open"];
        scores.insert("mouth-closed".into(), -open);
        FaceParams {
            skin,
            background,
            hair,
            face_width,
            eye_spacing,
            shift,
            tilt,
            scores,
        }
    }

    pub fn has(&self, attr: &str) -> bool {
        self.scores.get(attr).is_some_and(|&s| s > 0.0)
    }

    /// Same identity with one attribute forced on or off.
    pub fn with_attribute(&self, attr: &str, on: bool) -> Self {
        let mut p = self.clone();
        let mag = p.scores.get(attr).map_or(1.0, |s| s.abs().max(0.5));
        p.scores.insert(attr.to_string(), if on { mag } else { -mag });
        if attr == "mouth-open" {
            p.scores.insert("mouth-closed".into(), if on { -mag } else { mag });
        } else if attr == "mouth-closed" {
            p.scores.insert("mouth-open".into(), if on { -mag } else { mag });
        }
        p
    }

    /// Landmark positions in unit coordinates.
    fn unit_landmarks(&self) -> Vec<Point> {
        let fw = self.face_width;
        let es = self.eye_spacing;
        let smile = if self.has("smiling") { 0.03 } else { 0.0 };
        let open = if self.has("mouth-open") { 0.035 } else { 0.008 };
        let nose_w = if self.has("big-nose") { 0.085 } else { 0.055 };
        let nose_len = if self.has("pointy-nose") { 0.64 } else { 0.6 };
        let mut p = Vec::with_capacity(68);
        for i in 0..17 {
            let t = PI * i as f64 / 16.0;
            p.push((0.5 - fw * t.cos(), 0.42 + 0.45 * t.sin()));
        }
        for j in 0..5 {
            let f = j as f64 / 4.0;
            p.push((0.5 - es - 0.11 + 0.22 * f * 0.9, 0.33 - 0.03 * (PI * f).sin()));
        }
        for j in 0..5 {
            let f = j as f64 / 4.0;
            p.push((0.5 + es - 0.09 + 0.22 * f * 0.9, 0.33 - 0.03 * (PI * f).sin()));
        }
        for j in 0..4 {
            p.push((0.5, 0.38 + (nose_len - 0.42) * j as f64 / 3.0));
        }
        for j in 0..5 {
            let f = j as f64 / 4.0 - 0.5;
            p.push((0.5 + 2.0 * nose_w * f, nose_len + 0.02 - 0.015 * (1.0 - 4.0 * f * f)));
        }
        for cx in [0.5 - es, 0.5 + es] {
            for deg in [180.0f64, 120.0, 60.0, 0.0, 300.0, 240.0] {
                let a = deg.to_radians();
                p.push((cx + 0.06 * a.cos(), 0.42 - 0.025 * a.sin()));
            }
        }
        let (mx, my) = (0.5, 0.74);
        for j in 0..12 {
            let a = PI - 2.0 * PI * j as f64 / 12.0;
            let lift = smile * a.cos().abs().powi(2);
            let ry = if a.sin() >= 0.0 { 0.03 } else { 0.03 + open };
            p.push((mx + 0.13 * a.cos(), my - ry * a.sin() - lift));
        }
        for j in 0..8 {
            let a = PI - 2.0 * PI * j as f64 / 8.0;
            let lift = smile * a.cos().abs().powi(2);
            let ry = if a.sin() >= 0.0 { 0.008 } else { open };
            p.push((mx + 0.09 * a.cos(), my - ry * a.sin() - lift));
        }
        let (s, c) = self.tilt.sin_cos();
        p.into_iter()
            .map(|(x, y)| {
                let (dx, dy) = (x - 0.5, y - 0.5);
                Point::new(0.5 + c * dx - s * dy + self.shift.0, 0.5 + s * dx + c * dy + self.shift.1)
            })
            .collect()
    }

    /// Renders an `h × w` image and its pixel-space landmarks.
    pub fn render<T: Real>(&self, height: usize, width: usize, noise_seed: u64) -> (Image<T>, LandmarkSet) {
        let unit = self.unit_landmarks();
        let (sx, sy) = ((width - 1) as f64, (height - 1) as f64);
        let lm: Vec<Point> = unit.iter().map(|p| Point::new(p.x * sx, p.y * sy)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
        let fw = self.face_width;
        let glasses = self.has("with-glasses");
        let centre = |a: usize, b: usize| {
            let n = (b - a) as f64;
            unit[a..b].iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.x / n, acc.1 + p.y / n))
        };
        let eyes = [centre(36, 42), centre(42, 48)];
        let mouth = centre(48, 60);
        let nose_tip = unit[33];
        let inner_open = (unit[66].y - unit[62].y).abs();
        let male = self.has("male");
        let img = Image::from_fn(height, width, |yy, xx, ch| {
            let (u, v) = (xx as f64 / sx, yy as f64 / sy);
            let (u0, v0) = (u - self.shift.0, v - self.shift.1);
            let face = ((u0 - 0.5) / fw).powi(2) + ((v0 - 0.52) / 0.47).powi(2);
            let mut col = if face <= 1.0 { self.skin } else { self.background };
            if face > 0.85 && v0 < 0.35 && face < 1.3 {
                col = self.hair;
            }
            if male && face <= 1.0 && v0 > 0.78 {
                col = [col[0] * 0.8, col[1] * 0.8, col[2] * 0.8];
            }
            for &(ex, ey) in &eyes {
                let d = ((u - ex) / 0.045).powi(2) + ((v - ey) / 0.022).powi(2);
                if d <= 1.0 {
                    col = [0.95, 0.95, 0.95];
                }
                if ((u - ex) / 0.018).powi(2) + ((v - ey) / 0.018).powi(2) <= 1.0 {
                    col = [0.1, 0.08, 0.05];
                }
                if glasses {
                    let r = ((u - ex).powi(2) + (v - ey).powi(2)).sqrt();
                    if (r - 0.075).abs() < 0.012 {
                        col = [0.05, 0.05, 0.05];
                    }
                }
            }
            if glasses && (v - eyes[0].1).abs() < 0.01 && u > eyes[0].0 + 0.07 && u < eyes[1].0 - 0.07 {
                col = [0.05, 0.05, 0.05];
            }
            let nd = ((u - nose_tip.x) / (unit[35].x - unit[31].x).abs().max(1e-3) * 2.0).powi(2)
                + ((v - nose_tip.y + 0.01) / 0.03).powi(2);
            if nd <= 1.0 {
                col = [col[0] * 0.8, col[1] * 0.75, col[2] * 0.75];
            }
            let md = ((u - mouth.0) / 0.13).powi(2) + ((v - mouth.1) / (0.03 + inner_open)).powi(2);
            if md <= 1.0 {
                col = [0.7, 0.25, 0.25];
                let id = ((u - mouth.0) / 0.09).powi(2) + ((v - mouth.1) / inner_open.max(1e-3)).powi(2);
                if inner_open > 0.02 && id <= 1.0 {
                    col = [0.2, 0.05, 0.05];
                }
            }
            let n: f64 = rng.random_range(-0.01..0.01);
            T::lit((col[ch] + n).clamp(0.0, 1.0))
        });
        (img, LandmarkSet::new(lm).expect("68 finite points"))
    }

    pub fn to_entry<T: Real>(&self, id: impl Into<String>, height: usize, width: usize, noise_seed: u64) -> CorpusEntry<T> {
        let (image, landmarks) = self.render(height, width, noise_seed);
        CorpusEntry {
            id: id.into(),
            image,
            landmarks,
            attributes: self.scores.clone(),
        }
    }
}

/// `m` random faces with ids `face0000`, `face0001`, ...
pub fn synth_corpus<T: Real>(seed: u64, m: usize, height: usize, width: usize) -> Vec<CorpusEntry<T>> {
    (0..m)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            FaceParams::random(s).to_entry(format!("face{i:04}"), height, width, s ^ 0x5eed)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendering_is_deterministic_and_in_range() {
        let p = FaceParams::random(3);
        let (a, la) = p.render::<f64>(32, 32, 1);
        let (b, lb) = p.render::<f64>(32, 32, 1);
        assert_eq!(a, b);
        assert_eq!(la, lb);
        assert!(a.in_unit_range());
        la.check_bounds(32, 32, 2.0).unwrap();
    }

    #[test]
    fn attribute_toggle_changes_pixels_not_identity() {
        let p = FaceParams::random(11).with_attribute("with-glasses", false);
        let q = p.with_attribute("with-glasses", true);
        assert!(q.has("with-glasses") && !p.has("with-glasses"));
        let (a, _) = p.render::<f64>(48, 48, 0);
        let (b, _) = q.render::<f64>(48, 48, 0);
        assert!(a.squared_error(&b).unwrap() > 0.0);
        assert_eq!(p.skin, q.skin);
        let open = p.with_attribute("mouth-open", true);
        assert!(!open.has("mouth-closed"));
    }

    #[test]
    fn corpus_has_unique_ids_and_full_schema() {
        let c = synth_corpus::<f32>(5, 6, 16, 16);
        assert_eq!(c.len(), 6);
        let mut ids: Vec<_> = c.iter().map(|e| e.id.clone()).collect();
        ids.dedup();
        assert_eq!(ids.len(), 6);
        assert!(c.iter().all(|e| e.attributes.len() == ATTRIBUTES.len()));
    }
}
