//! Test-only oracles, written independently of the library's code paths.
#![allow(dead_code)]

use facegen_core::network::{ConvLayer, LayerDesc};
use facegen_core::{Image, Mask, NetworkSpec, Point};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod color;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth-ish random image in [0.05, 0.95].
pub fn seeded_image(seed: u64, h: usize, w: usize) -> Image<f64> {
    let mut r = rng(seed);
    let freq: Vec<(f64, f64, f64)> = (0..9)
        .map(|_| (r.random_range(0.2..1.2), r.random_range(0.2..1.2), r.random_range(0.0..6.28)))
        .collect();
    Image::from_fn(h, w, |y, x, c| {
        let mut v = 0.0;
        for k in 0..3 {
            let (fy, fx, ph) = freq[c * 3 + k];
            v += (fy * y as f64 + fx * x as f64 + ph).sin();
        }
        let noise: f64 = r.random_range(-0.05..0.05);
        (0.5 + 0.13 * v + noise).clamp(0.05, 0.95)
    })
}

/// Independent uniform pixels in [0, 1); the default input for gradient checks.
pub fn uniform_image(seed: u64, h: usize, w: usize) -> Image<f64> {
    let mut r = rng(seed);
    Image::from_fn(h, w, |_, _, _| r.random_range(0.0..1.0))
}

/// Dense `[c][y][x]` nested vectors.
pub type Dense = Vec<Vec<Vec<f64>>>;

pub fn image_dense(img: &Image<f64>) -> Dense {
    (0..3)
        .map(|c| (0..img.height()).map(|y| (0..img.width()).map(|x| img.get(y, x, c)).collect()).collect())
        .collect()
}

/// Direct nested-loop convolution with explicit zero padding.
pub fn naive_conv(conv: &ConvLayer<f64>, x: &Dense) -> Dense {
    let (h, w) = (x[0].len() as isize, x[0][0].len() as isize);
    let p = conv.pad as isize;
    let oh = ((h + 2 * p - conv.kernel_h as isize) / conv.stride as isize + 1) as usize;
    let ow = ((w + 2 * p - conv.kernel_w as isize) / conv.stride as isize + 1) as usize;
    let mut out = vec![vec![vec![0.0; ow]; oh]; conv.out_ch];
    for oc in 0..conv.out_ch {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = conv.bias[oc];
                for ic in 0..conv.in_ch {
                    for ky in 0..conv.kernel_h {
                        for kx in 0..conv.kernel_w {
                            let iy = (oy * conv.stride + ky) as isize - p;
                            let ix = (ox * conv.stride + kx) as isize - p;
                            let v = if iy < 0 || ix < 0 || iy >= h || ix >= w {
                                0.0
                            } else {
                                x[ic][iy as usize][ix as usize]
                            };
                            let wi = ((oc * conv.in_ch + ic) * conv.kernel_h + ky) * conv.kernel_w + kx;
                            acc += conv.weights[wi] * v;
                        }
                    }
                }
                out[oc][oy][ox] = acc;
            }
        }
    }
    out
}

fn naive_layer(layer: &LayerDesc<f64>, x: &Dense) -> (Dense, Vec<usize>) {
    match layer {
        LayerDesc::Conv(c) => (naive_conv(c, x), Vec::new()),
        LayerDesc::Relu { .. } => (
            x.iter().map(|p| p.iter().map(|r| r.iter().map(|v| v.max(0.0)).collect()).collect()).collect(),
            Vec::new(),
        ),
        LayerDesc::MaxPool { kernel, stride, .. } => {
            let (h, w) = (x[0].len(), x[0][0].len());
            let (oh, ow) = ((h - kernel) / stride + 1, (w - kernel) / stride + 1);
            let mut arg = Vec::new();
            let out = x
                .iter()
                .map(|p| {
                    (0..oh)
                        .map(|oy| {
                            (0..ow)
                                .map(|ox| {
                                    let mut m = f64::NEG_INFINITY;
                                    let mut at = 0;
                                    for ky in 0..*kernel {
                                        for kx in 0..*kernel {
                                            let v = p[oy * stride + ky][ox * stride + kx];
                                            if v > m {
                                                m = v;
                                                at = ky * kernel + kx;
                                            }
                                        }
                                    }
                                    arg.push(at);
                                    m
                                })
                                .collect()
                        })
                        .collect()
                })
                .collect();
            (out, arg)
        }
    }
}

pub fn naive_forward(net: &NetworkSpec<f64>, img: &Image<f64>, upto: &str) -> Dense {
    let mut x = image_dense(img);
    for layer in net.layers() {
        x = naive_layer(layer, &x).0;
        if layer.name() == upto {
            break;
        }
    }
    x
}

/// Which side of every kink the forward pass sits on: the sign of every layer
/// output (ReLU inputs and the rectified compared layer) and every pooling
/// argmax. Two inputs with equal signatures lie in the same linear piece.
pub fn activation_signature(net: &NetworkSpec<f64>, img: &Image<f64>, upto: &str) -> Vec<usize> {
    let mut x = image_dense(img);
    let mut sig = Vec::new();
    for layer in net.layers() {
        let (y, arg) = naive_layer(layer, &x);
        sig.extend(arg);
        sig.extend(flatten(&y).iter().map(|&v| (v > 0.0) as usize));
        x = y;
        if layer.name() == upto {
            break;
        }
    }
    sig
}

/// Coordinates whose ±eps probes land in different linear pieces of the
/// network, where a central difference is not a derivative estimate.
pub fn kink_coordinates(img: &Image<f64>, eps: f64, mut signature: impl FnMut(&Image<f64>) -> Vec<usize>) -> Vec<bool> {
    let mut probe = img.clone();
    (0..img.as_slice().len())
        .map(|i| {
            let orig = probe.as_slice()[i];
            probe.as_mut_slice()[i] = orig + eps;
            let sp = signature(&probe);
            probe.as_mut_slice()[i] = orig - eps;
            let sm = signature(&probe);
            probe.as_mut_slice()[i] = orig;
            sp != sm
        })
        .collect()
}

pub fn flatten(d: &Dense) -> Vec<f64> {
    d.iter().flatten().flatten().copied().collect()
}

/// Central-difference partial derivatives of `f` at every coordinate.
pub fn central_gradient(img: &Image<f64>, eps: f64, mut f: impl FnMut(&Image<f64>) -> f64) -> Vec<f64> {
    let mut probe = img.clone();
    let n = img.as_slice().len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + eps;
        let fp = f(&probe);
        probe.as_mut_slice()[i] = orig - eps;
        let fm = f(&probe);
        probe.as_mut_slice()[i] = orig;
        out.push((fp - fm) / (2.0 * eps));
    }
    out
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Absolute floor for relative comparisons of gradients: below this, central
/// differences at eps = 1e-3 are dominated by floating-point cancellation.
pub const GRAD_FLOOR: f64 = 1e-8;

pub struct GradReport {
    pub coords: usize,
    pub frac_within: f64,
    pub worst: f64,
    /// Worst error over coordinates whose probes stay in one linear piece.
    pub worst_smooth: f64,
    pub kinks: usize,
}

pub fn compare_gradients(analytic: &[f64], numeric: &[f64], tol: f64) -> GradReport {
    compare_gradients_with_kinks(analytic, numeric, tol, &vec![false; analytic.len()])
}

pub fn compare_gradients_with_kinks(analytic: &[f64], numeric: &[f64], tol: f64, kinks: &[bool]) -> GradReport {
    assert_eq!(analytic.len(), numeric.len());
    assert_eq!(analytic.len(), kinks.len());
    let errs: Vec<f64> = analytic.iter().zip(numeric).map(|(&a, &n)| rel_err(a, n, GRAD_FLOOR)).collect();
    let within = errs.iter().filter(|&&e| e < tol).count();
    GradReport {
        coords: errs.len(),
        frac_within: within as f64 / errs.len() as f64,
        worst: errs.iter().cloned().fold(0.0, f64::max),
        worst_smooth: errs.iter().zip(kinks).filter(|(_, &k)| !k).map(|(e, _)| *e).fold(0.0, f64::max),
        kinks: kinks.iter().filter(|&&k| k).count(),
    }
}

fn orient(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Exhaustive hull: an ordered pair (i, j) is a counter-clockwise hull edge
/// when every other point lies strictly left of it or on the closed segment.
/// The hull is the cycle formed by those edges; returned starting from the
/// lowest (x, y) vertex.
pub fn brute_force_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    let n = pts.len();
    let mut next = vec![None; n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let ok = (0..n).all(|k| {
                if k == i || k == j {
                    return true;
                }
                let o = orient(pts[i], pts[j], pts[k]);
                if o > 0.0 {
                    true
                } else if o < 0.0 {
                    false
                } else {
                    let t = ((pts[k].x - pts[i].x) * (pts[j].x - pts[i].x) + (pts[k].y - pts[i].y) * (pts[j].y - pts[i].y))
                        / ((pts[j].x - pts[i].x).powi(2) + (pts[j].y - pts[i].y).powi(2));
                    t > 0.0 && t < 1.0
                }
            });
            if ok {
                next[i] = Some(j);
            }
        }
    }
    let start = match (0..n).find(|&i| next[i].is_some()) {
        Some(s) => s,
        None => return Vec::new(),
    };
    let mut hull = vec![pts[start]];
    let mut cur = next[start].unwrap();
    while cur != start {
        hull.push(pts[cur]);
        cur = next[cur].expect("hull edges form a cycle");
        assert!(hull.len() <= n, "hull edges do not close");
    }
    hull
}

/// Pixels within Euclidean distance `radius` of some seed pixel.
pub fn distance_transform_dilation(seeds: &Mask, radius: f64) -> Mask {
    let on: Vec<(f64, f64)> = (0..seeds.height())
        .flat_map(|y| (0..seeds.width()).map(move |x| (y, x)))
        .filter(|&(y, x)| seeds.get(y, x))
        .map(|(y, x)| (y as f64, x as f64))
        .collect();
    Mask::from_fn(seeds.height(), seeds.width(), |y, x| {
        let d2 = on
            .iter()
            .map(|&(sy, sx)| (sy - y as f64).powi(2) + (sx - x as f64).powi(2))
            .fold(f64::INFINITY, f64::min);
        d2.sqrt() <= radius + 1e-9
    })
}

pub fn random_mask(seed: u64, h: usize, w: usize, density: f64) -> Mask {
    let mut r = rng(seed);
    Mask::from_fn(h, w, |_, _| r.random_bool(density))
}

/// Corpus with random images, landmarks and signed scores on `attrs`.
pub fn random_corpus(seed: u64, m: usize, size: usize, attrs: &[&str]) -> Vec<facegen_core::CorpusEntry<f64>> {
    let mut r = rng(seed);
    // Ids in shuffled order so id ties are not broken by corpus position.
    let mut ids: Vec<usize> = (0..m).collect();
    ids.shuffle(&mut r);
    (0..m)
        .map(|i| {
            let pts: Vec<Point> = (0..68)
                .map(|_| Point::new(r.random_range(0.0..size as f64), r.random_range(0.0..size as f64)))
                .collect();
            let attributes = attrs
                .iter()
                .map(|a| (a.to_string(), r.random_range(-2.0..2.0)))
                .collect();
            facegen_core::CorpusEntry {
                id: format!("e{:03}", ids[i]),
                image: uniform_image(seed * 7919 + i as u64, size, size),
                landmarks: facegen_core::LandmarkSet::new(pts).unwrap(),
                attributes,
            }
        })
        .collect()
}

/// `(id, D_a)` for every candidate, recomputed with explicit loops and the
/// naive forward pass, then fully sorted by (distance, id).
pub fn brute_force_ranking(
    candidates: &[&facegen_core::CorpusEntry<f64>],
    reference: &facegen_core::CorpusEntry<f64>,
    alpha: f64,
    net: &NetworkSpec<f64>,
    layer: &str,
) -> Vec<(String, f64)> {
    let mut pose = Vec::new();
    for c in candidates {
        let mut d = 0.0;
        for k in 0..68 {
            let (p, q) = (c.landmarks.get(k), reference.landmarks.get(k));
            d += (p.x - q.x) * (p.x - q.x) + (p.y - q.y) * (p.y - q.y);
        }
        pose.push(d);
    }
    let rf: Vec<f64> = flatten(&naive_forward(net, &reference.image, layer)).iter().map(|v| v.max(0.0)).collect();
    let content: Vec<f64> = candidates
        .iter()
        .map(|c| {
            let cf = flatten(&naive_forward(net, &c.image, layer));
            let sq: f64 = cf.iter().zip(&rf).map(|(a, b)| (a.max(0.0) - b).powi(2)).sum();
            0.5 * sq / cf.len() as f64
        })
        .collect();
    let ps: f64 = pose.iter().sum();
    let cs: f64 = content.iter().sum();
    let mut out: Vec<(String, f64)> = candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let p = if ps > 0.0 { pose[i] / ps } else { 0.0 };
            let q = if cs > 0.0 { content[i] / cs } else { 0.0 };
            (c.id.clone(), (1.0 - alpha) * p + alpha * q)
        })
        .collect();
    out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    out
}

/// The seeded desk-scale generation setup: a synthetic reference face without
/// a smile and three exemplars of the same face smiling (rendered with
/// different pixel noise), generated from blank gray on `tiny-a`.
pub struct Desk {
    pub net: NetworkSpec<f64>,
    pub reference: Image<f64>,
    pub exemplars: Vec<Image<f64>>,
}

pub const DESK_SIZE: usize = 16;
pub const DESK_LAYER: &str = "relu2_1";
pub const DESK_SHALLOW_LAYER: &str = "relu1_1";
pub const DESK_LR: f64 = 100.0;
pub const DESK_MAX_ITERS: usize = 3000;

impl Desk {
    pub fn new() -> Desk {
        use facegen_core::synth::FaceParams;
        let net = facegen_core::make_seeded_network(42, &facegen_core::Arch::tiny_a()).unwrap();
        let face = FaceParams::random(2024).with_attribute("smiling", false);
        let smiling = face.with_attribute("smiling", true);
        Desk {
            net,
            reference: face.render(DESK_SIZE, DESK_SIZE, 1).0,
            exemplars: (0..3).map(|i| smiling.render(DESK_SIZE, DESK_SIZE, 10 + i).0).collect(),
        }
    }

    pub fn setup(&self) -> facegen_core::GenerationSetup<'_, f64> {
        let w = 1.0 / self.exemplars.len() as f64;
        facegen_core::GenerationSetup {
            objective: facegen_core::ObjectiveConfig::new(DESK_LAYER),
            optimizer: facegen_core::OptimizerConfig {
                learning_rate: DESK_LR,
                max_iters: DESK_MAX_ITERS,
                ..Default::default()
            },
            guides: self.exemplars.iter().map(|g| facegen_core::Guide::new(g, w)).collect(),
            reference: &self.reference,
            mask: None,
            color: None,
        }
    }
}

/// Means of consecutive non-overlapping windows of `w` values.
pub fn window_means(values: &[f64], w: usize) -> Vec<f64> {
    values.chunks(w).filter(|c| c.len() == w).map(|c| c.iter().sum::<f64>() / w as f64).collect()
}

/// Random point set; `grid` snaps to an 8×8 lattice so duplicates and
/// collinear triples are common.
pub fn random_points(seed: u64, n: usize, grid: bool) -> Vec<Point> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            if grid {
                // Integer coordinates force duplicates and collinear triples.
                Point::new(r.random_range(0..8) as f64, r.random_range(0..8) as f64)
            } else {
                Point::new(r.random_range(-50.0..50.0), r.random_range(-50.0..50.0))
            }
        })
        .collect()
}
