//! Gradient-descent image synthesis on the combined objective, plus the layer
//! and TV-weight sweeps.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::color::{apply_color_transform, central_window, fit_color_transform, sample_pixel_pairs, ColorTransform};
use crate::error::{Error, Result};
use crate::guided::{CorpusEntry, GuidedSet};
use crate::losses::{Guide, Objective, ObjectiveConfig};
use crate::mask::Mask;
use crate::network::NetworkSpec;
use crate::scalar::Real;
use crate::tensor::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitMode {
    #[default]
    BlankGray,
    ReferenceCopy,
    SeededNoise,
}

impl FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blank-gray" => Ok(InitMode::BlankGray),
            "reference-copy" => Ok(InitMode::ReferenceCopy),
            "seeded-noise" => Ok(InitMode::SeededNoise),
            other => Err(Error::InvalidArgument(format!("unknown init mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for InitMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InitMode::BlankGray => "blank-gray",
            InitMode::ReferenceCopy => "reference-copy",
            InitMode::SeededNoise => "seeded-noise",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub convergence_window: usize,
    pub convergence_rel_tol: f64,
    pub init: InitMode,
    pub seed: u64,
    pub clamp_each_step: bool,
    /// Heavy-ball coefficient; 0 is plain gradient descent.
    pub momentum: f64,
    /// Abort when the loss exceeds this multiple of its initial value.
    pub divergence_factor: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1.0,
            max_iters: 500,
            convergence_window: 10,
            convergence_rel_tol: 1e-4,
            init: InitMode::BlankGray,
            seed: 0,
            clamp_each_step: true,
            momentum: 0.0,
            divergence_factor: 1e6,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be positive".into()));
        }
        if self.convergence_window == 0 || self.convergence_window > self.max_iters {
            return Err(Error::InvalidArgument(format!(
                "convergence window {} must lie in 1..={}",
                self.convergence_window, self.max_iters
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorConfig {
    pub samples: usize,
    pub region: f64,
    pub seed: u64,
}

impl Default for ColorConfig {
    fn default() -> Self {
        ColorConfig {
            samples: 1000,
            region: 0.5,
            seed: 0,
        }
    }
}

/// Losses at one iterate, before the update is applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub total: f64,
    pub attr: f64,
    pub id: f64,
    pub tv: f64,
    /// `Σ (Î − I_r)²` over all pixel values.
    pub sqerr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult<T> {
    /// Output after colour transfer (equal to `raw_image` when disabled).
    pub image: Image<T>,
    pub raw_image: Image<T>,
    pub trace: Vec<TraceRow>,
    /// Objective evaluations; equals `trace.len()`.
    pub iterations_run: usize,
    /// Updates actually applied to the image.
    pub steps_applied: usize,
    pub converged: bool,
    pub color: Option<ColorTransform<T>>,
}

impl<T: Real> GenerationResult<T> {
    pub fn final_row(&self) -> &TraceRow {
        self.trace.last().expect("at least one evaluation")
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iter,total,attr,id,tv,sqerr\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{:e},{:e}", r.iter, r.total, r.attr, r.id, r.tv, r.sqerr);
        }
        s
    }

    pub fn save_trace(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.trace_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Error)]
pub enum GenerationError<T: Real> {
    #[error("optimizer diverged at iteration {iteration}: {reason}")]
    Diverged {
        iteration: usize,
        reason: String,
        last_good: Box<Image<T>>,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

/// Starting image for the given mode. Seeded noise is 0.5 plus uniform noise
/// in `[-0.05, 0.05)`.
pub fn initialize_target<T: Real>(
    mode: InitMode,
    dims: (usize, usize),
    seed: u64,
    reference: &Image<T>,
) -> Result<Image<T>> {
    let (h, w) = dims;
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!("invalid image dims {h}x{w}")));
    }
    Ok(match mode {
        InitMode::BlankGray => Image::filled(h, w, T::lit(0.5)),
        InitMode::ReferenceCopy => {
            if reference.dims() != dims {
                return Err(Error::Shape(format!("reference {:?} vs requested {dims:?}", reference.dims())));
            }
            reference.clone()
        }
        InitMode::SeededNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Image::from_fn(h, w, |_, _, _| T::lit(0.5 + rng.random_range(-0.05..0.05)))
        }
    })
}

/// Relative spread `(max − min)/max` of the last `window + 1` totals.
fn window_spread(trace: &[TraceRow], window: usize) -> Option<f64> {
    if trace.len() <= window {
        return None;
    }
    let tail = &trace[trace.len() - window - 1..];
    let hi = tail.iter().map(|r| r.total).fold(f64::NEG_INFINITY, f64::max);
    let lo = tail.iter().map(|r| r.total).fold(f64::INFINITY, f64::min);
    Some(if hi > 0.0 { (hi - lo) / hi } else { 0.0 })
}

/// Descent on explicit guides. Both public entry points funnel here.
pub fn run_with_guides<T: Real>(
    net: &NetworkSpec<T>,
    objective: &ObjectiveConfig,
    optimizer: &OptimizerConfig,
    guides: &[Guide<'_, T>],
    reference: &Image<T>,
    mask: Option<&Mask>,
    color: Option<&ColorConfig>,
) -> std::result::Result<GenerationResult<T>, GenerationError<T>> {
    optimizer.validate()?;
    let obj = Objective::new(net, objective, guides, reference, mask)?;
    let mut image = initialize_target(optimizer.init, reference.dims(), optimizer.seed, reference)?;
    let lr = T::lit(optimizer.learning_rate);
    let mu = T::lit(optimizer.momentum);
    let mut velocity: Option<Image<T>> = None;
    let mut trace: Vec<TraceRow> = Vec::new();
    let mut converged = false;
    let mut steps = 0;
    for iter in 0..optimizer.max_iters {
        let value = obj.evaluate(&image)?;
        let total = value.total.value.as_f64();
        let reason = if !total.is_finite() {
            Some("non-finite loss".to_string())
        } else if !value.total.gradient.all_finite() {
            Some("non-finite gradient".to_string())
        } else if trace
            .first()
            .is_some_and(|r| r.total > 0.0 && total > r.total * optimizer.divergence_factor)
        {
            Some(format!("loss grew beyond {}x its initial value", optimizer.divergence_factor))
        } else {
            None
        };
        if let Some(reason) = reason {
            return Err(GenerationError::Diverged {
                iteration: iter,
                reason,
                last_good: Box::new(image),
            });
        }
        trace.push(TraceRow {
            iter,
            total,
            attr: value.attr.as_f64(),
            id: value.id.as_f64(),
            tv: value.tv.as_f64(),
            sqerr: image.squared_error(reference)?.as_f64(),
        });
        if total == 0.0
            || window_spread(&trace, optimizer.convergence_window).is_some_and(|s| s < optimizer.convergence_rel_tol)
        {
            converged = true;
            break;
        }
        if iter + 1 == optimizer.max_iters {
            break;
        }
        let mut step = value.total.gradient;
        if optimizer.momentum > 0.0 {
            if let Some(v) = &velocity {
                step.as_map_mut().axpy(mu, v.as_map())?;
            }
            velocity = Some(step.clone());
        }
        image.as_map_mut().axpy(-lr, step.as_map())?;
        if optimizer.clamp_each_step {
            image = image.clamp01();
        }
        steps += 1;
    }
    let raw_image = image;
    let (image, color) = match color {
        Some(cc) => {
            let (_, _, wh, ww) = central_window(raw_image.height(), raw_image.width(), cc.region);
            let sample = sample_pixel_pairs(&raw_image, reference, cc.samples.min(wh * ww), cc.region, cc.seed)?;
            let t = fit_color_transform(&sample)?;
            (apply_color_transform(&raw_image, &t), Some(t))
        }
        None => (raw_image.clone(), None),
    };
    Ok(GenerationResult {
        image,
        raw_image,
        iterations_run: trace.len(),
        steps_applied: steps,
        trace,
        converged,
        color,
    })
}

/// Descent with guides taken from a selected guided set.
pub fn run_generation<T: Real>(
    net: &NetworkSpec<T>,
    objective: &ObjectiveConfig,
    optimizer: &OptimizerConfig,
    guided: &GuidedSet<'_, T>,
    reference: &CorpusEntry<T>,
    mask: Option<&Mask>,
    color: Option<&ColorConfig>,
) -> std::result::Result<GenerationResult<T>, GenerationError<T>> {
    run_with_guides(net, objective, optimizer, &guided.guides(), &reference.image, mask, color)
}

/// Descent with user-supplied guided images, skipping corpus retrieval.
pub fn run_guided_image_mode<T: Real>(
    net: &NetworkSpec<T>,
    objective: &ObjectiveConfig,
    optimizer: &OptimizerConfig,
    guided_images: &[Guide<'_, T>],
    reference: &Image<T>,
    mask: Option<&Mask>,
    color: Option<&ColorConfig>,
) -> std::result::Result<GenerationResult<T>, GenerationError<T>> {
    run_with_guides(net, objective, optimizer, guided_images, reference, mask, color)
}

/// Everything a generation run needs apart from the network.
#[derive(Debug, Clone)]
pub struct GenerationSetup<'a, T> {
    pub objective: ObjectiveConfig,
    pub optimizer: OptimizerConfig,
    pub guides: Vec<Guide<'a, T>>,
    pub reference: &'a Image<T>,
    pub mask: Option<&'a Mask>,
    pub color: Option<ColorConfig>,
}

impl<'a, T: Real> GenerationSetup<'a, T> {
    pub fn run(&self, net: &NetworkSpec<T>) -> std::result::Result<GenerationResult<T>, GenerationError<T>> {
        run_with_guides(
            net,
            &self.objective,
            &self.optimizer,
            &self.guides,
            self.reference,
            self.mask,
            self.color.as_ref(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct LayerSweepRow<T> {
    pub layer: String,
    pub final_sqerr: f64,
    pub result: GenerationResult<T>,
}

#[derive(Debug, Clone)]
pub struct TvSweepRow<T> {
    pub gamma: f64,
    pub final_tv: f64,
    pub result: GenerationResult<T>,
}

/// One run per layer; only the compared layer (attribute and identity) changes.
pub fn layer_sweep<T: Real, S: AsRef<str> + Sync>(
    net: &NetworkSpec<T>,
    setup: &GenerationSetup<'_, T>,
    layers: &[S],
) -> std::result::Result<Vec<LayerSweepRow<T>>, GenerationError<T>> {
    for l in layers {
        net.layer_index(l.as_ref())?;
    }
    layers
        .par_iter()
        .map(|layer| {
            let mut s = setup.clone();
            s.objective.layer = layer.as_ref().to_string();
            s.objective.id_layer = None;
            let result = s.run(net)?;
            Ok(LayerSweepRow {
                layer: layer.as_ref().to_string(),
                final_sqerr: result.final_row().sqerr,
                result,
            })
        })
        .collect()
}

/// One run per TV weight.
pub fn tv_sweep<T: Real>(
    net: &NetworkSpec<T>,
    setup: &GenerationSetup<'_, T>,
    gammas: &[f64],
) -> std::result::Result<Vec<TvSweepRow<T>>, GenerationError<T>> {
    gammas
        .par_iter()
        .map(|&gamma| {
            let mut s = setup.clone();
            s.objective.gamma = gamma;
            let result = s.run(net)?;
            Ok(TvSweepRow {
                gamma,
                final_tv: result.final_row().tv,
                result,
            })
        })
        .collect()
}

pub fn layer_table<T>(rows: &[LayerSweepRow<T>]) -> String {
    let mut s = String::from("layer,sqerr\n");
    for r in rows {
        let _ = writeln!(s, "{},{:e}", r.layer, r.final_sqerr);
    }
    s
}

pub fn tv_table<T>(rows: &[TvSweepRow<T>]) -> String {
    let mut s = String::from("gamma,tv,sqerr\n");
    for r in rows {
        let sq = r.result.trace.last().map_or(f64::NAN, |t| t.sqerr);
        let _ = writeln!(s, "{:e},{:e},{:e}", r.gamma, r.final_tv, sq);
    }
    s
}
