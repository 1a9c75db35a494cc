//! Feature-space and total-variation losses with image-space gradients,
//! plus the weighted objective built from them.
//!
//! Feature maps entering a perceptual loss are rectified at the compared
//! layer, and the layer gradient is gated to zero wherever the target's
//! feature is negative. The gate is then the exact derivative of the reported
//! value, so every gradient here is consistent with finite differences.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::network::{backward_from_index, forward_to_index, NetworkSpec};
use crate::scalar::Real;
use crate::tensor::{FeatureMap, Image};

/// Tolerance on `Σ w_i = 1` for guided weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LossValue<T> {
    pub value: T,
    pub gradient: Image<T>,
}

/// One image of the guided set with its weight `w_i`.
#[derive(Debug, Clone, Copy)]
pub struct Guide<'a, T> {
    pub image: &'a Image<T>,
    pub weight: f64,
}

impl<'a, T> Guide<'a, T> {
    pub fn new(image: &'a Image<T>, weight: f64) -> Self {
        Guide { image, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig {
    /// Layer the attribute loss (and, unless overridden, the identity loss) compares at.
    pub layer: String,
    pub id_layer: Option<String>,
    /// Multiplier on the attribute term; 1 reproduces the usual objective.
    pub attr_weight: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub tv_beta: f64,
    /// Also multiply the guided images by the mask before comparing.
    pub mask_guided: bool,
}

impl ObjectiveConfig {
    pub fn new(layer: impl Into<String>) -> Self {
        ObjectiveConfig {
            layer: layer.into(),
            id_layer: None,
            attr_weight: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            tv_beta: 2.0,
            mask_guided: false,
        }
    }

    pub fn identity_layer(&self) -> &str {
        self.id_layer.as_deref().unwrap_or(&self.layer)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("attr_weight", self.attr_weight), ("lambda", self.lambda), ("gamma", self.gamma)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        check_beta(self.tv_beta)
    }
}

/// Objective value and gradient with the unweighted component values.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveValue<T> {
    pub total: LossValue<T>,
    pub attr: T,
    pub id: T,
    pub tv: T,
}

fn rectify<T: Real>(map: &FeatureMap<T>) -> FeatureMap<T> {
    map.map(|v| v.max(T::zero()))
}

/// Rectified features of `image` at layer `idx`.
fn layer_features<T: Real>(net: &NetworkSpec<T>, idx: usize, image: &Image<T>) -> Result<FeatureMap<T>> {
    Ok(rectify(&forward_to_index(net, image, idx)?.into_last()))
}

/// `Σ_i w_i · ½‖relu(φ(target)) − f_i‖² / N` and its image gradient.
fn feature_loss<T: Real>(
    net: &NetworkSpec<T>,
    idx: usize,
    target: &Image<T>,
    refs: &[(&FeatureMap<T>, T)],
) -> Result<LossValue<T>> {
    let stack = forward_to_index(net, target, idx)?;
    let feat = stack.output(idx);
    let n = T::lit(feat.len() as f64);
    let half = T::lit(0.5);
    let mut value = T::zero();
    let mut layer_grad = FeatureMap::zeros(feat.channels(), feat.height(), feat.width());
    for &(r, w) in refs {
        feat.check_same_shape(r)?;
        let mut sq = T::zero();
        for ((&f, &rv), g) in feat.as_slice().iter().zip(r.as_slice()).zip(layer_grad.as_mut_slice()) {
            let d = f.max(T::zero()) - rv;
            sq += d * d;
            if f >= T::zero() {
                *g += w * d / n;
            }
        }
        value += w * half * sq / n;
    }
    let gradient = backward_from_index(net, &stack, idx, &layer_grad)?;
    Ok(LossValue { value, gradient })
}

fn check_pair<T: Real>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    a.check_same_dims(b)
}

/// `1/(2·C·H·W) · ‖φ_l(target) − φ_l(reference)‖²_F` with gradient w.r.t. `target`.
pub fn perceptual_loss<T: Real>(
    net: &NetworkSpec<T>,
    layer: &str,
    target: &Image<T>,
    reference: &Image<T>,
) -> Result<LossValue<T>> {
    check_pair(target, reference)?;
    let idx = net.layer_index(layer)?;
    let rf = layer_features(net, idx, reference)?;
    feature_loss(net, idx, target, &[(&rf, T::one())])
}

/// Identity term: the perceptual loss against the reference face.
pub fn identity_loss<T: Real>(
    net: &NetworkSpec<T>,
    layer: &str,
    target: &Image<T>,
    reference: &Image<T>,
) -> Result<LossValue<T>> {
    perceptual_loss(net, layer, target, reference)
}

/// Value only, for ranking candidates.
pub fn perceptual_distance<T: Real>(
    net: &NetworkSpec<T>,
    layer: &str,
    a: &Image<T>,
    b: &Image<T>,
) -> Result<T> {
    check_pair(a, b)?;
    let idx = net.layer_index(layer)?;
    Ok(feature_distance(&layer_features(net, idx, a)?, &layer_features(net, idx, b)?))
}

/// `½‖a − b‖² / N` on already-rectified maps.
pub(crate) fn feature_distance<T: Real>(a: &FeatureMap<T>, b: &FeatureMap<T>) -> T {
    let n = T::lit(a.len() as f64);
    let sq: T = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum();
    T::lit(0.5) * sq / n
}

pub(crate) fn rectified_features<T: Real>(net: &NetworkSpec<T>, layer: &str, image: &Image<T>) -> Result<FeatureMap<T>> {
    layer_features(net, net.layer_index(layer)?, image)
}

fn check_guides<T: Real>(target: &Image<T>, guided: &[Guide<'_, T>]) -> Result<()> {
    if guided.is_empty() {
        return Err(Error::InvalidArgument("guided set is empty".into()));
    }
    let mut sum = 0.0;
    for g in guided {
        if !g.weight.is_finite() || g.weight < 0.0 {
            return Err(Error::InvalidArgument(format!("guided weight {} is not a nonnegative number", g.weight)));
        }
        check_pair(target, g.image)?;
        sum += g.weight;
    }
    if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::InvalidArgument(format!("guided weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Weighted perceptual loss against every guided image. With a mask, each
/// term compares `target ⊗ M` and the returned gradient is zero wherever the
/// mask is off.
pub fn attribute_loss<T: Real>(
    net: &NetworkSpec<T>,
    layer: &str,
    target: &Image<T>,
    guided: &[Guide<'_, T>],
    mask: Option<&Mask>,
) -> Result<LossValue<T>> {
    attribute_loss_with(net, layer, target, guided, mask, false)
}

/// [`attribute_loss`] with control over whether guided images are masked too.
pub fn attribute_loss_with<T: Real>(
    net: &NetworkSpec<T>,
    layer: &str,
    target: &Image<T>,
    guided: &[Guide<'_, T>],
    mask: Option<&Mask>,
    mask_guided: bool,
) -> Result<LossValue<T>> {
    let idx = net.layer_index(layer)?;
    let feats = guided_features(net, idx, target, guided, mask, mask_guided)?;
    attribute_from_features(net, idx, target, &feats, mask)
}

fn guided_features<T: Real>(
    net: &NetworkSpec<T>,
    idx: usize,
    target: &Image<T>,
    guided: &[Guide<'_, T>],
    mask: Option<&Mask>,
    mask_guided: bool,
) -> Result<Vec<(FeatureMap<T>, T)>> {
    check_guides(target, guided)?;
    if let Some(m) = mask {
        m.check_dims(target.dims())?;
    }
    guided
        .par_iter()
        .map(|g| {
            let f = match (mask, mask_guided) {
                (Some(m), true) => layer_features(net, idx, &m.apply(g.image)?)?,
                _ => layer_features(net, idx, g.image)?,
            };
            Ok((f, T::lit(g.weight)))
        })
        .collect()
}

fn attribute_from_features<T: Real>(
    net: &NetworkSpec<T>,
    idx: usize,
    target: &Image<T>,
    feats: &[(FeatureMap<T>, T)],
    mask: Option<&Mask>,
) -> Result<LossValue<T>> {
    let refs: Vec<(&FeatureMap<T>, T)> = feats.iter().map(|(f, w)| (f, *w)).collect();
    match mask {
        None => feature_loss(net, idx, target, &refs),
        Some(m) => {
            let mut loss = feature_loss(net, idx, &m.apply(target)?, &refs)?;
            m.restrict(&mut loss.gradient)?;
            Ok(loss)
        }
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 1.0) || !beta.is_finite() {
        return Err(Error::InvalidArgument(format!("TV exponent must be >= 1, got {beta}")));
    }
    Ok(())
}

/// `Σ ((I[y+1,x]−I[y,x])² + (I[y,x+1]−I[y,x])²)^{β/2}` with out-of-image
/// differences dropped, on any feature map.
pub fn tv_map<T: Real>(map: &FeatureMap<T>, beta: f64) -> Result<(T, FeatureMap<T>)> {
    check_beta(beta)?;
    let (c, h, w) = map.shape();
    let half_beta = T::lit(beta / 2.0);
    let quadratic = beta == 2.0;
    let two = T::lit(2.0);
    let mut value = T::zero();
    let mut grad = FeatureMap::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let v = map.get(ch, y, x);
                let dy = if y + 1 < h { map.get(ch, y + 1, x) - v } else { T::zero() };
                let dx = if x + 1 < w { map.get(ch, y, x + 1) - v } else { T::zero() };
                let s = dy * dy + dx * dx;
                let coeff = if quadratic {
                    value += s;
                    T::one()
                } else if s > T::zero() {
                    value += s.powf(half_beta);
                    half_beta * s.powf(half_beta - T::one())
                } else {
                    T::zero()
                };
                if coeff == T::zero() {
                    continue;
                }
                let gs = grad.as_mut_slice();
                let i = map.index(ch, y, x);
                gs[i] -= coeff * two * (dy + dx);
                if y + 1 < h {
                    gs[map.index(ch, y + 1, x)] += coeff * two * dy;
                }
                if x + 1 < w {
                    gs[map.index(ch, y, x + 1)] += coeff * two * dx;
                }
            }
        }
    }
    Ok((value, grad))
}

pub fn tv_loss<T: Real>(target: &Image<T>, beta: f64) -> Result<LossValue<T>> {
    let (value, grad) = tv_map(target.as_map(), beta)?;
    Ok(LossValue {
        value,
        gradient: Image::from_map(grad)?,
    })
}

/// The combined objective with reference and guided features computed once,
/// for repeated evaluation inside the descent loop.
pub struct Objective<'a, T> {
    net: &'a NetworkSpec<T>,
    attr_idx: usize,
    id_idx: usize,
    attr_weight: T,
    lambda: T,
    gamma: T,
    beta: f64,
    guides: Vec<(FeatureMap<T>, T)>,
    reference: FeatureMap<T>,
    mask: Option<&'a Mask>,
    dims: (usize, usize),
}

impl<'a, T: Real> Objective<'a, T> {
    pub fn new(
        net: &'a NetworkSpec<T>,
        cfg: &ObjectiveConfig,
        guided: &[Guide<'_, T>],
        reference: &Image<T>,
        mask: Option<&'a Mask>,
    ) -> Result<Self> {
        cfg.validate()?;
        let attr_idx = net.layer_index(&cfg.layer)?;
        let id_idx = net.layer_index(cfg.identity_layer())?;
        let guides = guided_features(net, attr_idx, reference, guided, mask, cfg.mask_guided)?;
        Ok(Objective {
            net,
            attr_idx,
            id_idx,
            attr_weight: T::lit(cfg.attr_weight),
            lambda: T::lit(cfg.lambda),
            gamma: T::lit(cfg.gamma),
            beta: cfg.tv_beta,
            guides,
            reference: layer_features(net, id_idx, reference)?,
            mask,
            dims: reference.dims(),
        })
    }

    pub fn evaluate(&self, target: &Image<T>) -> Result<ObjectiveValue<T>> {
        if target.dims() != self.dims {
            return Err(Error::Shape(format!("target {:?} vs reference {:?}", target.dims(), self.dims)));
        }
        let attr = attribute_from_features(self.net, self.attr_idx, target, &self.guides, self.mask)?;
        let id = feature_loss(self.net, self.id_idx, target, &[(&self.reference, T::one())])?;
        let tv = tv_loss(target, self.beta)?;
        let value = self.attr_weight * attr.value + self.lambda * id.value + self.gamma * tv.value;
        let mut gradient = Image::zeros(self.dims.0, self.dims.1);
        let g = gradient.as_map_mut();
        g.axpy(self.attr_weight, attr.gradient.as_map())?;
        g.axpy(self.lambda, id.gradient.as_map())?;
        g.axpy(self.gamma, tv.gradient.as_map())?;
        Ok(ObjectiveValue {
            total: LossValue { value, gradient },
            attr: attr.value,
            id: id.value,
            tv: tv.value,
        })
    }
}

/// `attr + λ·id + γ·TV` at `target`.
pub fn total_objective<T: Real>(
    net: &NetworkSpec<T>,
    cfg: &ObjectiveConfig,
    target: &Image<T>,
    guided: &[Guide<'_, T>],
    reference: &Image<T>,
    mask: Option<&Mask>,
) -> Result<ObjectiveValue<T>> {
    check_pair(target, reference)?;
    Objective::new(net, cfg, guided, reference, mask)?.evaluate(target)
}
