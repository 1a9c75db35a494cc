//! Minimal differentiable convolutional feature network.
//!
//! A [`NetworkSpec`] is plain data: an ordered list of convolution, ReLU and
//! max-pool layers. [`forward`] records every intermediate map in a
//! [`FeatureStack`]; [`backward_to_image`] pulls a gradient defined at any
//! executed layer back to the input image.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::tensor::{FeatureMap, Image};

/// Number of channels every network consumes.
pub const INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
    /// `out_ch × in_ch × kernel_h × kernel_w`, row-major.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> ConvLayer<T> {
    #[inline]
    fn w(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> T {
        self.weights[((oc * self.in_ch + ic) * self.kernel_h + ky) * self.kernel_w + kx]
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel_h * self.kernel_w
    }

    fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let ph = h + 2 * self.pad;
        let pw = w + 2 * self.pad;
        if ph < self.kernel_h || pw < self.kernel_w {
            return Err(Error::Shape(format!(
                "layer `{}`: {h}x{w} input (pad {}) is smaller than the {}x{} kernel",
                self.name, self.pad, self.kernel_h, self.kernel_w
            )));
        }
        Ok((
            (ph - self.kernel_h) / self.stride + 1,
            (pw - self.kernel_w) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerDesc<T> {
    Conv(ConvLayer<T>),
    Relu { name: String },
    MaxPool { name: String, kernel: usize, stride: usize },
}

impl<T> LayerDesc<T> {
    pub fn name(&self) -> &str {
        match self {
            LayerDesc::Conv(c) => &c.name,
            LayerDesc::Relu { name } | LayerDesc::MaxPool { name, .. } => name,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            LayerDesc::Conv(_) => "conv",
            LayerDesc::Relu { .. } => "relu",
            LayerDesc::MaxPool { .. } => "maxpool",
        }
    }
}

/// Validated, immutable layer list.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec<T> {
    layers: Vec<LayerDesc<T>>,
}

impl<T: Real> NetworkSpec<T> {
    /// Validates channel chaining, unique names, strides, kernel sizes, weight
    /// tensor sizes and finiteness.
    pub fn new(layers: Vec<LayerDesc<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("network has no layers".into()));
        }
        let mut names = HashSet::new();
        let mut channels = INPUT_CHANNELS;
        for layer in &layers {
            let name = layer.name();
            if name.is_empty() {
                return Err(Error::InvalidNetwork("empty layer name".into()));
            }
            if !names.insert(name.to_string()) {
                return Err(Error::InvalidNetwork(format!("duplicate layer name `{name}`")));
            }
            match layer {
                LayerDesc::Conv(c) => {
                    if c.in_ch != channels {
                        return Err(Error::InvalidNetwork(format!(
                            "layer `{name}` expects {} input channels but receives {channels}",
                            c.in_ch
                        )));
                    }
                    if c.out_ch == 0 || c.kernel_h == 0 || c.kernel_w == 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "layer `{name}` has a zero-sized dimension"
                        )));
                    }
                    if c.stride == 0 {
                        return Err(Error::InvalidNetwork(format!("layer `{name}` has stride 0")));
                    }
                    let expected = c.out_ch * c.in_ch * c.kernel_h * c.kernel_w;
                    if c.weights.len() != expected {
                        return Err(Error::InvalidNetwork(format!(
                            "layer `{name}` declares {}x{}x{}x{} weights ({expected}) but holds {}",
                            c.out_ch,
                            c.in_ch,
                            c.kernel_h,
                            c.kernel_w,
                            c.weights.len()
                        )));
                    }
                    if c.bias.len() != c.out_ch {
                        return Err(Error::InvalidNetwork(format!(
                            "layer `{name}` has {} biases for {} output channels",
                            c.bias.len(),
                            c.out_ch
                        )));
                    }
                    if c.weights.iter().chain(&c.bias).any(|v| !v.is_finite()) {
                        return Err(Error::NonFinite(format!("weights of layer `{name}`")));
                    }
                    channels = c.out_ch;
                }
                LayerDesc::Relu { .. } => {}
                LayerDesc::MaxPool { kernel, stride, .. } => {
                    if *kernel == 0 || *stride == 0 {
                        return Err(Error::InvalidNetwork(format!(
                            "pool `{name}` needs kernel and stride >= 1"
                        )));
                    }
                }
            }
        }
        Ok(NetworkSpec { layers })
    }

    pub fn layers(&self) -> &[LayerDesc<T>] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_index(&self, name: &str) -> Result<usize> {
        self.layers
            .iter()
            .position(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name())
    }

    /// Names of the convolution layers, in order.
    pub fn conv_names(&self) -> Vec<&str> {
        self.layers
            .iter()
            .filter(|l| matches!(l, LayerDesc::Conv(_)))
            .map(|l| l.name())
            .collect()
    }

    /// Output shape of every layer for an `h × w` input.
    pub fn shapes(&self, h: usize, w: usize) -> Result<Vec<(usize, usize, usize)>> {
        let mut out = Vec::with_capacity(self.layers.len());
        let (mut c, mut h, mut w) = (INPUT_CHANNELS, h, w);
        for layer in &self.layers {
            match layer {
                LayerDesc::Conv(conv) => {
                    let (oh, ow) = conv.output_dims(h, w)?;
                    c = conv.out_ch;
                    h = oh;
                    w = ow;
                }
                LayerDesc::Relu { .. } => {}
                LayerDesc::MaxPool { name, kernel, stride } => {
                    if h < *kernel || w < *kernel {
                        return Err(Error::Shape(format!(
                            "pool `{name}`: {h}x{w} input smaller than kernel {kernel}"
                        )));
                    }
                    h = (h - kernel) / stride + 1;
                    w = (w - kernel) / stride + 1;
                }
            }
            out.push((c, h, w));
        }
        Ok(out)
    }

    pub fn cast<U: Real>(&self) -> NetworkSpec<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        NetworkSpec {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    LayerDesc::Conv(c) => LayerDesc::Conv(ConvLayer {
                        name: c.name.clone(),
                        in_ch: c.in_ch,
                        out_ch: c.out_ch,
                        kernel_h: c.kernel_h,
                        kernel_w: c.kernel_w,
                        stride: c.stride,
                        pad: c.pad,
                        weights: conv(&c.weights),
                        bias: conv(&c.bias),
                    }),
                    LayerDesc::Relu { name } => LayerDesc::Relu { name: name.clone() },
                    LayerDesc::MaxPool { name, kernel, stride } => LayerDesc::MaxPool {
                        name: name.clone(),
                        kernel: *kernel,
                        stride: *stride,
                    },
                })
                .collect(),
        }
    }
}

/// Shape-only layer description used to build seeded networks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArchLayer {
    Conv {
        name: String,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu {
        name: String,
    },
    MaxPool {
        name: String,
        kernel: usize,
        stride: usize,
    },
}

/// A layer-shape list. Input channels of each convolution follow from the
/// preceding layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Arch {
    pub layers: Vec<ArchLayer>,
}

impl Arch {
    /// Two convolutions with a ReLU and a 2×2 max-pool between them.
    pub fn tiny_a() -> Self {
        Self::parse("conv1_1=conv(4,3,1,1); relu1_1=relu; pool1=maxpool(2,2); conv2_1=conv(6,3,1,1); relu2_1=relu")
            .expect("builtin arch")
    }

    /// VGG-style stack of four convolutions in two blocks.
    pub fn tiny_b() -> Self {
        Self::parse(
            "conv1_1=conv(4,3,1,1); relu1_1=relu; conv1_2=conv(4,3,1,1); relu1_2=relu; pool1=maxpool(2,2); \
             conv2_1=conv(6,3,1,1); relu2_1=relu; conv2_2=conv(6,3,1,1); relu2_2=relu",
        )
        .expect("builtin arch")
    }

    /// Strided and rectangular-receptive-field variant.
    pub fn tiny_c() -> Self {
        Self::parse("conv1=conv(5,5,2,2); relu1=relu; conv2=conv(4,3,1,0); relu2=relu; pool2=maxpool(2,1)")
            .expect("builtin arch")
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "tiny-a" => Some(Self::tiny_a()),
            "tiny-b" => Some(Self::tiny_b()),
            "tiny-c" => Some(Self::tiny_c()),
            _ => None,
        }
    }

    /// Parses `name=conv(out,kernel,stride,pad); name=relu; name=maxpool(kernel,stride)`.
    /// Either `;` or newlines separate layers.
    pub fn parse(text: &str) -> Result<Self> {
        let mut layers = Vec::new();
        for item in text.split([';', '\n']).map(str::trim).filter(|s| !s.is_empty()) {
            let (name, body) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("arch item `{item}` lacks `name=`")))?;
            let name = name.trim().to_string();
            let body = body.trim();
            let (kind, args) = match body.split_once('(') {
                Some((k, rest)) => {
                    let inner = rest.strip_suffix(')').ok_or_else(|| {
                        Error::InvalidArgument(format!("arch item `{item}` missing `)`"))
                    })?;
                    let args = inner
                        .split(',')
                        .map(|a| {
                            a.trim().parse::<usize>().map_err(|_| {
                                Error::InvalidArgument(format!("bad integer `{a}` in `{item}`"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    (k.trim(), args)
                }
                None => (body, Vec::new()),
            };
            let layer = match (kind, args.as_slice()) {
                ("conv", &[out_ch, kernel, stride, pad]) => ArchLayer::Conv {
                    name,
                    out_ch,
                    kernel,
                    stride,
                    pad,
                },
                ("relu", &[]) => ArchLayer::Relu { name },
                ("maxpool", &[kernel, stride]) => ArchLayer::MaxPool { name, kernel, stride },
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "unrecognised arch item `{item}`"
                    )))
                }
            };
            layers.push(layer);
        }
        Ok(Arch { layers })
    }
}

/// Builds a network whose weights come from a ChaCha8 stream seeded with
/// `seed`: standard normal draws scaled by `1/sqrt(fan_in)`, biases by a further
/// factor of 0.1. Every value is rounded through `f32` so the network survives
/// the binary weight format unchanged.
pub fn make_seeded_network<T: Real>(seed: u64, arch: &Arch) -> Result<NetworkSpec<T>> {
    if arch.layers.is_empty() {
        return Err(Error::InvalidArgument("empty architecture".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |scale: f64| -> T {
        let z: f64 = StandardNormal.sample(&mut rng);
        T::lit((z * scale) as f32 as f64)
    };
    let mut channels = INPUT_CHANNELS;
    let mut layers = Vec::with_capacity(arch.layers.len());
    for layer in &arch.layers {
        layers.push(match layer {
            ArchLayer::Conv {
                name,
                out_ch,
                kernel,
                stride,
                pad,
            } => {
                let fan_in = channels * kernel * kernel;
                let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
                let weights = (0..out_ch * fan_in).map(|_| draw(scale)).collect();
                let bias = (0..*out_ch).map(|_| draw(0.1 * scale)).collect();
                let conv = ConvLayer {
                    name: name.clone(),
                    in_ch: channels,
                    out_ch: *out_ch,
                    kernel_h: *kernel,
                    kernel_w: *kernel,
                    stride: *stride,
                    pad: *pad,
                    weights,
                    bias,
                };
                channels = *out_ch;
                LayerDesc::Conv(conv)
            }
            ArchLayer::Relu { name } => LayerDesc::Relu { name: name.clone() },
            ArchLayer::MaxPool { name, kernel, stride } => LayerDesc::MaxPool {
                name: name.clone(),
                kernel: *kernel,
                stride: *stride,
            },
        });
    }
    NetworkSpec::new(layers)
}

/// Per-layer outputs of one forward pass, plus the pooling argmaxes needed by
/// the backward pass.
#[derive(Debug, Clone)]
pub struct FeatureStack<T> {
    input: FeatureMap<T>,
    names: Vec<String>,
    outputs: Vec<FeatureMap<T>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

impl<T: Real> FeatureStack<T> {
    pub fn input(&self) -> &FeatureMap<T> {
        &self.input
    }

    /// Number of layers executed.
    pub fn depth(&self) -> usize {
        self.outputs.len()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureMap<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.outputs[i])
    }

    pub fn output(&self, index: usize) -> &FeatureMap<T> {
        &self.outputs[index]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn last(&self) -> &FeatureMap<T> {
        self.outputs.last().expect("stack is never empty")
    }

    pub fn into_last(mut self) -> FeatureMap<T> {
        self.outputs.pop().expect("stack is never empty")
    }
}

/// Runs `net` on `image` through the layer named `up_to` (inclusive).
pub fn forward<T: Real>(net: &NetworkSpec<T>, image: &Image<T>, up_to: &str) -> Result<FeatureStack<T>> {
    let last = net.layer_index(up_to)?;
    forward_to_index(net, image, last)
}

pub fn forward_to_index<T: Real>(
    net: &NetworkSpec<T>,
    image: &Image<T>,
    last: usize,
) -> Result<FeatureStack<T>> {
    if last >= net.len() {
        return Err(Error::UnknownLayer(format!("#{last}")));
    }
    if !image.all_finite() {
        return Err(Error::NonFinite("input image".into()));
    }
    net.shapes(image.height(), image.width())?;
    let mut stack = FeatureStack {
        input: image.as_map().clone(),
        names: Vec::with_capacity(last + 1),
        outputs: Vec::with_capacity(last + 1),
        pool_argmax: Vec::with_capacity(last + 1),
    };
    for layer in &net.layers()[..=last] {
        let x = stack.outputs.last().unwrap_or(&stack.input);
        let (y, argmax) = match layer {
            LayerDesc::Conv(conv) => (conv_forward(conv, x)?, None),
            LayerDesc::Relu { .. } => (x.map(|v| v.max(T::zero())), None),
            LayerDesc::MaxPool { kernel, stride, .. } => {
                let (y, idx) = maxpool_forward(x, *kernel, *stride);
                (y, Some(idx))
            }
        };
        stack.names.push(layer.name().to_string());
        stack.outputs.push(y);
        stack.pool_argmax.push(argmax);
    }
    Ok(stack)
}

/// Pulls `grad_at_layer` (∂J/∂φ_layer) back to ∂J/∂image.
pub fn backward_to_image<T: Real>(
    net: &NetworkSpec<T>,
    stack: &FeatureStack<T>,
    layer: &str,
    grad_at_layer: &FeatureMap<T>,
) -> Result<Image<T>> {
    let idx = net.layer_index(layer)?;
    backward_from_index(net, stack, idx, grad_at_layer)
}

pub fn backward_from_index<T: Real>(
    net: &NetworkSpec<T>,
    stack: &FeatureStack<T>,
    idx: usize,
    grad_at_layer: &FeatureMap<T>,
) -> Result<Image<T>> {
    if idx >= stack.depth() {
        return Err(Error::Shape(format!(
            "feature stack holds {} layer(s); cannot start backward at #{idx}",
            stack.depth()
        )));
    }
    for (i, layer) in net.layers()[..stack.depth()].iter().enumerate() {
        if layer.name() != stack.names[i] {
            return Err(Error::Shape(format!(
                "feature stack layer #{i} is `{}` but the network has `{}`",
                stack.names[i],
                layer.name()
            )));
        }
    }
    if grad_at_layer.shape() != stack.outputs[idx].shape() {
        return Err(Error::Shape(format!(
            "gradient {:?} vs layer `{}` output {:?}",
            grad_at_layer.shape(),
            stack.names[idx],
            stack.outputs[idx].shape()
        )));
    }
    let mut grad = grad_at_layer.clone();
    for i in (0..=idx).rev() {
        let x = if i == 0 { &stack.input } else { &stack.outputs[i - 1] };
        grad = match &net.layers()[i] {
            LayerDesc::Conv(conv) => conv_backward_input(conv, x.shape(), &grad),
            LayerDesc::Relu { .. } => x.zip_map(&grad, |xi, g| if xi > T::zero() { g } else { T::zero() })?,
            LayerDesc::MaxPool { .. } => {
                let argmax = stack.pool_argmax[i].as_ref().expect("pool records argmax");
                maxpool_backward(x.shape(), argmax, &grad)
            }
        };
    }
    Image::from_map(grad)
}

fn conv_forward<T: Real>(conv: &ConvLayer<T>, x: &FeatureMap<T>) -> Result<FeatureMap<T>> {
    let (c, h, w) = x.shape();
    if c != conv.in_ch {
        return Err(Error::Shape(format!(
            "layer `{}` expects {} channels, got {c}",
            conv.name, conv.in_ch
        )));
    }
    let (oh, ow) = conv.output_dims(h, w)?;
    let mut out = FeatureMap::zeros(conv.out_ch, oh, ow);
    let plane = oh * ow;
    let (s, p) = (conv.stride as isize, conv.pad as isize);
    out.as_mut_slice()
        .par_chunks_mut(plane)
        .enumerate()
        .for_each(|(oc, dst)| {
            dst.fill(conv.bias[oc]);
            for ic in 0..conv.in_ch {
                let src = x.plane(ic);
                for ky in 0..conv.kernel_h {
                    for kx in 0..conv.kernel_w {
                        let wv = conv.w(oc, ic, ky, kx);
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let drow = &mut dst[oy * ow..(oy + 1) * ow];
                            for (ox, d) in drow.iter_mut().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    *d += wv * row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
    Ok(out)
}

/// Transposed convolution with the stored weights.
fn conv_backward_input<T: Real>(
    conv: &ConvLayer<T>,
    in_shape: (usize, usize, usize),
    grad_out: &FeatureMap<T>,
) -> FeatureMap<T> {
    let (c, h, w) = in_shape;
    let (_, oh, ow) = grad_out.shape();
    let mut grad_in = FeatureMap::zeros(c, h, w);
    let (s, p) = (conv.stride as isize, conv.pad as isize);
    grad_in
        .as_mut_slice()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(ic, dst)| {
            for oc in 0..conv.out_ch {
                let g = grad_out.plane(oc);
                for ky in 0..conv.kernel_h {
                    for kx in 0..conv.kernel_w {
                        let wv = conv.w(oc, ic, ky, kx);
                        for oy in 0..oh {
                            let iy = oy as isize * s + ky as isize - p;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let grow = &g[oy * ow..(oy + 1) * ow];
                            let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                            for (ox, &gv) in grow.iter().enumerate() {
                                let ix = ox as isize * s + kx as isize - p;
                                if ix >= 0 && ix < w as isize {
                                    drow[ix as usize] += wv * gv;
                                }
                            }
                        }
                    }
                }
            }
        });
    grad_in
}

/// Returns the pooled map and, per output element, the flat input index of
/// its maximum. Ties go to the first position in row-major window order.
fn maxpool_forward<T: Real>(x: &FeatureMap<T>, kernel: usize, stride: usize) -> (FeatureMap<T>, Vec<usize>) {
    let (c, h, w) = x.shape();
    let oh = (h - kernel) / stride + 1;
    let ow = (w - kernel) / stride + 1;
    let mut out = FeatureMap::zeros(c, oh, ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = x.index(ch, oy * stride, ox * stride);
                let mut best_v = x.as_slice()[best];
                for ky in 0..kernel {
                    for kx in 0..kernel {
                        let i = x.index(ch, oy * stride + ky, ox * stride + kx);
                        let v = x.as_slice()[i];
                        if v > best_v {
                            best_v = v;
                            best = i;
                        }
                    }
                }
                out.set(ch, oy, ox, best_v);
                argmax.push(best);
            }
        }
    }
    (out, argmax)
}

fn maxpool_backward<T: Real>(
    in_shape: (usize, usize, usize),
    argmax: &[usize],
    grad_out: &FeatureMap<T>,
) -> FeatureMap<T> {
    let (c, h, w) = in_shape;
    let mut grad_in = FeatureMap::zeros(c, h, w);
    let dst = grad_in.as_mut_slice();
    for (&i, &g) in argmax.iter().zip(grad_out.as_slice()) {
        dst[i] += g;
    }
    grad_in
}
