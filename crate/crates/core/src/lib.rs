//! Attribute-driven, identity-preserving image synthesis.
//!
//! An image is generated by gradient descent on `attr + λ·id + γ·TV`. The
//! attribute and identity terms are feature-space squared errors through a
//! small convolutional network. The attribute term compares against a
//! weighted guided set retrieved from a corpus, optionally confined by a
//! landmark mask. A least-squares colour transform in YCbCr post-processes
//! the result.
//!
//! All numeric code is generic over [`Real`] (`f32` or `f64`); the `*32` /
//! `*64` aliases below name the common instantiations.

pub mod color;
pub mod dataset;
pub mod error;
pub mod generator;
pub mod guided;
pub mod landmarks;
pub mod losses;
pub mod mask;
pub mod network;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod weights;

pub use error::{Error, Result};
pub use generator::{
    initialize_target, layer_sweep, run_generation, run_guided_image_mode, tv_sweep, ColorConfig, GenerationError,
    GenerationResult, GenerationSetup, InitMode, OptimizerConfig, TraceRow,
};
pub use guided::{
    assign_weights, filter_by_attributes, pose_distance, rank_candidates, select_guided_set, AttributeQuery,
    CorpusEntry, GuidedSet, SelectionOptions, WeightScheme,
};
pub use landmarks::{LandmarkSet, Point};
pub use losses::{
    attribute_loss, identity_loss, perceptual_loss, total_objective, tv_loss, Guide, LossValue, Objective,
    ObjectiveConfig, ObjectiveValue,
};
pub use mask::{build_mask, convex_hull, expand_and_rasterize, AttributeLandmarkMap, Mask};
pub use network::{backward_to_image, forward, make_seeded_network, Arch, FeatureStack, LayerDesc, NetworkSpec};
pub use scalar::Real;
pub use tensor::{FeatureMap, Image};
pub use weights::{load_network, save_network};

pub type Image32 = Image<f32>;
pub type Image64 = Image<f64>;
pub type FeatureMap32 = FeatureMap<f32>;
pub type FeatureMap64 = FeatureMap<f64>;
pub type Network32 = NetworkSpec<f32>;
pub type Network64 = NetworkSpec<f64>;
pub type CorpusEntry32 = CorpusEntry<f32>;
pub type CorpusEntry64 = CorpusEntry<f64>;
pub type GenerationResult32 = GenerationResult<f32>;
pub type GenerationResult64 = GenerationResult<f64>;
pub type ColorTransform32 = color::ColorTransform<f32>;
pub type ColorTransform64 = color::ColorTransform<f64>;
