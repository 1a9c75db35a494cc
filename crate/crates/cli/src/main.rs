//! `facegen`: attribute-driven image generation from the command line.

mod pipeline;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use facegen_core::guided::WeightScheme;
use facegen_core::InitMode;

#[derive(Parser, Debug)]
#[command(name = "facegen", version, about = "Generate images with chosen attributes by descent on feature losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate one image.
    Generate(GenerateArgs),
    /// Generate once per layer and tabulate pixel error against the reference.
    SweepLayers(SweepLayersArgs),
    /// Generate once per TV weight and tabulate the final TV value.
    SweepTv(SweepTvArgs),
    /// Write a seeded network in the binary weight format.
    MakeNet(MakeNetArgs),
    /// Print a weight file as text.
    DumpNet(DumpNetArgs),
    /// Write a synthetic corpus in the dataset layout.
    SynthDataset(SynthDatasetArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

impl Switch {
    pub fn on(self) -> bool {
        self == Switch::On
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Args, Debug, Clone)]
pub struct CorpusArgs {
    /// Dataset directory holding `images/`, `landmarks.csv` and `attributes.csv`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Image directory (overrides `<data>/images`).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Landmarks CSV: `id,x1,y1,...,x68,y68`.
    #[arg(long)]
    pub landmarks: Option<PathBuf>,
    /// Attributes CSV: `id,<attr>,...` with signed scores.
    #[arg(long)]
    pub attributes: Option<PathBuf>,
    /// Ids to drop from the corpus, one per line.
    #[arg(long)]
    pub exclude: Option<PathBuf>,
    /// Add horizontally mirrored copies of every corpus entry.
    #[arg(long)]
    pub augment_flip: bool,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Weight file, or a built-in architecture name (`tiny-a`, `tiny-b`, `tiny-c`) seeded by `--net-seed`.
    #[arg(long)]
    pub net: String,
    #[arg(long, default_value_t = 42)]
    pub net_seed: u64,
    #[arg(long, value_enum, default_value_t = Precision::F32)]
    pub precision: Precision,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Reference: a corpus id, or an image path.
    #[arg(long = "ref")]
    pub reference: String,
    /// Landmarks CSV for a reference given as a path (first row, or the row named after the file stem).
    #[arg(long)]
    pub ref_landmarks: Option<PathBuf>,
    /// Attribute query: `name[>t|<t]` terms joined by commas, e.g. `smiling, male<0`.
    #[arg(long, default_value = "")]
    pub attrs: String,
    /// Guided images used directly instead of corpus retrieval, weighted uniformly.
    #[arg(long, num_args = 1..)]
    pub guided: Vec<PathBuf>,
    /// Layer for the identity loss when it differs from the attribute layer.
    #[arg(long)]
    pub id_layer: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    pub attr_weight: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    /// TV exponent.
    #[arg(long, default_value_t = 2.0)]
    pub beta: f64,
    /// Blend between pose (0) and content (1) distance for retrieval.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_parser = parse_scheme, default_value = "uniform")]
    pub weights: WeightScheme,
    /// Layer for the content distance during retrieval (defaults to the generation layer).
    #[arg(long)]
    pub content_layer: Option<String>,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub mask: Switch,
    /// Mask dilation radius in pixels (default scales 12 px at 224×224).
    #[arg(long)]
    pub margin: Option<f64>,
    /// Attribute-to-landmark map CSV (`attribute,landmarks`).
    #[arg(long)]
    pub mask_map: Option<PathBuf>,
    /// Also mask the guided images.
    #[arg(long)]
    pub mask_guided: bool,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub color: Switch,
    #[arg(long, default_value_t = 1000)]
    pub color_samples: usize,
    /// Fraction of each side covered by the central sampling window.
    #[arg(long, default_value_t = 0.5)]
    pub color_region: f64,
    #[arg(long, value_parser = parse_init, default_value = "blank-gray")]
    pub init: InitMode,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub lr: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 10)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 0.0)]
    pub momentum: f64,
    /// Skip clamping to [0, 1] after each step.
    #[arg(long)]
    pub no_clamp: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Layer the attribute and identity losses compare at.
    #[arg(long)]
    pub layer: String,
}

#[derive(Args, Debug)]
pub struct SweepLayersArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    pub layers: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SweepTvArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub layer: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub gammas: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct MakeNetArgs {
    /// Built-in name or an architecture string such as `c1=conv(4,3,1,1); r1=relu`.
    #[arg(long, default_value = "tiny-a")]
    pub arch: String,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpNetArgs {
    #[arg(long)]
    pub net: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthDatasetArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 32)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_scheme(s: &str) -> Result<WeightScheme, String> {
    s.parse().map_err(|e: facegen_core::Error| e.to_string())
}

fn parse_init(s: &str) -> Result<InitMode, String> {
    s.parse().map_err(|e: facegen_core::Error| e.to_string())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Generate(a) => pipeline::generate(&a),
        Command::SweepLayers(a) => pipeline::sweep_layers(&a),
        Command::SweepTv(a) => pipeline::sweep_tv(&a),
        Command::MakeNet(a) => pipeline::make_net(&a),
        Command::DumpNet(a) => pipeline::dump_net(&a),
        Command::SynthDataset(a) => pipeline::synth_dataset(&a),
    }
}
