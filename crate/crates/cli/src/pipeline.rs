//! Subcommand implementations: input assembly, runs and output files.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use facegen_core::dataset::{load_corpus, load_image, read_landmarks, save_image, write_corpus, CorpusSource};
use facegen_core::generator::{layer_table, tv_table};
use facegen_core::guided::WeightScheme;
use facegen_core::mask::default_margin;
use facegen_core::synth::synth_corpus;
use facegen_core::weights::dump_text;
use facegen_core::{
    build_mask, layer_sweep, load_network, make_seeded_network, save_network, select_guided_set, tv_sweep, Arch,
    AttributeLandmarkMap, AttributeQuery, ColorConfig, CorpusEntry, GenerationError, GenerationResult, GenerationSetup,
    Guide, Image, LandmarkSet, Mask, NetworkSpec, ObjectiveConfig, OptimizerConfig, Real, SelectionOptions,
};

use crate::{CommonArgs, DumpNetArgs, GenerateArgs, MakeNetArgs, Precision, SweepLayersArgs, SweepTvArgs, SynthDatasetArgs};

enum Mode<'a> {
    Single(&'a str),
    Layers(&'a [String]),
    Tv(&'a str, &'a [f64]),
}

impl Mode<'_> {
    fn primary_layer(&self) -> &str {
        match self {
            Mode::Single(l) | Mode::Tv(l, _) => l,
            Mode::Layers(ls) => &ls[0],
        }
    }
}

pub fn generate(a: &GenerateArgs) -> Result<()> {
    dispatch(&a.common, Mode::Single(&a.layer))
}

pub fn sweep_layers(a: &SweepLayersArgs) -> Result<()> {
    dispatch(&a.common, Mode::Layers(&a.layers))
}

pub fn sweep_tv(a: &SweepTvArgs) -> Result<()> {
    dispatch(&a.common, Mode::Tv(&a.layer, &a.gammas))
}

fn dispatch(c: &CommonArgs, mode: Mode) -> Result<()> {
    match c.precision {
        Precision::F32 => run::<f32>(c, mode),
        Precision::F64 => run::<f64>(c, mode),
    }
}

pub fn make_net(a: &MakeNetArgs) -> Result<()> {
    let arch = match Arch::builtin(&a.arch) {
        Some(arch) => arch,
        None => Arch::parse(&a.arch)?,
    };
    let net: NetworkSpec<f32> = make_seeded_network(a.seed, &arch)?;
    save_network(&net, &a.out)?;
    println!("wrote {} ({} layers)", a.out.display(), net.len());
    Ok(())
}

pub fn dump_net(a: &DumpNetArgs) -> Result<()> {
    let net: NetworkSpec<f32> = load_network(&a.net)?;
    print!("{}", dump_text(&net));
    Ok(())
}

pub fn synth_dataset(a: &SynthDatasetArgs) -> Result<()> {
    let corpus = synth_corpus::<f32>(a.seed, a.count, a.size, a.size);
    write_corpus(&a.out, &corpus)?;
    println!("wrote {} entries to {}", corpus.len(), a.out.display());
    Ok(())
}

fn load_net<T: Real>(c: &CommonArgs) -> Result<NetworkSpec<T>> {
    let path = Path::new(&c.net);
    if path.is_file() {
        return Ok(load_network(path)?);
    }
    match Arch::builtin(&c.net) {
        Some(arch) => Ok(make_seeded_network(c.net_seed, &arch)?),
        None => bail!("`{}` is neither a weight file nor a built-in architecture", c.net),
    }
}

fn corpus_source(c: &CommonArgs) -> Option<CorpusSource> {
    let a = &c.corpus;
    let pick = |explicit: &Option<PathBuf>, name: &str| {
        explicit.clone().or_else(|| a.data.as_ref().map(|d| d.join(name)))
    };
    Some(CorpusSource {
        image_dir: pick(&a.images, "images")?,
        landmarks: pick(&a.landmarks, "landmarks.csv")?,
        attributes: pick(&a.attributes, "attributes.csv")?,
        exclusions: a.exclude.clone(),
        augment_flip: a.augment_flip,
    })
}

/// Reference as a corpus entry; landmarks are absent for a bare image path.
fn resolve_reference<T: Real>(c: &CommonArgs, corpus: &[CorpusEntry<T>]) -> Result<(CorpusEntry<T>, bool)> {
    if let Some(e) = corpus.iter().find(|e| e.id == c.reference) {
        return Ok((e.clone(), true));
    }
    let path = Path::new(&c.reference);
    if !path.is_file() {
        bail!("reference `{}` is neither a corpus id nor an image file", c.reference);
    }
    let image: Image<T> = load_image(path)?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let landmarks = match &c.ref_landmarks {
        Some(p) => {
            let mut table = read_landmarks(p)?;
            let first = table.keys().next().cloned();
            let key = if table.contains_key(&id) { Some(id.clone()) } else { first };
            Some(key.and_then(|k| table.remove(&k)).ok_or_else(|| anyhow!("{}: no landmark rows", p.display()))?)
        }
        None => None,
    };
    let has = landmarks.is_some();
    let landmarks = match landmarks {
        Some(l) => l,
        None => LandmarkSet::new(vec![Default::default(); facegen_core::landmarks::LANDMARK_COUNT])?,
    };
    Ok((
        CorpusEntry {
            id,
            image,
            landmarks,
            attributes: Default::default(),
        },
        has,
    ))
}

struct Resolved(Vec<(String, String)>);

impl Resolved {
    fn set(&mut self, key: &str, value: impl Display) {
        self.0.push((key.to_string(), value.to_string()));
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn scheme_name(s: WeightScheme) -> &'static str {
    match s {
        WeightScheme::Uniform => "uniform",
        WeightScheme::InverseDistance => "inverse-distance",
    }
}

fn switch(on: bool) -> &'static str {
    if on {
        "on"
    } else {
        "off"
    }
}

/// Writes PNG, falling back to PPM if the PNG encoder fails.
fn write_image<T: Real>(img: &Image<T>, dir: &Path, stem: &str) -> Result<PathBuf> {
    let png = dir.join(format!("{stem}.png"));
    if save_image(img, &png).is_ok() {
        return Ok(png);
    }
    let ppm = dir.join(format!("{stem}.ppm"));
    save_image(img, &ppm)?;
    Ok(ppm)
}

fn write_run<T: Real>(r: &GenerationResult<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_image(&r.image, dir, "generated")?;
    r.save_trace(dir.join("trace.csv"))?;
    if let Some(t) = &r.color {
        write_image(&r.raw_image, dir, "raw")?;
        t.save_json(dir.join("color.json"))?;
    }
    Ok(())
}

fn finish<T: Real>(r: std::result::Result<GenerationResult<T>, GenerationError<T>>, out: &Path) -> Result<GenerationResult<T>> {
    match r {
        Ok(r) => Ok(r),
        Err(GenerationError::Diverged {
            iteration,
            reason,
            last_good,
        }) => {
            write_image(&last_good, out, "diverged")?;
            bail!("optimizer diverged at iteration {iteration}: {reason}; last good image saved")
        }
        Err(GenerationError::Core(e)) => Err(e.into()),
    }
}

fn run<T: Real>(c: &CommonArgs, mode: Mode) -> Result<()> {
    fs::create_dir_all(&c.out).with_context(|| format!("creating {}", c.out.display()))?;
    let net: NetworkSpec<T> = load_net(c)?;
    let corpus: Vec<CorpusEntry<T>> = match corpus_source(c) {
        Some(src) => load_corpus(&src)?,
        None => Vec::new(),
    };
    let (reference, has_landmarks) = resolve_reference(c, &corpus)?;
    let query = AttributeQuery::parse(&c.attrs)?;
    let layer = mode.primary_layer().to_string();
    let content_layer = c.content_layer.clone().unwrap_or_else(|| layer.clone());

    let mut res = Resolved(Vec::new());
    res.set("net", &c.net);
    if !Path::new(&c.net).is_file() {
        res.set("net_seed", c.net_seed);
    }
    res.set("precision", format!("{:?}", c.precision).to_lowercase());
    res.set("reference", &reference.id);
    res.set("attrs", &c.attrs);
    res.set("corpus_size", corpus.len());
    res.set("augment_flip", c.corpus.augment_flip);

    let guided_images: Vec<Image<T>> = c
        .guided
        .iter()
        .map(|p| load_image(p).with_context(|| format!("guided image {}", p.display())))
        .collect::<Result<_>>()?;
    let mut guided_csv = String::from("rank,id,weight,distance\n");
    let guides: Vec<Guide<T>> = if !guided_images.is_empty() {
        let w = 1.0 / guided_images.len() as f64;
        res.set("guided_mode", "images");
        for (i, p) in c.guided.iter().enumerate() {
            guided_csv.push_str(&format!("{},{},{w},\n", i + 1, p.display()));
        }
        guided_images.iter().map(|g| Guide::new(g, w)).collect()
    } else {
        if corpus.is_empty() {
            bail!("no guided images and no corpus: pass --guided or --data");
        }
        if !has_landmarks {
            bail!("retrieval needs reference landmarks: use a corpus id or pass --ref-landmarks");
        }
        let mut opts = SelectionOptions::new(c.k, c.alpha, content_layer.as_str());
        opts.scheme = c.weights;
        let set = select_guided_set(&corpus, &query, &reference, &net, &opts)?;
        res.set("guided_mode", "retrieval");
        res.set("alpha", c.alpha);
        res.set("k", c.k);
        res.set("weights", scheme_name(c.weights));
        res.set("content_layer", &content_layer);
        res.set("pool_size", set.pool_size);
        res.set("selected", set.ids().join(" "));
        if set.pose_denominator_zero || set.content_denominator_zero {
            eprintln!("warning: a retrieval distance normaliser was zero; that term was dropped");
        }
        for (i, e) in set.entries.iter().enumerate() {
            guided_csv.push_str(&format!("{},{},{},{}\n", i + 1, e.entry.id, e.weight, e.distance));
        }
        set.guides()
    };
    fs::write(c.out.join("guided.csv"), guided_csv)?;

    let dims = reference.image.dims();
    let mask: Option<Mask> = if c.mask.on() {
        if !has_landmarks {
            bail!("--mask on needs reference landmarks");
        }
        let attrs: Vec<&str> = query.attributes().collect();
        if attrs.is_empty() {
            bail!("--mask on needs at least one attribute in --attrs");
        }
        let map = match &c.mask_map {
            Some(p) => AttributeLandmarkMap::load(p)?,
            None => AttributeLandmarkMap::default_map(),
        };
        let margin = c.margin.unwrap_or_else(|| default_margin(dims.0, dims.1));
        let m = build_mask(&attrs, &reference.landmarks, &map, margin, dims)?;
        if m.is_empty() {
            eprintln!("warning: mask is empty; the attribute term will be zero");
        }
        m.save_pgm(c.out.join("mask.pgm"))?;
        res.set("margin", margin);
        if let Some(p) = &c.mask_map {
            res.set("mask_map", p.display());
        }
        res.set("mask_guided", c.mask_guided);
        Some(m)
    } else {
        None
    };
    res.set("mask", switch(mask.is_some()));

    let objective = ObjectiveConfig {
        layer: layer.clone(),
        id_layer: c.id_layer.clone(),
        attr_weight: c.attr_weight,
        lambda: c.lambda,
        gamma: c.gamma,
        tv_beta: c.beta,
        mask_guided: c.mask_guided,
    };
    objective.validate()?;
    let optimizer = OptimizerConfig {
        learning_rate: c.lr,
        max_iters: c.max_iters,
        convergence_window: c.window,
        convergence_rel_tol: c.rel_tol,
        init: c.init,
        seed: c.seed,
        clamp_each_step: !c.no_clamp,
        momentum: c.momentum,
        ..Default::default()
    };
    optimizer.validate()?;
    let color = c.color.on().then_some(ColorConfig {
        samples: c.color_samples,
        region: c.color_region,
        seed: c.seed,
    });

    match &mode {
        Mode::Single(_) => res.set("layer", &layer),
        Mode::Layers(ls) => res.set("layers", ls.join(",")),
        Mode::Tv(_, gs) => {
            res.set("layer", &layer);
            res.set("gammas", gs.iter().map(f64::to_string).collect::<Vec<_>>().join(","));
        }
    }
    res.set("id_layer", objective.identity_layer());
    res.set("attr_weight", c.attr_weight);
    res.set("lambda", c.lambda);
    if !matches!(mode, Mode::Tv(..)) {
        res.set("gamma", c.gamma);
    }
    res.set("tv_beta", c.beta);
    res.set("color", switch(color.is_some()));
    if let Some(cc) = &color {
        res.set("color_samples", cc.samples);
        res.set("color_region", cc.region);
    }
    res.set("init", c.init);
    res.set("seed", c.seed);
    res.set("lr", c.lr);
    res.set("max_iters", c.max_iters);
    res.set("convergence_window", c.window);
    res.set("convergence_rel_tol", c.rel_tol);
    res.set("momentum", c.momentum);
    res.set("clamp_each_step", !c.no_clamp);
    res.set("divergence_factor", optimizer.divergence_factor);
    fs::write(c.out.join("config.resolved"), res.render())?;
    write_image(&reference.image, &c.out, "reference")?;

    let setup = GenerationSetup {
        objective,
        optimizer,
        guides,
        reference: &reference.image,
        mask: mask.as_ref(),
        color,
    };
    match mode {
        Mode::Single(_) => {
            let r = finish(setup.run(&net), &c.out)?;
            write_run(&r, &c.out)?;
            let last = r.final_row();
            println!(
                "{} after {} iterations: total {:.6e} (attr {:.6e}, id {:.6e}, tv {:.6e}), sqerr {:.6e}",
                if r.converged { "converged" } else { "stopped" },
                r.iterations_run,
                last.total,
                last.attr,
                last.id,
                last.tv,
                last.sqerr
            );
        }
        Mode::Layers(layers) => {
            let rows = layer_sweep(&net, &setup, layers).map_err(|e| finish_err(e, &c.out))?;
            for row in &rows {
                write_run(&row.result, &c.out.join(&row.layer))?;
            }
            let table = layer_table(&rows);
            fs::write(c.out.join("layers.csv"), &table)?;
            print!("{table}");
        }
        Mode::Tv(_, gammas) => {
            let rows = tv_sweep(&net, &setup, gammas).map_err(|e| finish_err(e, &c.out))?;
            for row in &rows {
                write_run(&row.result, &c.out.join(format!("gamma_{}", row.gamma)))?;
            }
            let table = tv_table(&rows);
            fs::write(c.out.join("tv.csv"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn finish_err<T: Real>(e: GenerationError<T>, out: &Path) -> anyhow::Error {
    match finish::<T>(Err(e), out) {
        Err(e) => e,
        Ok(_) => unreachable!("an error stays an error"),
    }
}
