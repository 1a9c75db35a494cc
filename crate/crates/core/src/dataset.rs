//! Image files, attribute/landmark tables and corpus assembly.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::guided::CorpusEntry;
use crate::landmarks::{LandmarkSet, LANDMARK_COUNT};
use crate::scalar::Real;
use crate::tensor::Image;

/// Extensions tried, in order, when looking up `<dir>/<id>.<ext>`.
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "ppm", "pnm"];

/// Suffix appended to the ids of mirrored entries.
pub const FLIP_SUFFIX: &str = "_flip";

pub fn load_image<T: Real>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))?
        .to_rgb32f();
    let (w, h) = img.dimensions();
    let data: Vec<T> = img.into_raw().into_iter().map(|v| T::lit(v as f64)).collect();
    Image::from_interleaved(h as usize, w as usize, &data)
}

/// Writes 8-bit RGB; the format follows the extension (`.png`, `.ppm`).
pub fn save_image<T: Real>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .clamp01()
        .to_interleaved()
        .into_iter()
        .map(|v| (v.as_f64() * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .ok_or_else(|| Error::Codec("image buffer size mismatch".into()))?;
    buf.save(path)
        .map_err(|e| Error::Codec(format!("{}: {e}", path.display())))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Dataset(format!("{}: {e}", path.display()))
}

pub type AttributeTable = BTreeMap<String, BTreeMap<String, f64>>;

/// `id,<attr1>,<attr2>,...` with signed decimal scores.
pub fn read_attribute_table(path: impl AsRef<Path>) -> Result<AttributeTable> {
    let path = path.as_ref();
    let mut rows = csv_reader(path)?.into_records();
    let header = rows
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty attribute table", path.display())))?
        .map_err(|e| csv_err(path, e))?;
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut table = BTreeMap::new();
    for (line, rec) in rows.enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != names.len() + 1 {
            return Err(Error::Dataset(format!(
                "{} row {}: {} fields, header has {}",
                path.display(),
                line + 2,
                rec.len(),
                names.len() + 1
            )));
        }
        let id = rec[0].to_string();
        let mut scores = BTreeMap::new();
        for (name, v) in names.iter().zip(rec.iter().skip(1)) {
            let score: f64 = v
                .parse()
                .ok()
                .filter(|s: &f64| s.is_finite())
                .ok_or_else(|| Error::Dataset(format!("{} row {}: bad score `{v}`", path.display(), line + 2)))?;
            scores.insert(name.clone(), score);
        }
        if table.insert(id.clone(), scores).is_some() {
            return Err(Error::Dataset(format!("duplicate id `{id}` in {}", path.display())));
        }
    }
    Ok(table)
}

/// `id,x1,y1,...,x68,y68`; a non-numeric first row is taken as a header.
pub fn read_landmarks(path: impl AsRef<Path>) -> Result<BTreeMap<String, LandmarkSet>> {
    let path = path.as_ref();
    let mut out = BTreeMap::new();
    for (line, rec) in csv_reader(path)?.into_records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if line == 0 && rec.get(1).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != 1 + 2 * LANDMARK_COUNT {
            return Err(Error::Dataset(format!(
                "{} row {}: expected {} fields, got {}",
                path.display(),
                line + 1,
                1 + 2 * LANDMARK_COUNT,
                rec.len()
            )));
        }
        let coords = rec
            .iter()
            .skip(1)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| Error::Dataset(format!("{} row {}: bad coordinate `{v}`", path.display(), line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        out.insert(rec[0].to_string(), LandmarkSet::from_flat(&coords)?);
    }
    Ok(out)
}

/// One id per line; blank lines and `#` comments ignored.
pub fn read_exclusions(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    let path = path.as_ref();
    Ok(fs::read_to_string(path)
        .map_err(|e| Error::io(path, e))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

pub fn find_image(dir: &Path, id: &str) -> Option<PathBuf> {
    IMAGE_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

#[derive(Debug, Clone, Default)]
pub struct CorpusSource {
    pub image_dir: PathBuf,
    pub landmarks: PathBuf,
    pub attributes: PathBuf,
    pub exclusions: Option<PathBuf>,
    /// Also add horizontally mirrored copies of every entry.
    pub augment_flip: bool,
}

/// Joins the attribute table with landmarks and images, in id order. Entries
/// on the exclusion list are dropped; every image must share one size.
pub fn load_corpus<T: Real>(src: &CorpusSource) -> Result<Vec<CorpusEntry<T>>> {
    let attrs = read_attribute_table(&src.attributes)?;
    let mut marks = read_landmarks(&src.landmarks)?;
    let excluded = match &src.exclusions {
        Some(p) => read_exclusions(p)?,
        None => HashSet::new(),
    };
    let mut corpus = Vec::new();
    let mut dims = None;
    for (id, attributes) in attrs {
        if excluded.contains(&id) {
            continue;
        }
        let landmarks = marks
            .remove(&id)
            .ok_or_else(|| Error::Dataset(format!("no landmarks for `{id}`")))?;
        let path = find_image(&src.image_dir, &id)
            .ok_or_else(|| Error::Dataset(format!("no image for `{id}` in {}", src.image_dir.display())))?;
        let image: Image<T> = load_image(&path)?;
        match dims {
            None => dims = Some(image.dims()),
            Some(d) if d != image.dims() => {
                return Err(Error::Dataset(format!(
                    "`{id}` is {:?} but earlier images are {d:?}",
                    image.dims()
                )))
            }
            _ => {}
        }
        corpus.push(CorpusEntry {
            id,
            image,
            landmarks,
            attributes,
        });
    }
    if src.augment_flip {
        let flipped: Vec<CorpusEntry<T>> = corpus.iter().map(flip_entry).collect();
        corpus.extend(flipped);
    }
    Ok(corpus)
}

pub fn flip_entry<T: Real>(e: &CorpusEntry<T>) -> CorpusEntry<T> {
    CorpusEntry {
        id: format!("{}{FLIP_SUFFIX}", e.id),
        image: e.image.flip_horizontal(),
        landmarks: e.landmarks.flip_horizontal(e.image.width()),
        attributes: e.attributes.clone(),
    }
}

/// Writes `<dir>/images/<id>.png`, `landmarks.csv` and `attributes.csv`.
pub fn write_corpus<T: Real>(dir: impl AsRef<Path>, corpus: &[CorpusEntry<T>]) -> Result<CorpusSource> {
    let dir = dir.as_ref();
    let image_dir = dir.join("images");
    fs::create_dir_all(&image_dir).map_err(|e| Error::io(&image_dir, e))?;
    let names: Vec<String> = corpus
        .first()
        .map(|e| e.attributes.keys().cloned().collect())
        .unwrap_or_default();
    let mut attr_csv = String::from("id");
    for n in &names {
        attr_csv.push(',');
        attr_csv.push_str(n);
    }
    attr_csv.push('\n');
    let mut lm_csv = String::from("id");
    for i in 1..=LANDMARK_COUNT {
        lm_csv.push_str(&format!(",x{i},y{i}"));
    }
    lm_csv.push('\n');
    for e in corpus {
        save_image(&e.image, image_dir.join(format!("{}.png", e.id)))?;
        attr_csv.push_str(&e.id);
        for n in &names {
            let v = e.attributes.get(n).copied().unwrap_or(0.0);
            attr_csv.push_str(&format!(",{v}"));
        }
        attr_csv.push('\n');
        lm_csv.push_str(&e.id);
        for p in e.landmarks.points() {
            lm_csv.push_str(&format!(",{},{}", p.x, p.y));
        }
        lm_csv.push('\n');
    }
    let src = CorpusSource {
        image_dir,
        landmarks: dir.join("landmarks.csv"),
        attributes: dir.join("attributes.csv"),
        exclusions: None,
        augment_flip: false,
    };
    fs::write(&src.attributes, attr_csv).map_err(|e| Error::io(&src.attributes, e))?;
    fs::write(&src.landmarks, lm_csv).map_err(|e| Error::io(&src.landmarks, e))?;
    Ok(src)
}
