//! Guided-set construction: attribute filtering, pose + content ranking, top-k
//! selection and weighting.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::landmarks::LandmarkSet;
use crate::losses::{feature_distance, rectified_features, Guide};
use crate::network::NetworkSpec;
use crate::scalar::Real;
use crate::tensor::Image;

/// Additive guard in the inverse-distance weight scheme.
pub const INVERSE_DISTANCE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry<T> {
    pub id: String,
    pub image: Image<T>,
    pub landmarks: LandmarkSet,
    /// Signed classifier scores; positive means the attribute is present.
    pub attributes: BTreeMap<String, f64>,
}

/// Squared landmark displacement summed over all 68 points.
pub fn pose_distance(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p.x - q.x).powi(2) + (p.y - q.y).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    Greater,
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryTerm {
    pub attribute: String,
    pub op: Comparison,
    pub threshold: f64,
}

impl QueryTerm {
    pub fn matches(&self, score: f64) -> bool {
        match self.op {
            Comparison::Greater => score > self.threshold,
            Comparison::Less => score < self.threshold,
        }
    }
}

/// Conjunction of attribute thresholds.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttributeQuery {
    pub terms: Vec<QueryTerm>,
}

impl AttributeQuery {
    /// Parses `name[op threshold]` terms joined by `,` or ` AND `; `op` is
    /// `>` or `<` and the default is `>0`.
    pub fn parse(text: &str) -> Result<Self> {
        let normalized = text.replace(" AND ", ",").replace(" and ", ",");
        let mut terms = Vec::new();
        for raw in normalized.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (attribute, op, threshold) = match raw.find(['>', '<']) {
                Some(pos) => {
                    let op = if raw.as_bytes()[pos] == b'>' { Comparison::Greater } else { Comparison::Less };
                    let thr = raw[pos + 1..].trim();
                    let threshold = thr
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| Error::Query(format!("bad threshold `{thr}` in `{raw}`")))?;
                    (raw[..pos].trim(), op, threshold)
                }
                None => (raw, Comparison::Greater, 0.0),
            };
            if attribute.is_empty() {
                return Err(Error::Query(format!("missing attribute name in `{raw}`")));
            }
            terms.push(QueryTerm {
                attribute: attribute.to_string(),
                op,
                threshold,
            });
        }
        Ok(AttributeQuery { terms })
    }

    pub fn attributes(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(|t| t.attribute.as_str())
    }

    pub fn matches<T>(&self, entry: &CorpusEntry<T>) -> bool {
        self.terms
            .iter()
            .all(|t| entry.attributes.get(&t.attribute).is_some_and(|&s| t.matches(s)))
    }
}

/// Entries satisfying every query term, in corpus order. Names absent from
/// the attribute schema (the union of all entries' attribute names) are an
/// error; an empty result is not.
pub fn filter_by_attributes<'c, T>(corpus: &'c [CorpusEntry<T>], query: &AttributeQuery) -> Result<Vec<&'c CorpusEntry<T>>> {
    let schema: HashSet<&str> = corpus
        .iter()
        .flat_map(|e| e.attributes.keys().map(String::as_str))
        .collect();
    let unknown: Vec<String> = query
        .attributes()
        .filter(|a| !schema.contains(a))
        .map(str::to_string)
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownAttribute(unknown));
    }
    Ok(corpus.iter().filter(|e| query.matches(e)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedCandidate<'c, T> {
    pub entry: &'c CorpusEntry<T>,
    pub pose: f64,
    /// `None` when `alpha == 0` and the content term was not evaluated.
    pub content: Option<f64>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranking<'c, T> {
    /// Ascending by combined distance, ties by id.
    pub candidates: Vec<RankedCandidate<'c, T>>,
    pub pose_denominator_zero: bool,
    pub content_denominator_zero: bool,
}

/// Scores each candidate by
/// `(1−α)·D_p/ΣD_p + α·ℓ/Σℓ` against the reference and sorts ascending.
/// A zero denominator makes its term contribute 0 and is flagged.
pub fn rank_candidates<'c, T: Real>(
    candidates: &[&'c CorpusEntry<T>],
    reference: &CorpusEntry<T>,
    alpha: f64,
    net: &NetworkSpec<T>,
    layer: &str,
) -> Result<Ranking<'c, T>> {
    if candidates.is_empty() {
        return Err(Error::InvalidArgument("no candidates to rank".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let pose: Vec<f64> = candidates
        .iter()
        .map(|c| pose_distance(&c.landmarks, &reference.landmarks))
        .collect();
    let content: Option<Vec<f64>> = if alpha > 0.0 {
        let rf = rectified_features(net, layer, &reference.image)?;
        Some(
            candidates
                .par_iter()
                .map(|c| {
                    c.image.check_same_dims(&reference.image)?;
                    let cf = rectified_features(net, layer, &c.image)?;
                    Ok(feature_distance(&cf, &rf).as_f64())
                })
                .collect::<Result<Vec<f64>>>()?,
        )
    } else {
        None
    };
    let pose_sum: f64 = pose.iter().sum();
    let content_sum: f64 = content.as_ref().map_or(0.0, |c| c.iter().sum());
    let norm = |v: f64, sum: f64| if sum > 0.0 { v / sum } else { 0.0 };
    let mut ranked: Vec<RankedCandidate<'c, T>> = candidates
        .iter()
        .enumerate()
        .map(|(i, &entry)| {
            let c = content.as_ref().map(|c| c[i]);
            let distance = (1.0 - alpha) * norm(pose[i], pose_sum) + alpha * c.map_or(0.0, |c| norm(c, content_sum));
            RankedCandidate {
                entry,
                pose: pose[i],
                content: c,
                distance,
            }
        })
        .collect();
    ranked.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.entry.id.cmp(&b.entry.id)));
    Ok(Ranking {
        candidates: ranked,
        pose_denominator_zero: pose_sum == 0.0,
        content_denominator_zero: content.is_some() && content_sum == 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WeightScheme {
    #[default]
    Uniform,
    InverseDistance,
}

impl std::str::FromStr for WeightScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(WeightScheme::Uniform),
            "inverse-distance" => Ok(WeightScheme::InverseDistance),
            other => Err(Error::InvalidArgument(format!("unknown weight scheme `{other}`"))),
        }
    }
}

/// Weights summing to one: `1/k`, or proportional to `1/(D + 1e-6)`.
pub fn assign_weights(distances: &[f64], scheme: WeightScheme) -> Result<Vec<f64>> {
    if distances.is_empty() {
        return Ok(Vec::new());
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::InvalidArgument("distances must be finite and nonnegative".into()));
    }
    let k = distances.len() as f64;
    Ok(match scheme {
        WeightScheme::Uniform => vec![1.0 / k; distances.len()],
        WeightScheme::InverseDistance => {
            let inv: Vec<f64> = distances.iter().map(|d| 1.0 / (d + INVERSE_DISTANCE_EPS)).collect();
            let total: f64 = inv.iter().sum();
            inv.into_iter().map(|v| v / total).collect()
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedEntry<'c, T> {
    pub entry: &'c CorpusEntry<T>,
    pub weight: f64,
    pub distance: f64,
}

/// The `k` selected faces, ascending by combined distance, with weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidedSet<'c, T> {
    pub entries: Vec<GuidedEntry<'c, T>>,
    pub pose_denominator_zero: bool,
    pub content_denominator_zero: bool,
    /// Size of the filtered candidate pool.
    pub pool_size: usize,
}

impl<'c, T: Real> GuidedSet<'c, T> {
    pub fn guides(&self) -> Vec<Guide<'c, T>> {
        self.entries
            .iter()
            .map(|e| Guide::new(&e.entry.image, e.weight))
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.entry.id.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOptions {
    pub k: usize,
    pub alpha: f64,
    pub scheme: WeightScheme,
    /// Layer for the content half of the distance.
    pub content_layer: String,
    /// Keep entries carrying the reference's id in the pool.
    pub include_reference: bool,
    /// Ids removed from the pool (manually curated label errors).
    pub exclude: HashSet<String>,
}

impl SelectionOptions {
    pub fn new(k: usize, alpha: f64, content_layer: impl Into<String>) -> Self {
        SelectionOptions {
            k,
            alpha,
            scheme: WeightScheme::Uniform,
            content_layer: content_layer.into(),
            include_reference: false,
            exclude: HashSet::new(),
        }
    }
}

/// Filter, rank, take the first `k`, weight.
pub fn select_guided_set<'c, T: Real>(
    corpus: &'c [CorpusEntry<T>],
    query: &AttributeQuery,
    reference: &CorpusEntry<T>,
    net: &NetworkSpec<T>,
    opts: &SelectionOptions,
) -> Result<GuidedSet<'c, T>> {
    if opts.k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let pool: Vec<&CorpusEntry<T>> = filter_by_attributes(corpus, query)?
        .into_iter()
        .filter(|e| opts.include_reference || e.id != reference.id)
        .filter(|e| !opts.exclude.contains(&e.id))
        .collect();
    if pool.len() < opts.k {
        return Err(Error::Shortfall {
            requested: opts.k,
            available: pool.len(),
        });
    }
    let ranking = rank_candidates(&pool, reference, opts.alpha, net, &opts.content_layer)?;
    let top = &ranking.candidates[..opts.k];
    let distances: Vec<f64> = top.iter().map(|c| c.distance).collect();
    let weights = assign_weights(&distances, opts.scheme)?;
    Ok(GuidedSet {
        entries: top
            .iter()
            .zip(weights)
            .map(|(c, weight)| GuidedEntry {
                entry: c.entry,
                weight,
                distance: c.distance,
            })
            .collect(),
        pose_denominator_zero: ranking.pose_denominator_zero,
        content_denominator_zero: ranking.content_denominator_zero,
        pool_size: pool.len(),
    })
}
