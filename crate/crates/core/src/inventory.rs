//! Object inventory: per-frame labels, synonym normalization and the
//! objects-to-frames index of temporally cleaned frame runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bundle::FrameRecord;
use crate::clients::{EmbeddingClient, RetryPolicy, VisionLanguageClient};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelObservation {
    pub frame_id: i64,
    pub raw_label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalLabel {
    pub slug: String,
    /// Normalized (lowercased, lemmatized) members of the cluster.
    pub members: BTreeSet<String>,
    /// Renormalized mean of the member embeddings.
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FrameRun {
    pub seq: u32,
    pub start: i64,
    /// Inclusive.
    pub end: i64,
}

impl FrameRun {
    pub fn len(&self) -> i64 {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() <= 0
    }

    pub fn contains(&self, frame_id: i64) -> bool {
        self.start <= frame_id && frame_id <= self.end
    }
}

/// Canonical slug -> disjoint, sorted frame runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObjectFrameIndex {
    pub runs: BTreeMap<String, Vec<FrameRun>>,
}

impl ObjectFrameIndex {
    pub fn run(&self, slug: &str, seq: u32) -> Option<&FrameRun> {
        self.runs.get(slug)?.iter().find(|r| r.seq == seq)
    }

    pub fn run_count(&self) -> usize {
        self.runs.values().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct InventoryConfig {
    pub cluster_threshold: f64,
    pub max_gap: i64,
    pub min_run: i64,
}

impl Default for InventoryConfig {
    fn default() -> Self {
        Self {
            cluster_threshold: 0.05,
            max_gap: 3,
            min_run: 5,
        }
    }
}

pub trait Lemmatizer: Send + Sync {
    fn lemmatize(&self, label: &str) -> String;
}

/// English noun lemmatizer: lowercases, strips possessives and singularizes
/// the head (last) word of a label.
#[derive(Debug, Default, Clone, Copy)]
pub struct RuleLemmatizer;

const IRREGULAR: &[(&str, &str)] = &[
    ("children", "child"),
    ("people", "person"),
    ("men", "man"),
    ("women", "woman"),
    ("feet", "foot"),
    ("teeth", "tooth"),
    ("mice", "mouse"),
    ("geese", "goose"),
    ("knives", "knife"),
    ("wives", "wife"),
    ("lives", "life"),
    ("leaves", "leaf"),
    ("shelves", "shelf"),
    ("halves", "half"),
    ("loaves", "loaf"),
    ("wolves", "wolf"),
    ("scarves", "scarf"),
    ("dice", "die"),
    ("cacti", "cactus"),
    ("radii", "radius"),
    ("indices", "index"),
    ("matrices", "matrix"),
    ("vertices", "vertex"),
    ("oxen", "ox"),
];

const INVARIANT: &[&str] = &[
    "series",
    "species",
    "news",
    "glasses",
    "scissors",
    "pants",
    "jeans",
    "shorts",
    "trousers",
    "pliers",
    "tongs",
    "headphones",
    "earphones",
    "binoculars",
    "stairs",
    "clothes",
    "furniture",
    "equipment",
    "electronics",
];

fn singularize(word: &str) -> String {
    if let Some((_, s)) = IRREGULAR.iter().find(|(p, _)| *p == word) {
        return (*s).to_string();
    }
    if INVARIANT.contains(&word) || word.len() <= 3 {
        return word.to_string();
    }
    let ends = |suffix: &str| word.ends_with(suffix);
    if ends("ies") && word.len() > 4 {
        return format!("{}y", &word[..word.len() - 3]);
    }
    if ends("sses") || ends("shes") || ends("ches") || ends("xes") || ends("zzes") {
        return word[..word.len() - 2].to_string();
    }
    if ends("ss") || ends("us") || ends("is") {
        return word.to_string();
    }
    if ends("s") {
        return word[..word.len() - 1].to_string();
    }
    word.to_string()
}

impl Lemmatizer for RuleLemmatizer {
    fn lemmatize(&self, label: &str) -> String {
        let lowered = label.to_lowercase();
        let mut words: Vec<String> = lowered
            .split_whitespace()
            .map(|w| {
                w.trim_end_matches("'s")
                    .trim_end_matches("’s")
                    .trim_matches(|c: char| !c.is_alphanumeric() && c != '-')
                    .to_string()
            })
            .filter(|w| !w.is_empty())
            .collect();
        if let Some(head) = words.last_mut() {
            *head = singularize(head);
        }
        words.join(" ")
    }
}

/// Asks the vision client for the objects visible in `frame`, retrying
/// transient failures. Blank labels are dropped; order is preserved.
pub fn enumerate_objects(
    frame: &FrameRecord,
    vlm: &dyn VisionLanguageClient,
    retry: &RetryPolicy,
) -> Result<Vec<String>> {
    let labels = retry.run(|| vlm.enumerate(&frame.image))?;
    Ok(labels
        .into_iter()
        .map(|l| l.trim().to_string())
        .filter(|l| !l.is_empty())
        .collect())
}

fn unit(mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0 && n.is_finite()) {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(v)
}

pub(crate) fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    1.0 - a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// Average-linkage agglomerative clustering under cosine distance.
///
/// Repeatedly merges the closest pair of clusters while their mean pairwise
/// distance is at most `threshold`; ties go to the pair that comes first in
/// cluster order. Returns clusters as sorted member-index lists, ordered by
/// their smallest member.
pub fn average_linkage(vectors: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    let n = vectors.len();
    // Slot `i` holds the cluster whose smallest member is `i`.
    let mut clusters: Vec<Option<Vec<usize>>> = (0..n).map(|i| Some(vec![i])).collect();
    // Pairwise distance sums between clusters.
    let mut sums: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| cosine_distance(&vectors[i], &vectors[j])).collect())
        .collect();

    loop {
        let active: Vec<usize> = (0..n).filter(|&i| clusters[i].is_some()).collect();
        let size = |i: usize| clusters[i].as_ref().map_or(0, Vec::len);
        let mut best: Option<(usize, usize, f64)> = None;
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                let avg = sums[a][b] / (size(a) * size(b)) as f64;
                if best.is_none_or(|(_, _, d)| avg < d) {
                    best = Some((a, b, avg));
                }
            }
        }
        let Some((a, b, d)) = best else { break };
        if d > threshold {
            break;
        }
        let moved = clusters[b].take().unwrap_or_default();
        if let Some(members) = clusters[a].as_mut() {
            members.extend(moved);
            members.sort_unstable();
        }
        for &k in &active {
            if k != a && k != b {
                sums[a][k] += sums[b][k];
                sums[k][a] = sums[a][k];
            }
        }
    }
    clusters.into_iter().flatten().collect()
}

/// Maps every raw label to its canonical label.
pub fn normalize_labels(
    labels: &BTreeSet<String>,
    embedder: &dyn EmbeddingClient,
    lemmatizer: &dyn Lemmatizer,
    threshold: f64,
) -> Result<BTreeMap<String, CanonicalLabel>> {
    let mut lemma_of = BTreeMap::new();
    for raw in labels {
        let lemma = lemmatizer.lemmatize(raw);
        if lemma.is_empty() {
            return Err(Error::validation(
                format!("label {raw:?}"),
                "label is empty after normalization",
            ));
        }
        lemma_of.insert(raw.clone(), lemma);
    }
    let lemmas: Vec<String> = lemma_of
        .values()
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if lemmas.is_empty() {
        return Ok(BTreeMap::new());
    }

    let raw_vectors = RetryPolicy::immediate(3).run(|| embedder.embed_texts(&lemmas))?;
    if raw_vectors.len() != lemmas.len() {
        return Err(Error::validation(
            "embeddings",
            format!("{} vectors for {} labels", raw_vectors.len(), lemmas.len()),
        ));
    }
    let dim = raw_vectors[0].len();
    let mut vectors = Vec::with_capacity(lemmas.len());
    for (lemma, v) in lemmas.iter().zip(raw_vectors) {
        if v.len() != dim || dim == 0 {
            return Err(Error::validation(
                format!("embedding of {lemma:?}"),
                format!("dimension {} differs from {dim}", v.len()),
            ));
        }
        vectors.push(unit(v).ok_or_else(|| {
            Error::validation(format!("embedding of {lemma:?}"), "zero or non-finite vector")
        })?);
    }

    let mut canonical_of_lemma: BTreeMap<String, CanonicalLabel> = BTreeMap::new();
    for cluster in average_linkage(&vectors, threshold) {
        let mut mean = vec![0.0; dim];
        for &i in &cluster {
            mean.iter_mut().zip(&vectors[i]).for_each(|(m, x)| *m += x);
        }
        let mean = unit(mean).unwrap_or_else(|| vectors[cluster[0]].clone());
        // Members are in lexicographic order, so a strict comparison keeps
        // the lexicographically smallest among equidistant members.
        let mut slug_idx = cluster[0];
        let mut slug_dist = cosine_distance(&vectors[slug_idx], &mean);
        for &i in &cluster[1..] {
            let d = cosine_distance(&vectors[i], &mean);
            if d < slug_dist {
                slug_idx = i;
                slug_dist = d;
            }
        }
        let label = CanonicalLabel {
            slug: lemmas[slug_idx].clone(),
            members: cluster.iter().map(|&i| lemmas[i].clone()).collect(),
            embedding: mean,
        };
        for &i in &cluster {
            canonical_of_lemma.insert(lemmas[i].clone(), label.clone());
        }
    }

    Ok(lemma_of
        .into_iter()
        .map(|(raw, lemma)| (raw, canonical_of_lemma[&lemma].clone()))
        .collect())
}

/// Backfills gaps of at most `max_gap` missing frames and keeps the maximal
/// runs spanning at least `min_run` frames.
pub fn fill_holes_and_extract_runs(
    frames_per_slug: &BTreeMap<String, Vec<i64>>,
    max_gap: i64,
    min_run: i64,
) -> ObjectFrameIndex {
    let mut runs = BTreeMap::new();
    for (slug, frames) in frames_per_slug {
        let mut spans: Vec<(i64, i64)> = Vec::new();
        for &f in frames {
            match spans.last_mut() {
                Some((_, end)) if f - *end - 1 <= max_gap => *end = f.max(*end),
                _ => spans.push((f, f)),
            }
        }
        let kept: Vec<FrameRun> = spans
            .into_iter()
            .filter(|(s, e)| e - s + 1 >= min_run)
            .enumerate()
            .map(|(seq, (start, end))| FrameRun {
                seq: seq as u32,
                start,
                end,
            })
            .collect();
        if !kept.is_empty() {
            runs.insert(slug.clone(), kept);
        }
    }
    ObjectFrameIndex { runs }
}

/// Normalizes the observed labels and builds the objects-to-frames index.
/// Also returns the raw-label mapping for reporting.
pub fn build_object_frame_index(
    observations: &[LabelObservation],
    embedder: &dyn EmbeddingClient,
    lemmatizer: &dyn Lemmatizer,
    config: &InventoryConfig,
) -> Result<(ObjectFrameIndex, BTreeMap<String, CanonicalLabel>)> {
    let raw: BTreeSet<String> = observations.iter().map(|o| o.raw_label.clone()).collect();
    let canonical = normalize_labels(&raw, embedder, lemmatizer, config.cluster_threshold)?;
    let mut frames: BTreeMap<String, BTreeSet<i64>> = BTreeMap::new();
    for o in observations {
        let slug = &canonical[&o.raw_label].slug;
        frames.entry(slug.clone()).or_default().insert(o.frame_id);
    }
    let frames = frames
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect();
    let index = fill_holes_and_extract_runs(&frames, config.max_gap, config.min_run);
    Ok((index, canonical))
}
