//! Pluggable model clients used during ingest, with deterministic fixture
//! implementations that read sidecar JSON files from the bundle directory.
//!
//! * `labels.json`     `{"<image ref>": ["label", ...]}`
//! * `embeddings.json` `{"texts": {"<text>": [..]}, "crops": {"<slug>#<track>": [..]}}`
//! * `captions.json`   `{"by_hash": {"<content hash>": "..."}, "by_slug": {"<slug>": "..."}}`
//!
//! Every sidecar is optional; missing entries fall back to deterministic
//! defaults so that any valid bundle can be ingested without a model.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;
use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use thiserror::Error;

use crate::bundle::SceneBundle;
use crate::error::{Error, Result};

pub const ENUMERATE_PROMPT: &str = "Identify all tangible objects in this image. \
Respond with a JSON list of short noun phrases.";

pub const CAPTION_PROMPT: &str = "These images show different views of the same object. \
Provide a concise caption covering identity, color, material, shape and nearby context.";

#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct ClientError(pub String);

/// `{image_ref} -> {labels}`
pub trait VisionLanguageClient: Send + Sync {
    fn enumerate(&self, image_ref: &str) -> Result<Vec<String>, ClientError>;
}

/// Identifies the best-view masked crop of one tracked instance.
#[derive(Debug, Clone, PartialEq)]
pub struct CropRequest {
    pub frame_id: i64,
    pub image_ref: String,
    pub slug: String,
    pub seq: u32,
    pub track_id: i64,
    /// Inclusive `[x0, y0, x1, y1]` pixel bounds of the mask.
    pub pixel_bounds: [u32; 4],
}

/// `{texts} -> {vectors}`, plus an image entry point for masked crops.
pub trait EmbeddingClient: Send + Sync {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError>;
    fn embed_crops(&self, crops: &[CropRequest]) -> Result<Vec<Vec<f64>>, ClientError>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionRequest {
    pub crop_refs: Vec<String>,
    /// Sorted, deduplicated slugs of the merged observations.
    pub slugs: Vec<String>,
    /// Hex SHA-256 over the component's sorted point ids.
    pub content_hash: String,
}

/// `{crop_refs} -> {caption}`
pub trait CaptioningClient: Send + Sync {
    fn caption(&self, request: &CaptionRequest) -> Result<String, ClientError>;
}

#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub base_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_millis(200),
        }
    }
}

impl RetryPolicy {
    pub fn immediate(attempts: u32) -> Self {
        Self {
            attempts,
            base_delay: Duration::ZERO,
        }
    }

    /// Runs `op` up to `attempts` times, doubling the delay after each failure.
    pub fn run<T>(&self, mut op: impl FnMut() -> Result<T, ClientError>) -> Result<T> {
        let attempts = self.attempts.max(1);
        let mut delay = self.base_delay;
        let mut last = String::new();
        for attempt in 1..=attempts {
            match op() {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::warn!("client attempt {attempt}/{attempts} failed: {e}");
                    last = e.0;
                    if attempt < attempts && !delay.is_zero() {
                        thread::sleep(delay);
                        delay *= 2;
                    }
                }
            }
        }
        Err(Error::Client {
            attempts,
            message: last,
        })
    }
}

fn read_sidecar<T: DeserializeOwned + Default>(path: &Path) -> Result<T> {
    match fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(T::default()),
        Err(e) => Err(Error::io(path, e)),
    }
}

/// Feature-hashing text embedder over character trigrams. Deterministic and
/// dependency-free; similar strings land close together.
#[derive(Debug, Clone, Copy)]
pub struct HashingEmbedder {
    pub dim: usize,
}

impl Default for HashingEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl HashingEmbedder {
    pub fn embed(&self, text: &str) -> Vec<f64> {
        let padded: Vec<char> = format!("^{}$", text.to_lowercase()).chars().collect();
        let mut v = vec![0.0; self.dim];
        for w in padded.windows(3) {
            let gram: String = w.iter().collect();
            let h = fnv1a(gram.as_bytes());
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            v[0] = 1.0;
        } else {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbeddingClient for HashingEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(texts.iter().map(|t| self.embed(t)).collect())
    }

    fn embed_crops(&self, crops: &[CropRequest]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(crops.iter().map(|c| self.embed(&c.slug)).collect())
    }
}

#[derive(Debug, Default, Deserialize)]
struct EmbeddingTables {
    #[serde(default)]
    texts: HashMap<String, Vec<f64>>,
    #[serde(default)]
    crops: HashMap<String, Vec<f64>>,
}

/// Table-driven embedder. Crops are keyed by `"<slug>#<track_id>"`; a crop
/// without an entry uses its slug's text vector.
#[derive(Debug, Default)]
pub struct FixtureEmbedder {
    texts: HashMap<String, Vec<f64>>,
    crops: HashMap<String, Vec<f64>>,
    fallback: HashingEmbedder,
}

impl FixtureEmbedder {
    pub fn new(texts: HashMap<String, Vec<f64>>, crops: HashMap<String, Vec<f64>>) -> Self {
        Self {
            texts,
            crops,
            fallback: HashingEmbedder::default(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let t: EmbeddingTables = read_sidecar(&dir.join("embeddings.json"))?;
        Ok(Self::new(t.texts, t.crops))
    }

    fn text(&self, text: &str) -> Vec<f64> {
        self.texts
            .get(text)
            .cloned()
            .unwrap_or_else(|| self.fallback.embed(text))
    }
}

impl EmbeddingClient for FixtureEmbedder {
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(texts.iter().map(|t| self.text(t)).collect())
    }

    fn embed_crops(&self, crops: &[CropRequest]) -> Result<Vec<Vec<f64>>, ClientError> {
        Ok(crops
            .iter()
            .map(|c| {
                self.crops
                    .get(&format!("{}#{}", c.slug, c.track_id))
                    .cloned()
                    .unwrap_or_else(|| self.text(&c.slug))
            })
            .collect())
    }
}

/// Replays per-image label lists.
#[derive(Debug, Default)]
pub struct FixtureVision {
    labels: HashMap<String, Vec<String>>,
}

impl FixtureVision {
    pub fn new(labels: HashMap<String, Vec<String>>) -> Self {
        Self { labels }
    }

    /// Reads `labels.json`; when the bundle has none, each frame reports the
    /// slugs of the masks drawn on it.
    pub fn for_bundle(bundle: &SceneBundle) -> Result<Self> {
        let path = bundle.root.join("labels.json");
        if path.exists() {
            return Ok(Self::new(read_sidecar(&path)?));
        }
        let mut labels = HashMap::new();
        for f in &bundle.frames {
            let slugs: BTreeSet<String> = bundle
                .masks_in_frame(f.frame_id)
                .iter()
                .map(|&i| bundle.masks[i].slug.clone())
                .collect();
            labels.insert(f.image.clone(), slugs.into_iter().collect());
        }
        Ok(Self::new(labels))
    }
}

impl VisionLanguageClient for FixtureVision {
    fn enumerate(&self, image_ref: &str) -> Result<Vec<String>, ClientError> {
        Ok(self.labels.get(image_ref).cloned().unwrap_or_default())
    }
}

#[derive(Debug, Default, Deserialize)]
struct CaptionTables {
    #[serde(default)]
    by_hash: HashMap<String, String>,
    #[serde(default)]
    by_slug: HashMap<String, String>,
}

/// Captions by content hash, then by the first slug with an entry, then a
/// caption assembled from the slugs themselves.
#[derive(Debug, Default)]
pub struct FixtureCaptioner {
    by_hash: HashMap<String, String>,
    by_slug: HashMap<String, String>,
}

impl FixtureCaptioner {
    pub fn new(by_hash: HashMap<String, String>, by_slug: HashMap<String, String>) -> Self {
        Self { by_hash, by_slug }
    }

    pub fn from_dir(dir: &Path) -> Result<Self> {
        let t: CaptionTables = read_sidecar(&dir.join("captions.json"))?;
        Ok(Self::new(t.by_hash, t.by_slug))
    }
}

impl CaptioningClient for FixtureCaptioner {
    fn caption(&self, request: &CaptionRequest) -> Result<String, ClientError> {
        if let Some(c) = self.by_hash.get(&request.content_hash) {
            return Ok(c.clone());
        }
        if let Some(c) = request.slugs.iter().find_map(|s| self.by_slug.get(s)) {
            return Ok(c.clone());
        }
        Ok(request.slugs.join(" / "))
    }
}
