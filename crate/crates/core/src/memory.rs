//! The scene memory: an id-keyed component store with a uniform-grid spatial
//! index over centroids, a BM25 text index over captions and attributes, and
//! line-delimited JSON snapshots.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Aabb3, Point3, VoxelKey};

pub const SNAPSHOT_FILE: &str = "components.jsonl";
pub const SNAPSHOT_VERSION: u32 = 1;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

const GRID_CELL: f64 = 1.0;
const LINEAR_SCAN_BELOW: usize = 64;

/// A persistent 3D object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ComponentRecord", try_from = "ComponentRecord")]
pub struct Component {
    pub id: u64,
    pub centroid: Point3,
    pub bbox: Aabb3,
    pub caption: String,
    /// Crop image paths relative to the memory directory.
    pub crop_refs: Vec<String>,
    pub attributes: BTreeMap<String, String>,
}

/// Wire and snapshot form of a [`Component`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComponentRecord {
    id: u64,
    centroid: [f64; 3],
    bbox: [f64; 6],
    caption: String,
    #[serde(default)]
    crops: Vec<String>,
    #[serde(default)]
    attrs: BTreeMap<String, String>,
}

impl From<Component> for ComponentRecord {
    fn from(c: Component) -> Self {
        Self {
            id: c.id,
            centroid: c.centroid.to_array(),
            bbox: c.bbox.to_array(),
            caption: c.caption,
            crops: c.crop_refs,
            attrs: c.attributes,
        }
    }
}

impl TryFrom<ComponentRecord> for Component {
    type Error = String;

    fn try_from(r: ComponentRecord) -> std::result::Result<Self, String> {
        let bbox = Aabb3::from_array(r.bbox).map_err(|e| e.to_string())?;
        let c = Component {
            id: r.id,
            centroid: r.centroid.into(),
            bbox,
            caption: r.caption,
            crop_refs: r.crops,
            attributes: r.attrs,
        };
        c.check().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

impl Component {
    fn check(&self) -> Result<()> {
        let record = format!("component {}", self.id);
        if !self.centroid.is_finite() || !self.bbox.min.is_finite() || !self.bbox.max.is_finite() {
            return Err(Error::validation(record, "non-finite geometry"));
        }
        if !self.bbox.contains(&self.centroid) {
            return Err(Error::validation(record, "centroid lies outside bbox"));
        }
        Ok(())
    }

    fn document(&self) -> String {
        let mut doc = self.caption.clone();
        for (k, v) in &self.attributes {
            doc.push(' ');
            doc.push_str(k);
            doc.push(' ');
            doc.push_str(v);
        }
        doc
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default)]
struct TextIndex {
    postings: BTreeMap<String, BTreeMap<u64, u32>>,
    doc_len: BTreeMap<u64, u32>,
    total_len: u64,
}

impl TextIndex {
    fn add(&mut self, id: u64, text: &str) {
        let tokens = tokenize(text);
        for t in &tokens {
            *self.postings.entry(t.clone()).or_default().entry(id).or_default() += 1;
        }
        self.doc_len.insert(id, tokens.len() as u32);
        self.total_len += tokens.len() as u64;
    }

    fn remove(&mut self, id: u64, text: &str) {
        for t in tokenize(text).into_iter().collect::<BTreeSet<_>>() {
            if let Some(p) = self.postings.get_mut(&t) {
                p.remove(&id);
                if p.is_empty() {
                    self.postings.remove(&t);
                }
            }
        }
        if let Some(len) = self.doc_len.remove(&id) {
            self.total_len -= len as u64;
        }
    }

    fn search(&self, terms: &BTreeSet<String>) -> Vec<(u64, f64)> {
        let n = self.doc_len.len() as f64;
        if n == 0.0 {
            return Vec::new();
        }
        let avgdl = self.total_len as f64 / n;
        let mut scores: BTreeMap<u64, f64> = BTreeMap::new();
        for term in terms {
            let Some(postings) = self.postings.get(term) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            for (&id, &tf) in postings {
                let tf = tf as f64;
                let dl = self.doc_len[&id] as f64;
                let norm = if avgdl > 0.0 { dl / avgdl } else { 0.0 };
                let s = idf * tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * norm));
                *scores.entry(id).or_default() += s;
            }
        }
        scores.into_iter().filter(|(_, s)| *s > 0.0).collect()
    }
}

fn grid_cell(p: &Point3) -> VoxelKey {
    (
        (p.x / GRID_CELL).floor() as i64,
        (p.y / GRID_CELL).floor() as i64,
        (p.z / GRID_CELL).floor() as i64,
    )
}

#[derive(Debug, Clone, Default)]
struct SpatialGrid {
    cells: HashMap<VoxelKey, BTreeSet<u64>>,
}

impl SpatialGrid {
    fn add(&mut self, id: u64, p: &Point3) {
        self.cells.entry(grid_cell(p)).or_default().insert(id);
    }

    fn remove(&mut self, id: u64, p: &Point3) {
        let key = grid_cell(p);
        if let Some(set) = self.cells.get_mut(&key) {
            set.remove(&id);
            if set.is_empty() {
                self.cells.remove(&key);
            }
        }
    }

    /// Occupied cells whose key range overlaps `[lo, hi]` on every axis.
    fn cells_in(&self, lo: VoxelKey, hi: VoxelKey) -> impl Iterator<Item = &BTreeSet<u64>> {
        self.cells
            .iter()
            .filter(move |(k, _)| {
                lo.0 <= k.0 && k.0 <= hi.0 && lo.1 <= k.1 && k.1 <= hi.1 && lo.2 <= k.2 && k.2 <= hi.2
            })
            .map(|(_, ids)| ids)
    }
}

fn by_distance(a: &(u64, f64), b: &(u64, f64)) -> std::cmp::Ordering {
    a.1.total_cmp(&b.1).then(a.0.cmp(&b.0))
}

/// Indexed component store. Mutations keep both indexes consistent before
/// returning; wrap in a lock for shared use.
#[derive(Debug, Clone, Default)]
pub struct SceneMemory {
    components: BTreeMap<u64, Component>,
    spatial: SpatialGrid,
    text: TextIndex,
}

impl PartialEq for SceneMemory {
    fn eq(&self, other: &Self) -> bool {
        self.components == other.components
    }
}

impl SceneMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_components(components: impl IntoIterator<Item = Component>) -> Result<Self> {
        let mut m = Self::new();
        for c in components {
            m.insert(c)?;
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Component> {
        self.components.get(&id)
    }

    pub fn contains(&self, id: u64) -> bool {
        self.components.contains_key(&id)
    }

    /// Components in ascending id order.
    pub fn components(&self) -> impl Iterator<Item = &Component> {
        self.components.values()
    }

    pub fn insert(&mut self, component: Component) -> Result<()> {
        if self.components.contains_key(&component.id) {
            return Err(Error::Conflict(format!("component {} already exists", component.id)));
        }
        component.check()?;
        self.index(&component);
        self.components.insert(component.id, component);
        Ok(())
    }

    pub fn update(&mut self, component: Component) -> Result<()> {
        let Some(old) = self.components.get(&component.id) else {
            return Err(Error::Conflict(format!("component {} does not exist", component.id)));
        };
        component.check()?;
        let old = old.clone();
        self.unindex(&old);
        self.index(&component);
        self.components.insert(component.id, component);
        Ok(())
    }

    /// Sets `key` on a component, replacing any previous value.
    pub fn append_attribute(&mut self, id: u64, key: &str, value: &str) -> Result<()> {
        let mut c = self
            .components
            .get(&id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("component {id}")))?;
        c.attributes.insert(key.to_string(), value.to_string());
        self.update(c)
    }

    fn index(&mut self, c: &Component) {
        self.spatial.add(c.id, &c.centroid);
        self.text.add(c.id, &c.document());
    }

    fn unindex(&mut self, c: &Component) {
        self.spatial.remove(c.id, &c.centroid);
        self.text.remove(c.id, &c.document());
    }

    /// BM25 ranking over caption and attribute text; ties by ascending id.
    pub fn search_text(&self, query: &str, limit: usize) -> Result<Vec<(u64, f64)>> {
        if limit == 0 {
            return Err(Error::InvalidArgument("limit must be at least 1".into()));
        }
        let terms: BTreeSet<String> = tokenize(query).into_iter().collect();
        if terms.is_empty() {
            return Err(Error::InvalidArgument("query has no searchable terms".into()));
        }
        let mut hits = self.text.search(&terms);
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        hits.truncate(limit);
        Ok(hits)
    }

    /// Components whose centroid lies within `radius` of `center`, nearest
    /// first, ties by id.
    pub fn query_radius(&self, center: Point3, radius: f64) -> Vec<(u64, f64)> {
        if !(radius >= 0.0) || !center.is_finite() {
            return Vec::new();
        }
        let mut hits: Vec<(u64, f64)> = if self.len() < LINEAR_SCAN_BELOW {
            self.components
                .values()
                .map(|c| (c.id, c.centroid.distance(&center)))
                .filter(|(_, d)| *d <= radius)
                .collect()
        } else {
            let r = Point3::new(radius, radius, radius);
            let lo = grid_cell(&(center - r));
            let hi = grid_cell(&(center + r));
            self.spatial
                .cells_in(lo, hi)
                .flatten()
                .map(|&id| (id, self.components[&id].centroid.distance(&center)))
                .filter(|(_, d)| *d <= radius)
                .collect()
        };
        hits.sort_by(by_distance);
        hits
    }

    /// The `k` components with centroids closest to `center`, ties by id.
    pub fn nearest(&self, center: Point3, k: usize) -> Vec<(u64, f64)> {
        if k == 0 || !center.is_finite() {
            return Vec::new();
        }
        if self.len() < LINEAR_SCAN_BELOW {
            let mut all: Vec<(u64, f64)> = self
                .components
                .values()
                .map(|c| (c.id, c.centroid.distance(&center)))
                .collect();
            all.sort_by(by_distance);
            all.truncate(k);
            return all;
        }

        let c0 = grid_cell(&center);
        let ring = |key: &VoxelKey| {
            (key.0 - c0.0)
                .abs()
                .max((key.1 - c0.1).abs())
                .max((key.2 - c0.2).abs())
        };
        let mut rings: BTreeMap<i64, Vec<&BTreeSet<u64>>> = BTreeMap::new();
        for (key, ids) in &self.spatial.cells {
            rings.entry(ring(key)).or_default().push(ids);
        }
        let mut found: Vec<(u64, f64)> = Vec::new();
        for (r, cells) in rings {
            // Anything in ring r+1 or beyond is at least r cells away.
            if found.len() >= k && found[k - 1].1 < r as f64 * GRID_CELL - GRID_CELL {
                break;
            }
            found.extend(
                cells
                    .into_iter()
                    .flatten()
                    .map(|&id| (id, self.components[&id].centroid.distance(&center))),
            );
            found.sort_by(by_distance);
        }
        found.truncate(k);
        found
    }

    /// Writes `components.jsonl` into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut out = Vec::new();
        writeln!(out, "{}", serde_json::json!({ "scene_memory_version": SNAPSHOT_VERSION }))
            .expect("write to vec");
        for c in self.components.values() {
            let value = serde_json::to_value(c).expect("component serializes");
            writeln!(out, "{value}").expect("write to vec");
        }
        let path = dir.join(SNAPSHOT_FILE);
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(&tmp, out).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    /// Loads a snapshot written by [`SceneMemory::save`], rebuilding indexes.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(SNAPSHOT_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(Error::NotFound(path.display().to_string()))
            }
            Err(e) => return Err(Error::io(&path, e)),
        };
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .ok_or_else(|| Error::parse(format!("{SNAPSHOT_FILE}:1"), "missing version header"))?;
        let version: serde_json::Value = serde_json::from_str(header.1)
            .map_err(|e| Error::parse(format!("{SNAPSHOT_FILE}:1"), e.to_string()))?;
        if version.get("scene_memory_version").and_then(|v| v.as_u64()) != Some(SNAPSHOT_VERSION as u64) {
            return Err(Error::parse(
                format!("{SNAPSHOT_FILE}:1"),
                format!("unsupported header {header:?}", header = header.1),
            ));
        }
        let mut memory = SceneMemory::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let location = format!("{SNAPSHOT_FILE}:{}", i + 1);
            let c: Component = serde_json::from_str(line).map_err(|e| Error::parse(&location, e.to_string()))?;
            memory.insert(c).map_err(|e| Error::parse(&location, e.to_string()))?;
        }
        Ok(memory)
    }
}
