//! Mask connectivity graph: voxel-overlap edges with a semantic guard,
//! constrained union-find merging, component cleaning and finalization.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::association::{InstanceKey, InstancePoints};
use crate::bundle::SceneBundle;
use crate::clients::{CaptionRequest, CaptioningClient, CropRequest, EmbeddingClient, RetryPolicy};
use crate::error::{Error, Result};
use crate::geometry::{bounds_and_centroid, dbscan, voxelize, DbscanParams, Point3, VoxelKeySet, NOISE};
use crate::inventory::cosine_distance;
use crate::memory::Component;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConnectivityConfig {
    pub voxel_cell: f64,
    /// Jaccard threshold for candidate edges.
    pub tau: f64,
    pub guard_cos_dist: f64,
    pub clean_eps: f64,
    pub clean_min_samples: usize,
    pub min_points: usize,
    pub top_k_views: usize,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self {
            voxel_cell: 0.5,
            tau: 0.25,
            guard_cos_dist: 0.8,
            clean_eps: 0.1,
            clean_min_samples: 5,
            min_points: 20,
            top_k_views: 3,
        }
    }
}

impl ConnectivityConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("connectivity config: {what}")));
        if !(self.voxel_cell > 0.0 && self.voxel_cell.is_finite()) {
            return bad("voxel_cell must be positive");
        }
        if !(self.tau > 0.0) {
            return bad("tau must be positive");
        }
        if !(0.0..=2.0).contains(&self.guard_cos_dist) {
            return bad("guard_cos_dist must lie in [0, 2]");
        }
        if !(self.clean_eps > 0.0) || self.clean_min_samples == 0 {
            return bad("cleaning dbscan parameters must be positive");
        }
        Ok(())
    }

    fn clean_params(&self) -> DbscanParams {
        DbscanParams {
            eps: self.clean_eps,
            min_samples: self.clean_min_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskNode {
    pub node_id: usize,
    pub key: InstanceKey,
    pub points: BTreeSet<u64>,
    pub voxels: VoxelKeySet,
    /// Unit-norm embedding of the best-view masked crop.
    pub embedding: Vec<f64>,
    pub best_view: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateEdge {
    pub a: usize,
    pub b: usize,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ComponentDraft {
    pub members: BTreeSet<usize>,
    pub points: BTreeSet<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergeOutcome {
    Merged,
    RejectedSharedKey,
    AlreadyJoined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeDecision {
    pub edge: CandidateEdge,
    pub outcome: MergeOutcome,
}

#[derive(Debug, Clone, Default)]
pub struct MergeResult {
    pub drafts: Vec<ComponentDraft>,
    /// One entry per processed edge, in processing order.
    pub log: Vec<MergeDecision>,
}

impl MergeResult {
    pub fn count(&self, outcome: MergeOutcome) -> usize {
        self.log.iter().filter(|d| d.outcome == outcome).count()
    }
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

/// One node per instance, embedded from the frame where most of its points
/// are observed (ties go to the earliest frame). Instances without such a
/// frame are skipped and reported in the returned warnings.
pub fn build_nodes(
    instances: &[InstancePoints],
    bundle: &SceneBundle,
    embedder: &dyn EmbeddingClient,
    config: &ConnectivityConfig,
    origin: Point3,
) -> Result<(Vec<MaskNode>, Vec<String>)> {
    let mut masks_of: HashMap<InstanceKey, Vec<usize>> = HashMap::new();
    for (i, m) in bundle.masks.iter().enumerate() {
        masks_of.entry(InstanceKey::of(m)).or_default().push(i);
    }

    let mut warnings = Vec::new();
    let mut pending = Vec::new();
    let mut requests = Vec::new();
    for inst in instances {
        let mut best: Option<(usize, i64, usize)> = None;
        for &mi in masks_of.get(&inst.key).into_iter().flatten() {
            let frame_id = bundle.masks[mi].frame_id;
            let count = inst
                .point_ids
                .iter()
                .filter_map(|&id| bundle.point(id))
                .filter(|p| p.obs.iter().any(|o| o.frame_id == frame_id))
                .count();
            let better = match best {
                None => count > 0,
                Some((c, f, _)) => count > c || (count == c && frame_id < f),
            };
            if better {
                best = Some((count, frame_id, mi));
            }
        }
        let Some((_, frame_id, mi)) = best else {
            warnings.push(format!(
                "instance ({}, {}, {}) has no visible frame; node skipped",
                inst.key.seq, inst.key.slug, inst.key.track_id
            ));
            continue;
        };
        let frame = bundle.frame(frame_id).expect("validated bundle");
        requests.push(CropRequest {
            frame_id,
            image_ref: frame.image.clone(),
            slug: inst.key.slug.clone(),
            seq: inst.key.seq,
            track_id: inst.key.track_id,
            pixel_bounds: bundle.decoded_mask(mi).pixel_bounds().unwrap_or([0, 0, 0, 0]),
        });
        pending.push((inst, frame_id));
    }

    let embeddings = if requests.is_empty() {
        Vec::new()
    } else {
        RetryPolicy::immediate(3).run(|| embedder.embed_crops(&requests))?
    };
    if embeddings.len() != requests.len() {
        return Err(Error::validation(
            "crop embeddings",
            format!("{} vectors for {} crops", embeddings.len(), requests.len()),
        ));
    }
    let dim = embeddings.first().map_or(0, Vec::len);

    let mut nodes = Vec::with_capacity(pending.len());
    for ((inst, best_view), emb) in pending.into_iter().zip(embeddings) {
        let record = format!("crop embedding of {}#{}", inst.key.slug, inst.key.track_id);
        if emb.len() != dim {
            return Err(Error::validation(record, "dimension mismatch"));
        }
        let embedding = unit(emb).ok_or_else(|| Error::validation(&record, "zero vector"))?;
        let positions: Vec<Point3> = inst
            .point_ids
            .iter()
            .filter_map(|&id| bundle.position(id))
            .collect();
        nodes.push(MaskNode {
            node_id: nodes.len(),
            key: inst.key.clone(),
            points: inst.point_ids.clone(),
            voxels: voxelize(&positions, config.voxel_cell, origin)?,
            embedding,
            best_view,
        });
    }
    Ok((nodes, warnings))
}

/// Candidate edges: pairs whose voxel Jaccard is at least `tau` and whose
/// embeddings are within the guard distance. Sorted by Jaccard descending,
/// then by `(a, b)`.
///
/// Overlap counts come from the voxel -> nodes incidence lists, which is the
/// sparse product `M * M^T` of the node/voxel incidence matrix.
pub fn compute_edges(nodes: &[MaskNode], config: &ConnectivityConfig) -> Vec<CandidateEdge> {
    let mut incidence: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, n) in nodes.iter().enumerate() {
        for &k in &n.voxels.keys {
            incidence.entry(k).or_default().push(i);
        }
    }
    let mut overlap: HashMap<(usize, usize), usize> = HashMap::new();
    for members in incidence.values() {
        for (x, &i) in members.iter().enumerate() {
            for &j in &members[x + 1..] {
                *overlap.entry((i.min(j), i.max(j))).or_default() += 1;
            }
        }
    }

    let mut edges: Vec<CandidateEdge> = overlap
        .into_iter()
        .filter_map(|((i, j), inter)| {
            let union = nodes[i].voxels.len() + nodes[j].voxels.len() - inter;
            let jaccard = inter as f64 / union as f64;
            let guard = cosine_distance(&nodes[i].embedding, &nodes[j].embedding);
            (jaccard >= config.tau && guard <= config.guard_cos_dist).then(|| {
                let (a, b) = (nodes[i].node_id, nodes[j].node_id);
                CandidateEdge {
                    a: a.min(b),
                    b: a.max(b),
                    jaccard,
                }
            })
        })
        .collect();
    edges.sort_by(|x, y| {
        y.jaccard
            .total_cmp(&x.jaccard)
            .then_with(|| (x.a, x.b).cmp(&(y.a, y.b)))
    });
    edges
}

struct ConstrainedUnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
    keys: Vec<BTreeSet<(u32, String)>>,
}

impl ConstrainedUnionFind {
    fn new(nodes: &[MaskNode]) -> Self {
        Self {
            parent: (0..nodes.len()).collect(),
            size: vec![1; nodes.len()],
            keys: nodes
                .iter()
                .map(|n| BTreeSet::from([n.key.run_key()]))
                .collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        let mut root = x;
        while self.parent[root] != root {
            root = self.parent[root];
        }
        while self.parent[x] != root {
            let next = self.parent[x];
            self.parent[x] = root;
            x = next;
        }
        root
    }

    fn try_union(&mut self, a: usize, b: usize) -> MergeOutcome {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return MergeOutcome::AlreadyJoined;
        }
        if !self.keys[ra].is_disjoint(&self.keys[rb]) {
            return MergeOutcome::RejectedSharedKey;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        let moved = std::mem::take(&mut self.keys[rb]);
        self.keys[ra].extend(moved);
        MergeOutcome::Merged
    }
}

/// Applies edges in the given order (strongest first), refusing any merge
/// that would put two observations of the same `(sequence, slug)` into one
/// component. Drafts are ordered by their smallest member.
pub fn merge_constrained(nodes: &[MaskNode], edges: &[CandidateEdge]) -> MergeResult {
    let pos: HashMap<usize, usize> = nodes.iter().enumerate().map(|(i, n)| (n.node_id, i)).collect();
    let mut uf = ConstrainedUnionFind::new(nodes);
    let mut log = Vec::with_capacity(edges.len());
    for &edge in edges {
        let outcome = match (pos.get(&edge.a), pos.get(&edge.b)) {
            (Some(&a), Some(&b)) => uf.try_union(a, b),
            _ => continue,
        };
        log.push(MergeDecision { edge, outcome });
    }

    let mut groups: BTreeMap<usize, ComponentDraft> = BTreeMap::new();
    for (i, node) in nodes.iter().enumerate() {
        let root = uf.find(i);
        let draft = groups.entry(root).or_default();
        draft.members.insert(node.node_id);
        draft.points.extend(node.points.iter().copied());
    }
    let mut drafts: Vec<ComponentDraft> = groups.into_values().collect();
    drafts.sort_by_key(|d| d.members.first().copied());
    MergeResult { drafts, log }
}

#[derive(Debug, Clone, Default)]
pub struct CleanResult {
    pub drafts: Vec<ComponentDraft>,
    pub dropped: usize,
    pub noise_points: usize,
}

/// Removes DBSCAN noise from every draft and drops drafts left with fewer
/// than `min_points` inliers. Multi-cluster drafts are kept whole.
pub fn clean_components<F>(
    drafts: Vec<ComponentDraft>,
    position: F,
    config: &ConnectivityConfig,
) -> CleanResult
where
    F: Fn(u64) -> Option<Point3>,
{
    let mut out = CleanResult::default();
    for draft in drafts {
        let resolved: Vec<(u64, Point3)> = draft
            .points
            .iter()
            .filter_map(|&id| position(id).map(|p| (id, p)))
            .collect();
        let pts: Vec<Point3> = resolved.iter().map(|(_, p)| *p).collect();
        let labels = dbscan(&pts, config.clean_params());
        let inliers: BTreeSet<u64> = resolved
            .iter()
            .zip(&labels)
            .filter(|(_, &l)| l != NOISE)
            .map(|((id, _), _)| *id)
            .collect();
        out.noise_points += draft.points.len() - inliers.len();
        if inliers.len() < config.min_points {
            out.dropped += 1;
            continue;
        }
        out.drafts.push(ComponentDraft {
            members: draft.members,
            points: inliers,
        });
    }
    out
}

/// A representative view to be cut out of a frame image.
#[derive(Debug, Clone, PartialEq)]
pub struct CropJob {
    pub component_id: u64,
    pub crop_ref: String,
    pub frame_id: i64,
    /// Inclusive `[x0, y0, x1, y1]`.
    pub rect: [u32; 4],
    /// Indices into `bundle.masks` of the member masks drawn on the frame.
    pub masks: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct FinalizeResult {
    pub components: Vec<Component>,
    pub crops: Vec<CropJob>,
    pub warnings: Vec<String>,
}

/// Hex SHA-256 of the comma-joined sorted point ids.
pub fn content_hash(points: &BTreeSet<u64>) -> String {
    let joined = points.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
    Sha256::digest(joined.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Ranks frames by the number of the draft's points observed in them,
/// descending, ties by frame id.
pub fn rank_views(points: &BTreeSet<u64>, bundle: &SceneBundle) -> Vec<(i64, usize)> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for p in points.iter().filter_map(|&id| bundle.point(id)) {
        let frames: BTreeSet<i64> = p.obs.iter().map(|o| o.frame_id).collect();
        for f in frames {
            *counts.entry(f).or_default() += 1;
        }
    }
    let mut ranked: Vec<(i64, usize)> = counts.into_iter().collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
    ranked
}

/// Turns cleaned drafts into scene-memory components: bounds and centroid of
/// the inliers, top-k views, and a caption. Ids are dense in draft order.
pub fn finalize(
    drafts: &[ComponentDraft],
    nodes: &[MaskNode],
    bundle: &SceneBundle,
    captioner: &dyn CaptioningClient,
    config: &ConnectivityConfig,
) -> Result<FinalizeResult> {
    let node_keys: HashMap<usize, &InstanceKey> = nodes.iter().map(|n| (n.node_id, &n.key)).collect();
    let mut ordered: Vec<&ComponentDraft> = drafts.iter().collect();
    ordered.sort_by_key(|d| d.members.first().copied());

    let mut out = FinalizeResult::default();
    for (id, draft) in ordered.into_iter().enumerate() {
        let id = id as u64;
        let positions: Vec<Point3> = draft
            .points
            .iter()
            .filter_map(|&pid| bundle.position(pid))
            .collect();
        let (bbox, centroid) = bounds_and_centroid(&positions)?;
        let member_keys: BTreeSet<&InstanceKey> = draft
            .members
            .iter()
            .filter_map(|m| node_keys.get(m).copied())
            .collect();

        let mut crop_refs = Vec::new();
        for (rank, (frame_id, _)) in rank_views(&draft.points, bundle)
            .into_iter()
            .take(config.top_k_views)
            .enumerate()
        {
            let crop_ref = format!("crops/{id}_{rank}.png");
            let masks: Vec<usize> = bundle
                .masks_in_frame(frame_id)
                .iter()
                .copied()
                .filter(|&mi| member_keys.contains(&InstanceKey::of(&bundle.masks[mi])))
                .collect();
            let rect = crop_rect(bundle, frame_id, &masks, &draft.points);
            out.crops.push(CropJob {
                component_id: id,
                crop_ref: crop_ref.clone(),
                frame_id,
                rect,
                masks,
            });
            crop_refs.push(crop_ref);
        }

        let request = CaptionRequest {
            crop_refs: crop_refs.clone(),
            slugs: member_keys
                .iter()
                .map(|k| k.slug.clone())
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect(),
            content_hash: content_hash(&draft.points),
        };
        let caption = match RetryPolicy::immediate(1).run(|| captioner.caption(&request)) {
            Ok(c) => c,
            Err(e) => {
                out.warnings.push(format!("component {id}: caption failed: {e}"));
                String::new()
            }
        };

        out.components.push(Component {
            id,
            centroid,
            bbox,
            caption,
            crop_refs,
            attributes: BTreeMap::new(),
        });
    }
    Ok(out)
}

const CROP_PAD: u32 = 4;

fn crop_rect(bundle: &SceneBundle, frame_id: i64, masks: &[usize], points: &BTreeSet<u64>) -> [u32; 4] {
    let frame = bundle.frame(frame_id).expect("validated bundle");
    let mut rect: Option<[u32; 4]> = None;
    let mut grow = |r: [u32; 4]| {
        rect = Some(match rect {
            None => r,
            Some(c) => [c[0].min(r[0]), c[1].min(r[1]), c[2].max(r[2]), c[3].max(r[3])],
        });
    };
    for &mi in masks {
        if let Some(r) = bundle.decoded_mask(mi).pixel_bounds() {
            grow(r);
        }
    }
    if masks.is_empty() {
        for p in points.iter().filter_map(|&id| bundle.point(id)) {
            for o in p.obs.iter().filter(|o| o.frame_id == frame_id) {
                let (x, y) = o.pixel();
                grow([
                    x.saturating_sub(CROP_PAD),
                    y.saturating_sub(CROP_PAD),
                    (x + CROP_PAD).min(frame.width - 1),
                    (y + CROP_PAD).min(frame.height - 1),
                ]);
            }
        }
    }
    rect.unwrap_or([0, 0, frame.width - 1, frame.height - 1])
}
