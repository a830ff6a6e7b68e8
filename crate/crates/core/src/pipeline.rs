//! End-to-end ingest: bundle in, scene memory directory out.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::association::{associate, reject_outliers};
use crate::bundle::{load_bundle, SceneBundle};
use crate::clients::{
    CaptioningClient, EmbeddingClient, FixtureCaptioner, FixtureEmbedder, FixtureVision, RetryPolicy,
    VisionLanguageClient,
};
use crate::connectivity::{
    build_nodes, clean_components, compute_edges, finalize, merge_constrained, ConnectivityConfig, CropJob,
    MergeOutcome,
};
use crate::error::{Error, Result};
use crate::geometry::{DbscanParams, Point3};
use crate::inventory::{build_object_frame_index, enumerate_objects, InventoryConfig, LabelObservation, RuleLemmatizer};
use crate::memory::SceneMemory;
use crate::tools::occupancy::{OccupancyConfig, OccupancyGrid};

#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub inventory: InventoryConfig,
    /// Per-instance outlier rejection before graph construction.
    pub association_dbscan: DbscanParams,
    pub connectivity: ConnectivityConfig,
    pub occupancy: OccupancyConfig,
    pub retry: RetryPolicy,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            inventory: InventoryConfig::default(),
            association_dbscan: DbscanParams::new(0.5, 5).expect("valid defaults"),
            connectivity: ConnectivityConfig::default(),
            occupancy: OccupancyConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

pub struct IngestClients {
    pub vision: Box<dyn VisionLanguageClient>,
    pub embedder: Box<dyn EmbeddingClient>,
    pub captioner: Box<dyn CaptioningClient>,
}

impl IngestClients {
    /// Deterministic clients backed by the bundle's sidecar files.
    pub fn fixtures(bundle: &SceneBundle) -> Result<Self> {
        Ok(Self {
            vision: Box::new(FixtureVision::for_bundle(bundle)?),
            embedder: Box::new(FixtureEmbedder::from_dir(&bundle.root)?),
            captioner: Box::new(FixtureCaptioner::from_dir(&bundle.root)?),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestStats {
    pub frames: usize,
    pub masks: usize,
    pub points: usize,
    pub label_observations: usize,
    pub slugs: usize,
    pub runs: usize,
    pub instances: usize,
    pub nodes: usize,
    pub edges: usize,
    pub merges_applied: usize,
    pub merges_rejected_by_constraint: usize,
    pub components_dropped_in_cleaning: usize,
    pub components: usize,
    pub crops: usize,
    pub warnings: Vec<String>,
    /// Wall time per stage in milliseconds, in execution order.
    pub stage_ms: Vec<(String, f64)>,
}

struct Timer {
    stages: Vec<(String, f64)>,
}

impl Timer {
    fn stage<T>(&mut self, name: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let r = f().map_err(|e| Error::Stage {
            stage: name,
            source: Box::new(e),
        });
        self.stages.push((name.to_string(), t.elapsed().as_secs_f64() * 1e3));
        r
    }
}

/// Loads a bundle from `bundle_dir`, ingests it with fixture clients and
/// writes the memory to `out_dir`.
pub fn ingest_dir(bundle_dir: &Path, out_dir: &Path, config: &IngestConfig) -> Result<(SceneMemory, IngestStats)> {
    let bundle = load_bundle(bundle_dir).map_err(|e| Error::Stage {
        stage: "load",
        source: Box::new(e),
    })?;
    let clients = IngestClients::fixtures(&bundle).map_err(|e| Error::Stage {
        stage: "load",
        source: Box::new(e),
    })?;
    ingest_pipeline(&bundle, &clients, out_dir, config)
}

pub fn ingest_pipeline(
    bundle: &SceneBundle,
    clients: &IngestClients,
    out_dir: &Path,
    config: &IngestConfig,
) -> Result<(SceneMemory, IngestStats)> {
    config.connectivity.validate()?;
    let mut timer = Timer { stages: Vec::new() };
    let mut stats = IngestStats {
        frames: bundle.frames.len(),
        masks: bundle.masks.len(),
        points: bundle.points.len(),
        ..Default::default()
    };

    let (index, canonical) = timer.stage("inventory", || {
        let mut observations = Vec::new();
        for frame in &bundle.frames {
            for raw_label in enumerate_objects(frame, clients.vision.as_ref(), &config.retry)? {
                observations.push(LabelObservation {
                    frame_id: frame.frame_id,
                    raw_label,
                });
            }
        }
        stats.label_observations = observations.len();
        build_object_frame_index(&observations, clients.embedder.as_ref(), &RuleLemmatizer, &config.inventory)
    })?;
    stats.slugs = canonical.values().map(|c| &c.slug).collect::<std::collections::BTreeSet<_>>().len();
    stats.runs = index.run_count();

    let instances = timer.stage("association", || {
        let found = associate(bundle, &index)?;
        Ok(reject_outliers(found, |id| bundle.position(id), config.association_dbscan))
    })?;
    stats.instances = instances.len();

    let origin = bundle.global_bounds().map_or(Point3::ORIGIN, |b| b.min);
    let (nodes, node_warnings) = timer.stage("nodes", || {
        build_nodes(&instances, bundle, clients.embedder.as_ref(), &config.connectivity, origin)
    })?;
    stats.nodes = nodes.len();
    stats.warnings.extend(node_warnings);

    let edges = timer.stage("edges", || Ok(compute_edges(&nodes, &config.connectivity)))?;
    stats.edges = edges.len();

    let merged = timer.stage("merge", || Ok(merge_constrained(&nodes, &edges)))?;
    stats.merges_applied = merged.count(MergeOutcome::Merged);
    stats.merges_rejected_by_constraint = merged.count(MergeOutcome::RejectedSharedKey);

    let cleaned = timer.stage("clean", || {
        Ok(clean_components(merged.drafts, |id| bundle.position(id), &config.connectivity))
    })?;
    stats.components_dropped_in_cleaning = cleaned.dropped;

    let finalized = timer.stage("finalize", || {
        finalize(&cleaned.drafts, &nodes, bundle, clients.captioner.as_ref(), &config.connectivity)
    })?;
    stats.warnings.extend(finalized.warnings.iter().cloned());

    timer.stage("crops", || {
        for job in &finalized.crops {
            if let Some(w) = render_crop(bundle, job, out_dir)? {
                stats.warnings.push(w);
            }
        }
        Ok(())
    })?;
    stats.crops = finalized.crops.len();

    let memory = timer.stage("save", || {
        let memory = SceneMemory::from_components(finalized.components)?;
        memory.save(out_dir)?;
        let positions: Vec<Point3> = bundle.points.iter().map(|p| p.xyz).collect();
        if !positions.is_empty() {
            OccupancyGrid::from_points(&positions, &config.occupancy)?.save(out_dir)?;
        }
        Ok(memory)
    })?;
    stats.components = memory.len();
    stats.stage_ms = timer.stages;
    Ok((memory, stats))
}

/// Writes one crop PNG: image pixels under the member masks, black
/// elsewhere. Without a readable image the masks are drawn white. Returns a
/// warning when the image could not be used.
fn render_crop(bundle: &SceneBundle, job: &CropJob, out_dir: &Path) -> Result<Option<String>> {
    let frame = bundle.frame(job.frame_id).expect("crop frame exists");
    let path = bundle.image_path(frame);
    let (source, warning) = match image::open(&path) {
        Ok(img) => {
            let rgb = img.to_rgb8();
            if rgb.width() == frame.width && rgb.height() == frame.height {
                (Some(rgb), None)
            } else {
                (None, Some(format!("{}: image size differs from frame record", path.display())))
            }
        }
        Err(e) => (None, Some(format!("{}: {e}", path.display()))),
    };
    let [x0, y0, x1, y1] = job.rect;
    let mut out = RgbImage::new(x1 - x0 + 1, y1 - y0 + 1);
    let masks: Vec<_> = job.masks.iter().map(|&i| bundle.decoded_mask(i)).collect();
    for y in y0..=y1 {
        for x in x0..=x1 {
            let covered = masks.is_empty() || masks.iter().any(|m| m.get(x, y));
            let px = match (&source, covered) {
                (_, false) => Rgb([0, 0, 0]),
                (Some(img), true) => *img.get_pixel(x, y),
                (None, true) => Rgb([255, 255, 255]),
            };
            out.put_pixel(x - x0, y - y0, px);
        }
    }
    let dest = out_dir.join(&job.crop_ref);
    if let Some(parent) = dest.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    out.save_with_format(&dest, image::ImageFormat::Png)
        .map_err(|e| Error::io(&dest, std::io::Error::other(e.to_string())))?;
    Ok(warning)
}

/// Stage timings as a name → milliseconds map, for reporting.
pub fn stage_map(stats: &IngestStats) -> BTreeMap<String, f64> {
    stats.stage_ms.iter().cloned().collect()
}
