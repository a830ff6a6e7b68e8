//! Default constants of the ingest pipeline and the behaviour they imply.

use std::collections::{BTreeMap, BTreeSet};

use scenemem::association::{reject_outliers, InstanceKey, InstancePoints};
use scenemem::connectivity::{clean_components, compute_edges, ComponentDraft, ConnectivityConfig, MaskNode};
use scenemem::geometry::{Point3, VoxelKeySet};
use scenemem::inventory::{average_linkage, fill_holes_and_extract_runs, InventoryConfig};
use scenemem::pipeline::IngestConfig;

fn runs_of(frames: Vec<i64>) -> Vec<(i64, i64)> {
    let cfg = InventoryConfig::default();
    let input = BTreeMap::from([("chair".to_string(), frames)]);
    let index = fill_holes_and_extract_runs(&input, cfg.max_gap, cfg.min_run);
    index
        .runs
        .get("chair")
        .map(|rs| rs.iter().map(|r| (r.start, r.end)).collect())
        .unwrap_or_default()
}

pub fn defaults_match_documented_values() {
    let inv = InventoryConfig::default();
    assert_eq!((inv.cluster_threshold, inv.max_gap, inv.min_run), (0.05, 3, 5));
    let ingest = IngestConfig::default();
    assert_eq!((ingest.association_dbscan.eps, ingest.association_dbscan.min_samples), (0.5, 5));
    let c = ConnectivityConfig::default();
    assert_eq!(c.voxel_cell, 0.5);
    assert_eq!(c.guard_cos_dist, 0.8);
    assert_eq!((c.clean_eps, c.clean_min_samples, c.min_points), (0.1, 5, 20));
}

pub fn gap_of_three_is_filled_gap_of_four_is_not() {
    // Frames 5, 6, 7 missing.
    assert_eq!(runs_of(vec![0, 1, 2, 3, 4, 8, 9, 10, 11, 12]), vec![(0, 12)]);
    // Frames 5, 6, 7, 8 missing.
    assert_eq!(runs_of(vec![0, 1, 2, 3, 4, 9, 10, 11, 12, 13]), vec![(0, 4), (9, 13)]);
}

pub fn runs_shorter_than_five_frames_are_dropped() {
    assert_eq!(runs_of(vec![10, 11, 12, 13, 14]), vec![(10, 14)]);
    assert_eq!(runs_of(vec![10, 11, 12, 13]), Vec::<(i64, i64)>::new());
    // Gaps count toward the span once filled.
    assert_eq!(runs_of(vec![0, 4]), vec![(0, 4)]);
    assert_eq!(runs_of(vec![0, 5]), Vec::<(i64, i64)>::new());
}

fn at_cos_distance(d: f64) -> Vec<f64> {
    // Unit vector whose cosine with e0 is 1 - d.
    let c = 1.0 - d;
    vec![c, (1.0 - c * c).sqrt(), 0.0]
}

pub fn cluster_threshold_separates_orthogonal_embeddings() {
    let t = InventoryConfig::default().cluster_threshold;
    let e0 = vec![1.0, 0.0, 0.0];
    let e1 = vec![0.0, 1.0, 0.0];
    assert_eq!(average_linkage(&[e0.clone(), e1], t), vec![vec![0], vec![1]]);
    assert_eq!(average_linkage(&[e0.clone(), at_cos_distance(0.04)], t), vec![vec![0, 1]]);
    assert_eq!(average_linkage(&[e0, at_cos_distance(0.06)], t).len(), 2);
}

pub fn association_dbscan_removes_a_distant_stray() {
    let mut positions = BTreeMap::new();
    for i in 0..30u64 {
        let p = Point3::new((i % 5) as f64 * 0.1, (i / 5) as f64 * 0.1, 0.5);
        positions.insert(i, p);
    }
    positions.insert(99, Point3::new(10.0, 0.0, 0.5));
    let inst = InstancePoints {
        key: InstanceKey::new(0, "chair", 1),
        point_ids: positions.keys().copied().collect(),
    };
    let out = reject_outliers(vec![inst], |id| positions.get(&id).copied(), IngestConfig::default().association_dbscan);
    assert_eq!(out.len(), 1);
    assert!(!out[0].point_ids.contains(&99));
    assert_eq!(out[0].point_ids.len(), 30);
}

fn node(id: usize, embedding: Vec<f64>) -> MaskNode {
    MaskNode {
        node_id: id,
        key: InstanceKey::new(id as u32, "chair", 0),
        points: BTreeSet::new(),
        voxels: VoxelKeySet {
            cell_size: 0.5,
            origin: Point3::ORIGIN,
            keys: BTreeSet::from([(0, 0, 0), (1, 0, 0)]),
        },
        embedding,
        best_view: 0,
    }
}

pub fn semantic_guard_blocks_orthogonal_merges() {
    let c = ConnectivityConfig::default();
    let orthogonal = [node(0, vec![1.0, 0.0, 0.0]), node(1, vec![0.0, 1.0, 0.0])];
    assert!(compute_edges(&orthogonal, &c).is_empty());
    let close = [node(0, vec![1.0, 0.0, 0.0]), node(1, at_cos_distance(0.79))];
    assert_eq!(compute_edges(&close, &c).len(), 1);
    let far = [node(0, vec![1.0, 0.0, 0.0]), node(1, at_cos_distance(0.81))];
    assert!(compute_edges(&far, &c).is_empty());
}

pub fn cleaning_drops_components_under_twenty_inliers() {
    let c = ConnectivityConfig::default();
    // Dense patches at 4 cm spacing, five points per row: no noise.
    let patch = |i: u64, y0: f64| Point3::new((i % 5) as f64 * 0.04, y0 + (i / 5) as f64 * 0.04, 0.0);
    let mut positions = BTreeMap::new();
    for i in 0..19u64 {
        positions.insert(i, patch(i, 0.0));
    }
    for i in 0..20u64 {
        positions.insert(100 + i, patch(i, 5.0));
    }
    let draft = |ids: std::ops::Range<u64>, member: usize| ComponentDraft {
        members: BTreeSet::from([member]),
        points: ids.collect(),
    };
    let out = clean_components(vec![draft(0..19, 0), draft(100..120, 1)], |id| positions.get(&id).copied(), &c);
    assert_eq!(out.dropped, 1);
    assert_eq!(out.drafts.len(), 1);
    assert_eq!(out.drafts[0].members, BTreeSet::from([1]));
    assert_eq!(out.drafts[0].points.len(), 20);
}
