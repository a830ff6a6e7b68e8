//! End-to-end ingest of the synthetic three-box scene.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use scenemem::geometry::Point3;
use scenemem::pipeline::{ingest_dir, IngestConfig};

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).parent().unwrap().join("core").join("tests/fixtures/boxes3")
}

fn truth_centers() -> Vec<Point3> {
    let text = fs::read_to_string(fixture().join("truth.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["bodies"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| {
            let c: [f64; 3] = serde_json::from_value(b["center"].clone()).unwrap();
            Point3::from(c)
        })
        .collect()
}

pub fn boxes3_recovers_three_components() {
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (memory, stats) = ingest_dir(&fixture(), out.path(), &IngestConfig::default()).unwrap();
    let elapsed = start.elapsed();
    eprintln!("{stats:#?}");
    assert_eq!(memory.len(), 3);
    assert!(stats.merges_rejected_by_constraint >= 1);
    assert!(stats.merges_applied >= 1);
    assert!(elapsed.as_secs_f64() < 5.0);
    for truth in truth_centers() {
        let best = memory
            .components()
            .map(|c| c.centroid.distance(&truth))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.25, "centroid error {best} for {truth:?}");
    }
}

pub fn boxes3_snapshot_is_deterministic() {
    let mut snapshots = Vec::new();
    for _ in 0..3 {
        let out = tempfile::tempdir().unwrap();
        ingest_dir(&fixture(), out.path(), &IngestConfig::default()).unwrap();
        snapshots.push(fs::read(out.path().join("components.jsonl")).unwrap());
    }
    assert!(snapshots.windows(2).all(|w| w[0] == w[1]));
}
