//! Scene bundle ingest: posed frames, per-frame instance masks and feature
//! points with their 2D observations.
//!
//! A bundle is a directory holding three line-delimited JSON files:
//!
//! ```text
//! frames.jsonl  {"frame_id", "pose": [16 reals, row-major camera-to-world], "image", "width", "height"}
//! masks.jsonl   {"frame_id", "slug", "seq", "track_id", "rle": {"size": [h, w], "counts": [..]}, "bbox_area"}
//! points.jsonl  {"point_id", "xyz": [x, y, z], "obs": [[frame_id, u, v], ..]}
//! ```
//!
//! Masks use uncompressed COCO run-length encoding: runs alternate
//! background/foreground over the column-major pixel order, starting with a
//! (possibly empty) background run.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounds_and_centroid, Aabb3, Point3};

pub const FRAMES_FILE: &str = "frames.jsonl";
pub const MASKS_FILE: &str = "masks.jsonl";
pub const POINTS_FILE: &str = "points.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: i64,
    /// Camera-to-world transform, row-major.
    pub pose: [f64; 16],
    /// Image path relative to the bundle directory.
    pub image: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    /// `[height, width]`
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskRecord {
    pub frame_id: i64,
    pub slug: String,
    pub seq: u32,
    pub track_id: i64,
    pub rle: Rle,
    pub bbox_area: u64,
}

/// One sighting of a feature point: `(frame_id, u, v)` in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "(i64, f64, f64)", into = "(i64, f64, f64)")]
pub struct Observation {
    pub frame_id: i64,
    pub u: f64,
    pub v: f64,
}

impl From<(i64, f64, f64)> for Observation {
    fn from((frame_id, u, v): (i64, f64, f64)) -> Self {
        Self { frame_id, u, v }
    }
}

impl From<Observation> for (i64, f64, f64) {
    fn from(o: Observation) -> Self {
        (o.frame_id, o.u, o.v)
    }
}

impl Observation {
    /// Integer pixel `(column, row)` the observation falls in.
    pub fn pixel(&self) -> (u32, u32) {
        (self.u.floor() as u32, self.v.floor() as u32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePoint {
    pub point_id: u64,
    pub xyz: Point3,
    pub obs: Vec<Observation>,
}

/// Binary mask stored in column-major order (`index = x * height + y`).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: u32,
    pub height: u32,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![false; width as usize * height as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.data[x as usize * self.height as usize + y as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let h = self.height as usize;
        self.data[x as usize * h + y as usize] = value;
    }

    pub fn area(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }

    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the foreground, if any.
    pub fn pixel_bounds(&self) -> Option<[u32; 4]> {
        let mut out: Option<[u32; 4]> = None;
        for (x, y) in self.foreground() {
            out = Some(match out {
                None => [x, y, x, y],
                Some([x0, y0, x1, y1]) => [x0.min(x), y0.min(y), x1.max(x), y1.max(y)],
            });
        }
        out
    }

    /// Foreground pixels in column-major order.
    pub fn foreground(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let h = self.height.max(1);
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(move |(i, _)| ((i as u32) / h, (i as u32) % h))
    }
}

/// Decodes an uncompressed COCO RLE into a mask of the given dimensions.
pub fn decode_rle(rle: &Rle, width: u32, height: u32) -> Result<BinaryMask> {
    let [h, w] = rle.size;
    if h != height || w != width {
        return Err(Error::parse(
            "rle",
            format!("rle size {h}x{w} does not match frame {height}x{width}"),
        ));
    }
    let total = width as u64 * height as u64;
    let sum: u64 = rle.counts.iter().map(|&c| c as u64).sum();
    if sum != total {
        return Err(Error::parse(
            "rle",
            format!("run lengths sum to {sum}, expected {total}"),
        ));
    }
    let mut data = Vec::with_capacity(total as usize);
    for (i, &run) in rle.counts.iter().enumerate() {
        let value = i % 2 == 1;
        data.extend(std::iter::repeat_n(value, run as usize));
    }
    Ok(BinaryMask {
        width,
        height,
        data,
    })
}

/// Inverse of [`decode_rle`]; the first run is always background.
pub fn encode_rle(mask: &BinaryMask) -> Rle {
    let mut counts = Vec::new();
    let mut current = false;
    let mut run = 0u32;
    for &b in &mask.data {
        if b == current {
            run += 1;
        } else {
            counts.push(run);
            current = b;
            run = 1;
        }
    }
    counts.push(run);
    Rle {
        size: [mask.height, mask.width],
        counts,
    }
}

/// A validated, immutable scene bundle.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub masks: Vec<MaskRecord>,
    pub points: Vec<FeaturePoint>,
    decoded: Vec<BinaryMask>,
    frame_index: HashMap<i64, usize>,
    point_index: HashMap<u64, usize>,
    masks_by_frame: BTreeMap<i64, Vec<usize>>,
}

impl SceneBundle {
    /// Builds and validates a bundle from in-memory records.
    pub fn from_records(
        root: impl Into<PathBuf>,
        frames: Vec<FrameRecord>,
        masks: Vec<MaskRecord>,
        points: Vec<FeaturePoint>,
    ) -> Result<Self> {
        let mut frame_index = HashMap::new();
        let mut last: Option<i64> = None;
        for (i, f) in frames.iter().enumerate() {
            let record = format!("frame {}", f.frame_id);
            if let Some(prev) = last {
                if f.frame_id <= prev {
                    return Err(Error::validation(
                        record,
                        format!("frame ids must be strictly increasing (previous {prev})"),
                    ));
                }
            }
            last = Some(f.frame_id);
            if f.width == 0 || f.height == 0 {
                return Err(Error::validation(record, "frame dimensions must be positive"));
            }
            if f.pose.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(record, "pose has non-finite entries"));
            }
            let bottom = &f.pose[12..16];
            if bottom != [0.0, 0.0, 0.0, 1.0] {
                return Err(Error::validation(
                    record,
                    format!("pose bottom row must be (0,0,0,1), got {bottom:?}"),
                ));
            }
            frame_index.insert(f.frame_id, i);
        }

        let mut decoded = Vec::with_capacity(masks.len());
        let mut masks_by_frame: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
        for (i, m) in masks.iter().enumerate() {
            let record = format!(
                "mask #{i} (frame {}, slug {:?}, seq {}, track {})",
                m.frame_id, m.slug, m.seq, m.track_id
            );
            let frame = frame_index
                .get(&m.frame_id)
                .map(|&fi| &frames[fi])
                .ok_or_else(|| Error::validation(&record, "references unknown frame_id"))?;
            if m.track_id < 0 {
                return Err(Error::validation(&record, "track_id must be non-negative"));
            }
            if m.slug.trim().is_empty() {
                return Err(Error::validation(&record, "slug must be nonempty"));
            }
            let mask = decode_rle(&m.rle, frame.width, frame.height)
                .map_err(|e| Error::validation(&record, e.to_string()))?;
            decoded.push(mask);
            masks_by_frame.entry(m.frame_id).or_default().push(i);
        }

        let mut point_index = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            let record = format!("point {}", p.point_id);
            if point_index.insert(p.point_id, i).is_some() {
                return Err(Error::validation(record, "duplicate point_id"));
            }
            if !p.xyz.is_finite() {
                return Err(Error::validation(record, "non-finite position"));
            }
            for o in &p.obs {
                let frame = frame_index
                    .get(&o.frame_id)
                    .map(|&fi| &frames[fi])
                    .ok_or_else(|| {
                        Error::validation(&record, format!("observed in unknown frame {}", o.frame_id))
                    })?;
                let inside = o.u >= 0.0
                    && o.v >= 0.0
                    && o.u < frame.width as f64
                    && o.v < frame.height as f64;
                if !inside {
                    return Err(Error::validation(
                        &record,
                        format!(
                            "pixel ({}, {}) outside frame {} bounds {}x{}",
                            o.u, o.v, o.frame_id, frame.width, frame.height
                        ),
                    ));
                }
            }
        }

        Ok(Self {
            root: root.into(),
            frames,
            masks,
            points,
            decoded,
            frame_index,
            point_index,
            masks_by_frame,
        })
    }

    pub fn frame(&self, frame_id: i64) -> Option<&FrameRecord> {
        self.frame_index.get(&frame_id).map(|&i| &self.frames[i])
    }

    pub fn point(&self, point_id: u64) -> Option<&FeaturePoint> {
        self.point_index.get(&point_id).map(|&i| &self.points[i])
    }

    pub fn position(&self, point_id: u64) -> Option<Point3> {
        self.point(point_id).map(|p| p.xyz)
    }

    /// Decoded mask for `self.masks[index]`.
    pub fn decoded_mask(&self, index: usize) -> &BinaryMask {
        &self.decoded[index]
    }

    /// Indices into `self.masks` of the masks drawn on `frame_id`.
    pub fn masks_in_frame(&self, frame_id: i64) -> &[usize] {
        self.masks_by_frame
            .get(&frame_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Bounds of every feature point, or `None` for a bundle without points.
    pub fn global_bounds(&self) -> Option<Aabb3> {
        let pts: Vec<Point3> = self.points.iter().map(|p| p.xyz).collect();
        bounds_and_centroid(&pts).ok().map(|(b, _)| b)
    }

    pub fn image_path(&self, frame: &FrameRecord) -> PathBuf {
        self.root.join(&frame.image)
    }
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(Error::NotFound(path.display().to_string()))
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("{name}:{}", i + 1), e.to_string()))
        })
        .collect()
}

/// Loads and validates the bundle stored in `dir`.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<SceneBundle> {
    let dir = dir.as_ref();
    let frames = read_jsonl(&dir.join(FRAMES_FILE))?;
    let masks = read_jsonl(&dir.join(MASKS_FILE))?;
    let points = read_jsonl(&dir.join(POINTS_FILE))?;
    SceneBundle::from_records(dir, frames, masks, points)
}
