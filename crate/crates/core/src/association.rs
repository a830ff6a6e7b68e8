//! 2D-to-3D mask association: per-frame mask canvases, feature-point lookup
//! and per-instance outlier rejection.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bundle::{BinaryMask, MaskRecord, SceneBundle};
use crate::error::{Error, Result};
use crate::geometry::{dbscan, DbscanParams, Point3, NOISE};
use crate::inventory::ObjectFrameIndex;

/// One tracked observation: `(sequence index, slug, track id)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct InstanceKey {
    pub seq: u32,
    pub slug: String,
    pub track_id: i64,
}

impl InstanceKey {
    pub fn new(seq: u32, slug: impl Into<String>, track_id: i64) -> Self {
        Self {
            seq,
            slug: slug.into(),
            track_id,
        }
    }

    pub fn of(mask: &MaskRecord) -> Self {
        Self::new(mask.seq, mask.slug.clone(), mask.track_id)
    }

    /// The `(sequence, slug)` pair that distinct tracks of one run share.
    pub fn run_key(&self) -> (u32, String) {
        (self.seq, self.slug.clone())
    }
}

/// Per-pixel mask slot map (column-major, `-1` = background).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskCanvas {
    pub width: u32,
    pub height: u32,
    pub index_map: Vec<i32>,
    pub slots: Vec<InstanceKey>,
}

impl MaskCanvas {
    pub fn slot_at(&self, x: u32, y: u32) -> Option<&InstanceKey> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let v = self.index_map[x as usize * self.height as usize + y as usize];
        usize::try_from(v).ok().map(|i| &self.slots[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstancePoints {
    pub key: InstanceKey,
    pub point_ids: BTreeSet<u64>,
}

fn paint_order(a: &(&MaskRecord, &BinaryMask), b: &(&MaskRecord, &BinaryMask)) -> Ordering {
    b.0.bbox_area
        .cmp(&a.0.bbox_area)
        .then_with(|| a.0.slug.cmp(&b.0.slug))
        .then_with(|| a.0.seq.cmp(&b.0.seq))
        .then_with(|| a.0.track_id.cmp(&b.0.track_id))
}

/// Paints one frame's masks largest bounding-box area first, so smaller
/// masks end up on top. Slots are numbered in paint order.
pub fn paint_canvas(masks: &[(&MaskRecord, &BinaryMask)]) -> Result<MaskCanvas> {
    let Some(first) = masks.first() else {
        return Ok(MaskCanvas {
            width: 0,
            height: 0,
            index_map: Vec::new(),
            slots: Vec::new(),
        });
    };
    let (width, height) = (first.1.width, first.1.height);
    if let Some((m, _)) = masks
        .iter()
        .find(|(_, b)| b.width != width || b.height != height)
    {
        return Err(Error::validation(
            format!("mask {}#{} on frame {}", m.slug, m.track_id, m.frame_id),
            format!("dimensions differ from {width}x{height}"),
        ));
    }

    let mut ordered = masks.to_vec();
    ordered.sort_by(paint_order);

    let mut index_map = vec![-1; width as usize * height as usize];
    let mut slots = Vec::with_capacity(ordered.len());
    for (slot, (record, mask)) in ordered.iter().enumerate() {
        slots.push(InstanceKey::of(record));
        for (x, y) in mask.foreground() {
            index_map[x as usize * height as usize + y as usize] = slot as i32;
        }
    }
    Ok(MaskCanvas {
        width,
        height,
        index_map,
        slots,
    })
}

/// Accumulates, for every instance of the objects-to-frames index, the
/// feature points whose observations land on its mask in frames of its run.
pub fn associate(bundle: &SceneBundle, index: &ObjectFrameIndex) -> Result<Vec<InstancePoints>> {
    let mut observations: BTreeMap<i64, Vec<(u64, u32, u32)>> = BTreeMap::new();
    for p in &bundle.points {
        for o in &p.obs {
            let (x, y) = o.pixel();
            observations.entry(o.frame_id).or_default().push((p.point_id, x, y));
        }
    }

    let mut out: BTreeMap<InstanceKey, BTreeSet<u64>> = BTreeMap::new();
    for frame in &bundle.frames {
        let masks: Vec<(&MaskRecord, &BinaryMask)> = bundle
            .masks_in_frame(frame.frame_id)
            .iter()
            .map(|&i| (&bundle.masks[i], bundle.decoded_mask(i)))
            .filter(|(m, _)| {
                index
                    .run(&m.slug, m.seq)
                    .is_some_and(|r| r.contains(frame.frame_id))
            })
            .collect();
        if masks.is_empty() {
            continue;
        }
        let canvas = paint_canvas(&masks)?;
        for key in &canvas.slots {
            out.entry(key.clone()).or_default();
        }
        for &(point_id, x, y) in observations.get(&frame.frame_id).into_iter().flatten() {
            if let Some(key) = canvas.slot_at(x, y) {
                out.get_mut(key).expect("slot registered").insert(point_id);
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|(key, point_ids)| InstancePoints { key, point_ids })
        .collect())
}

/// Drops DBSCAN noise from each instance; instances left empty are removed.
pub fn reject_outliers<F>(
    instances: Vec<InstancePoints>,
    position: F,
    params: DbscanParams,
) -> Vec<InstancePoints>
where
    F: Fn(u64) -> Option<Point3>,
{
    instances
        .into_iter()
        .filter_map(|inst| {
            let resolved: Vec<(u64, Point3)> = inst
                .point_ids
                .iter()
                .filter_map(|&id| position(id).map(|p| (id, p)))
                .collect();
            let pts: Vec<Point3> = resolved.iter().map(|(_, p)| *p).collect();
            let labels = dbscan(&pts, params);
            let kept: BTreeSet<u64> = resolved
                .iter()
                .zip(labels)
                .filter(|(_, l)| *l != NOISE)
                .map(|((id, _), _)| *id)
                .collect();
            (!kept.is_empty()).then_some(InstancePoints {
                key: inst.key,
                point_ids: kept,
            })
        })
        .collect()
}
