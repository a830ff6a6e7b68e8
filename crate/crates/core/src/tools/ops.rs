//! Tool operations as plain functions over a memory snapshot. The registry and
//! the query language both call through here.

use serde::Serialize;

use super::occupancy::{NavError, OccupancyConfig, OccupancyGrid};
use super::{ErrorCode, ToolError};
use crate::geometry::Point3;
use crate::memory::{Component, SceneMemory};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchHit {
    pub id: u64,
    pub caption: String,
    pub centroid: Point3,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

pub fn component(memory: &SceneMemory, id: u64) -> Result<&Component, ToolError> {
    memory
        .get(id)
        .ok_or_else(|| ToolError::new(ErrorCode::NotFound, format!("component {id} not found")))
}

pub fn search(memory: &SceneMemory, query: &str, limit: usize) -> Result<Vec<SearchHit>, ToolError> {
    let hits = memory
        .search_text(query, limit)
        .map_err(|e| ToolError::new(ErrorCode::InvalidArguments, e.to_string()))?;
    Ok(hits
        .into_iter()
        .map(|(id, score)| {
            let c = &memory.get(id).expect("indexed id exists");
            SearchHit {
                id,
                caption: c.caption.clone(),
                centroid: c.centroid,
                score,
            }
        })
        .collect())
}

pub fn distance(memory: &SceneMemory, a: u64, b: u64) -> Result<f64, ToolError> {
    let ca = component(memory, a)?.centroid;
    let cb = component(memory, b)?.centroid;
    Ok(ca.distance(&cb))
}

/// Components within `radius` of `id`'s centroid, excluding `id`.
pub fn vicinity(memory: &SceneMemory, id: u64, radius: f64) -> Result<Vec<Neighbor>, ToolError> {
    let center = component(memory, id)?.centroid;
    if !(radius >= 0.0) {
        return Err(ToolError::new(ErrorCode::InvalidArguments, "radius must be non-negative").with_fields(["radius"]));
    }
    Ok(memory
        .query_radius(center, radius)
        .into_iter()
        .filter(|(other, _)| *other != id)
        .map(|(id, distance)| Neighbor { id, distance })
        .collect())
}

pub fn navigation_distance(memory: &SceneMemory, grid: Option<&OccupancyGrid>, a: u64, b: u64) -> Result<f64, ToolError> {
    let ca = component(memory, a)?.centroid;
    let cb = component(memory, b)?.centroid;
    let grid = grid.ok_or_else(|| ToolError::new(ErrorCode::Unreachable, "no occupancy grid available"))?;
    grid.navigation_distance(ca, cb).map_err(|e| match e {
        NavError::OutOfBounds => ToolError::new(ErrorCode::OutOfBounds, "centroid projection lies outside the occupancy grid"),
        NavError::Unreachable => ToolError::new(ErrorCode::Unreachable, format!("no free path between {a} and {b}")),
    })
}

pub fn crop_refs(memory: &SceneMemory, id: u64) -> Result<Vec<String>, ToolError> {
    Ok(component(memory, id)?.crop_refs.clone())
}

/// Occupancy grid from component boxes alone, used when no point-based grid
/// was stored with the memory. Each box contributes a lattice of samples on
/// its bottom and top faces at grid resolution.
pub fn occupancy_from_memory(memory: &SceneMemory, config: &OccupancyConfig) -> crate::Result<OccupancyGrid> {
    let mut samples = Vec::new();
    for c in memory.components() {
        let (lo, hi) = (c.bbox.min, c.bbox.max);
        let nx = ((hi.x - lo.x) / config.cell).ceil().max(0.0) as usize;
        let ny = ((hi.y - lo.y) / config.cell).ceil().max(0.0) as usize;
        for i in 0..=nx {
            for j in 0..=ny {
                let x = (lo.x + i as f64 * config.cell).min(hi.x);
                let y = (lo.y + j as f64 * config.cell).min(hi.y);
                samples.push(Point3::new(x, y, lo.z));
                samples.push(Point3::new(x, y, hi.z));
            }
        }
    }
    OccupancyGrid::from_points(&samples, config)
}
