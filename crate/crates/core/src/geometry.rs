//! Geometric primitives shared by the ingest pipeline and the spatial tools.
//!
//! Everything here is a pure function over values: point sets, axis-aligned
//! boxes, voxel occupancy sets, Jaccard overlap and a grid-accelerated DBSCAN.

use std::collections::{BTreeSet, HashMap};
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or vector) in scene coordinates, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const ORIGIN: Point3 = Point3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn dot(&self, other: &Point3) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(&self, other: &Point3) -> f64 {
        (*self - *other).norm()
    }

    pub fn distance_squared(&self, other: &Point3) -> f64 {
        let d = *self - *other;
        d.dot(&d)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    fn axis(&self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(v: [f64; 3]) -> Self {
        Point3::new(v[0], v[1], v[2])
    }
}

impl From<Point3> for [f64; 3] {
    fn from(p: Point3) -> Self {
        p.to_array()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, rhs: Point3) -> Point3 {
        Point3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, rhs: Point3) -> Point3 {
        Point3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

/// Axis-aligned box with `min <= max` on every axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb3 {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb3 {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !(min.x <= max.x && min.y <= max.y && min.z <= max.z) {
            return Err(Error::InvalidArgument(format!(
                "box min {:?} exceeds max {:?}",
                min.to_array(),
                max.to_array()
            )));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, p: &Point3) -> bool {
        (0..3).all(|a| self.min.axis(a) <= p.axis(a) && p.axis(a) <= self.max.axis(a))
    }

    /// Box extents along x, y and z.
    pub fn extents(&self) -> Point3 {
        self.max - self.min
    }

    pub fn center(&self) -> Point3 {
        (self.min + self.max) * 0.5
    }

    /// `[min_x, min_y, min_z, max_x, max_y, max_z]`
    pub fn to_array(&self) -> [f64; 6] {
        [
            self.min.x, self.min.y, self.min.z, self.max.x, self.max.y, self.max.z,
        ]
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Aabb3::new(Point3::new(v[0], v[1], v[2]), Point3::new(v[3], v[4], v[5]))
    }
}

pub type VoxelKey = (i64, i64, i64);

/// Set of occupied cells of a regular grid anchored at `origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelKeySet {
    pub cell_size: f64,
    pub origin: Point3,
    pub keys: BTreeSet<VoxelKey>,
}

impl VoxelKeySet {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    fn same_grid(&self, other: &VoxelKeySet) -> bool {
        self.cell_size == other.cell_size && self.origin == other.origin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DbscanParams {
    pub eps: f64,
    pub min_samples: usize,
}

impl DbscanParams {
    pub fn new(eps: f64, min_samples: usize) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) || min_samples == 0 {
            return Err(Error::InvalidArgument(format!(
                "dbscan requires eps > 0 and min_samples >= 1 (got {eps}, {min_samples})"
            )));
        }
        Ok(Self { eps, min_samples })
    }
}

pub const NOISE: i32 = -1;

fn cell_of(p: &Point3, width: f64) -> VoxelKey {
    (
        (p.x / width).floor() as i64,
        (p.y / width).floor() as i64,
        (p.z / width).floor() as i64,
    )
}

/// Density-based clustering with a Euclidean `eps` neighborhood.
///
/// A point is a core point when at least `min_samples` points (itself
/// included) lie within `eps`. Clusters are the connected components of core
/// points, numbered in order of their first core point in the input. A border
/// point joins the lowest-numbered cluster among its core neighbors; every
/// other point is labeled [`NOISE`].
pub fn dbscan(points: &[Point3], params: DbscanParams) -> Vec<i32> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let eps2 = params.eps * params.eps;

    let mut grid: HashMap<VoxelKey, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(cell_of(p, params.eps)).or_default().push(i);
    }

    let neighbors = |i: usize| -> Vec<usize> {
        let (cx, cy, cz) = cell_of(&points[i], params.eps);
        let mut out = Vec::new();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(bin) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                        out.extend(
                            bin.iter()
                                .copied()
                                .filter(|&j| points[i].distance_squared(&points[j]) <= eps2),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    };

    let adjacency: Vec<Vec<usize>> = (0..n).map(neighbors).collect();
    let core: Vec<bool> = adjacency
        .iter()
        .map(|nb| nb.len() >= params.min_samples)
        .collect();

    let mut labels = vec![NOISE; n];
    let mut next = 0;
    for start in 0..n {
        if !core[start] || labels[start] != NOISE {
            continue;
        }
        labels[start] = next;
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            for &j in &adjacency[i] {
                if core[j] && labels[j] == NOISE {
                    labels[j] = next;
                    stack.push(j);
                }
            }
        }
        next += 1;
    }

    for i in 0..n {
        if core[i] {
            continue;
        }
        labels[i] = adjacency[i]
            .iter()
            .filter(|&&j| core[j])
            .map(|&j| labels[j])
            .min()
            .unwrap_or(NOISE);
    }
    labels
}

/// Maps each point to `floor((p - origin) / cell_size)` per axis.
pub fn voxelize(points: &[Point3], cell_size: f64, origin: Point3) -> Result<VoxelKeySet> {
    if !(cell_size > 0.0 && cell_size.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "voxel cell size must be positive, got {cell_size}"
        )));
    }
    let keys = points
        .iter()
        .map(|p| cell_of(&(*p - origin), cell_size))
        .collect();
    Ok(VoxelKeySet {
        cell_size,
        origin,
        keys,
    })
}

/// `|a ∩ b| / |a ∪ b|`, defined as 0 when both sets are empty.
pub fn jaccard(a: &VoxelKeySet, b: &VoxelKeySet) -> Result<f64> {
    if !a.same_grid(b) {
        return Err(Error::InvalidArgument(
            "jaccard over voxel sets from different grids".into(),
        ));
    }
    let inter = a.keys.intersection(&b.keys).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Tight bounding box and arithmetic-mean centroid of a nonempty point set.
pub fn bounds_and_centroid(points: &[Point3]) -> Result<(Aabb3, Point3)> {
    let first = points
        .first()
        .ok_or_else(|| Error::EmptyGeometry("bounds of an empty point set".into()))?;
    let mut min = *first;
    let mut max = *first;
    let mut sum = Point3::ORIGIN;
    for p in points {
        min = Point3::new(min.x.min(p.x), min.y.min(p.y), min.z.min(p.z));
        max = Point3::new(max.x.max(p.x), max.y.max(p.y), max.z.max(p.z));
        sum = sum + *p;
    }
    let centroid = sum * (1.0 / points.len() as f64);
    // Rounding in the mean can leave it an ulp outside a degenerate box.
    let centroid = Point3::new(
        centroid.x.clamp(min.x, max.x),
        centroid.y.clamp(min.y, max.y),
        centroid.z.clamp(min.z, max.z),
    );
    Ok((Aabb3 { min, max }, centroid))
}
