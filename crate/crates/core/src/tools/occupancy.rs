//! Floor-plane occupancy grid and obstacle-aware path length.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::SQRT_2;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point3;

pub const OCCUPANCY_FILE: &str = "occupancy.json";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyConfig {
    pub cell: f64,
    /// Percentile of point heights taken as the floor.
    pub floor_percentile: f64,
    /// Obstacle band above the floor, exclusive low and inclusive high.
    pub band_low: f64,
    pub band_high: f64,
    /// Inflation radius applied to occupied cells.
    pub inflation: f64,
    /// Free border added around the point footprint.
    pub margin: f64,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self {
            cell: 0.1,
            floor_percentile: 5.0,
            band_low: 0.05,
            band_high: 1.8,
            inflation: 0.2,
            margin: 0.5,
        }
    }
}

impl OccupancyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.cell > 0.0
            && self.cell.is_finite()
            && (0.0..=100.0).contains(&self.floor_percentile)
            && self.band_low < self.band_high
            && self.inflation >= 0.0
            && self.margin >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad occupancy config {self:?}")))
        }
    }
}

/// Row-major 2D bit field over the floor plane. Cell `(ix, iy)` covers
/// `[origin.x + ix*cell, origin.x + (ix+1)*cell)` and likewise in y.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupancyGrid {
    pub cell: f64,
    pub origin: Point3,
    pub width: usize,
    pub height: usize,
    pub floor_z: f64,
    occupied: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    cell: f64,
    origin: Point3,
    floor_z: f64,
    /// One string per row from iy = 0, `#` occupied and `.` free.
    rows: Vec<String>,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile_nearest_rank(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Some(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NavError {
    OutOfBounds,
    Unreachable,
}

impl OccupancyGrid {
    /// An all-free grid, mainly for tests and fixtures.
    pub fn empty(cell: f64, origin: Point3, width: usize, height: usize) -> Result<Self> {
        if !(cell > 0.0) || width == 0 || height == 0 {
            return Err(Error::InvalidArgument("grid needs positive cell and extent".into()));
        }
        Ok(Self {
            cell,
            origin,
            width,
            height,
            floor_z: origin.z,
            occupied: vec![false; width * height],
        })
    }

    pub fn from_points(points: &[Point3], config: &OccupancyConfig) -> Result<Self> {
        config.validate()?;
        let points: Vec<Point3> = points.iter().copied().filter(Point3::is_finite).collect();
        if points.is_empty() {
            return Err(Error::EmptyGeometry("occupancy grid needs at least one point".into()));
        }
        let zs: Vec<f64> = points.iter().map(|p| p.z).collect();
        let floor_z = percentile_nearest_rank(&zs, config.floor_percentile).expect("nonempty");
        let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &points {
            lo_x = lo_x.min(p.x);
            lo_y = lo_y.min(p.y);
            hi_x = hi_x.max(p.x);
            hi_y = hi_y.max(p.y);
        }
        let origin = Point3::new(lo_x - config.margin, lo_y - config.margin, floor_z);
        let width = ((hi_x + config.margin - origin.x) / config.cell).floor() as usize + 1;
        let height = ((hi_y + config.margin - origin.y) / config.cell).floor() as usize + 1;
        let mut grid = Self::empty(config.cell, origin, width, height)?;
        grid.floor_z = floor_z;

        let mut seeds = vec![false; width * height];
        for p in &points {
            let dz = p.z - floor_z;
            if dz > config.band_low && dz <= config.band_high {
                if let Some((ix, iy)) = grid.cell_of(p.x, p.y) {
                    seeds[iy * width + ix] = true;
                }
            }
        }
        let r = (config.inflation / config.cell - 1e-9).ceil().max(0.0) as i64;
        let disk: Vec<(i64, i64)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        for iy in 0..height {
            for ix in 0..width {
                if !seeds[iy * width + ix] {
                    continue;
                }
                for (dx, dy) in &disk {
                    let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
                    if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                        grid.occupied[ny as usize * width + nx as usize] = true;
                    }
                }
            }
        }
        Ok(grid)
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin.x) / self.cell).floor();
        let fy = ((y - self.origin.y) / self.cell).floor();
        if !(fx >= 0.0 && fy >= 0.0) || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.origin.x + (ix as f64 + 0.5) * self.cell,
            self.origin.y + (iy as f64 + 0.5) * self.cell,
        )
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.occupied[iy * self.width + ix]
    }

    pub fn set_occupied(&mut self, ix: usize, iy: usize, value: bool) {
        self.occupied[iy * self.width + ix] = value;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&b| b).count()
    }

    /// Nearest free cell to a floor point by center distance, ties by (iy, ix).
    fn snap(&self, x: f64, y: f64, own: (usize, usize)) -> Option<((usize, usize), f64)> {
        if !self.is_occupied(own.0, own.1) {
            return Some((own, 0.0));
        }
        let mut best: Option<((usize, usize), f64)> = None;
        for iy in 0..self.height {
            for ix in 0..self.width {
                if self.is_occupied(ix, iy) {
                    continue;
                }
                let (cx, cy) = self.cell_center(ix, iy);
                let d = ((cx - x).powi(2) + (cy - y).powi(2)).sqrt();
                if best.is_none_or(|(_, bd)| d < bd) {
                    best = Some(((ix, iy), d));
                }
            }
        }
        best
    }

    /// Shortest 8-connected path between the free cells nearest the floor
    /// projections of `a` and `b`, plus the snapping offsets.
    pub fn navigation_distance(&self, a: Point3, b: Point3) -> std::result::Result<f64, NavError> {
        let own_a = self.cell_of(a.x, a.y).ok_or(NavError::OutOfBounds)?;
        let own_b = self.cell_of(b.x, b.y).ok_or(NavError::OutOfBounds)?;
        let (start, off_a) = self.snap(a.x, a.y, own_a).ok_or(NavError::Unreachable)?;
        let (goal, off_b) = self.snap(b.x, b.y, own_b).ok_or(NavError::Unreachable)?;
        let (s, d) = self.astar(start, goal).ok_or(NavError::Unreachable)?;
        Ok(path_cost(s, d) * self.cell + off_a + off_b)
    }

    /// Free 8-neighbours; diagonal moves need both orthogonal cells free.
    pub fn neighbors(&self, ix: usize, iy: usize) -> impl Iterator<Item = (usize, usize, bool)> + '_ {
        const STEPS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let free = |x: i64, y: i64| {
                x >= 0 && y >= 0 && (x as usize) < self.width && (y as usize) < self.height && !self.is_occupied(x as usize, y as usize)
            };
            let (nx, ny) = (ix as i64 + dx, iy as i64 + dy);
            if !free(nx, ny) {
                return None;
            }
            let diagonal = dx != 0 && dy != 0;
            if diagonal && !(free(ix as i64 + dx, iy as i64) && free(ix as i64, iy as i64 + dy)) {
                return None;
            }
            Some((nx as usize, ny as usize, diagonal))
        })
    }

    /// Returns (straight steps, diagonal steps) of a cheapest path.
    fn astar(&self, start: (usize, usize), goal: (usize, usize)) -> Option<(u64, u64)> {
        let idx = |c: (usize, usize)| c.1 * self.width + c.0;
        let h = |c: (usize, usize)| {
            let dx = c.0 as f64 - goal.0 as f64;
            let dy = c.1 as f64 - goal.1 as f64;
            (dx * dx + dy * dy).sqrt()
        };
        let mut best: Vec<Option<(u64, u64)>> = vec![None; self.width * self.height];
        let mut heap = BinaryHeap::new();
        best[idx(start)] = Some((0, 0));
        heap.push(Entry { f: h(start), g: (0, 0), cell: start });
        while let Some(Entry { g, cell, .. }) = heap.pop() {
            if best[idx(cell)] != Some(g) {
                continue;
            }
            if cell == goal {
                return Some(g);
            }
            for (nx, ny, diagonal) in self.neighbors(cell.0, cell.1) {
                let ng = if diagonal { (g.0, g.1 + 1) } else { (g.0 + 1, g.1) };
                let slot = &mut best[ny * self.width + nx];
                if slot.is_none_or(|old| path_cost(ng.0, ng.1) < path_cost(old.0, old.1)) {
                    *slot = Some(ng);
                    heap.push(Entry {
                        f: path_cost(ng.0, ng.1) + h((nx, ny)),
                        g: ng,
                        cell: (nx, ny),
                    });
                }
            }
        }
        None
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let path = dir.as_ref().join(OCCUPANCY_FILE);
        let rows = (0..self.height)
            .map(|iy| {
                (0..self.width)
                    .map(|ix| if self.is_occupied(ix, iy) { '#' } else { '.' })
                    .collect()
            })
            .collect();
        let file = GridFile {
            cell: self.cell,
            origin: self.origin,
            floor_z: self.floor_z,
            rows,
        };
        let value = serde_json::to_value(&file).expect("grid serializes");
        fs::write(&path, value.to_string()).map_err(|e| Error::io(&path, e))
    }

    /// Loads a saved grid; `Ok(None)` when the directory has none.
    pub fn load(dir: impl AsRef<Path>) -> Result<Option<Self>> {
        let path = dir.as_ref().join(OCCUPANCY_FILE);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io(&path, e)),
        };
        let file: GridFile = serde_json::from_str(&text).map_err(|e| Error::parse(OCCUPANCY_FILE, e.to_string()))?;
        let height = file.rows.len();
        let width = file.rows.first().map_or(0, |r| r.chars().count());
        let mut grid = Self::empty(file.cell, file.origin, width, height)
            .map_err(|e| Error::parse(OCCUPANCY_FILE, e.to_string()))?;
        grid.floor_z = file.floor_z;
        for (iy, row) in file.rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::parse(OCCUPANCY_FILE, format!("row {iy} has the wrong width")));
            }
            for (ix, ch) in row.chars().enumerate() {
                match ch {
                    '#' => grid.set_occupied(ix, iy, true),
                    '.' => {}
                    other => return Err(Error::parse(OCCUPANCY_FILE, format!("unexpected cell {other:?}"))),
                }
            }
        }
        Ok(Some(grid))
    }
}

pub fn path_cost(straight: u64, diagonal: u64) -> f64 {
    straight as f64 + diagonal as f64 * SQRT_2
}

struct Entry {
    f: f64,
    g: (u64, u64),
    cell: (usize, usize),
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Min-heap on f, then (iy, ix) for a stable expansion order.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| (other.cell.1, other.cell.0).cmp(&(self.cell.1, self.cell.0)))
    }
}
