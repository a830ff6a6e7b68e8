//! Regenerates the `boxes3` bundle: three boxes on a floor seen by ten
//! cameras on a circle. Output is deterministic.
//!
//! Usage: `cargo run -p scenemem-core --example gen_boxes3 -- <out_dir>`
//!
//! Layout:
//! - B1 and B2 are two small boxes 0.1 m apart, both labelled `box`
//!   (tracks 0 and 1 of the same sequence). Their voxel sets overlap, so
//!   the merge between them must be refused.
//! - B3 is one box labelled `crate` in every frame and `chest` /
//!   `storage chest` in frames 2-8. Its two instances must merge.
//! - `lamp` is reported in two frames only and never forms a run.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use scenemem::bundle::{encode_rle, BinaryMask, FeaturePoint, FrameRecord, MaskRecord, Observation};
use scenemem::geometry::Point3;
use serde_json::json;

const WIDTH: u32 = 96;
const HEIGHT: u32 = 72;
const FOCAL: f64 = 70.0;
const FRAMES: usize = 10;
const RING_RADIUS: f64 = 3.5;
const RING_HEIGHT: f64 = 2.5;
const TARGET: [f64; 3] = [2.0, 2.0, 0.2];
const SURFACE_STEP: f64 = 0.08;
const FLOOR_STEP: f64 = 0.5;
const FLOOR_CLEARANCE: f64 = 0.3;

struct Body {
    name: &'static str,
    min: [f64; 3],
    max: [f64; 3],
    color: [u8; 3],
}

const BODIES: [Body; 3] = [
    Body {
        name: "B1",
        min: [0.8, 0.8, 0.0],
        max: [1.2, 1.2, 0.4],
        color: [200, 60, 40],
    },
    Body {
        name: "B2",
        min: [1.3, 0.8, 0.0],
        max: [1.7, 1.2, 0.4],
        color: [40, 160, 60],
    },
    Body {
        name: "B3",
        min: [3.05, 3.05, 0.0],
        max: [3.45, 3.45, 0.56],
        color: [150, 100, 40],
    },
];

#[derive(Clone, Copy)]
struct Camera {
    center: [f64; 3],
    /// Columns are the camera x (right), y (down), z (forward) axes.
    rot: [[f64; 3]; 3],
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

impl Camera {
    fn on_ring(i: usize) -> Self {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / FRAMES as f64 + 0.3;
        let center = [
            TARGET[0] + RING_RADIUS * theta.cos(),
            TARGET[1] + RING_RADIUS * theta.sin(),
            RING_HEIGHT,
        ];
        let forward = normalize(sub(TARGET, center));
        let right = normalize(cross(forward, [0.0, 0.0, 1.0]));
        let down = cross(forward, right);
        let rot = [
            [right[0], down[0], forward[0]],
            [right[1], down[1], forward[1]],
            [right[2], down[2], forward[2]],
        ];
        Self { center, rot }
    }

    fn pose(&self) -> [f64; 16] {
        let r = self.rot;
        let c = self.center;
        [
            r[0][0], r[0][1], r[0][2], c[0], r[1][0], r[1][1], r[1][2], c[1], r[2][0], r[2][1], r[2][2], c[2], 0.0,
            0.0, 0.0, 1.0,
        ]
    }

    /// Pixel coordinates of a world point, if it lies in front of the camera
    /// and inside the image.
    fn project(&self, p: [f64; 3]) -> Option<(f64, f64)> {
        let d = sub(p, self.center);
        let r = self.rot;
        let xc = r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2];
        let yc = r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2];
        let zc = r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2];
        if zc <= 1e-6 {
            return None;
        }
        let u = FOCAL * xc / zc + WIDTH as f64 / 2.0;
        let v = FOCAL * yc / zc + HEIGHT as f64 / 2.0;
        // Rounded so the stored value and the pixel test agree.
        let (u, v) = ((u * 1e4).round() / 1e4, (v * 1e4).round() / 1e4);
        (u >= 0.0 && v >= 0.0 && u < WIDTH as f64 && v < HEIGHT as f64).then_some((u, v))
    }

    fn ray(&self, px: u32, py: u32) -> [f64; 3] {
        let dc = [
            (px as f64 + 0.5 - WIDTH as f64 / 2.0) / FOCAL,
            (py as f64 + 0.5 - HEIGHT as f64 / 2.0) / FOCAL,
            1.0,
        ];
        let r = self.rot;
        [
            r[0][0] * dc[0] + r[0][1] * dc[1] + r[0][2] * dc[2],
            r[1][0] * dc[0] + r[1][1] * dc[1] + r[1][2] * dc[2],
            r[2][0] * dc[0] + r[2][1] * dc[1] + r[2][2] * dc[2],
        ]
    }
}

/// Entry parameter of the ray `o + t d` into the box, if it hits.
fn slab(o: [f64; 3], d: [f64; 3], b: &Body) -> Option<f64> {
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() < 1e-12 {
            if o[k] < b.min[k] || o[k] > b.max[k] {
                return None;
            }
            continue;
        }
        let a = (b.min[k] - o[k]) / d[k];
        let c = (b.max[k] - o[k]) / d[k];
        t0 = t0.max(a.min(c));
        t1 = t1.min(a.max(c));
    }
    (t0 <= t1 && t1 > 0.0).then_some(t0.max(0.0))
}

fn first_hit(cam: &Camera, px: u32, py: u32) -> Option<usize> {
    let d = cam.ray(px, py);
    BODIES
        .iter()
        .enumerate()
        .filter_map(|(i, b)| slab(cam.center, d, b).map(|t| (t, i)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, i)| i)
}

/// Whether the segment from the camera to `p` passes through a box other
/// than `owner`.
fn occluded(cam: &Camera, p: [f64; 3], owner: Option<usize>) -> bool {
    let d = sub(p, cam.center);
    BODIES.iter().enumerate().any(|(i, b)| {
        Some(i) != owner
            && slab(cam.center, d, b).is_some_and(|t| t < 1.0 - 1e-9)
    })
}

fn lattice(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n)
        .map(|i| if i == n { hi } else { lo + (hi - lo) * i as f64 / n as f64 })
        .collect()
}

/// Surface samples of a box without its bottom face, with outward normals.
fn surface(b: &Body) -> Vec<([f64; 3], Vec<[f64; 3]>)> {
    let xs = lattice(b.min[0], b.max[0], SURFACE_STEP);
    let ys = lattice(b.min[1], b.max[1], SURFACE_STEP);
    let zs = lattice(b.min[2], b.max[2], SURFACE_STEP);
    let mut out = Vec::new();
    for &x in &xs {
        for &y in &ys {
            for &z in &zs {
                let mut normals = Vec::new();
                if x == b.min[0] {
                    normals.push([-1.0, 0.0, 0.0]);
                }
                if x == b.max[0] {
                    normals.push([1.0, 0.0, 0.0]);
                }
                if y == b.min[1] {
                    normals.push([0.0, -1.0, 0.0]);
                }
                if y == b.max[1] {
                    normals.push([0.0, 1.0, 0.0]);
                }
                if z == b.max[2] {
                    normals.push([0.0, 0.0, 1.0]);
                }
                if !normals.is_empty() {
                    out.push(([x, y, z], normals));
                }
            }
        }
    }
    out
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Per-frame label lists as a tagger would report them.
fn labels_for(frame: usize) -> Vec<&'static str> {
    let mut l = Vec::new();
    match frame {
        3 => l.push("Boxes"),
        5 => {}
        _ => l.push("box"),
    }
    l.push("crate");
    if (2..=8).contains(&frame) {
        l.push(if frame.is_multiple_of(2) { "chest" } else { "storage chest" });
    }
    if (4..=5).contains(&frame) {
        l.push("lamp");
    }
    l
}

fn axis(dim: usize, k: usize) -> Vec<f64> {
    (0..dim).map(|i| if i == k { 1.0 } else { 0.0 }).collect()
}

fn dilate(m: &BinaryMask) -> BinaryMask {
    let mut out = m.clone();
    for (x, y) in m.foreground() {
        for (dx, dy) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx >= 0 && ny >= 0 && (nx as u32) < m.width && (ny as u32) < m.height {
                out.set(nx as u32, ny as u32, true);
            }
        }
    }
    out
}

fn mask_record(frame_id: i64, slug: &str, track_id: i64, mask: &BinaryMask) -> MaskRecord {
    let [x0, y0, x1, y1] = mask.pixel_bounds().expect("non-empty mask");
    MaskRecord {
        frame_id,
        slug: slug.to_string(),
        seq: 0,
        track_id,
        rle: encode_rle(mask),
        bbox_area: u64::from(x1 - x0 + 1) * u64::from(y1 - y0 + 1),
    }
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: &[T]) {
    let mut text = String::new();
    for r in rows {
        text.push_str(&serde_json::to_string(r).expect("serializable"));
        text.push('\n');
    }
    fs::write(path, text).expect("write jsonl");
}

fn write_json(path: &Path, value: &serde_json::Value) {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    fs::write(path, text).expect("write json");
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/boxes3"));
    fs::create_dir_all(out.join("images")).expect("create output dir");

    let cameras: Vec<Camera> = (0..FRAMES).map(Camera::on_ring).collect();

    let mut frames = Vec::new();
    let mut masks = Vec::new();
    let mut labels = BTreeMap::new();
    // Union of every mask per frame, for floor visibility.
    let mut covered: Vec<BinaryMask> = Vec::new();
    let mut hit_maps: Vec<Vec<Option<usize>>> = Vec::new();
    for (i, cam) in cameras.iter().enumerate() {
        let frame_id = i as i64;
        let image = format!("images/{i:04}.png");
        let mut hits = vec![None; (WIDTH * HEIGHT) as usize];
        let mut body_masks: Vec<BinaryMask> = (0..BODIES.len()).map(|_| BinaryMask::new(WIDTH, HEIGHT)).collect();
        let mut img = RgbImage::new(WIDTH, HEIGHT);
        for py in 0..HEIGHT {
            for px in 0..WIDTH {
                let hit = first_hit(cam, px, py);
                hits[(py * WIDTH + px) as usize] = hit;
                let color = match hit {
                    Some(b) => {
                        body_masks[b].set(px, py, true);
                        BODIES[b].color
                    }
                    None => [110, 110, 120],
                };
                img.put_pixel(px, py, Rgb(color));
            }
        }
        img.save(out.join(&image)).expect("write image");

        let mut frame_masks = Vec::new();
        if body_masks[0].area() > 0 {
            frame_masks.push((mask_record(frame_id, "box", 0, &body_masks[0]), body_masks[0].clone()));
        }
        if body_masks[1].area() > 0 {
            frame_masks.push((mask_record(frame_id, "box", 1, &body_masks[1]), body_masks[1].clone()));
        }
        if body_masks[2].area() > 0 {
            // The crate track is drawn one pixel wider, so the chest mask
            // is painted over it wherever both exist.
            let wide = dilate(&body_masks[2]);
            frame_masks.push((mask_record(frame_id, "crate", 0, &wide), wide));
            if (2..=8).contains(&i) {
                frame_masks.push((mask_record(frame_id, "chest", 0, &body_masks[2]), body_masks[2].clone()));
            }
        }
        let mut union = BinaryMask::new(WIDTH, HEIGHT);
        for (_, m) in &frame_masks {
            for (x, y) in m.foreground() {
                union.set(x, y, true);
            }
        }
        covered.push(union);
        hit_maps.push(hits);
        masks.extend(frame_masks.into_iter().map(|(r, _)| r));

        labels.insert(image.clone(), labels_for(i));
        frames.push(FrameRecord {
            frame_id,
            pose: cameras[i].pose(),
            image,
            width: WIDTH,
            height: HEIGHT,
        });
    }

    let mut points = Vec::new();
    let mut push_point = |xyz: [f64; 3], obs: Vec<Observation>| {
        if obs.len() >= 2 {
            points.push(FeaturePoint {
                point_id: points.len() as u64,
                xyz: Point3::from(xyz.map(round6)),
                obs,
            });
        }
    };

    let mut per_body = vec![0usize; BODIES.len()];
    for (bi, body) in BODIES.iter().enumerate() {
        for (p, normals) in surface(body) {
            let mut obs = Vec::new();
            for (fi, cam) in cameras.iter().enumerate() {
                let facing = normals.iter().any(|&n| dot(n, sub(cam.center, p)) > 1e-9);
                if !facing || occluded(cam, p, Some(bi)) {
                    continue;
                }
                let Some((u, v)) = cam.project(p) else { continue };
                if hit_maps[fi][(v.floor() as u32 * WIDTH + u.floor() as u32) as usize] != Some(bi) {
                    continue;
                }
                obs.push(Observation { frame_id: fi as i64, u, v });
            }
            if obs.len() >= 2 {
                per_body[bi] += 1;
            }
            push_point(p, obs);
        }
    }

    let near_box = |x: f64, y: f64| {
        BODIES.iter().any(|b| {
            let dx = (b.min[0] - x).max(0.0).max(x - b.max[0]);
            let dy = (b.min[1] - y).max(0.0).max(y - b.max[1]);
            dx.hypot(dy) < FLOOR_CLEARANCE
        })
    };
    let mut floor_count = 0usize;
    for x in lattice(-0.5, 4.5, FLOOR_STEP) {
        for y in lattice(-0.5, 4.5, FLOOR_STEP) {
            if near_box(x, y) {
                continue;
            }
            let p = [x, y, 0.0];
            let mut obs = Vec::new();
            for (fi, cam) in cameras.iter().enumerate() {
                if occluded(cam, p, None) {
                    continue;
                }
                let Some((u, v)) = cam.project(p) else { continue };
                if covered[fi].get(u.floor() as u32, v.floor() as u32) {
                    continue;
                }
                obs.push(Observation { frame_id: fi as i64, u, v });
            }
            if obs.len() >= 2 {
                floor_count += 1;
            }
            push_point(p, obs);
        }
    }

    write_jsonl(&out.join("frames.jsonl"), &frames);
    write_jsonl(&out.join("masks.jsonl"), &masks);
    write_jsonl(&out.join("points.jsonl"), &points);
    write_json(&out.join("labels.json"), &json!(labels));

    const DIM: usize = 8;
    write_json(
        &out.join("embeddings.json"),
        &json!({
            "texts": {
                "box": axis(DIM, 0),
                "crate": axis(DIM, 1),
                "chest": axis(DIM, 2),
                "storage chest": axis(DIM, 2),
                "lamp": axis(DIM, 3),
            },
            "crops": {
                "box#0": axis(DIM, 4),
                "box#1": axis(DIM, 4),
                "crate#0": axis(DIM, 5),
                "chest#0": axis(DIM, 5),
            },
        }),
    );
    write_json(
        &out.join("captions.json"),
        &json!({
            "by_slug": {
                "box": "a small cardboard box on the floor",
                "chest": "a wooden storage chest with a lid",
                "crate": "a wooden storage chest with a lid",
            }
        }),
    );

    let truth: Vec<serde_json::Value> = BODIES
        .iter()
        .map(|b| {
            let center: Vec<f64> = (0..3).map(|k| round6((b.min[k] + b.max[k]) / 2.0)).collect();
            json!({"name": b.name, "min": b.min, "max": b.max, "center": center})
        })
        .collect();
    let slugs: BTreeSet<&str> = ["box", "chest", "crate"].into();
    write_json(
        &out.join("truth.json"),
        &json!({"expected_components": 3, "bodies": truth, "slugs": slugs}),
    );

    eprintln!(
        "wrote {}: {} frames, {} masks, {} points (bodies {:?}, floor {})",
        out.display(),
        frames.len(),
        masks.len(),
        points.len(),
        per_body,
        floor_count
    );
}
