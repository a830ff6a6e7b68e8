//! Fast implementations checked against brute-force references.

use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenemem::association::InstanceKey;
use scenemem::connectivity::{compute_edges, ConnectivityConfig, MaskNode};
use scenemem::eval::meteor_lite_detail;
use scenemem::geometry::{dbscan, Aabb3, DbscanParams, Point3, VoxelKeySet, NOISE};
use scenemem::memory::{Component, SceneMemory};
use scenemem::tools::occupancy::OccupancyGrid;

const TOL: f64 = 1e-9;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_point(r: &mut ChaCha8Rng, half: f64) -> Point3 {
    Point3::new(
        r.random_range(-half..half),
        r.random_range(-half..half),
        r.random_range(-half..half),
    )
}

// ---------------------------------------------------------------- dbscan

/// O(n^2) DBSCAN with the same labelling rules: clusters numbered by their
/// first core point, border points take the smallest adjacent cluster.
fn dbscan_reference(points: &[Point3], eps: f64, min_samples: usize) -> Vec<i32> {
    let n = points.len();
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| points[i].distance(&points[j]) <= eps).collect())
        .collect();
    let core: Vec<bool> = adj.iter().map(|a| a.len() >= min_samples).collect();
    let mut label = vec![NOISE; n];
    let mut next = 0;
    for i in 0..n {
        if !core[i] || label[i] != NOISE {
            continue;
        }
        let mut stack = vec![i];
        label[i] = next;
        while let Some(p) = stack.pop() {
            for &q in &adj[p] {
                if core[q] && label[q] == NOISE {
                    label[q] = next;
                    stack.push(q);
                }
            }
        }
        next += 1;
    }
    for i in 0..n {
        if !core[i] {
            label[i] = adj[i]
                .iter()
                .filter(|&&j| core[j])
                .map(|&j| label[j])
                .min()
                .unwrap_or(NOISE);
        }
    }
    label
}

pub fn dbscan_matches_quadratic_reference() {
    for seed in 0..10 {
        let mut r = rng(seed);
        // Clumps plus uniform noise so every label kind occurs.
        let mut pts = Vec::new();
        let centers: Vec<Point3> = (0..4).map(|_| random_point(&mut r, 4.0)).collect();
        while pts.len() < 160 {
            let c = centers[pts.len() % centers.len()];
            pts.push(c + random_point(&mut r, 0.6));
        }
        while pts.len() < 200 {
            pts.push(random_point(&mut r, 5.0));
        }
        for (eps, min) in [(0.3, 4), (0.5, 5), (0.25, 3), (1.0, 10)] {
            let fast = dbscan(&pts, DbscanParams::new(eps, min).unwrap());
            assert_eq!(fast, dbscan_reference(&pts, eps, min), "seed {seed} eps {eps} min {min}");
        }
    }
}

// ---------------------------------------------------------------- edges

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn random_nodes(r: &mut ChaCha8Rng, count: usize) -> Vec<MaskNode> {
    let directions: Vec<Vec<f64>> = (0..3)
        .map(|_| unit((0..6).map(|_| r.random_range(-1.0..1.0)).collect()))
        .collect();
    (0..count)
        .map(|i| {
            let cx = r.random_range(0..6i64);
            let cy = r.random_range(0..6i64);
            let mut keys = BTreeSet::new();
            for _ in 0..r.random_range(1..12) {
                keys.insert((cx + r.random_range(0..3), cy + r.random_range(0..3), r.random_range(0..2)));
            }
            let base = &directions[r.random_range(0..directions.len())];
            let embedding = unit(base.iter().map(|x| x + r.random_range(-0.4..0.4)).collect());
            MaskNode {
                node_id: i,
                key: InstanceKey::new(r.random_range(0..3), format!("s{}", r.random_range(0..4)), i as i64),
                points: BTreeSet::new(),
                voxels: VoxelKeySet {
                    cell_size: 0.5,
                    origin: Point3::ORIGIN,
                    keys,
                },
                embedding,
                best_view: 0,
            }
        })
        .collect()
}

pub fn compute_edges_matches_all_pairs() {
    let config = ConnectivityConfig::default();
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let nodes = random_nodes(&mut r, 50);
        let mut expected = Vec::new();
        for i in 0..nodes.len() {
            for j in i + 1..nodes.len() {
                let (a, b) = (&nodes[i].voxels.keys, &nodes[j].voxels.keys);
                let inter = a.intersection(b).count() as f64;
                let union = a.union(b).count() as f64;
                let jac = inter / union;
                let dot: f64 = nodes[i].embedding.iter().zip(&nodes[j].embedding).map(|(x, y)| x * y).sum();
                if jac >= config.tau && 1.0 - dot <= config.guard_cos_dist {
                    expected.push((i, j, jac));
                }
            }
        }
        expected.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
        let got = compute_edges(&nodes, &config);
        assert!(!expected.is_empty(), "seed {seed} produced no edges");
        assert_eq!(got.len(), expected.len(), "seed {seed}");
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!((g.a, g.b), (e.0, e.1));
            assert!((g.jaccard - e.2).abs() <= TOL);
        }
    }
}

// ---------------------------------------------------------------- BM25

fn component(id: u64, at: Point3, caption: &str) -> Component {
    let h = Point3::new(0.1, 0.1, 0.1);
    Component {
        id,
        centroid: at,
        bbox: Aabb3::new(at - h, at + h).unwrap(),
        caption: caption.to_string(),
        crop_refs: vec![],
        attributes: BTreeMap::new(),
    }
}

fn bm25_reference(docs: &[(u64, Vec<String>)], query: &[&str]) -> Vec<(u64, f64)> {
    let (k1, b) = (1.2, 0.75);
    let n = docs.len() as f64;
    let avgdl = docs.iter().map(|(_, d)| d.len()).sum::<usize>() as f64 / n;
    let terms: BTreeSet<&str> = query.iter().copied().collect();
    let mut out = Vec::new();
    for (id, doc) in docs {
        let mut score = 0.0;
        for t in &terms {
            let df = docs.iter().filter(|(_, d)| d.iter().any(|w| w == t)).count() as f64;
            let tf = doc.iter().filter(|w| w == t).count() as f64;
            if tf == 0.0 {
                continue;
            }
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc.len() as f64 / avgdl));
        }
        if score > 0.0 {
            out.push((*id, score));
        }
    }
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

pub fn bm25_matches_formula() {
    const VOCAB: [&str; 12] = [
        "red", "chair", "table", "wooden", "lamp", "fire", "extinguisher", "near", "door", "small", "box", "shelf",
    ];
    let mut r = rng(7);
    let mut docs = Vec::new();
    let mut comps = Vec::new();
    for id in 0..20u64 {
        let len = r.random_range(1..9);
        let words: Vec<String> = (0..len).map(|_| VOCAB[r.random_range(0..VOCAB.len())].to_string()).collect();
        // Punctuation and case must not change the terms.
        let caption = words
            .iter()
            .enumerate()
            .map(|(i, w)| if i % 3 == 0 { w.to_uppercase() } else { w.clone() })
            .collect::<Vec<_>>()
            .join(", ");
        comps.push(component(id * 3 + 1, Point3::new(id as f64, 0.0, 0.0), &caption));
        docs.push((id * 3 + 1, words));
    }
    let memory = SceneMemory::from_components(comps).unwrap();
    for q in 0..30 {
        let qlen = 1 + q % 4;
        let query: Vec<&str> = (0..qlen).map(|_| VOCAB[r.random_range(0..VOCAB.len())]).collect();
        let expected = bm25_reference(&docs, &query);
        let got = memory.search_text(&query.join(" "), 100).unwrap();
        assert_eq!(got.len(), expected.len(), "query {query:?}");
        for (g, e) in got.iter().zip(&expected) {
            assert_eq!(g.0, e.0, "query {query:?}");
            assert!((g.1 - e.1).abs() <= TOL);
        }
        let top = memory.search_text(&query.join(" "), 3).unwrap();
        assert_eq!(top, got.iter().take(3).copied().collect::<Vec<_>>());
    }
}

// ---------------------------------------------------------------- spatial

pub fn radius_and_nearest_match_linear_scan() {
    let mut r = rng(11);
    let comps: Vec<Component> = (0..200u64)
        .map(|id| component(id, random_point(&mut r, 6.0), "thing"))
        .collect();
    let centers: Vec<(u64, Point3)> = comps.iter().map(|c| (c.id, c.centroid)).collect();
    let memory = SceneMemory::from_components(comps).unwrap();
    let scan = |q: Point3| {
        let mut all: Vec<(u64, f64)> = centers.iter().map(|(id, p)| (*id, p.distance(&q))).collect();
        all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        all
    };
    for _ in 0..50 {
        let q = random_point(&mut r, 8.0);
        let all = scan(q);
        for radius in [0.0, 0.5, 1.7, 3.0, 20.0] {
            let expected: Vec<(u64, f64)> = all.iter().copied().filter(|(_, d)| *d <= radius).collect();
            assert_eq!(memory.query_radius(q, radius), expected);
        }
        for k in [1, 2, 7, 50, 200, 300] {
            let expected: Vec<(u64, f64)> = all.iter().copied().take(k).collect();
            assert_eq!(memory.nearest(q, k), expected, "k {k}");
        }
    }
}

// ---------------------------------------------------------------- navigation

/// Uniform-cost search over cell centers with its own neighbour rule.
fn ucs_reference(grid: &[Vec<bool>], start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    #[derive(PartialEq)]
    struct Item(f64, (usize, usize));
    impl Eq for Item {}
    impl PartialOrd for Item {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Item {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            o.0.total_cmp(&self.0)
        }
    }
    let h = grid.len() as i64;
    let w = grid[0].len() as i64;
    let free = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && !grid[y as usize][x as usize];
    let mut dist: HashMap<(usize, usize), f64> = HashMap::new();
    let mut heap = BinaryHeap::new();
    dist.insert(start, 0.0);
    heap.push(Item(0.0, start));
    while let Some(Item(d, c)) = heap.pop() {
        if d > dist[&c] {
            continue;
        }
        if c == goal {
            return Some(d);
        }
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (x, y) = (c.0 as i64, c.1 as i64);
                if !free(x + dx, y + dy) {
                    continue;
                }
                if dx != 0 && dy != 0 && !(free(x + dx, y) && free(x, y + dy)) {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { 2f64.sqrt() } else { 1.0 };
                let n = ((x + dx) as usize, (y + dy) as usize);
                let nd = d + step;
                if dist.get(&n).is_none_or(|&old| nd < old) {
                    dist.insert(n, nd);
                    heap.push(Item(nd, n));
                }
            }
        }
    }
    None
}

fn wall_fixture(rows: &[&str]) -> (OccupancyGrid, Vec<Vec<bool>>) {
    let cells: Vec<Vec<bool>> = rows.iter().map(|r| r.chars().map(|c| c == '#').collect()).collect();
    let mut grid = OccupancyGrid::empty(0.1, Point3::ORIGIN, cells[0].len(), cells.len()).unwrap();
    for (iy, row) in cells.iter().enumerate() {
        for (ix, &occ) in row.iter().enumerate() {
            grid.set_occupied(ix, iy, occ);
        }
    }
    (grid, cells)
}

pub fn navigation_matches_uniform_cost_search() {
    let fixtures: [&[&str]; 5] = [
        &["..........", "..........", "..........", "..........", ".........."],
        &["....#.....", "....#.....", "....#.....", "....#.....", "....#.....", "..........", ".........."],
        &[
            "..........",
            ".#######..",
            ".#.....#..",
            ".#.....#..",
            ".#.....#..",
            ".###.###..",
            "..........",
        ],
        &[
            "..#.......#.",
            "..#..#....#.",
            "..#..#..#.#.",
            ".....#..#...",
            "######..####",
            "........#...",
            ".####...#.#.",
            "..........#.",
        ],
        &["...#....", "...#....", "...#....", "...#....", "...#...."],
    ];
    let mut r = rng(21);
    let mut reachable = 0;
    let mut unreachable = 0;
    for rows in fixtures {
        let (grid, cells) = wall_fixture(rows);
        let free: Vec<(usize, usize)> = (0..grid.height)
            .flat_map(|iy| (0..grid.width).map(move |ix| (ix, iy)))
            .filter(|&(ix, iy)| !cells[iy][ix])
            .collect();
        for _ in 0..40 {
            let a = free[r.random_range(0..free.len())];
            let b = free[r.random_range(0..free.len())];
            let at = |c: (usize, usize)| {
                let (x, y) = grid.cell_center(c.0, c.1);
                Point3::new(x, y, 0.3)
            };
            let got = grid.navigation_distance(at(a), at(b));
            match ucs_reference(&cells, a, b) {
                Some(steps) => {
                    reachable += 1;
                    let d = got.expect("reachable");
                    assert!((d - steps * grid.cell).abs() <= TOL, "{a:?} -> {b:?}: {d} vs {}", steps * grid.cell);
                    assert!(d + TOL >= at(a).distance(&at(b)));
                }
                None => {
                    unreachable += 1;
                    assert!(got.is_err());
                }
            }
        }
    }
    assert!(reachable > 100 && unreachable > 5);
}

// ---------------------------------------------------------------- METEOR

/// Every injective matching of equal tokens; keeps the largest match count
/// and, among those, the fewest chunks.
fn exhaustive_alignment(pred: &[&str], refs: &[&str]) -> (usize, usize) {
    fn go(i: usize, pred: &[&str], refs: &[&str], used: &mut Vec<bool>, chosen: &mut Vec<Option<usize>>, best: &mut (usize, usize)) {
        if i == pred.len() {
            let m = chosen.iter().flatten().count();
            let mut chunks = 0;
            let mut prev: Option<usize> = None;
            for c in chosen.iter() {
                match (*c, prev) {
                    (Some(j), Some(p)) if j == p + 1 => {}
                    (Some(_), _) => chunks += 1,
                    (None, _) => {}
                }
                prev = *c;
            }
            if m > best.0 || (m == best.0 && chunks < best.1) {
                *best = (m, chunks);
            }
            return;
        }
        chosen.push(None);
        go(i + 1, pred, refs, used, chosen, best);
        chosen.pop();
        for j in 0..refs.len() {
            if !used[j] && refs[j] == pred[i] {
                used[j] = true;
                chosen.push(Some(j));
                go(i + 1, pred, refs, used, chosen, best);
                chosen.pop();
                used[j] = false;
            }
        }
    }
    let mut best = (0, 0);
    go(0, pred, refs, &mut vec![false; refs.len()], &mut Vec::new(), &mut best);
    best
}

fn meteor_reference(pred: &[&str], refs: &[&str]) -> f64 {
    let (m, chunks) = exhaustive_alignment(pred, refs);
    if m == 0 {
        return 0.0;
    }
    let p = m as f64 / pred.len() as f64;
    let r = m as f64 / refs.len() as f64;
    let f = p * r / (0.9 * p + 0.1 * r);
    let pen = 0.5 * (chunks as f64 / m as f64).powi(3);
    f * (1.0 - pen)
}

pub fn meteor_matches_exhaustive_alignment() {
    const VOCAB: [&str; 5] = ["the", "red", "chair", "is", "near"];
    let mut r = rng(31);
    for case in 0..50 {
        let pl = r.random_range(1..8);
        let rl = r.random_range(1..8);
        let pred: Vec<&str> = (0..pl).map(|_| VOCAB[r.random_range(0..VOCAB.len())]).collect();
        let refs: Vec<&str> = (0..rl).map(|_| VOCAB[r.random_range(0..VOCAB.len())]).collect();
        let detail = meteor_lite_detail(&pred.join(" "), &refs.join(" "));
        let (m, chunks) = exhaustive_alignment(&pred, &refs);
        assert_eq!((detail.matches, detail.chunks), (m, if m == 0 { 0 } else { chunks }), "case {case}: {pred:?} / {refs:?}");
        assert!((detail.score - meteor_reference(&pred, &refs)).abs() <= TOL);
    }
}
