//! Constrained merging on randomized node/edge sets.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scenemem::association::InstanceKey;
use scenemem::connectivity::{merge_constrained, CandidateEdge, MaskNode, MergeOutcome};
use scenemem::geometry::{Point3, VoxelKeySet};

fn node(id: usize, seq: u32, slug: &str) -> MaskNode {
    MaskNode {
        node_id: id,
        key: InstanceKey::new(seq, slug, id as i64),
        points: BTreeSet::from([id as u64]),
        voxels: VoxelKeySet {
            cell_size: 0.5,
            origin: Point3::ORIGIN,
            keys: BTreeSet::new(),
        },
        embedding: vec![1.0],
        best_view: 0,
    }
}

fn random_instance(r: &mut ChaCha8Rng) -> (Vec<MaskNode>, Vec<CandidateEdge>) {
    const SLUGS: [&str; 4] = ["chair", "seat", "table", "lamp"];
    let n = r.random_range(2..30);
    let nodes: Vec<MaskNode> = (0..n)
        .map(|i| node(i, r.random_range(0..3), SLUGS[r.random_range(0..SLUGS.len())]))
        .collect();
    let mut edges = Vec::new();
    let mut seen = BTreeSet::new();
    for _ in 0..r.random_range(0..3 * n) {
        let a = r.random_range(0..n);
        let b = r.random_range(0..n);
        if a == b || !seen.insert((a.min(b), a.max(b))) {
            continue;
        }
        // Quantized so equal-weight ties occur.
        let jaccard = r.random_range(1..=8) as f64 / 8.0;
        edges.push(CandidateEdge {
            a: a.min(b),
            b: a.max(b),
            jaccard,
        });
    }
    edges.sort_by(|x, y| y.jaccard.total_cmp(&x.jaccard).then((x.a, x.b).cmp(&(y.a, y.b))));
    (nodes, edges)
}

/// Set-based reference: components as explicit member sets.
fn reference_partition(nodes: &[MaskNode], edges: &[CandidateEdge]) -> BTreeSet<BTreeSet<usize>> {
    let mut comp: Vec<BTreeSet<usize>> = nodes.iter().map(|n| BTreeSet::from([n.node_id])).collect();
    let keys = |set: &BTreeSet<usize>| -> BTreeSet<(u32, String)> { set.iter().map(|&i| nodes[i].key.run_key()).collect() };
    for e in edges {
        let ia = comp.iter().position(|c| c.contains(&e.a)).unwrap();
        let ib = comp.iter().position(|c| c.contains(&e.b)).unwrap();
        if ia == ib || !keys(&comp[ia]).is_disjoint(&keys(&comp[ib])) {
            continue;
        }
        let moved = comp.remove(ia.max(ib));
        comp[ia.min(ib)].extend(moved);
    }
    comp.into_iter().collect()
}

pub fn five_hundred_random_instances() {
    let mut r = ChaCha8Rng::seed_from_u64(4242);
    let mut rejected_total = 0;
    for case in 0..500 {
        let (nodes, edges) = random_instance(&mut r);
        let result = merge_constrained(&nodes, &edges);

        // No component holds two nodes with the same (sequence, slug).
        for d in &result.drafts {
            let mut keys = BTreeSet::new();
            for &m in &d.members {
                assert!(keys.insert(nodes[m].key.run_key()), "case {case}: shared key in {:?}", d.members);
            }
        }

        // Every node is in exactly one component.
        let mut all: Vec<usize> = result.drafts.iter().flat_map(|d| d.members.iter().copied()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..nodes.len()).collect::<Vec<_>>());

        // The log covers every edge in order and applied merges never
        // increase in weight.
        assert_eq!(result.log.len(), edges.len());
        let applied: Vec<f64> = result
            .log
            .iter()
            .filter(|d| d.outcome == MergeOutcome::Merged)
            .map(|d| d.edge.jaccard)
            .collect();
        assert!(applied.windows(2).all(|w| w[0] >= w[1]), "case {case}: {applied:?}");
        assert!(result.log.windows(2).all(|w| w[0].edge.jaccard >= w[1].edge.jaccard));

        let got: BTreeSet<BTreeSet<usize>> = result.drafts.iter().map(|d| d.members.clone()).collect();
        assert_eq!(got, reference_partition(&nodes, &edges), "case {case}");

        // Points follow their nodes.
        for d in &result.drafts {
            let expected: BTreeSet<u64> = d.members.iter().map(|&m| m as u64).collect();
            assert_eq!(d.points, expected);
        }
        rejected_total += result.count(MergeOutcome::RejectedSharedKey);
    }
    assert!(rejected_total > 100, "too few rejections exercised: {rejected_total}");
}

pub fn rejected_merge_is_not_retried_later() {
    // 0 and 1 share (0, chair); 2 bridges them. The strongest edge joins
    // 0-2, then 1-2 is refused, and nothing re-tries it.
    let nodes = vec![node(0, 0, "chair"), node(1, 0, "chair"), node(2, 1, "seat")];
    let edges = vec![
        CandidateEdge { a: 0, b: 2, jaccard: 0.9 },
        CandidateEdge { a: 1, b: 2, jaccard: 0.8 },
        CandidateEdge { a: 0, b: 1, jaccard: 0.3 },
    ];
    let result = merge_constrained(&nodes, &edges);
    let outcomes: Vec<MergeOutcome> = result.log.iter().map(|d| d.outcome).collect();
    assert_eq!(
        outcomes,
        vec![MergeOutcome::Merged, MergeOutcome::RejectedSharedKey, MergeOutcome::RejectedSharedKey]
    );
    let parts: BTreeMap<usize, BTreeSet<usize>> =
        result.drafts.iter().map(|d| (*d.members.first().unwrap(), d.members.clone())).collect();
    assert_eq!(parts[&0], BTreeSet::from([0, 2]));
    assert_eq!(parts[&1], BTreeSet::from([1]));
}
