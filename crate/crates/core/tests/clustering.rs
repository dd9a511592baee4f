use std::collections::{BTreeSet, HashSet};

use bevmotion::{bfs_cluster, CellSet, GridSpec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Transitive closure over every pair within `d_c` index units.
fn oracle(idx: &[(usize, usize)], d_c: f64) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(idx.len());
    for i in 0..idx.len() {
        for j in i + 1..idx.len() {
            let dr = idx[i].0 as f64 - idx[j].0 as f64;
            let dc = idx[i].1 as f64 - idx[j].1 as f64;
            if dr * dr + dc * dc <= d_c * d_c {
                uf.union(i, j);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..idx.len() {
        groups.entry(uf.find(i)).or_default().push(i);
    }
    let mut parts: Vec<Vec<usize>> = groups.into_values().collect();
    parts.sort();
    parts
}

fn random_cells(rng: &mut ChaCha8Rng, grid: &GridSpec) -> Vec<(usize, usize)> {
    let n = rng.random_range(1..=500);
    // dense enough to merge, sparse enough to split
    let side = rng.random_range(12..80usize).min(grid.rows());
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < n.min(side * side) {
        let rc = (rng.random_range(0..side), rng.random_range(0..side));
        if seen.insert(rc) {
            out.push(rc);
        }
    }
    out
}

#[test]
fn bfs_matches_union_find() {
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for d_c in [2.0, 3.0, 4.0] {
        for instance in 0..100 {
            let idx = random_cells(&mut rng, &grid);
            let set = CellSet::from_indices(&grid, idx.clone()).unwrap();
            let got = bfs_cluster(&set, d_c);
            assert_eq!(got.canonical(), oracle(&idx, d_c), "d_c {d_c}, instance {instance}, {} cells", idx.len());
        }
    }
}

#[test]
fn ids_dense_and_cover_every_cell() {
    let grid = GridSpec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let idx = random_cells(&mut rng, &grid);
    let set = CellSet::from_indices(&grid, idx.clone()).unwrap();
    let c = bfs_cluster(&set, 3.0);
    assert_eq!(c.assignments.len(), idx.len());
    let ids: BTreeSet<usize> = c.assignments.iter().copied().collect();
    assert_eq!(ids, (0..c.len()).collect());
    assert_eq!(c.clusters.iter().map(Vec::len).sum::<usize>(), idx.len());
}

fn partition_by_index(idx: &[(usize, usize)], d_c: f64) -> BTreeSet<BTreeSet<(usize, usize)>> {
    let set = CellSet::from_indices(&GridSpec::default(), idx.to_vec()).unwrap();
    bfs_cluster(&set, d_c).clusters.iter().map(|c| c.iter().map(|&i| idx[i]).collect()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_changes_only_ids(
        raw in prop::collection::hash_set((0..40usize, 0..40usize), 1..200),
        seed in any::<u64>(),
        d_c in prop::sample::select(vec![1.0, 1.5, 2.0, 3.0, 4.0]),
    ) {
        let idx: Vec<(usize, usize)> = raw.into_iter().collect();
        let mut shuffled = idx.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(partition_by_index(&idx, d_c), partition_by_index(&shuffled, d_c));
    }
}
