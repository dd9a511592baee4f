//! Breadth-first clustering of non-empty BEV cells.

use std::collections::{HashMap, VecDeque};

use serde::Serialize;

use crate::preprocess::CellSet;

/// Partition of a [`CellSet`] into connected clusters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClusterSet {
    /// Cluster id of each cell, in cell order.
    pub assignments: Vec<usize>,
    /// Member cell positions (into the cell set) per cluster.
    pub clusters: Vec<Vec<usize>>,
}

impl ClusterSet {
    /// N_s.
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Partition as a set of sorted member lists, independent of ids.
    pub fn canonical(&self) -> Vec<Vec<usize>> {
        let mut parts: Vec<Vec<usize>> = self
            .clusters
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.sort_unstable();
                c
            })
            .collect();
        parts.sort();
        parts
    }
}

/// Connected components of "Euclidean index distance <= d_c".
///
/// Clusters grow breadth-first from the lowest-ordered unvisited cell, so
/// ids follow the order of `cells`.
pub fn bfs_cluster(cells: &CellSet, d_c: f64) -> ClusterSet {
    let n = cells.len();
    let lookup: HashMap<(usize, usize), usize> = cells.indices().iter().enumerate().map(|(i, &rc)| (rc, i)).collect();
    let reach = d_c.floor().max(0.0) as isize;
    let r2 = d_c * d_c;
    let offsets: Vec<(isize, isize)> = (-reach..=reach)
        .flat_map(|dr| (-reach..=reach).map(move |dc| (dr, dc)))
        .filter(|&(dr, dc)| (dr != 0 || dc != 0) && ((dr * dr + dc * dc) as f64) <= r2)
        .collect();

    const UNSET: usize = usize::MAX;
    let mut assignments = vec![UNSET; n];
    let mut clusters = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if assignments[seed] != UNSET {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![seed];
        assignments[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            let (r, c) = cells.indices()[i];
            for &(dr, dc) in &offsets {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 {
                    continue;
                }
                if let Some(&j) = lookup.get(&(nr as usize, nc as usize)) {
                    if assignments[j] == UNSET {
                        assignments[j] = id;
                        members.push(j);
                        queue.push_back(j);
                    }
                }
            }
        }
        clusters.push(members);
    }
    ClusterSet { assignments, clusters }
}

/// Cluster errors against reference instance labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterQuality {
    /// Clusters holding cells of two or more instances, over clusters
    /// holding any instance cell.
    pub under_clustering: f64,
    /// Instances spread over two or more clusters, over all instances.
    pub over_clustering: f64,
    pub clusters: usize,
    pub instances: usize,
}

/// `instance[i]` is the reference instance of cell `i`; `None` cells
/// (background, residual ground) are ignored.
pub fn cluster_quality(clusters: &ClusterSet, instance: &[Option<usize>]) -> ClusterQuality {
    let mut per_cluster: Vec<Vec<usize>> = vec![Vec::new(); clusters.len()];
    let mut per_instance: HashMap<usize, Vec<usize>> = HashMap::new();
    for (i, inst) in instance.iter().enumerate() {
        if let Some(k) = *inst {
            let c = clusters.assignments[i];
            per_cluster[c].push(k);
            per_instance.entry(k).or_default().push(c);
        }
    }
    let distinct = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v.dedup();
        v.len()
    };
    let touched: Vec<usize> = per_cluster.iter_mut().map(distinct).filter(|&d| d > 0).collect();
    let under = touched.iter().filter(|&&d| d > 1).count();
    let over = per_instance.values_mut().map(distinct).filter(|&d| d > 1).count();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    ClusterQuality {
        under_clustering: ratio(under, touched.len()),
        over_clustering: ratio(over, per_instance.len()),
        clusters: clusters.len(),
        instances: per_instance.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::GridSpec;

    fn set(idx: &[(usize, usize)]) -> CellSet {
        CellSet::from_indices(&GridSpec::default(), idx.to_vec()).unwrap()
    }

    #[test]
    fn within_and_beyond_radius() {
        assert_eq!(bfs_cluster(&set(&[(10, 10), (10, 12)]), 3.0).len(), 1);
        assert_eq!(bfs_cluster(&set(&[(10, 10), (10, 15)]), 3.0).len(), 2);
        // diagonal (2, 2): distance sqrt(8) <= 3
        assert_eq!(bfs_cluster(&set(&[(10, 10), (12, 12)]), 3.0).len(), 1);
        // (3, 1): sqrt(10) > 3
        assert_eq!(bfs_cluster(&set(&[(10, 10), (13, 11)]), 3.0).len(), 2);
    }

    #[test]
    fn chain_is_transitive() {
        let idx: Vec<(usize, usize)> = (0..10).map(|i| (5, 3 * i)).collect();
        let c = bfs_cluster(&set(&idx), 3.0);
        assert_eq!(c.len(), 1);
        assert_eq!(c.clusters[0].len(), 10);
    }

    #[test]
    fn empty_input() {
        assert!(bfs_cluster(&CellSet::default(), 3.0).is_empty());
    }

    #[test]
    fn ids_follow_seed_order() {
        let c = bfs_cluster(&set(&[(0, 0), (50, 50), (0, 1)]), 2.0);
        assert_eq!(c.assignments, vec![0, 1, 0]);
    }

    #[test]
    fn quality_rates() {
        // cells 0,1 instance 0; 2 instance 1; 3 instance 0 but far away
        let cells = set(&[(0, 0), (0, 1), (0, 2), (40, 40)]);
        let c = bfs_cluster(&cells, 1.0);
        let q = cluster_quality(&c, &[Some(0), Some(0), Some(1), Some(0)]);
        assert_eq!(q.under_clustering, 0.5);
        assert_eq!(q.over_clustering, 0.5);
    }
}
