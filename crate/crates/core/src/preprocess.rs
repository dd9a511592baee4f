//! Ground removal, voxelization and non-empty cell extraction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::GridSpec;
use crate::error::{Error, Result};
use crate::frame::PointFrame;

/// cos(30°): candidate plane normals must be at least this vertical.
const MIN_NORMAL_Z: f64 = 0.866_025_403_784_438_6;

/// Binary occupancy lattice of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    pub grid: GridSpec,
    pub timestamp: f64,
    occupancy: Vec<bool>,
}

impl BevGrid {
    pub fn empty(grid: GridSpec, timestamp: f64) -> Self {
        Self { grid, timestamp, occupancy: vec![false; grid.num_cells() * grid.channels()] }
    }

    #[inline]
    fn voxel(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.grid.cols() + col) * self.grid.channels() + ch
    }

    pub fn occupied(&self, row: usize, col: usize, ch: usize) -> bool {
        self.occupancy[self.voxel(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize) {
        let i = self.voxel(row, col, ch);
        self.occupancy[i] = true;
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// True if any channel of `(row, col)` is occupied.
    pub fn column_occupied(&self, row: usize, col: usize) -> bool {
        let base = self.voxel(row, col, 0);
        self.occupancy[base..base + self.grid.channels()].iter().any(|&o| o)
    }
}

/// Non-empty BEV cells: grid indices and their metric centers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CellSet {
    coords: Vec<[f64; 2]>,
    indices: Vec<(usize, usize)>,
}

impl CellSet {
    /// Cells at the given indices with centers taken from `grid`, keeping
    /// the given order. Duplicates are rejected.
    pub fn from_indices(grid: &GridSpec, indices: Vec<(usize, usize)>) -> Result<Self> {
        let coords = indices.iter().map(|&(r, c)| grid.cell_center(r, c)).collect();
        Self::from_parts(coords, indices)
    }

    pub fn from_parts(coords: Vec<[f64; 2]>, indices: Vec<(usize, usize)>) -> Result<Self> {
        if coords.len() != indices.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} coords for {} indices",
                coords.len(),
                indices.len()
            )));
        }
        let mut seen = indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::ShapeMismatch("duplicate cell index".into()));
        }
        Ok(Self { coords, indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }
    pub fn indices(&self) -> &[(usize, usize)] {
        &self.indices
    }
}

/// Ground/non-ground split of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundLabel {
    pub is_ground: Vec<bool>,
    /// `[a, b, c, d]` with `a x + b y + c z + d = 0`, unit normal, `c > 0`.
    pub plane: Option<[f64; 4]>,
}

fn plane_through(p: [f64; 3], q: [f64; 3], r: [f64; 3]) -> Option<[f64; 4]> {
    let u = [q[0] - p[0], q[1] - p[1], q[2] - p[2]];
    let v = [r[0] - p[0], r[1] - p[1], r[2] - p[2]];
    let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    let scale = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt() * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if !(len > 1e-9 * scale.max(1e-12)) {
        return None;
    }
    let s = if n[2] < 0.0 { -1.0 / len } else { 1.0 / len };
    let n = [n[0] * s, n[1] * s, n[2] * s];
    Some([n[0], n[1], n[2], -(n[0] * p[0] + n[1] * p[1] + n[2] * p[2])])
}

#[inline]
fn distance(plane: &[f64; 4], p: [f64; 3]) -> f64 {
    (plane[0] * p[0] + plane[1] * p[1] + plane[2] * p[2] + plane[3]).abs()
}

/// Least-squares `z = a x + b y + c` over `pts`.
fn refit(pts: &[[f64; 3]]) -> Option<[f64; 4]> {
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mean = pts.iter().fold([0.0; 3], |m, p| [m[0] + p[0] / n, m[1] + p[1] / n, m[2] + p[2] / n]);
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in pts {
        let (x, y, z) = (p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]);
        sxx += x * x;
        sxy += x * y;
        syy += y * y;
        sxz += x * z;
        syz += y * z;
    }
    let det = sxx * syy - sxy * sxy;
    if !(det.abs() > 1e-12 * (sxx * syy).max(1e-300)) {
        return None;
    }
    let a = (sxz * syy - syz * sxy) / det;
    let b = (syz * sxx - sxz * sxy) / det;
    // a x + b y - z + c = 0, flipped so the normal points up
    let len = (a * a + b * b + 1.0).sqrt();
    let c = mean[2] - a * mean[0] - b * mean[1];
    Some([-a / len, -b / len, 1.0 / len, -c / len])
}

/// Splits `frame` into ground and non-ground points with a RANSAC plane fit.
///
/// Candidate planes through three random points are kept only if their
/// normal lies within 30° of vertical; the plane with most inliers is
/// refined by least squares. Frames with fewer than three points, or where
/// no admissible plane exists, keep every point.
pub fn remove_ground(frame: &PointFrame, iterations: usize, dist_tol: f64, seed: u64) -> (PointFrame, GroundLabel) {
    let pts: Vec<[f64; 3]> = frame.points.iter().map(|p| [p[0] as f64, p[1] as f64, p[2] as f64]).collect();
    let n = pts.len();
    let keep_all = || {
        (frame.clone(), GroundLabel { is_ground: vec![false; n], plane: None })
    };
    if n < 3 {
        return keep_all();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<([f64; 4], usize)> = None;
    for _ in 0..iterations {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        let k = rng.random_range(0..n);
        if i == j || j == k || i == k {
            continue;
        }
        let Some(plane) = plane_through(pts[i], pts[j], pts[k]) else { continue };
        if plane[2] < MIN_NORMAL_Z {
            continue;
        }
        let inliers = pts.iter().filter(|&&p| distance(&plane, p) <= dist_tol).count();
        if best.is_none_or(|(_, b)| inliers > b) {
            best = Some((plane, inliers));
        }
    }
    let Some((mut plane, _)) = best else { return keep_all() };

    let inliers: Vec<[f64; 3]> = pts.iter().copied().filter(|&p| distance(&plane, p) <= dist_tol).collect();
    if let Some(refined) = refit(&inliers) {
        if refined[2] >= MIN_NORMAL_Z {
            plane = refined;
        }
    }

    let is_ground: Vec<bool> = pts.iter().map(|&p| distance(&plane, p) <= dist_tol).collect();
    let kept = frame
        .points
        .iter()
        .zip(&is_ground)
        .filter_map(|(p, &g)| (!g).then_some(*p))
        .collect();
    (PointFrame::new(frame.timestamp, kept), GroundLabel { is_ground, plane: Some(plane) })
}

/// Binary occupancy of `frame`; points outside the grid ranges are dropped.
pub fn voxelize(frame: &PointFrame, grid: &GridSpec) -> BevGrid {
    let mut bev = BevGrid::empty(*grid, frame.timestamp);
    for p in &frame.points {
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        if let (Some((r, c)), Some(ch)) = (grid.cell_of(x, y), grid.channel_of(z)) {
            bev.set(r, c, ch);
        }
    }
    bev
}

/// Row-major list of `(row, col)` columns with any occupied channel.
pub fn extract_cells(bev: &BevGrid) -> CellSet {
    let g = &bev.grid;
    let mut indices = Vec::new();
    for r in 0..g.rows() {
        for c in 0..g.cols() {
            if bev.column_occupied(r, c) {
                indices.push((r, c));
            }
        }
    }
    let coords = indices.iter().map(|&(r, c)| g.cell_center(r, c)).collect();
    CellSet { coords, indices }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_point_voxel() {
        let g = GridSpec::default();
        let f = PointFrame::new(0.0, vec![[0.1, 0.1, 0.0]]);
        let bev = voxelize(&f, &g);
        assert_eq!(bev.count(), 1);
        let ch = g.channel_of(0.0).unwrap();
        assert!(bev.occupied(128, 128, ch));
        let cells = extract_cells(&bev);
        assert_eq!(cells.indices(), &[(128, 128)]);
        assert_eq!(cells.coords(), &[[0.125, 0.125]]);
    }

    #[test]
    fn empty_and_duplicate_points() {
        let g = GridSpec::default();
        assert_eq!(voxelize(&PointFrame::default(), &g).count(), 0);
        assert!(extract_cells(&voxelize(&PointFrame::default(), &g)).is_empty());
        let f = PointFrame::new(0.0, vec![[1.0, 1.0, 0.0], [1.01, 1.02, 0.05]]);
        assert_eq!(voxelize(&f, &g).count(), 1);
    }

    #[test]
    fn z_column_collapses_to_one_cell() {
        let g = GridSpec::default();
        let f = PointFrame::new(0.0, vec![[1.0, 1.0, -2.9], [1.0, 1.0, 0.0], [1.0, 1.0, 2.0]]);
        let bev = voxelize(&f, &g);
        assert_eq!(bev.count(), 3);
        assert_eq!(extract_cells(&bev).len(), 1);
    }

    #[test]
    fn out_of_range_dropped() {
        let g = GridSpec::default();
        let f = PointFrame::new(0.0, vec![[40.0, 0.0, 0.0], [0.0, 0.0, 2.2], [0.0, 0.0, -3.5]]);
        assert_eq!(voxelize(&f, &g).count(), 0);
    }

    #[test]
    fn exact_plane_keeps_only_raised_point() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push([i as f32 * 0.5, j as f32 * 0.5, 0.0]);
            }
        }
        pts.push([1.2, 1.3, 1.0]);
        let (kept, label) = remove_ground(&PointFrame::new(0.0, pts), 50, 0.15, 1);
        assert_eq!(kept.points, vec![[1.2, 1.3, 1.0]]);
        assert_eq!(label.is_ground.len(), 101);
        let plane = label.plane.unwrap();
        assert!((plane[2] - 1.0).abs() < 1e-9 && plane[3].abs() < 1e-9);
    }

    #[test]
    fn collinear_points_keep_everything() {
        let pts: Vec<[f32; 3]> = (0..20).map(|i| [i as f32, 0.0, 0.0]).collect();
        let (kept, label) = remove_ground(&PointFrame::new(0.0, pts.clone()), 50, 0.15, 3);
        assert_eq!(kept.points, pts);
        assert!(label.plane.is_none());
    }

    #[test]
    fn steep_planes_rejected() {
        // a vertical wall only: no admissible plane
        let mut pts = Vec::new();
        for i in 0..10 {
            for k in 0..10 {
                pts.push([i as f32 * 0.3, 2.0, k as f32 * 0.3]);
            }
        }
        let (kept, label) = remove_ground(&PointFrame::new(0.0, pts.clone()), 100, 0.15, 5);
        assert_eq!(kept.len(), pts.len());
        assert!(label.plane.is_none());
    }

    #[test]
    fn all_ground_gives_empty_frame() {
        let pts: Vec<[f32; 3]> = (0..30).map(|i| [(i % 6) as f32, (i / 6) as f32, 0.0]).collect();
        let (kept, _) = remove_ground(&PointFrame::new(0.5, pts), 50, 0.15, 9);
        assert!(kept.is_empty());
        assert_eq!(kept.timestamp, 0.5);
    }
}
