//! Grid geometry and run configuration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, Violation};

const DIVISION_TOL: f64 = 1e-9;

/// Metric extent and voxel size of the BEV lattice.
///
/// `rows` counts cells along X, `cols` along Y, `channels` along Z. The
/// counts are derived from the ranges and must divide exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    x_range: [f64; 2],
    y_range: [f64; 2],
    z_range: [f64; 2],
    voxel_xy: f64,
    voxel_z: f64,
    rows: usize,
    cols: usize,
    channels: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpecRepr {
    x_range: [f64; 2],
    y_range: [f64; 2],
    z_range: [f64; 2],
    voxel_xy: f64,
    voxel_z: f64,
    #[serde(rename = "H")]
    rows: usize,
    #[serde(rename = "W")]
    cols: usize,
    #[serde(rename = "C")]
    channels: usize,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        let g = GridSpec::new(r.x_range, r.y_range, r.z_range, r.voxel_xy, r.voxel_z)?;
        if (g.rows, g.cols, g.channels) != (r.rows, r.cols, r.channels) {
            return Err(Error::InvalidGrid(format!(
                "declared H/W/C {}x{}x{} disagree with ranges ({}x{}x{})",
                r.rows, r.cols, r.channels, g.rows, g.cols, g.channels
            )));
        }
        Ok(g)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            x_range: g.x_range,
            y_range: g.y_range,
            z_range: g.z_range,
            voxel_xy: g.voxel_xy,
            voxel_z: g.voxel_z,
            rows: g.rows,
            cols: g.cols,
            channels: g.channels,
        }
    }
}

fn exact_count(axis: &str, range: [f64; 2], voxel: f64) -> Result<usize> {
    if !(range[0].is_finite() && range[1].is_finite()) || range[1] <= range[0] {
        return Err(Error::InvalidGrid(format!("{axis} range {range:?} has no positive extent")));
    }
    if !(voxel.is_finite() && voxel > 0.0) {
        return Err(Error::InvalidGrid(format!("{axis} voxel size {voxel} must be positive")));
    }
    let n = (range[1] - range[0]) / voxel;
    let rounded = n.round();
    if rounded < 1.0 || (n - rounded).abs() > DIVISION_TOL * n.max(1.0) {
        return Err(Error::InvalidGrid(format!(
            "{axis} extent {} is not an integer multiple of voxel {voxel} ({n} cells)",
            range[1] - range[0]
        )));
    }
    Ok(rounded as usize)
}

impl GridSpec {
    pub fn new(
        x_range: [f64; 2],
        y_range: [f64; 2],
        z_range: [f64; 2],
        voxel_xy: f64,
        voxel_z: f64,
    ) -> Result<Self> {
        let rows = exact_count("x", x_range, voxel_xy)?;
        let cols = exact_count("y", y_range, voxel_xy)?;
        let channels = exact_count("z", z_range, voxel_z)?;
        Ok(Self { x_range, y_range, z_range, voxel_xy, voxel_z, rows, cols, channels })
    }

    pub fn x_range(&self) -> [f64; 2] {
        self.x_range
    }
    pub fn y_range(&self) -> [f64; 2] {
        self.y_range
    }
    pub fn z_range(&self) -> [f64; 2] {
        self.z_range
    }
    pub fn voxel_xy(&self) -> f64 {
        self.voxel_xy
    }
    pub fn voxel_z(&self) -> f64 {
        self.voxel_z
    }
    /// H: cells along X.
    pub fn rows(&self) -> usize {
        self.rows
    }
    /// W: cells along Y.
    pub fn cols(&self) -> usize {
        self.cols
    }
    /// C: cells along Z.
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn num_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Half-open bin index of `v` in `[lo, hi)`.
    fn bin(v: f64, range: [f64; 2], voxel: f64, n: usize) -> Option<usize> {
        if !(v >= range[0] && v < range[1]) {
            return None;
        }
        let i = ((v - range[0]) / voxel).floor() as usize;
        Some(i.min(n - 1))
    }

    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        Some((
            Self::bin(x, self.x_range, self.voxel_xy, self.rows)?,
            Self::bin(y, self.y_range, self.voxel_xy, self.cols)?,
        ))
    }

    pub fn channel_of(&self, z: f64) -> Option<usize> {
        Self::bin(z, self.z_range, self.voxel_z, self.channels)
    }

    /// Metric center of cell `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_range[0] + (row as f64 + 0.5) * self.voxel_xy,
            self.y_range[0] + (col as f64 + 0.5) * self.voxel_xy,
        ]
    }

    #[inline]
    pub fn flat(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    #[inline]
    pub fn unflat(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols, idx % self.cols)
    }
}

impl Default for GridSpec {
    /// 64 m x 64 m at 0.25 m, Z in [-3, 2.2) at 0.4 m: 256 x 256 x 13.
    fn default() -> Self {
        GridSpec::new([-32.0, 32.0], [-32.0, 32.0], [-3.0, 2.2], 0.25, 0.4)
            .expect("default grid divides exactly")
    }
}

/// Loss weights, matching and optimization parameters.
///
/// Serialized as a flat JSON object. Every key is required and unknown keys
/// are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    /// Cost temperature of the matching cost.
    pub theta_c: f64,
    /// Temperature of the backward-consistency step decay.
    pub theta_b: f64,
    /// Cluster radius in cells.
    pub d_c: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Past frames fed to a predictor, including the current one.
    #[serde(rename = "T")]
    pub past_frames: usize,
    /// Predicted future steps.
    #[serde(rename = "T_prime")]
    pub future_steps: usize,
    /// Seconds between consecutive frames.
    pub frame_dt: f64,
    pub sinkhorn_epsilon: f64,
    pub sinkhorn_iters: usize,
    pub sinkhorn_tol: f64,
    pub outer_rounds: usize,
    pub opt_steps: usize,
    pub opt_lr: f64,
    pub smooth_l1_delta: f64,
    pub static_speed_threshold: f64,
    pub rng_seed: u64,
    /// Neighbour count of the KNN smoothness loss.
    pub knn_k: usize,
    /// RANSAC candidate planes tried by ground removal.
    pub ground_iters: usize,
    /// Point-to-plane distance below which a point is ground, meters.
    pub ground_dist_tol: f64,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            theta_c: 3.0,
            theta_b: 10.0,
            d_c: 3.0,
            alpha: 0.05,
            beta: 0.1,
            gamma: 1.0,
            past_frames: 5,
            future_steps: 5,
            frame_dt: 0.2,
            sinkhorn_epsilon: 0.03,
            sinkhorn_iters: 200,
            sinkhorn_tol: 1e-6,
            outer_rounds: 5,
            opt_steps: 200,
            opt_lr: 0.05,
            smooth_l1_delta: 1.0,
            static_speed_threshold: 0.2,
            rng_seed: 0,
            knn_k: 5,
            ground_iters: 100,
            ground_dist_tol: 0.15,
        }
    }
}

impl Config {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Config = serde_json::from_str(text)?;
        validate_config(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// All violated invariants, empty when valid.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut check = |ok: bool, field: &'static str, reason: &str| {
            if !ok {
                out.push(Violation { field, reason: reason.to_string() });
            }
        };
        let pos = |v: f64| v.is_finite() && v > 0.0;
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        check(pos(self.theta_c), "theta_c", "must be > 0");
        check(pos(self.theta_b), "theta_b", "must be > 0");
        check(self.d_c.is_finite() && self.d_c >= 1.0, "d_c", "must be >= 1");
        check(nonneg(self.alpha), "alpha", "must be >= 0");
        check(nonneg(self.beta), "beta", "must be >= 0");
        check(nonneg(self.gamma), "gamma", "must be >= 0");
        check(self.past_frames >= 2, "T", "must be >= 2");
        check(self.future_steps >= 1, "T_prime", "must be >= 1");
        check(pos(self.frame_dt), "frame_dt", "must be > 0");
        check(pos(self.sinkhorn_epsilon), "sinkhorn_epsilon", "must be > 0");
        check(self.sinkhorn_iters >= 1, "sinkhorn_iters", "must be >= 1");
        check(pos(self.sinkhorn_tol), "sinkhorn_tol", "must be > 0");
        check(pos(self.opt_lr), "opt_lr", "must be > 0");
        check(pos(self.smooth_l1_delta), "smooth_l1_delta", "must be > 0");
        check(
            nonneg(self.static_speed_threshold) && self.static_speed_threshold < SLOW_SPEED_LIMIT,
            "static_speed_threshold",
            "must be in [0, 5) m/s",
        );
        check(self.knn_k >= 1, "knn_k", "must be >= 1");
        check(self.ground_iters >= 1, "ground_iters", "must be >= 1");
        check(pos(self.ground_dist_tol), "ground_dist_tol", "must be > 0");
        out
    }
}

/// Upper speed of the "slow" evaluation bucket, m/s.
pub const SLOW_SPEED_LIMIT: f64 = 5.0;

/// Returns `cfg` unchanged when every invariant holds.
pub fn validate_config(cfg: Config) -> Result<Config> {
    let v = cfg.violations();
    if v.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::InvalidConfig(v))
    }
}
