//! Synthetic LiDAR-like sequences with exact ground-truth BEV motion.
//!
//! Objects are rigid boxes translating at constant velocity; their points
//! are sampled once in the body frame and carried along, then each frame
//! adds sensor noise, random dropout and angular occlusion.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::{Config, GridSpec};
use crate::error::{Error, Result};
use crate::frame::{frames_per_side, PointFrame, SceneSequence, LABEL_GROUND};
use crate::motion::{Direction, MotionStack};
use crate::preprocess::{extract_cells, voxelize};

/// Object points start this far above the ground plane (wheels, bumpers).
pub const OBJECT_CLEARANCE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    /// Footprint extent along the heading, meters.
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Footprint center at the current frame.
    pub x: f64,
    pub y: f64,
    /// Radians from +X.
    pub heading: f64,
    /// m/s.
    pub velocity: [f64; 2],
    /// Points per m² of footprint.
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub z: f64,
    /// Points per m²; zero disables the ground.
    pub density: f64,
    pub z_noise: f64,
}

/// Points at bearings in `[start, end]` (radians, shifted by `drift` per
/// frame offset) and farther than `min_range` are removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcclusionSector {
    pub start: f64,
    pub end: f64,
    pub min_range: f64,
    pub drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneRecipe {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub ground: GroundSpec,
    /// Isotropic per-point noise std, meters.
    pub sensor_noise: f64,
    /// Per-point drop probability in each frame.
    pub dropout: f64,
    pub occlusions: Vec<OcclusionSector>,
    pub seed: u64,
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRecipe(format!("{}: {m}", self.name)));
        for (i, o) in self.objects.iter().enumerate() {
            let finite = [o.length, o.width, o.height, o.x, o.y, o.heading, o.velocity[0], o.velocity[1], o.density]
                .iter()
                .all(|v| v.is_finite());
            if !finite {
                return bad(format!("object {i} has non-finite fields"));
            }
            if o.length <= 0.0 || o.width <= 0.0 {
                return bad(format!("object {i} footprint must be positive"));
            }
            if o.height <= OBJECT_CLEARANCE {
                return bad(format!("object {i} height must exceed {OBJECT_CLEARANCE} m"));
            }
            if o.density <= 0.0 {
                return bad(format!("object {i} density must be > 0"));
            }
        }
        let g = &self.ground;
        if !(g.density.is_finite() && g.density >= 0.0 && g.z.is_finite() && g.z_noise.is_finite() && g.z_noise >= 0.0) {
            return bad("ground density, z and z_noise must be finite and non-negative".into());
        }
        if g.density > 0.0 && !(g.x_range[1] > g.x_range[0] && g.y_range[1] > g.y_range[0]) {
            return bad("ground extent must be positive".into());
        }
        if !(self.sensor_noise.is_finite() && self.sensor_noise >= 0.0) {
            return bad("sensor_noise must be >= 0".into());
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return bad("dropout must be in [0, 1)".into());
        }
        if self.occlusions.iter().any(|s| ![s.start, s.end, s.min_range, s.drift].iter().all(|v| v.is_finite())) {
            return bad("occlusion sectors must be finite".into());
        }
        if self.objects.is_empty() && g.density == 0.0 {
            return Err(Error::DegenerateScene(format!("{}: no objects and no ground", self.name)));
        }
        Ok(())
    }
}

fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    a - t * ((a + std::f64::consts::PI) / t).floor()
}

fn occluded(sectors: &[OcclusionSector], offset: isize, x: f64, y: f64) -> bool {
    let range = x.hypot(y);
    let bearing = y.atan2(x);
    sectors.iter().any(|s| {
        if range <= s.min_range {
            return false;
        }
        let shift = s.drift * offset as f64;
        let lo = wrap_angle(s.start + shift);
        let width = s.end - s.start;
        let rel = wrap_angle(bearing - lo);
        let rel = if rel < 0.0 { rel + std::f64::consts::TAU } else { rel };
        rel <= width
    })
}

/// Generates on the default 256 x 256 grid.
pub fn generate(recipe: &SceneRecipe, cfg: &Config) -> Result<SceneSequence> {
    generate_on(recipe, cfg, GridSpec::default())
}

/// `2 * max(T - 1, T') + 1` frames centered on the current frame, with
/// forward ground truth over the current frame's occupied cells.
pub fn generate_on(recipe: &SceneRecipe, cfg: &Config, grid: GridSpec) -> Result<SceneSequence> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let ground_z = recipe.ground.z;

    // body-frame samples, fixed for the whole sequence
    let bodies: Vec<Vec<[f64; 3]>> = recipe
        .objects
        .iter()
        .map(|o| {
            let n = ((o.density * o.length * o.width).round() as usize).max(1);
            let (sin, cos) = o.heading.sin_cos();
            (0..n)
                .map(|_| {
                    let u = rng.random_range(-0.5..0.5) * o.length;
                    let v = rng.random_range(-0.5..0.5) * o.width;
                    let z = ground_z + rng.random_range(OBJECT_CLEARANCE..o.height);
                    [u * cos - v * sin, u * sin + v * cos, z]
                })
                .collect()
        })
        .collect();

    let g = &recipe.ground;
    let ground_n = (g.density * (g.x_range[1] - g.x_range[0]) * (g.y_range[1] - g.y_range[0])).round() as usize;
    let z_noise = Normal::new(0.0, g.z_noise).map_err(|e| Error::InvalidRecipe(e.to_string()))?;
    let ground_pts: Vec<[f64; 3]> = (0..ground_n)
        .map(|_| {
            [
                rng.random_range(g.x_range[0]..g.x_range[1]),
                rng.random_range(g.y_range[0]..g.y_range[1]),
                ground_z + z_noise.sample(&mut rng),
            ]
        })
        .collect();

    let noise = Normal::new(0.0, recipe.sensor_noise).map_err(|e| Error::InvalidRecipe(e.to_string()))?;
    let side = frames_per_side(cfg);
    let current = side;
    let mut frames = Vec::with_capacity(2 * side + 1);
    let mut annotations = Vec::with_capacity(2 * side + 1);
    for k in 0..=2 * side {
        let offset = k as isize - current as isize;
        let tau = offset as f64 * cfg.frame_dt;
        let mut points = Vec::new();
        let mut labels = Vec::new();
        let mut emit = |p: [f64; 3], label: i32, rng: &mut ChaCha8Rng| {
            let q = [p[0] + noise.sample(rng), p[1] + noise.sample(rng), p[2] + noise.sample(rng)];
            let dropped = rng.random::<f64>() < recipe.dropout;
            if !dropped && !occluded(&recipe.occlusions, offset, q[0], q[1]) {
                points.push([q[0] as f32, q[1] as f32, q[2] as f32]);
                labels.push(label);
            }
        };
        for (i, (o, body)) in recipe.objects.iter().zip(&bodies).enumerate() {
            let cx = o.x + o.velocity[0] * tau;
            let cy = o.y + o.velocity[1] * tau;
            for b in body {
                emit([cx + b[0], cy + b[1], b[2]], i as i32, &mut rng);
            }
        }
        for p in &ground_pts {
            emit(*p, LABEL_GROUND, &mut rng);
        }
        frames.push(PointFrame::new(tau, points));
        annotations.push(labels);
    }

    let gt = ground_truth(&frames[current], &annotations[current], &recipe.objects, &grid, cfg)?;
    let seq = SceneSequence {
        grid,
        frame_dt: cfg.frame_dt,
        frames,
        current,
        ground_truth: Some(gt),
        annotations: Some(annotations),
    };
    seq.validate()?;
    Ok(seq)
}

/// Instance owning each occupied cell of `frame`: the lowest object id with
/// a point in the cell, `None` for ground-only cells.
pub fn cell_instances(frame: &PointFrame, labels: &[i32], grid: &GridSpec) -> Vec<Option<usize>> {
    let mut owner: Vec<Option<usize>> = vec![None; grid.num_cells()];
    for (p, &l) in frame.points.iter().zip(labels) {
        if l < 0 {
            continue;
        }
        let (x, y, z) = (p[0] as f64, p[1] as f64, p[2] as f64);
        if let (Some((r, c)), Some(_)) = (grid.cell_of(x, y), grid.channel_of(z)) {
            let o = &mut owner[grid.flat(r, c)];
            *o = Some(o.map_or(l as usize, |cur: usize| cur.min(l as usize)));
        }
    }
    owner
}

fn ground_truth(frame: &PointFrame, labels: &[i32], objects: &[ObjectSpec], grid: &GridSpec, cfg: &Config) -> Result<MotionStack<f64>> {
    let cells = extract_cells(&voxelize(frame, grid));
    let owner = cell_instances(frame, labels, grid);
    let mut gt = MotionStack::zeros(*grid, Direction::Forward, cells.indices().iter().map(|&(r, c)| grid.flat(r, c)), cfg.future_steps)?;
    let flat: Vec<usize> = gt.cells().to_vec();
    for k in 0..cfg.future_steps {
        let span = (k + 1) as f64 * cfg.frame_dt;
        let step = gt.step_mut(k);
        for (s, &c) in flat.iter().enumerate() {
            if let Some(i) = owner[c] {
                let v = objects[i].velocity;
                step[s] = [span * v[0], span * v[1]];
            }
        }
    }
    Ok(gt)
}

fn car(x: f64, y: f64, heading: f64, speed: f64) -> ObjectSpec {
    moving(4.4, 1.8, 1.6, x, y, heading, speed, 16.0)
}

#[allow(clippy::too_many_arguments)]
fn moving(length: f64, width: f64, height: f64, x: f64, y: f64, heading: f64, speed: f64, density: f64) -> ObjectSpec {
    let (s, c) = heading.sin_cos();
    ObjectSpec { length, width, height, x, y, heading, velocity: [speed * c, speed * s], density }
}

fn ground(half: f64, density: f64) -> GroundSpec {
    GroundSpec { x_range: [-half, half], y_range: [-half, half], z: -1.6, density, z_noise: 0.03 }
}

/// Kinds of object placed by the suites: (length, width, height, density).
const TRUCK: (f64, f64, f64, f64) = (7.5, 2.5, 3.0, 10.0);
const PEDESTRIAN: (f64, f64, f64, f64) = (0.6, 0.6, 1.7, 40.0);
const CYCLIST: (f64, f64, f64, f64) = (1.8, 0.6, 1.6, 30.0);
const WALL: (f64, f64, f64, f64) = (9.0, 0.4, 2.2, 25.0);
const POLE: (f64, f64, f64, f64) = (0.3, 0.3, 3.0, 60.0);

struct Placer {
    /// Swept footprints: segment endpoints plus radius.
    taken: Vec<([f64; 2], [f64; 2], f64)>,
}

fn segment_distance(a0: [f64; 2], a1: [f64; 2], b0: [f64; 2], b1: [f64; 2]) -> f64 {
    fn point_seg(p: [f64; 2], s0: [f64; 2], s1: [f64; 2]) -> f64 {
        let d = [s1[0] - s0[0], s1[1] - s0[1]];
        let len2 = d[0] * d[0] + d[1] * d[1];
        let t = if len2 == 0.0 { 0.0 } else { (((p[0] - s0[0]) * d[0] + (p[1] - s0[1]) * d[1]) / len2).clamp(0.0, 1.0) };
        (p[0] - s0[0] - t * d[0]).hypot(p[1] - s0[1] - t * d[1])
    }
    // segments here never cross without also coming close at an endpoint
    // for the separations we ask for, so endpoint distances suffice
    point_seg(a0, b0, b1).min(point_seg(a1, b0, b1)).min(point_seg(b0, a0, a1)).min(point_seg(b1, a0, a1))
}

impl Placer {
    fn try_place(&mut self, o: &ObjectSpec, horizon: f64, gap: f64) -> bool {
        let r = 0.5 * o.length.hypot(o.width);
        let a0 = [o.x - o.velocity[0] * horizon, o.y - o.velocity[1] * horizon];
        let a1 = [o.x + o.velocity[0] * horizon, o.y + o.velocity[1] * horizon];
        for &(b0, b1, rb) in &self.taken {
            // crossing paths: also reject if the midpoints are close
            let crossing = segment_distance(a0, a1, b0, b1);
            if crossing < r + rb + gap {
                return false;
            }
        }
        self.taken.push((a0, a1, r));
        true
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, xs: &[T]) -> T {
    xs[rng.random_range(0..xs.len())]
}

fn place(rng: &mut ChaCha8Rng, placer: &mut Placer, make: &dyn Fn(&mut ChaCha8Rng) -> ObjectSpec, extent: f64, horizon: f64) -> Option<ObjectSpec> {
    for _ in 0..200 {
        let mut o = make(rng);
        o.x = rng.random_range(-extent..extent);
        o.y = rng.random_range(-extent..extent);
        if placer.try_place(&o, horizon, 4.0) {
            return Some(o);
        }
    }
    None
}

fn kind(k: (f64, f64, f64, f64), heading: f64, speed: f64) -> ObjectSpec {
    moving(k.0, k.1, k.2, 0.0, 0.0, heading, speed, k.3)
}

fn random_scene(name: String, seed: u64, primary_speed: f64, heavy_occlusion: bool) -> SceneRecipe {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EE_D0F5_CE4E);
    let mut placer = Placer { taken: Vec::new() };
    let horizon = 1.0;
    let extent = 13.0;
    let mut objects = Vec::new();

    let primary = move |rng: &mut ChaCha8Rng| {
        let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        if rng.random_bool(0.25) {
            kind(TRUCK, h, primary_speed)
        } else {
            car(0.0, 0.0, h, primary_speed)
        }
    };
    objects.extend(place(&mut rng, &mut placer, &primary, extent, horizon));

    let extra_moving = rng.random_range(1..=2);
    for _ in 0..extra_moving {
        let mk = |rng: &mut ChaCha8Rng| {
            let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            match rng.random_range(0..4) {
                0 => kind(PEDESTRIAN, h, pick(rng, &[0.0, 2.0])),
                1 => kind(CYCLIST, h, pick(rng, &[2.0, 4.0, 6.0])),
                _ => car(0.0, 0.0, h, pick(rng, &[0.0, 2.0, 4.0, 6.0, 8.0, 10.0])),
            }
        };
        objects.extend(place(&mut rng, &mut placer, &mk, extent, horizon));
    }

    let statics = rng.random_range(2..=4);
    for _ in 0..statics {
        let mk = |rng: &mut ChaCha8Rng| {
            let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            match rng.random_range(0..3) {
                0 => kind(WALL, h, 0.0),
                1 => kind(POLE, h, 0.0),
                _ => car(0.0, 0.0, h, 0.0),
            }
        };
        objects.extend(place(&mut rng, &mut placer, &mk, extent, horizon));
    }

    let sectors = if heavy_occlusion { rng.random_range(2..=3) } else { rng.random_range(1..=2) };
    let occlusions = (0..sectors)
        .map(|_| {
            let start = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let width = if heavy_occlusion { rng.random_range(0.5..0.9) } else { rng.random_range(0.2..0.5) };
            OcclusionSector { start, end: start + width, min_range: rng.random_range(6.0..10.0), drift: rng.random_range(-0.06..0.06) }
        })
        .collect();

    SceneRecipe {
        name,
        objects,
        ground: ground(18.0, 1.0),
        sensor_noise: rng.random_range(0.02..0.04),
        dropout: if heavy_occlusion { rng.random_range(0.15..0.25) } else { rng.random_range(0.05..0.12) },
        occlusions,
        seed,
    }
}

fn smoke() -> Vec<SceneRecipe> {
    let walls = || {
        vec![
            kind(WALL, 0.0, 0.0).at(-8.0, 9.0),
            kind(POLE, 0.0, 0.0).at(6.0, -7.0),
        ]
    };
    let mut static_objects = walls();
    static_objects.push(car(5.0, 4.0, 0.3, 0.0));
    let mut slow = walls();
    slow.push(car(-3.0, -2.0, 0.0, 2.0));
    let mut fast = walls();
    fast.push(car(-6.0, -3.0, 0.0, 8.0));
    fast.push(kind(PEDESTRIAN, 1.2, 2.0).at(4.0, 5.0));
    let base = |name: &str, objects: Vec<ObjectSpec>, seed: u64| SceneRecipe {
        name: name.to_string(),
        objects,
        ground: ground(13.0, 1.5),
        sensor_noise: 0.02,
        dropout: 0.05,
        occlusions: vec![OcclusionSector { start: 2.2, end: 2.5, min_range: 8.0, drift: 0.02 }],
        seed,
    };
    vec![base("smoke-static", static_objects, 11), base("smoke-slow", slow, 12), base("smoke-fast", fast, 13)]
}

impl ObjectSpec {
    fn at(mut self, x: f64, y: f64) -> Self {
        self.x = x;
        self.y = y;
        self
    }
}

/// Fixed benchmark scene lists: `smoke` (3 scenes), `ablation` (20) and
/// `divergence` (10, heavy occlusion).
pub fn recipe_suite(name: &str) -> Result<Vec<SceneRecipe>> {
    const SPEEDS: [f64; 5] = [2.0, 4.0, 6.0, 8.0, 10.0];
    match name {
        "smoke" => Ok(smoke()),
        "ablation" => Ok((0..20)
            .map(|i| random_scene(format!("ablation-{i:02}"), 1000 + i as u64, SPEEDS[i % SPEEDS.len()], false))
            .collect()),
        "divergence" => Ok((0..10)
            .map(|i| random_scene(format!("divergence-{i:02}"), 2000 + i as u64, SPEEDS[(i + 2) % SPEEDS.len()], true))
            .collect()),
        other => Err(Error::UnknownSuite(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(velocity: [f64; 2]) -> SceneRecipe {
        SceneRecipe {
            name: "one".into(),
            objects: vec![ObjectSpec { length: 2.0, width: 1.0, height: 1.5, x: 0.0, y: 0.0, heading: 0.0, velocity, density: 20.0 }],
            ground: GroundSpec { x_range: [-5.0, 5.0], y_range: [-5.0, 5.0], z: -1.6, density: 0.0, z_noise: 0.0 },
            sensor_noise: 0.0,
            dropout: 0.0,
            occlusions: vec![],
            seed: 3,
        }
    }

    #[test]
    fn constant_velocity_gt() {
        let seq = generate(&single([8.0, 0.0]), &Config::default()).unwrap();
        let gt = seq.ground_truth.as_ref().unwrap();
        assert!(!gt.is_empty());
        for &v in gt.step(4) {
            assert_eq!(v, [8.0, 0.0]);
        }
        assert_eq!(seq.frames.len(), 11);
        assert_eq!(seq.current, 5);
    }

    #[test]
    fn static_scene_gt_zero() {
        let seq = generate(&single([0.0, 0.0]), &Config::default()).unwrap();
        assert!(seq.ground_truth.unwrap().steps().iter().flatten().all(|v| *v == [0.0, 0.0]));
    }

    #[test]
    fn degenerate_recipe() {
        let mut r = single([0.0, 0.0]);
        r.objects.clear();
        assert!(matches!(generate(&r, &Config::default()), Err(Error::DegenerateScene(_))));
        let mut r = single([0.0, 0.0]);
        r.dropout = 1.0;
        assert!(matches!(generate(&r, &Config::default()), Err(Error::InvalidRecipe(_))));
    }

    #[test]
    fn occlusion_sector_wraps() {
        let s = [OcclusionSector { start: 3.0, end: 3.5, min_range: 1.0, drift: 0.0 }];
        assert!(occluded(&s, 0, -5.0, -0.1));
        assert!(!occluded(&s, 0, 5.0, 0.0));
        assert!(!occluded(&s, 0, -0.5, 0.0));
    }

    #[test]
    fn suites() {
        assert_eq!(recipe_suite("smoke").unwrap().len(), 3);
        assert_eq!(recipe_suite("ablation").unwrap().len(), 20);
        assert_eq!(recipe_suite("divergence").unwrap().len(), 10);
        assert!(matches!(recipe_suite("nope"), Err(Error::UnknownSuite(_))));
        for r in recipe_suite("ablation").unwrap() {
            for o in &r.objects {
                let speed = o.velocity[0].hypot(o.velocity[1]);
                assert!([0.0, 2.0, 4.0, 6.0, 8.0, 10.0].iter().any(|s| (s - speed).abs() < 1e-9), "{speed}");
            }
        }
    }
}
