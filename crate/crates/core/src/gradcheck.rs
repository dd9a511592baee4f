//! Central finite-difference verification of the analytic loss gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::clustering::bfs_cluster;
use crate::config::{Config, GridSpec};
use crate::error::Result;
use crate::losses::{
    loss_backward, loss_cluster, loss_forward, loss_knn, loss_sup, total_loss, CellGroups, KnnGraph, LossContext, LossParams,
    LossToggles, StackSel,
};
use crate::motion::{Direction, MotionStack};
use crate::preprocess::CellSet;

/// Value and gradients of one term at a field pair.
#[derive(Debug, Clone)]
pub struct Probe {
    pub value: f64,
    pub grad_forward: MotionStack,
    pub grad_backward: MotionStack,
}

/// Random evaluation point shared by every probe.
#[derive(Debug, Clone)]
pub struct Fixture {
    pub forward: MotionStack,
    pub backward: MotionStack,
    pub labels_forward: MotionStack,
    pub labels_backward: MotionStack,
    pub groups: CellGroups,
    pub knn: KnnGraph,
    pub params: LossParams,
}

pub type ProbeFn = Box<dyn Fn(&Fixture, &MotionStack, &MotionStack) -> Result<Probe> + Send + Sync>;

/// A named loss evaluation under test.
pub struct TermProbe {
    pub name: &'static str,
    pub eval: ProbeFn,
}

impl TermProbe {
    pub fn new(name: &'static str, eval: impl Fn(&Fixture, &MotionStack, &MotionStack) -> Result<Probe> + Send + Sync + 'static) -> Self {
        Self { name, eval: Box::new(eval) }
    }
}

fn per_stack(
    f: &MotionStack,
    b: &MotionStack,
    term: impl Fn(&MotionStack) -> Result<crate::losses::Term>,
) -> Result<Probe> {
    let tf = term(f)?;
    let tb = term(b)?;
    Ok(Probe { value: tf.value + tb.value, grad_forward: tf.grad, grad_backward: tb.grad })
}

/// Probes for every term plus the weighted total.
pub fn default_probes() -> Vec<TermProbe> {
    vec![
        TermProbe::new("L_sup", |x, f, b| {
            let tf = loss_sup(f, &x.labels_forward, x.params.delta)?;
            let tb = loss_sup(b, &x.labels_backward, x.params.delta)?;
            Ok(Probe { value: tf.value + tb.value, grad_forward: tf.grad, grad_backward: tb.grad })
        }),
        TermProbe::new("L_c", |x, f, b| per_stack(f, b, |m| loss_cluster(m, &x.groups))),
        TermProbe::new("L_f", |x, f, b| per_stack(f, b, |m| loss_forward(m, x.params.delta))),
        TermProbe::new("L_b", |x, f, b| {
            let t = loss_backward(f, b, x.params.backward_weighting, x.params.delta)?;
            Ok(Probe { value: t.value, grad_forward: t.grad_forward, grad_backward: t.grad_backward })
        }),
        TermProbe::new("L_knn", |x, f, b| per_stack(f, b, |m| loss_knn(m, &x.knn))),
        TermProbe::new("L_total", |x, f, b| {
            let ctx = LossContext {
                labels_forward: &x.labels_forward,
                labels_backward: &x.labels_backward,
                groups: Some(&x.groups),
                knn: Some(&x.knn),
            };
            let toggles = LossToggles { knn: true, ..LossToggles::full() };
            let r = total_loss(f, b, &ctx, &x.params, toggles)?;
            Ok(Probe { value: r.total, grad_forward: r.grad_forward, grad_backward: r.grad_backward })
        }),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckOptions {
    /// Evaluation points per term.
    pub points: usize,
    /// Finite-difference step, meters.
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self { points: 100, step: 1e-5, tolerance: 1e-5, seed: 0 }
    }
}

/// Below this magnitude gradient differences are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-3;

/// `|analytic - numeric| / max(|analytic|, |numeric|, GRAD_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointCheck {
    pub stack: StackSel,
    pub row: usize,
    pub col: usize,
    /// Horizon `t` (1-based).
    pub step: usize,
    pub component: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermCheck {
    pub term: &'static str,
    pub points: usize,
    pub max_relative_error: f64,
    pub passed: bool,
    /// Worst point checked.
    pub worst: Option<PointCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub step: f64,
    pub terms: Vec<TermCheck>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &TermCheck> {
        self.terms.iter().filter(|t| !t.passed)
    }
}

/// Random fixture: a few compact blobs of cells (so clusters and
/// neighbour lists are non-trivial) with random fields and labels.
pub fn random_fixture(cfg: &Config, rng: &mut ChaCha8Rng) -> Result<Fixture> {
    let grid = GridSpec::default();
    let mut idx = Vec::new();
    for blob in 0..3 {
        let (r0, c0) = (40 + 30 * blob, 60 + 20 * blob);
        for _ in 0..8 {
            let rc = (r0 + rng.random_range(0..4), c0 + rng.random_range(0..4));
            if !idx.contains(&rc) {
                idx.push(rc);
            }
        }
    }
    idx.sort_unstable();
    let cells = CellSet::from_indices(&grid, idx)?;
    let flat = cells.indices().iter().map(|&(r, c)| grid.flat(r, c));
    let steps = cfg.future_steps;
    let mut random_stack = |dir: Direction| -> Result<MotionStack> {
        let mut m = MotionStack::zeros(grid, dir, flat.clone(), steps)?;
        for k in 0..steps {
            for v in m.step_mut(k) {
                *v = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            }
        }
        Ok(m)
    };
    let forward = random_stack(Direction::Forward)?;
    let backward = random_stack(Direction::Backward)?;
    let labels_forward = random_stack(Direction::Forward)?;
    let labels_backward = random_stack(Direction::Backward)?;
    let groups = CellGroups::from_clusters(&bfs_cluster(&cells, cfg.d_c), &cells, &forward)?;
    let knn = KnnGraph::build(&cells, cfg.knn_k, &forward)?;
    Ok(Fixture { forward, backward, labels_forward, labels_backward, groups, knn, params: LossParams::from_config(cfg) })
}

fn check_term(probe: &TermProbe, cfg: &Config, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) -> Result<TermCheck> {
    let mut worst: Option<PointCheck> = None;
    for _ in 0..opts.points {
        let fx = random_fixture(cfg, rng)?;
        let analytic = (probe.eval)(&fx, &fx.forward, &fx.backward)?;
        let backward_side = rng.random_bool(0.5);
        let slot = rng.random_range(0..fx.forward.len());
        let k = rng.random_range(0..fx.forward.num_steps());
        let comp = rng.random_range(0..2);
        let eval_at = |h: f64| -> Result<f64> {
            let (mut f, mut b) = (fx.forward.clone(), fx.backward.clone());
            let target = if backward_side { &mut b } else { &mut f };
            target.step_mut(k)[slot][comp] += h;
            Ok((probe.eval)(&fx, &f, &b)?.value)
        };
        let numeric = (eval_at(opts.step)? - eval_at(-opts.step)?) / (2.0 * opts.step);
        let grad = if backward_side { &analytic.grad_backward } else { &analytic.grad_forward };
        let a = grad.step(k)[slot][comp];
        let rel = relative_error(a, numeric);
        let (row, col) = fx.forward.grid().unflat(fx.forward.cells()[slot]);
        let point = PointCheck {
            stack: if backward_side { StackSel::Backward } else { StackSel::Forward },
            row,
            col,
            step: k + 1,
            component: comp,
            analytic: a,
            numeric,
            relative_error: rel,
        };
        if worst.as_ref().is_none_or(|w| !(rel <= w.relative_error)) {
            worst = Some(point);
        }
    }
    let max = worst.as_ref().map_or(0.0, |w| w.relative_error);
    Ok(TermCheck { term: probe.name, points: opts.points, max_relative_error: max, passed: max < opts.tolerance, worst })
}

/// Checks every probe at `opts.points` random points each.
pub fn run_gradcheck(probes: &[TermProbe], cfg: &Config, opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let mut terms = Vec::with_capacity(probes.len());
    for (i, probe) in probes.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
        terms.push(check_term(probe, cfg, opts, &mut rng)?);
    }
    let passed = terms.iter().all(|t| t.passed);
    Ok(GradcheckReport { tolerance: opts.tolerance, step: opts.step, terms, passed })
}
