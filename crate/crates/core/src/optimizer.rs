//! Per-scene optimization of forward and backward motion stacks,
//! alternating pseudo-label regeneration with gradient descent.

use rayon::prelude::*;
use serde::Serialize;

use crate::clustering::{bfs_cluster, cluster_quality, ClusterQuality};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{divergence_samples, BucketedMetrics, DivergenceBin, DivergenceReport, DivergenceSample, MetricsAccumulator};
use crate::frame::SceneSequence;
use crate::losses::{total_loss, CellGroups, KnnGraph, LossContext, LossParams, LossReport, LossSummary, LossToggles};
use crate::motion::{Direction, MotionStack};
use crate::scalar::Scalar;
use crate::synth::{cell_instances, generate, SceneRecipe};
use crate::transport::{labels_from_prepared, prepare_scene, LabelMode, PreparedScene};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
/// Step halvings tried before a round gives up on further descent.
const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based outer round.
    pub round: usize,
    /// Total loss before the first step, then after each accepted step.
    pub totals: Vec<f64>,
    /// Per-term breakdown at the end of the round.
    pub summary: Option<LossSummary>,
    /// Mean L2 distance of the round's forward labels to ground truth.
    pub label_error_forward: Option<f64>,
    pub label_error_backward: Option<f64>,
    pub unconverged_solves: usize,
    pub warnings: Vec<String>,
    /// Descent stopped early because no step size decreased the loss.
    pub stalled: bool,
}

impl RoundRecord {
    pub fn final_total(&self) -> Option<f64> {
        self.totals.last().copied()
    }
}

#[derive(Debug, Clone)]
pub struct OptState<T = f64> {
    pub forward: MotionStack<T>,
    pub backward: MotionStack<T>,
    pub labels_forward: MotionStack<T>,
    pub labels_backward: MotionStack<T>,
    /// Rounds completed.
    pub round: usize,
    pub history: Vec<RoundRecord>,
    pub converged: bool,
}

/// JSON view of an [`OptState`] without the fields themselves.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptSummary {
    pub rounds: usize,
    pub converged: bool,
    pub final_total: Option<f64>,
    pub valid_cells: usize,
    pub history: Vec<RoundRecord>,
}

impl<T: Scalar> OptState<T> {
    pub fn summary(&self) -> OptSummary {
        OptSummary {
            rounds: self.round,
            converged: self.converged,
            final_total: self.history.last().and_then(RoundRecord::final_total),
            valid_cells: self.forward.len(),
            history: self.history.clone(),
        }
    }
}

/// How a scene is optimized. `Default` is the full objective with
/// barycentric labels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptOptions {
    pub toggles: LossToggles,
    pub label_mode: LabelMode,
}

impl Default for OptOptions {
    fn default() -> Self {
        Self { toggles: LossToggles::full(), label_mode: LabelMode::Barycentric }
    }
}

struct Adam<T> {
    m: [MotionStack<T>; 2],
    v: [MotionStack<T>; 2],
    t: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(forward: &MotionStack<T>, backward: &MotionStack<T>) -> Self {
        Self { m: [forward.zeros_like(), backward.zeros_like()], v: [forward.zeros_like(), backward.zeros_like()], t: 0 }
    }

    /// Updates the moments with `grads` and returns the bias-corrected
    /// descent directions.
    fn direction(&mut self, grads: [&MotionStack<T>; 2]) -> [MotionStack<T>; 2] {
        self.t += 1;
        let (b1, b2, eps) = (T::lit(BETA1), T::lit(BETA2), T::lit(ADAM_EPS));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let mut out = [grads[0].zeros_like(), grads[1].zeros_like()];
        for i in 0..2 {
            for k in 0..grads[i].num_steps() {
                let g = grads[i].step(k);
                let m = self.m[i].step_mut(k);
                for (mv, gv) in m.iter_mut().zip(g) {
                    for c in 0..2 {
                        mv[c] = b1 * mv[c] + (T::one() - b1) * gv[c];
                    }
                }
                let v = self.v[i].step_mut(k);
                for (vv, gv) in v.iter_mut().zip(g) {
                    for c in 0..2 {
                        vv[c] = b2 * vv[c] + (T::one() - b2) * gv[c] * gv[c];
                    }
                }
                let (m, v) = (self.m[i].step(k), self.v[i].step(k));
                let d = out[i].step_mut(k);
                for s in 0..d.len() {
                    for c in 0..2 {
                        d[s][c] = (m[s][c] / c1) / ((v[s][c] / c2).sqrt() + eps);
                    }
                }
            }
        }
        out
    }
}

/// Adam descent with backtracking on frozen labels. Returns the total
/// before the first step followed by the total after every accepted step,
/// so the sequence never increases. Stops early when no step size
/// decreases the loss; the flag reports that.
pub fn descend<T: Scalar>(
    forward: &mut MotionStack<T>,
    backward: &mut MotionStack<T>,
    ctx: &LossContext<'_, T>,
    params: &LossParams<T>,
    toggles: LossToggles,
    steps: usize,
    lr: f64,
) -> Result<(Vec<f64>, bool)> {
    let mut report = total_loss(forward, backward, ctx, params, toggles)?;
    let mut totals = vec![report.total.as_f64()];
    let mut adam = Adam::new(forward, backward);
    let lr = T::lit(lr);
    let mut trial = lr;
    for _ in 0..steps {
        let adam_dir = adam.direction([&report.grad_forward, &report.grad_backward]);
        let start = (trial * T::lit(2.0)).min(lr);
        let mut accepted = line_search(forward, backward, &adam_dir, report.total, start, ctx, params, toggles)?;
        if accepted.is_none() {
            // sign-like Adam steps can fail at kinks of the norm terms; fall
            // back to the gradient scaled to unit max-norm and restart the
            // moments
            let mut gmax = T::zero();
            for v in report.grad_forward.steps().iter().chain(report.grad_backward.steps()).flatten() {
                gmax = gmax.max(v[0].abs()).max(v[1].abs());
            }
            if gmax > T::zero() {
                let mut gf = report.grad_forward.clone();
                let mut gb = report.grad_backward.clone();
                gf.scale(T::one() / gmax);
                gb.scale(T::one() / gmax);
                accepted = line_search(forward, backward, &[gf, gb], report.total, start, ctx, params, toggles)?;
            }
            adam = Adam::new(forward, backward);
        }
        match accepted {
            Some((f, b, r, used)) => {
                trial = used;
                *forward = f;
                *backward = b;
                report = r;
                totals.push(report.total.as_f64());
            }
            None => return Ok((totals, true)),
        }
    }
    Ok((totals, false))
}

#[allow(clippy::too_many_arguments)]
fn line_search<T: Scalar>(
    forward: &MotionStack<T>,
    backward: &MotionStack<T>,
    dir: &[MotionStack<T>; 2],
    current: T,
    lr: T,
    ctx: &LossContext<'_, T>,
    params: &LossParams<T>,
    toggles: LossToggles,
) -> Result<Option<(MotionStack<T>, MotionStack<T>, LossReport<T>, T)>> {
    let mut scale = lr;
    for _ in 0..=MAX_HALVINGS {
        let mut f = forward.clone();
        let mut b = backward.clone();
        f.add_scaled(&dir[0], -scale);
        b.add_scaled(&dir[1], -scale);
        let r = total_loss(&f, &b, ctx, params, toggles)?;
        if r.total <= current {
            return Ok(Some((f, b, r, scale)));
        }
        scale = scale * T::lit(0.5);
    }
    Ok(None)
}

fn label_error<T: Scalar>(labels: &MotionStack<T>, gt: &MotionStack<f64>, direction: Direction) -> Option<f64> {
    if !labels.same_layout(gt) || labels.num_steps() != gt.num_steps() {
        return None;
    }
    let n = labels.len() * labels.num_steps();
    if n == 0 {
        return None;
    }
    // constant-velocity ground truth: the backward field is its negation
    let sign = match direction {
        Direction::Forward => 1.0,
        Direction::Backward => -1.0,
    };
    let mut sum = 0.0;
    for k in 0..labels.num_steps() {
        for (l, g) in labels.step(k).iter().zip(gt.step(k)) {
            sum += (l[0].as_f64() - sign * g[0]).hypot(l[1].as_f64() - sign * g[1]);
        }
    }
    Some(sum / n as f64)
}

/// Optimizes a scene from zero stacks with the default options.
pub fn optimize_scene(seq: &SceneSequence, cfg: &Config) -> Result<OptState> {
    optimize_scene_with(seq, cfg, OptOptions::default())
}

pub fn optimize_scene_with<T: Scalar>(seq: &SceneSequence, cfg: &Config, opts: OptOptions) -> Result<OptState<T>> {
    seq.require_horizon(cfg, Direction::Forward)?;
    seq.require_horizon(cfg, Direction::Backward)?;
    let prep = prepare_scene(seq, cfg)?;
    optimize_prepared(&prep, seq.ground_truth.as_ref(), cfg, opts)
}

/// Outer rounds of label regeneration (pre-warped by the current stacks)
/// followed by `opt_steps` of descent. Both stacks are always optimized;
/// the toggles only choose the loss terms.
pub fn optimize_prepared<T: Scalar>(
    prep: &PreparedScene,
    gt: Option<&MotionStack<f64>>,
    cfg: &Config,
    opts: OptOptions,
) -> Result<OptState<T>> {
    if prep.source.is_empty() {
        return Err(Error::EmptyCellSet("current frame has no non-ground cells"));
    }
    let steps = cfg.future_steps;
    let mut forward = prep.zero_stack::<T>(Direction::Forward, steps);
    let mut backward = prep.zero_stack::<T>(Direction::Backward, steps);
    let clusters = bfs_cluster(&prep.source, cfg.d_c);
    let groups = CellGroups::from_clusters(&clusters, &prep.source, &forward)?;
    let knn = if opts.toggles.knn { Some(KnnGraph::build(&prep.source, cfg.knn_k, &forward)?) } else { None };
    let params = LossParams::<T>::from_config(cfg);

    let mut state = OptState {
        labels_forward: forward.clone(),
        labels_backward: backward.clone(),
        forward: forward.clone(),
        backward: backward.clone(),
        round: 0,
        history: Vec::new(),
        converged: false,
    };
    for round in 1..=cfg.outer_rounds {
        let lf = labels_from_prepared(prep, &forward, Direction::Forward, cfg, opts.label_mode)?;
        let lb = labels_from_prepared(prep, &backward, Direction::Backward, cfg, opts.label_mode)?;
        let ctx = LossContext {
            labels_forward: &lf.labels,
            labels_backward: &lb.labels,
            groups: Some(&groups),
            knn: knn.as_ref(),
        };
        let (totals, stalled) = descend(&mut forward, &mut backward, &ctx, &params, opts.toggles, cfg.opt_steps, cfg.opt_lr)?;
        let summary = total_loss(&forward, &backward, &ctx, &params, opts.toggles)?.summary();
        let warnings = lf.diagnostics.iter().chain(&lb.diagnostics).filter_map(|d| d.warning.clone()).collect();
        state.history.push(RoundRecord {
            round,
            totals,
            summary: Some(summary),
            label_error_forward: gt.and_then(|g| label_error(&lf.labels, g, Direction::Forward)),
            label_error_backward: gt.and_then(|g| label_error(&lb.labels, g, Direction::Backward)),
            unconverged_solves: lf.unconverged() + lb.unconverged(),
            warnings,
            stalled,
        });
        state.labels_forward = lf.labels;
        state.labels_backward = lb.labels;
        state.round = round;
        state.converged = stalled;
    }
    state.forward = forward;
    state.backward = backward;
    Ok(state)
}

/// Outcome of one scene in a suite run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SceneResult {
    pub name: String,
    pub valid_cells: usize,
    pub source_cells: usize,
    pub metrics: Option<BucketedMetrics>,
    pub cluster_quality: Option<ClusterQuality>,
    pub final_total: Option<f64>,
    pub label_error_forward: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub losses: String,
    pub scenes: Vec<SceneResult>,
    /// Errors pooled over every valid cell of every scene.
    pub aggregate: Option<BucketedMetrics>,
    pub divergence_spearman: Option<f64>,
    pub divergence_bins: Vec<DivergenceBin>,
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub states: Vec<OptState>,
    pub report: SuiteReport,
    pub divergence: DivergenceReport,
}

/// Generates and optimizes every recipe (in parallel) under one toggle
/// combination and pools the metrics.
pub fn run_suite(recipes: &[SceneRecipe], cfg: &Config, toggles: LossToggles) -> Result<SuiteRun> {
    if recipes.is_empty() {
        return Err(Error::InvalidRecipe("empty recipe list".into()));
    }
    let opts = OptOptions { toggles, ..OptOptions::default() };
    let per_scene: Vec<(OptState, SceneResult, Vec<DivergenceSample>, Option<MotionStack>)> = recipes
        .par_iter()
        .map(|r| {
            let seq = generate(r, cfg)?;
            let prep = prepare_scene(&seq, cfg)?;
            let gt = seq.ground_truth.as_ref();
            let state: OptState = optimize_prepared(&prep, gt, cfg, opts)?;
            let metrics = gt.map(|g| crate::eval::bucketed_errors(&state.forward, Some(g), cfg)).transpose()?;
            let samples = gt.map(|g| divergence_samples(&state.forward, &state.backward, g)).transpose()?.unwrap_or_default();
            let quality = seq.annotations.as_ref().map(|ann| {
                let owner = cell_instances(seq.current_frame(), &ann[seq.current], &seq.grid);
                let inst: Vec<Option<usize>> = prep.source.indices().iter().map(|&(r, c)| owner[seq.grid.flat(r, c)]).collect();
                cluster_quality(&bfs_cluster(&prep.source, cfg.d_c), &inst)
            });
            let result = SceneResult {
                name: r.name.clone(),
                valid_cells: state.forward.len(),
                source_cells: prep.source.len(),
                metrics,
                cluster_quality: quality,
                final_total: state.history.last().and_then(RoundRecord::final_total),
                label_error_forward: state.history.iter().map(|h| h.label_error_forward).collect(),
            };
            Ok((state, result, samples, seq.ground_truth))
        })
        .collect::<Result<_>>()?;

    let mut acc = MetricsAccumulator::new();
    let mut any_gt = false;
    let mut states = Vec::with_capacity(per_scene.len());
    let mut scenes = Vec::with_capacity(per_scene.len());
    let mut samples = Vec::new();
    for (state, result, s, gt) in per_scene {
        if let Some(g) = gt {
            acc.add(&state.forward, &g, cfg)?;
            any_gt = true;
        }
        samples.extend(s);
        states.push(state);
        scenes.push(result);
    }
    let divergence = DivergenceReport::from_samples(samples);
    let report = SuiteReport {
        losses: toggles.label(),
        scenes,
        aggregate: any_gt.then(|| acc.finish()),
        divergence_spearman: divergence.spearman,
        divergence_bins: divergence.bins.clone(),
    };
    Ok(SuiteRun { states, report, divergence })
}
