//! Optimal-transport matching between BEV cell sets and the pseudo motion
//! labels derived from it.
//!
//! Source cells of the current frame (optionally shifted by the current
//! motion estimate) are coupled to the non-empty cells of a future or past
//! frame under uniform marginals. The cost between two cells is
//! `1 - exp(-|b_i - b_j|^2 / theta_c)`; the coupling is the entropic optimum
//! found by Sinkhorn scaling, and each source cell's label is the
//! barycenter of its coupled targets minus its own position.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Config, GridSpec};
use crate::error::{Error, Result};
use crate::frame::SceneSequence;
use crate::motion::{Direction, MotionStack};
use crate::preprocess::{extract_cells, remove_ground, voxelize, CellSet};
use crate::scalar::Scalar;

/// Pairwise matching cost, row-major `rows x cols`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T = f64> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    theta_c: T,
}

impl<T: Scalar> CostMatrix<T> {
    /// Wraps precomputed costs. Entries must be finite.
    pub fn from_values(rows: usize, cols: usize, values: Vec<T>, theta_c: T) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::EmptyCellSet("cost matrix"));
        }
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} costs for {rows}x{cols}", values.len())));
        }
        Ok(Self { rows, cols, values, theta_c })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn theta_c(&self) -> T {
        self.theta_c
    }
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// `C_ij = 1 - exp(-|s_i - t_j|^2 / theta_c)`.
pub fn cost_matrix<T: Scalar>(source: &[[T; 2]], target: &[[T; 2]], theta_c: T) -> Result<CostMatrix<T>> {
    if source.is_empty() {
        return Err(Error::EmptyCellSet("cost matrix source"));
    }
    if target.is_empty() {
        return Err(Error::EmptyCellSet("cost matrix target"));
    }
    let mut values = Vec::with_capacity(source.len() * target.len());
    for s in source {
        for t in target {
            let dx = s[0] - t[0];
            let dy = s[1] - t[1];
            // -expm1 keeps C exactly zero at coincidence and accurate nearby
            values.push(-(-(dx * dx + dy * dy) / theta_c).exp_m1());
        }
    }
    Ok(CostMatrix { rows: source.len(), cols: target.len(), values, theta_c })
}

/// Entropic transport plan with uniform marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan<T = f64> {
    rows: usize,
    cols: usize,
    values: Vec<T>,
    pub epsilon: T,
    pub iterations: usize,
    pub converged: bool,
    /// Largest absolute deviation of any row or column sum from its target.
    pub marginal_error: T,
}

impl<T: Scalar> TransportPlan<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn get(&self, i: usize, j: usize) -> T {
        self.values[i * self.cols + j]
    }
    pub fn row(&self, i: usize) -> &[T] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row_sums(&self) -> Vec<T> {
        (0..self.rows).map(|i| self.row(i).iter().copied().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.cols];
        for i in 0..self.rows {
            for (o, &v) in out.iter_mut().zip(self.row(i)) {
                *o = *o + v;
            }
        }
        out
    }

    /// Transport cost `sum_ij C_ij P_ij`.
    pub fn cost(&self, cost: &CostMatrix<T>) -> T {
        self.values.iter().zip(&cost.values).map(|(&p, &c)| p * c).sum()
    }
}

/// Scalings are folded into the potentials once their log exceeds this.
const LN_ABSORB: f64 = 13.8; // ~ln(1e6)

fn log_sum_exp<T: Scalar>(it: impl Iterator<Item = T> + Clone) -> T {
    let mx = it.clone().fold(T::neg_infinity(), T::max);
    if mx == T::neg_infinity() {
        return mx;
    }
    mx + it.map(|x| (x - mx).exp()).sum::<T>().ln()
}

struct Kernel<'a, T> {
    cost: &'a CostMatrix<T>,
    eps: T,
    f: Vec<T>,
    g: Vec<T>,
    k: Vec<T>,
}

impl<'a, T: Scalar> Kernel<'a, T> {
    fn rebuild(&mut self) {
        let (m, eps) = (self.cost.cols, self.eps);
        for (i, row) in self.k.chunks_mut(m).enumerate() {
            let fi = self.f[i];
            for (j, kij) in row.iter_mut().enumerate() {
                *kij = ((fi + self.g[j] - self.cost.values[i * m + j]) / eps).exp();
            }
        }
    }

    fn absorb(&mut self, u: &mut [T], v: &mut [T]) {
        for (f, u) in self.f.iter_mut().zip(u.iter_mut()) {
            *f = *f + self.eps * u.ln();
            *u = T::one();
        }
        for (g, v) in self.g.iter_mut().zip(v.iter_mut()) {
            *g = *g + self.eps * v.ln();
            *v = T::one();
        }
        self.rebuild();
    }

    /// Exact log-domain row update: rows of the plan sum to `a`.
    fn log_rows(&mut self, a: T) {
        let (m, eps) = (self.cost.cols, self.eps);
        for i in 0..self.cost.rows {
            let row = &self.cost.values[i * m..(i + 1) * m];
            let lse = log_sum_exp(row.iter().zip(&self.g).map(|(&c, &g)| (g - c) / eps));
            self.f[i] = eps * a.ln() - eps * lse;
        }
    }

    /// Exact log-domain column update: columns of the plan sum to `b`.
    fn log_cols(&mut self, b: T) {
        let (m, eps) = (self.cost.cols, self.eps);
        for j in 0..m {
            let col = (0..self.cost.rows).map(|i| (self.f[i] - self.cost.values[i * m + j]) / eps);
            self.g[j] = eps * b.ln() - eps * log_sum_exp(col);
        }
    }

    fn row_products(&self, v: &[T], out: &mut [T]) {
        for (o, row) in out.iter_mut().zip(self.k.chunks(self.cost.cols)) {
            *o = row.iter().zip(v).map(|(&k, &v)| k * v).sum();
        }
    }

    fn col_products(&self, u: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (row, &ui) in self.k.chunks(self.cost.cols).zip(u) {
            for (o, &k) in out.iter_mut().zip(row) {
                *o = *o + k * ui;
            }
        }
    }
}

fn usable<T: Scalar>(x: T) -> bool {
    x.is_finite() && x > T::zero() && x.is_normal()
}

/// Entropic OT with uniform marginals `1/rows` and `1/cols`.
///
/// Alternating row/column scaling of `exp(-C/epsilon)`, carried on top of
/// log-domain dual potentials: scalings are absorbed into the potentials
/// whenever they drift far from one, and any update that would underflow
/// is redone as an exact log-sum-exp update. Stops when every row sum is
/// within `tol` of `1/rows` (columns are exact after each column update)
/// or after `max_iters` iterations with `converged = false`.
pub fn sinkhorn<T: Scalar>(cost: &CostMatrix<T>, epsilon: T, max_iters: usize, tol: T) -> Result<TransportPlan<T>> {
    if cost.values.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("cost matrix".into()));
    }
    if !(epsilon.is_finite() && epsilon > T::zero()) {
        return Err(Error::NonFinite(format!("sinkhorn epsilon {epsilon}")));
    }
    let (n, m) = (cost.rows, cost.cols);
    let a = T::one() / T::lit(n as f64);
    let b = T::one() / T::lit(m as f64);

    let mut ker = Kernel { cost, eps: epsilon, f: vec![T::zero(); n], g: vec![T::zero(); m], k: vec![T::zero(); n * m] };
    ker.log_rows(a);
    ker.rebuild();

    let mut u = vec![T::one(); n];
    let mut v = vec![T::one(); m];
    let mut rs = vec![T::zero(); n];
    let mut cs = vec![T::zero(); m];
    let ln_absorb = T::lit(LN_ABSORB);
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        iterations += 1;

        ker.col_products(&u, &mut cs);
        if cs.iter().all(|&s| usable(s)) {
            v.iter_mut().zip(&cs).for_each(|(v, &s)| *v = b / s);
        } else {
            ker.absorb(&mut u, &mut v);
            ker.log_cols(b);
            ker.rebuild();
        }

        ker.row_products(&v, &mut rs);
        let err = u.iter().zip(&rs).map(|(&u, &r)| (u * r - a).abs()).fold(T::zero(), T::max);
        if err.is_nan() {
            return Err(Error::NonFinite("sinkhorn row marginals".into()));
        }
        if err < tol {
            converged = true;
            break;
        }
        if rs.iter().all(|&s| usable(s)) {
            u.iter_mut().zip(&rs).for_each(|(u, &s)| *u = a / s);
        } else {
            ker.absorb(&mut u, &mut v);
            ker.log_rows(a);
            ker.rebuild();
        }

        let drift = u.iter().chain(&v).map(|x| x.ln().abs()).fold(T::zero(), T::max);
        if !(drift <= ln_absorb) {
            ker.absorb(&mut u, &mut v);
        }
    }

    let mut values = ker.k;
    for (row, &ui) in values.chunks_mut(m).zip(&u) {
        for (p, &vj) in row.iter_mut().zip(&v) {
            *p = ui * *p * vj;
        }
    }
    if values.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("transport plan".into()));
    }
    let mut plan = TransportPlan { rows: n, cols: m, values, epsilon, iterations, converged, marginal_error: T::zero() };
    let row_err = plan.row_sums().into_iter().map(|s| (s - a).abs()).fold(T::zero(), T::max);
    let col_err = plan.col_sums().into_iter().map(|s| (s - b).abs()).fold(T::zero(), T::max);
    plan.marginal_error = row_err.max(col_err);
    Ok(plan)
}

/// How a plan row is turned into a target position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Row-normalized barycenter of the coupled targets.
    #[default]
    Barycentric,
    /// The plan row applied to target coordinates as-is (rows sum to
    /// `1/N`, so positions are scaled by `1/N`).
    RawProduct,
}

/// Per-source displacement `target_position(i) - source_i`.
pub fn pseudo_labels<T: Scalar>(plan: &TransportPlan<T>, source: &CellSet, target: &CellSet, mode: LabelMode) -> Result<Vec<[T; 2]>> {
    if plan.rows != source.len() || plan.cols != target.len() {
        return Err(Error::ShapeMismatch(format!(
            "plan {}x{} for {} sources and {} targets",
            plan.rows,
            plan.cols,
            source.len(),
            target.len()
        )));
    }
    let tgt: Vec<[T; 2]> = target.coords().iter().map(|c| [T::lit(c[0]), T::lit(c[1])]).collect();
    source
        .coords()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let row = plan.row(i);
            let mut acc = [T::zero(); 2];
            let mut mass = T::zero();
            for (&p, t) in row.iter().zip(&tgt) {
                acc[0] = acc[0] + p * t[0];
                acc[1] = acc[1] + p * t[1];
                mass = mass + p;
            }
            let pos = match mode {
                LabelMode::Barycentric => {
                    if !(mass > T::zero()) {
                        return Err(Error::ZeroRow(i));
                    }
                    [acc[0] / mass, acc[1] / mass]
                }
                LabelMode::RawProduct => acc,
            };
            Ok([pos[0] - T::lit(s[0]), pos[1] - T::lit(s[1])])
        })
        .collect()
}

/// Source coordinates shifted by `prediction` at step `k` (0-based).
pub fn prewarp<T: Scalar>(source: &CellSet, prediction: &MotionStack<T>, k: usize) -> Result<Vec<[T; 2]>> {
    if k >= prediction.num_steps() {
        return Err(Error::ShapeMismatch(format!("step {k} of a {}-step prediction", prediction.num_steps())));
    }
    let step = prediction.step(k);
    source
        .indices()
        .iter()
        .zip(source.coords())
        .map(|(&(r, c), xy)| {
            let s = prediction
                .slot_of(r, c)
                .ok_or_else(|| Error::ShapeMismatch(format!("prediction does not cover cell ({r}, {c})")))?;
            Ok([T::lit(xy[0]) + step[s][0], T::lit(xy[1]) + step[s][1]])
        })
        .collect()
}

/// Cell sets of a scene, computed once and reused across label rounds.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub grid: GridSpec,
    /// Current-frame occupied cells before ground removal (flat indices):
    /// the validity mask of every motion stack of the scene.
    pub mask_cells: Vec<usize>,
    /// Current-frame non-ground cells: matching sources.
    pub source: CellSet,
    /// Non-ground cells of frames `+1..` after the current one.
    pub forward_targets: Vec<CellSet>,
    /// Non-ground cells of frames `-1..` before the current one.
    pub backward_targets: Vec<CellSet>,
}

fn frame_seed(cfg: &Config, offset: isize) -> u64 {
    cfg.rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(offset as i64 as u64)
}

/// Ground removal, voxelization and cell extraction for the current frame
/// and up to `T'` frames on each side.
pub fn prepare_scene(seq: &SceneSequence, cfg: &Config) -> Result<PreparedScene> {
    seq.validate()?;
    let cells_of = |offset: isize| -> Option<CellSet> {
        let frame = seq.frame_at(offset)?;
        let (kept, _) = remove_ground(frame, cfg.ground_iters, cfg.ground_dist_tol, frame_seed(cfg, offset));
        Some(extract_cells(&voxelize(&kept, &seq.grid)))
    };
    let raw = extract_cells(&voxelize(seq.current_frame(), &seq.grid));
    let mask_cells = raw.indices().iter().map(|&(r, c)| seq.grid.flat(r, c)).collect();
    let horizon = cfg.future_steps as isize;
    let collect = |sign: isize| -> Vec<CellSet> {
        let sets: Vec<Option<CellSet>> = (1..=horizon).into_par_iter().map(|t| cells_of(sign * t)).collect();
        sets.into_iter().map_while(|s| s).collect()
    };
    let source = cells_of(0).expect("current frame exists");
    let forward_targets = collect(1);
    let backward_targets = collect(-1);
    Ok(PreparedScene { grid: seq.grid, mask_cells, source, forward_targets, backward_targets })
}

impl PreparedScene {
    pub fn targets(&self, direction: Direction) -> &[CellSet] {
        match direction {
            Direction::Forward => &self.forward_targets,
            Direction::Backward => &self.backward_targets,
        }
    }

    /// Zero stack over the scene's validity mask.
    pub fn zero_stack<T: Scalar>(&self, direction: Direction, num_steps: usize) -> MotionStack<T> {
        MotionStack::zeros(self.grid, direction, self.mask_cells.iter().copied(), num_steps)
            .expect("mask cells come from the scene grid")
    }
}

/// Solver outcome for one label step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    /// Horizon `t` (1-based).
    pub step: usize,
    pub source_cells: usize,
    pub target_cells: usize,
    pub iterations: usize,
    pub converged: bool,
    pub marginal_error: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PseudoLabels<T = f64> {
    pub labels: MotionStack<T>,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl<T> PseudoLabels<T> {
    pub fn unconverged(&self) -> usize {
        self.diagnostics.iter().filter(|d| !d.converged && d.warning.is_none()).count()
    }
}

/// Pseudo labels for every step of `direction`, pre-warping the sources by
/// `prediction`. Cells removed as ground, and every cell of a step whose
/// source or target set is empty, get a zero label.
pub fn labels_from_prepared<T: Scalar>(
    prep: &PreparedScene,
    prediction: &MotionStack<T>,
    direction: Direction,
    cfg: &Config,
    mode: LabelMode,
) -> Result<PseudoLabels<T>> {
    let steps = cfg.future_steps;
    let mut labels = prep.zero_stack::<T>(direction, steps);
    labels.check_layout(prediction, "pre-warp prediction")?;
    let targets = prep.targets(direction);
    if targets.len() < steps {
        return Err(Error::InvalidScene(format!(
            "{direction:?} labels need {steps} frames, scene has {}",
            targets.len()
        )));
    }
    let source = &prep.source;
    let slots: Vec<usize> = source
        .indices()
        .iter()
        .map(|&(r, c)| labels.slot_of(r, c).ok_or_else(|| Error::ShapeMismatch(format!("source cell ({r}, {c}) outside mask"))))
        .collect::<Result<_>>()?;

    let solved: Vec<(Option<Vec<[T; 2]>>, StepDiagnostics)> = (0..steps)
        .into_par_iter()
        .map(|k| {
            let target = &targets[k];
            let mut diag = StepDiagnostics {
                step: k + 1,
                source_cells: source.len(),
                target_cells: target.len(),
                iterations: 0,
                converged: false,
                marginal_error: 0.0,
                warning: None,
            };
            if source.is_empty() || target.is_empty() {
                diag.warning = Some(format!("step {}: empty cell set, labels set to zero", k + 1));
                return Ok((None, diag));
            }
            let warped = prewarp(source, prediction, k)?;
            let tgt: Vec<[T; 2]> = target.coords().iter().map(|c| [T::lit(c[0]), T::lit(c[1])]).collect();
            let cost = cost_matrix(&warped, &tgt, T::lit(cfg.theta_c))?;
            let plan = sinkhorn(&cost, T::lit(cfg.sinkhorn_epsilon), cfg.sinkhorn_iters, T::lit(cfg.sinkhorn_tol))?;
            diag.iterations = plan.iterations;
            diag.converged = plan.converged;
            diag.marginal_error = plan.marginal_error.as_f64();
            Ok((Some(pseudo_labels(&plan, source, target, mode)?), diag))
        })
        .collect::<Result<_>>()?;

    let mut diagnostics = Vec::with_capacity(steps);
    for (k, (vals, diag)) in solved.into_iter().enumerate() {
        if let Some(vals) = vals {
            let step = labels.step_mut(k);
            for (&s, v) in slots.iter().zip(vals) {
                step[s] = v;
            }
        }
        diagnostics.push(diag);
    }
    Ok(PseudoLabels { labels, diagnostics })
}

/// Full label pipeline for one direction of a scene.
pub fn label_stack<T: Scalar>(seq: &SceneSequence, prediction: &MotionStack<T>, direction: Direction, cfg: &Config) -> Result<PseudoLabels<T>> {
    seq.require_horizon(cfg, direction)?;
    let prep = prepare_scene(seq, cfg)?;
    labels_from_prepared(&prep, prediction, direction, cfg, LabelMode::Barycentric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cells(xs: &[[f64; 2]]) -> CellSet {
        CellSet::from_parts(xs.to_vec(), (0..xs.len()).map(|i| (i, 0)).collect()).unwrap()
    }

    #[test]
    fn cost_values() {
        let c = cost_matrix::<f64>(&[[0.0, 0.0]], &[[0.0, 0.0], [1.0, 0.0]], 3.0).unwrap();
        assert_eq!(c.get(0, 0), 0.0);
        assert!((c.get(0, 1) - 0.283_468_689_426_919_2).abs() < 1e-12);
        let d = (3.0 * 2f64.ln()).sqrt();
        let c = cost_matrix::<f64>(&[[0.0, 0.0]], &[[0.0, d]], 3.0).unwrap();
        assert!((c.get(0, 0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_sets_rejected() {
        assert!(matches!(cost_matrix::<f64>(&[], &[[0.0, 0.0]], 3.0), Err(Error::EmptyCellSet(_))));
        assert!(matches!(cost_matrix::<f64>(&[[0.0, 0.0]], &[], 3.0), Err(Error::EmptyCellSet(_))));
    }

    #[test]
    fn one_by_one_plan() {
        let c = CostMatrix::<f64>::from_values(1, 1, vec![0.7], 3.0).unwrap();
        let p = sinkhorn(&c, 0.03, 10, 1e-9).unwrap();
        assert!(p.converged);
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_cost_gives_product_plan() {
        let c = CostMatrix::<f64>::from_values(3, 4, vec![0.4; 12], 3.0).unwrap();
        let p = sinkhorn(&c, 0.03, 50, 1e-12).unwrap();
        for &v in p.values() {
            assert!((v - 1.0 / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn nan_cost_is_an_error() {
        let c = CostMatrix::<f64>::from_values(1, 2, vec![0.1, f64::NAN], 3.0).unwrap();
        assert!(matches!(sinkhorn(&c, 0.03, 10, 1e-6), Err(Error::NonFinite(_))));
    }

    #[test]
    fn tiny_epsilon_stays_finite() {
        let src = [[0.0, 0.0], [10.0, 0.0], [0.0, 5.0]];
        let c = cost_matrix::<f64>(&src, &src, 3.0).unwrap();
        let p = sinkhorn(&c, 1e-4, 500, 1e-10).unwrap();
        assert!(p.converged);
        for i in 0..3 {
            assert!((p.get(i, i) - 1.0 / 3.0).abs() < 1e-9);
        }
        let c32 = cost_matrix::<f32>(&[[0.0, 0.0], [10.0, 0.0]], &[[0.0, 0.0], [10.0, 0.0]], 3.0).unwrap();
        let p32 = sinkhorn(&c32, 0.003, 200, 1e-6).unwrap();
        assert!((p32.get(0, 0) - 0.5).abs() < 1e-5);
    }

    #[test]
    fn iteration_cap_reports_unconverged() {
        let src = [[0.0, 0.0], [0.3, 0.0], [0.6, 0.1]];
        let tgt = [[0.1, 0.0], [0.2, 0.4], [0.9, 0.0], [0.5, 0.5]];
        let c = cost_matrix::<f64>(&src, &tgt, 3.0).unwrap();
        let p = sinkhorn(&c, 0.01, 1, 1e-15).unwrap();
        assert!(!p.converged);
        assert_eq!(p.iterations, 1);
    }

    #[test]
    fn single_pair_label() {
        let s = cells(&[[0.0, 0.0]]);
        let t = cells(&[[1.0, 0.0]]);
        let src = [[0.0, 0.0]];
        let c = cost_matrix::<f64>(&src, &[[1.0, 0.0]], 3.0).unwrap();
        let p = sinkhorn(&c, 0.03, 10, 1e-9).unwrap();
        assert_eq!(pseudo_labels(&p, &s, &t, LabelMode::Barycentric).unwrap(), vec![[1.0, 0.0]]);
    }

    #[test]
    fn raw_product_scales_by_row_mass() {
        let s = cells(&[[0.0, 0.0], [10.0, 0.0]]);
        let t = cells(&[[0.0, 0.0], [10.0, 0.0]]);
        let c = cost_matrix::<f64>(&[[0.0, 0.0], [10.0, 0.0]], &[[0.0, 0.0], [10.0, 0.0]], 3.0).unwrap();
        let p = sinkhorn(&c, 0.03, 100, 1e-9).unwrap();
        let raw = pseudo_labels(&p, &s, &t, LabelMode::RawProduct).unwrap();
        // row mass 1/2 halves the matched position
        assert!((raw[1][0] - (5.0 - 10.0)).abs() < 1e-6);
    }

    #[test]
    fn prewarp_shifts_by_prediction() {
        let g = GridSpec::default();
        let src = CellSet::from_indices(&g, vec![(128, 128), (130, 128)]).unwrap();
        let mut pred = MotionStack::<f64>::zeros(g, Direction::Forward, [g.flat(128, 128), g.flat(130, 128)], 1).unwrap();
        assert_eq!(prewarp(&src, &pred, 0).unwrap(), src.coords().to_vec());
        pred.step_mut(0).iter_mut().for_each(|v| *v = [1.0, 0.0]);
        let w = prewarp(&src, &pred, 0).unwrap();
        assert_eq!(w, vec![[1.125, 0.125], [1.625, 0.125]]);
        let uncovered = CellSet::from_indices(&g, vec![(1, 1)]).unwrap();
        assert!(prewarp(&uncovered, &pred, 0).is_err());
    }
}
