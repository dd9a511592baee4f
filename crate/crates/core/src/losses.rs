//! Training objective over forward/backward motion stacks with analytic
//! gradients.
//!
//! Every term averages over valid cells (or clusters / neighbour lists) and
//! sums over horizons. Gradients are returned as stacks with the same
//! layout as the motion they differentiate.

use serde::Serialize;

use crate::clustering::ClusterSet;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::motion::{Direction, MotionStack};
use crate::preprocess::CellSet;
use crate::scalar::{norm2, sub2, Scalar};

/// Smooth-L1 between two displacements, averaged over the two components,
/// and its gradient with respect to `pred`.
///
/// Per component `x`: `0.5 x^2 / delta` for `|x| < delta`, otherwise
/// `|x| - 0.5 delta`.
#[inline]
pub fn smooth_l1<T: Scalar>(pred: [T; 2], target: [T; 2], delta: T) -> (T, [T; 2]) {
    let half = T::lit(0.5);
    let mut value = T::zero();
    let mut grad = [T::zero(); 2];
    for c in 0..2 {
        let x = pred[c] - target[c];
        if x.abs() < delta {
            value = value + half * x * x / delta;
            grad[c] = half * x / delta;
        } else {
            value = value + x.abs() - half * delta;
            grad[c] = half * x.signum();
        }
    }
    (half * value, grad)
}

/// A term over a single stack.
#[derive(Debug, Clone)]
pub struct Term<T = f64> {
    pub value: T,
    pub grad: MotionStack<T>,
}

/// A term coupling the forward and backward stacks.
#[derive(Debug, Clone)]
pub struct PairTerm<T = f64> {
    pub value: T,
    pub grad_forward: MotionStack<T>,
    pub grad_backward: MotionStack<T>,
}

fn inv_count<T: Scalar>(n: usize) -> T {
    if n == 0 {
        T::zero()
    } else {
        T::one() / T::lit(n as f64)
    }
}

/// Supervision by pseudo labels: per horizon, the mean smooth-L1 over valid
/// cells, summed over horizons.
pub fn loss_sup<T: Scalar>(pred: &MotionStack<T>, labels: &MotionStack<T>, delta: T) -> Result<Term<T>> {
    pred.check_layout(labels, "sup: prediction vs labels")?;
    if pred.direction() != labels.direction() {
        return Err(Error::ShapeMismatch("sup: prediction and labels differ in direction".into()));
    }
    let w = inv_count::<T>(pred.len());
    let mut grad = pred.zeros_like();
    let mut value = T::zero();
    for k in 0..pred.num_steps() {
        let g = grad.step_mut(k);
        for (s, (&p, &l)) in pred.step(k).iter().zip(labels.step(k)).enumerate() {
            let (v, d) = smooth_l1(p, l, delta);
            value = value + w * v;
            g[s] = [w * d[0], w * d[1]];
        }
    }
    Ok(Term { value, grad })
}

/// Clusters resolved to slots of a motion stack.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CellGroups {
    groups: Vec<Vec<usize>>,
}

impl CellGroups {
    pub fn from_clusters<T: Scalar>(clusters: &ClusterSet, cells: &CellSet, layout: &MotionStack<T>) -> Result<Self> {
        if clusters.assignments.len() != cells.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} cluster assignments for {} cells",
                clusters.assignments.len(),
                cells.len()
            )));
        }
        let slots = slots_of(cells, layout)?;
        Ok(Self { groups: clusters.clusters.iter().map(|c| c.iter().map(|&i| slots[i]).collect()).collect() })
    }

    pub fn from_slots(groups: Vec<Vec<usize>>) -> Self {
        Self { groups }
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }
    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }
}

fn slots_of<T: Scalar>(cells: &CellSet, layout: &MotionStack<T>) -> Result<Vec<usize>> {
    cells
        .indices()
        .iter()
        .map(|&(r, c)| layout.slot_of(r, c).ok_or_else(|| Error::ShapeMismatch(format!("cell ({r}, {c}) outside the validity mask"))))
        .collect()
}

/// Accumulates `w * |a - b|` for a slot pair into value and gradient.
#[inline]
fn pair_norm<T: Scalar>(step: &[[T; 2]], grad: &mut [[T; 2]], i: usize, j: usize, w: T) -> T {
    let d = sub2(step[i], step[j]);
    let r = norm2(d);
    if r > T::zero() {
        let gx = w * d[0] / r;
        let gy = w * d[1] / r;
        grad[i][0] = grad[i][0] + gx;
        grad[i][1] = grad[i][1] + gy;
        grad[j][0] = grad[j][0] - gx;
        grad[j][1] = grad[j][1] - gy;
    }
    w * r
}

/// Cluster consistency: per horizon,
/// `1/|S| * sum_s 1/|s|^2 * sum_{i,j in s} |M_i - M_j|` over ordered pairs
/// (self-pairs included, contributing zero). The subgradient at coincident
/// motions is zero.
pub fn loss_cluster<T: Scalar>(pred: &MotionStack<T>, groups: &CellGroups) -> Result<Term<T>> {
    let mut grad = pred.zeros_like();
    let mut value = T::zero();
    let inv_s = inv_count::<T>(groups.len());
    let two = T::lit(2.0);
    for k in 0..pred.num_steps() {
        let step = pred.step(k);
        let g = grad.step_mut(k);
        for members in &groups.groups {
            if members.len() < 2 {
                continue;
            }
            let size = T::lit(members.len() as f64);
            // each unordered pair appears twice among ordered pairs
            let w = two * inv_s / (size * size);
            for (a, &i) in members.iter().enumerate() {
                for &j in &members[a + 1..] {
                    value = value + pair_norm(step, g, i, j, w);
                }
            }
        }
    }
    Ok(Term { value, grad })
}

/// Nearest valid neighbours of each cell, as stack slots.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct KnnGraph {
    nodes: Vec<(usize, Vec<usize>)>,
}

impl KnnGraph {
    /// `k` nearest other cells by metric distance, ties broken by cell
    /// order; cells with fewer than `k` others use all of them.
    pub fn build<T: Scalar>(cells: &CellSet, k: usize, layout: &MotionStack<T>) -> Result<Self> {
        let slots = slots_of(cells, layout)?;
        let xy = cells.coords();
        let mut nodes = Vec::with_capacity(cells.len());
        let mut order: Vec<(f64, usize)> = Vec::with_capacity(cells.len());
        for i in 0..cells.len() {
            order.clear();
            order.extend((0..cells.len()).filter(|&j| j != i).map(|j| {
                let (dx, dy) = (xy[i][0] - xy[j][0], xy[i][1] - xy[j][1]);
                (dx * dx + dy * dy, j)
            }));
            let take = k.min(order.len());
            if take > 0 && take < order.len() {
                order.select_nth_unstable_by(take - 1, |a, b| a.partial_cmp(b).expect("finite distances"));
            }
            let mut near: Vec<(f64, usize)> = order[..take].to_vec();
            near.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
            nodes.push((slots[i], near.into_iter().map(|(_, j)| slots[j]).collect()));
        }
        Ok(Self { nodes })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.nodes[i].1
    }
}

/// KNN smoothness: per horizon, the mean over cells of the mean distance
/// between a cell's motion and its neighbours' motions.
pub fn loss_knn<T: Scalar>(pred: &MotionStack<T>, graph: &KnnGraph) -> Result<Term<T>> {
    let mut grad = pred.zeros_like();
    let mut value = T::zero();
    let inv_n = inv_count::<T>(graph.len());
    for k in 0..pred.num_steps() {
        let step = pred.step(k);
        let g = grad.step_mut(k);
        for (i, nb) in &graph.nodes {
            if nb.is_empty() {
                continue;
            }
            let w = inv_n / T::lit(nb.len() as f64);
            for &j in nb {
                value = value + pair_norm(step, g, *i, j, w);
            }
        }
    }
    Ok(Term { value, grad })
}

/// Forward consistency: `sum_t mean_cells smoothL1(M_t, t/(t+1) M_{t+1})`
/// for `t = 1..T'-1`.
pub fn loss_forward<T: Scalar>(pred: &MotionStack<T>, delta: T) -> Result<Term<T>> {
    let mut grad = pred.zeros_like();
    let mut value = T::zero();
    let w = inv_count::<T>(pred.len());
    for k in 0..pred.num_steps().saturating_sub(1) {
        let t = T::lit((k + 1) as f64);
        let ratio = t / (t + T::one());
        for s in 0..pred.len() {
            let cur = pred.step(k)[s];
            let next = pred.step(k + 1)[s];
            let (v, d) = smooth_l1(cur, [ratio * next[0], ratio * next[1]], delta);
            value = value + w * v;
            let gc = grad.step_mut(k);
            gc[s] = [gc[s][0] + w * d[0], gc[s][1] + w * d[1]];
            let gn = grad.step_mut(k + 1);
            gn[s] = [gn[s][0] - w * ratio * d[0], gn[s][1] - w * ratio * d[1]];
        }
    }
    Ok(Term { value, grad })
}

/// Horizon weighting of the backward-consistency term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BackwardWeighting<T = f64> {
    /// `exp(-t / theta_b)`.
    Decay(T),
    /// Weight 1 at every horizon.
    Uniform,
}

impl<T: Scalar> BackwardWeighting<T> {
    pub fn weight(&self, t: usize) -> T {
        match *self {
            BackwardWeighting::Decay(theta_b) => (-T::lit(t as f64) / theta_b).exp(),
            BackwardWeighting::Uniform => T::one(),
        }
    }
}

/// Backward consistency:
/// `sum_t w_t mean_cells smoothL1(M^{T->T+t}, -M^{T->T-t})`.
pub fn loss_backward<T: Scalar>(
    forward: &MotionStack<T>,
    backward: &MotionStack<T>,
    weighting: BackwardWeighting<T>,
    delta: T,
) -> Result<PairTerm<T>> {
    if forward.direction() != Direction::Forward || backward.direction() != Direction::Backward {
        return Err(Error::ShapeMismatch("b: expected a forward and a backward stack".into()));
    }
    forward.check_layout(backward, "b: forward vs backward")?;
    let mut grad_forward = forward.zeros_like();
    let mut grad_backward = backward.zeros_like();
    let mut value = T::zero();
    let inv_n = inv_count::<T>(forward.len());
    for k in 0..forward.num_steps() {
        let w = weighting.weight(k + 1) * inv_n;
        let gf = grad_forward.step_mut(k);
        let gb = grad_backward.step_mut(k);
        for (s, (&f, &b)) in forward.step(k).iter().zip(backward.step(k)).enumerate() {
            let (v, d) = smooth_l1(f, [-b[0], -b[1]], delta);
            value = value + w * v;
            gf[s] = [w * d[0], w * d[1]];
            gb[s] = [w * d[0], w * d[1]];
        }
    }
    Ok(PairTerm { value, grad_forward, grad_backward })
}

/// Which terms enter the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LossToggles {
    pub sup: bool,
    pub cluster: bool,
    pub forward: bool,
    pub backward: bool,
    pub knn: bool,
}

impl LossToggles {
    pub const TERM_NAMES: [&'static str; 5] = ["sup", "c", "f", "b", "knn"];

    pub const fn none() -> Self {
        Self { sup: false, cluster: false, forward: false, backward: false, knn: false }
    }

    pub const fn sup_only() -> Self {
        Self { sup: true, ..Self::none() }
    }

    pub const fn full() -> Self {
        Self { sup: true, cluster: true, forward: true, backward: true, knn: false }
    }

    /// Parses a comma-separated list of `sup`, `c`, `f`, `b`, `knn`.
    pub fn parse(list: &str) -> Result<Self> {
        let mut t = Self::none();
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "sup" => t.sup = true,
                "c" => t.cluster = true,
                "f" => t.forward = true,
                "b" => t.backward = true,
                "knn" => t.knn = true,
                other => return Err(Error::UnknownLossTerm(other.to_string())),
            }
        }
        Ok(t)
    }

    /// Rows 1-8 of the regularizer ablation: every row supervises with
    /// pseudo labels and adds a subset of `c`, `f`, `b`.
    pub fn ablation_row(row: usize) -> Option<Self> {
        let (c, f, b) = match row {
            1 => (false, false, false),
            2 => (false, false, true),
            3 => (false, true, false),
            4 => (false, true, true),
            5 => (true, false, true),
            6 => (true, false, false),
            7 => (true, true, false),
            8 => (true, true, true),
            _ => return None,
        };
        Some(Self { sup: true, cluster: c, forward: f, backward: b, knn: false })
    }

    pub fn label(&self) -> String {
        let on = [self.sup, self.cluster, self.forward, self.backward, self.knn];
        let names: Vec<&str> = Self::TERM_NAMES.iter().zip(on).filter_map(|(n, o)| o.then_some(*n)).collect();
        names.join(",")
    }
}

/// Scalar parameters of the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParams<T = f64> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
    /// Weight of the KNN smoothness term, which stands in for `c`.
    pub knn_weight: T,
    pub delta: T,
    pub backward_weighting: BackwardWeighting<T>,
}

impl<T: Scalar> LossParams<T> {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            alpha: T::lit(cfg.alpha),
            beta: T::lit(cfg.beta),
            gamma: T::lit(cfg.gamma),
            knn_weight: T::lit(cfg.alpha),
            delta: T::lit(cfg.smooth_l1_delta),
            backward_weighting: BackwardWeighting::Decay(T::lit(cfg.theta_b)),
        }
    }
}

/// Inputs that stay fixed while the motion stacks are optimized.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a, T = f64> {
    pub labels_forward: &'a MotionStack<T>,
    pub labels_backward: &'a MotionStack<T>,
    pub groups: Option<&'a CellGroups>,
    pub knn: Option<&'a KnnGraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Sup,
    Cluster,
    Forward,
    Backward,
    Knn,
}

impl TermKind {
    pub fn name(self) -> &'static str {
        match self {
            TermKind::Sup => "L_sup",
            TermKind::Cluster => "L_c",
            TermKind::Forward => "L_f",
            TermKind::Backward => "L_b",
            TermKind::Knn => "L_knn",
        }
    }
}

/// Which stack a term evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StackSel {
    Forward,
    Backward,
    Both,
}

#[derive(Debug, Clone)]
pub struct TermEntry<T = f64> {
    pub kind: TermKind,
    pub stack: StackSel,
    pub value: T,
    pub weight: T,
    pub grad_forward: Option<MotionStack<T>>,
    pub grad_backward: Option<MotionStack<T>>,
}

/// Term values, weighted total and combined gradients.
#[derive(Debug, Clone)]
pub struct LossReport<T = f64> {
    pub terms: Vec<TermEntry<T>>,
    pub total: T,
    pub grad_forward: MotionStack<T>,
    pub grad_backward: MotionStack<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermSummary {
    pub term: TermKind,
    pub stack: StackSel,
    pub value: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossSummary {
    pub total: f64,
    pub terms: Vec<TermSummary>,
}

impl<T: Scalar> LossReport<T> {
    /// Weighted sum of the recorded term values.
    pub fn recomputed_total(&self) -> T {
        self.terms.iter().map(|t| t.weight * t.value).sum()
    }

    pub fn value_of(&self, kind: TermKind, stack: StackSel) -> Option<T> {
        self.terms.iter().find(|t| t.kind == kind && t.stack == stack).map(|t| t.value)
    }

    pub fn summary(&self) -> LossSummary {
        LossSummary {
            total: self.total.as_f64(),
            terms: self
                .terms
                .iter()
                .map(|t| TermSummary { term: t.kind, stack: t.stack, value: t.value.as_f64(), weight: t.weight.as_f64() })
                .collect(),
        }
    }
}

/// Weighted objective over both directions:
/// `sup(F) + sup(B) + alpha (c(F) + c(B)) + beta (f(F) + f(B)) + gamma b(F, B)`,
/// with `knn` entering like `c` when enabled. Each term is checked for
/// non-finite gradients.
pub fn total_loss<T: Scalar>(
    forward: &MotionStack<T>,
    backward: &MotionStack<T>,
    ctx: &LossContext<'_, T>,
    params: &LossParams<T>,
    toggles: LossToggles,
) -> Result<LossReport<T>> {
    forward.check_layout(backward, "forward vs backward stack")?;
    let mut terms: Vec<TermEntry<T>> = Vec::new();
    let mut single = |kind: TermKind, weight: T, f: &dyn Fn(&MotionStack<T>, Direction) -> Result<Term<T>>| -> Result<()> {
        for (stack, sel) in [(forward, StackSel::Forward), (backward, StackSel::Backward)] {
            let t = f(stack, stack.direction())?;
            let (gf, gb) = match sel {
                StackSel::Forward => (Some(t.grad), None),
                _ => (None, Some(t.grad)),
            };
            terms.push(TermEntry { kind, stack: sel, value: t.value, weight, grad_forward: gf, grad_backward: gb });
        }
        Ok(())
    };

    if toggles.sup {
        single(TermKind::Sup, T::one(), &|m, dir| {
            let labels = match dir {
                Direction::Forward => ctx.labels_forward,
                Direction::Backward => ctx.labels_backward,
            };
            loss_sup(m, labels, params.delta)
        })?;
    }
    if toggles.cluster {
        let groups = ctx.groups.ok_or_else(|| Error::ShapeMismatch("L_c enabled without clusters".into()))?;
        single(TermKind::Cluster, params.alpha, &|m, _| loss_cluster(m, groups))?;
    }
    if toggles.forward {
        single(TermKind::Forward, params.beta, &|m, _| loss_forward(m, params.delta))?;
    }
    if toggles.knn {
        let graph = ctx.knn.ok_or_else(|| Error::ShapeMismatch("L_knn enabled without a neighbour graph".into()))?;
        single(TermKind::Knn, params.knn_weight, &|m, _| loss_knn(m, graph))?;
    }
    if toggles.backward {
        let t = loss_backward(forward, backward, params.backward_weighting, params.delta)?;
        terms.push(TermEntry {
            kind: TermKind::Backward,
            stack: StackSel::Both,
            value: t.value,
            weight: params.gamma,
            grad_forward: Some(t.grad_forward),
            grad_backward: Some(t.grad_backward),
        });
    }

    let mut grad_forward = forward.zeros_like();
    let mut grad_backward = backward.zeros_like();
    let mut total = T::zero();
    for t in &terms {
        let finite = t.value.is_finite()
            && t.grad_forward.as_ref().is_none_or(MotionStack::is_finite)
            && t.grad_backward.as_ref().is_none_or(MotionStack::is_finite);
        if !finite {
            return Err(Error::NonFiniteGradient { term: format!("{} ({:?})", t.kind.name(), t.stack) });
        }
        total = total + t.weight * t.value;
        if let Some(g) = &t.grad_forward {
            grad_forward.add_scaled(g, t.weight);
        }
        if let Some(g) = &t.grad_backward {
            grad_backward.add_scaled(g, t.weight);
        }
    }
    Ok(LossReport { terms, total, grad_forward, grad_backward })
}
