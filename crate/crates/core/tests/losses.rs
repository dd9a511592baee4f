use bevmotion::losses::{
    loss_backward, loss_cluster, loss_forward, loss_knn, loss_sup, total_loss, BackwardWeighting, CellGroups, KnnGraph, LossContext,
    LossParams, LossToggles,
};
use bevmotion::{bfs_cluster, CellSet, Config, Direction, GridSpec, MotionStack};
use proptest::prelude::*;

fn grid() -> GridSpec {
    GridSpec::new([-2.0, 2.0], [-2.0, 2.0], [0.0, 1.0], 0.25, 0.5).unwrap()
}

fn cells() -> Vec<usize> {
    // two blobs and a stray cell
    let g = grid();
    let mut v: Vec<usize> = [(1, 1), (1, 2), (2, 1), (2, 2), (3, 2), (10, 10), (10, 11), (11, 11), (15, 0)]
        .iter()
        .map(|&(r, c)| g.flat(r, c))
        .collect();
    v.sort_unstable();
    v
}

fn stack(direction: Direction, steps: usize, f: impl Fn(usize, usize) -> [f64; 2]) -> MotionStack {
    let mut m = MotionStack::zeros(grid(), direction, cells(), steps).unwrap();
    for k in 0..steps {
        for (s, v) in m.step_mut(k).iter_mut().enumerate() {
            *v = f(k, s);
        }
    }
    m
}

fn groups_of(m: &MotionStack) -> CellGroups {
    let g = grid();
    let set = CellSet::from_indices(&g, m.cells().iter().map(|&c| g.unflat(c)).collect()).unwrap();
    CellGroups::from_clusters(&bfs_cluster(&set, 3.0), &set, m).unwrap()
}

#[test]
fn forward_zero_for_constant_velocity() {
    let velocities = [[0.3, -0.1], [2.0, 1.5], [-4.0, 0.0], [0.0, 0.0], [1.1, 1.1], [9.0, -3.0], [0.2, 0.2], [-1.0, 5.0], [0.7, 0.0]];
    let m = stack(Direction::Forward, 5, |k, s| {
        let t = (k + 1) as f64;
        [t * velocities[s][0], t * velocities[s][1]]
    });
    let v = loss_forward(&m, 1.0).unwrap().value;
    assert!(v.abs() < 1e-12, "L_f = {v:e}");
}

#[test]
fn backward_zero_at_negated_forward() {
    let f = stack(Direction::Forward, 5, |k, s| [0.3 * k as f64 - s as f64, (s * k) as f64 * 0.1]);
    let b = f.negated().with_direction(Direction::Backward);
    for w in [BackwardWeighting::Decay(10.0), BackwardWeighting::Uniform] {
        let t = loss_backward(&f, &b, w, 1.0).unwrap();
        assert!(t.value.abs() < 1e-12);
    }
}

#[test]
fn cluster_zero_for_uniform_motion_per_cluster() {
    let probe = stack(Direction::Forward, 3, |_, _| [0.0, 0.0]);
    let groups = groups_of(&probe);
    assert_eq!(groups.len(), 3);
    let mut owner = vec![0; probe.len()];
    for (gi, g) in groups.groups().iter().enumerate() {
        for &s in g {
            owner[s] = gi;
        }
    }
    let m = stack(Direction::Forward, 3, |k, s| [owner[s] as f64 * 1.7 + k as f64, -(owner[s] as f64) * 0.4]);
    let v = loss_cluster(&m, &groups).unwrap().value;
    assert!(v.abs() < 1e-12, "L_c = {v:e}");
}

#[test]
fn sup_zero_at_labels() {
    let labels = stack(Direction::Backward, 4, |k, s| [k as f64 * 0.37 - s as f64, 1.0 / (1.0 + s as f64)]);
    let v = loss_sup(&labels, &labels, 1.0).unwrap().value;
    assert_eq!(v, 0.0);
}

#[test]
fn zero_stacks_give_zero_total() {
    let f = stack(Direction::Forward, 5, |_, _| [0.0, 0.0]);
    let b = f.clone().with_direction(Direction::Backward);
    let groups = groups_of(&f);
    let ctx = LossContext { labels_forward: &f, labels_backward: &b, groups: Some(&groups), knn: None };
    let r = total_loss(&f, &b, &ctx, &LossParams::from_config(&Config::default()), LossToggles::full()).unwrap();
    assert_eq!(r.total, 0.0);
}

#[test]
fn invalid_cells_cannot_carry_motion() {
    let g = grid();
    let mask: Vec<bool> = (0..g.num_cells()).map(|i| cells().contains(&i)).collect();
    let outside = mask.iter().position(|m| !m).unwrap();
    let mut dense = vec![vec![[0.0, 0.0]; g.num_cells()]; 2];
    dense[1][outside] = [0.5, 0.0];
    assert!(MotionStack::from_dense(g, Direction::Forward, &mask, &dense).is_err());
}

fn field() -> impl Strategy<Value = Vec<[f64; 2]>> {
    prop::collection::vec(prop::array::uniform2(-6.0..6.0f64), 9 * 5)
}

fn from_flat(direction: Direction, v: &[[f64; 2]]) -> MotionStack {
    stack(direction, 5, |k, s| v[k * 9 + s])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn terms_non_negative(f in field(), b in field(), lf in field(), lb in field()) {
        let (f, b) = (from_flat(Direction::Forward, &f), from_flat(Direction::Backward, &b));
        let (lf, lb) = (from_flat(Direction::Forward, &lf), from_flat(Direction::Backward, &lb));
        let groups = groups_of(&f);
        let g = grid();
        let set = CellSet::from_indices(&g, f.cells().iter().map(|&c| g.unflat(c)).collect()).unwrap();
        let knn = KnnGraph::build(&set, 3, &f).unwrap();
        prop_assert!(loss_sup(&f, &lf, 1.0).unwrap().value >= 0.0);
        prop_assert!(loss_cluster(&f, &groups).unwrap().value >= 0.0);
        prop_assert!(loss_forward(&f, 1.0).unwrap().value >= 0.0);
        prop_assert!(loss_backward(&f, &b, BackwardWeighting::Decay(10.0), 1.0).unwrap().value >= 0.0);
        prop_assert!(loss_knn(&f, &knn).unwrap().value >= 0.0);

        let ctx = LossContext { labels_forward: &lf, labels_backward: &lb, groups: Some(&groups), knn: Some(&knn) };
        let params = LossParams::from_config(&Config::default());
        let r = total_loss(&f, &b, &ctx, &params, LossToggles { knn: true, ..LossToggles::full() }).unwrap();
        prop_assert!(r.total >= 0.0);
        let recomputed = r.recomputed_total();
        prop_assert!((r.total - recomputed).abs() <= 1e-9 * r.total.abs().max(1.0));
        prop_assert!(r.grad_forward.same_layout(&f) && r.grad_backward.same_layout(&b));
    }
}
