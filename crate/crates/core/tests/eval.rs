use bevmotion::eval::{average_ranks, spearman};
use bevmotion::synth::{GroundSpec, ObjectSpec};
use bevmotion::{bucketed_errors, generate, Config, Direction, GridSpec, MotionStack, SceneRecipe};
use proptest::prelude::*;

/// Textbook rank correlation for distinct values.
fn spearman_distinct(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64], i: usize| v.iter().filter(|&&o| o < v[i]).count() as f64;
    let n = x.len() as f64;
    let d2: f64 = (0..x.len()).map(|i| (rank(x, i) - rank(y, i)).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Rank of `v[i]` as one plus the count below plus half the other ties.
fn tied_rank(v: &[f64], i: usize) -> f64 {
    let below = v.iter().filter(|&&o| o < v[i]).count() as f64;
    let equal = v.iter().filter(|&&o| o == v[i]).count() as f64;
    below + (equal + 1.0) / 2.0
}

#[test]
fn rank_formula_on_distinct_values() {
    let x = [0.3, 1.9, -4.0, 2.2, 7.5, 0.0, 3.3, -1.1];
    let y = [1.0, 2.0, 0.5, 5.0, 4.0, -3.0, 9.0, 0.1];
    let got = spearman(&x, &y).unwrap();
    assert!((got - spearman_distinct(&x, &y)).abs() < 1e-12);
    assert_eq!(spearman(&x, &x), Some(1.0));
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    assert_eq!(spearman(&x, &neg), Some(-1.0));
    assert_eq!(spearman(&x[..2], &y[..2]), None);
    assert_eq!(spearman(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0]), None);
}

#[test]
fn static_baseline_equals_gt_magnitude() {
    let cfg = Config::default();
    let recipe = SceneRecipe {
        name: "lone-mover".into(),
        objects: vec![ObjectSpec {
            length: 4.4,
            width: 1.8,
            height: 1.6,
            x: -4.0,
            y: 1.0,
            heading: 0.6,
            velocity: [8.0 * 0.6f64.cos(), 8.0 * 0.6f64.sin()],
            density: 16.0,
        }],
        ground: GroundSpec { x_range: [-12.0, 12.0], y_range: [-12.0, 12.0], z: -1.6, density: 1.0, z_noise: 0.03 },
        sensor_noise: 0.02,
        dropout: 0.0,
        occlusions: vec![],
        seed: 5,
    };
    let seq = generate(&recipe, &cfg).unwrap();
    let gt = seq.ground_truth.as_ref().unwrap();
    let zero = gt.zeros_like();
    let m = bucketed_errors(&zero, Some(gt), &cfg).unwrap();
    assert!(m.fast.count > 0);
    assert!((m.fast.mean.unwrap() - 8.0).abs() < 1e-6, "fast mean {:?}", m.fast.mean);
    assert_eq!(m.slow.count, 0);
    assert_eq!(m.static_.mean, Some(0.0));
}

#[test]
fn missing_ground_truth_is_an_error() {
    let g = GridSpec::default();
    let m = MotionStack::<f64>::zeros(g, Direction::Forward, [0, 1], 5).unwrap();
    assert!(bucketed_errors::<f64, f64>(&m, None, &Config::default()).is_err());
}

fn small_grid() -> GridSpec {
    GridSpec::new([-2.0, 2.0], [-2.0, 2.0], [0.0, 1.0], 0.25, 0.5).unwrap()
}

fn pair(cells: &[usize], values: &[([f64; 2], [f64; 2])], steps: usize) -> (MotionStack, MotionStack) {
    let g = small_grid();
    let mut pred = MotionStack::zeros(g, Direction::Forward, cells.iter().copied(), steps).unwrap();
    let mut gt = pred.clone();
    for k in 0..steps {
        for s in 0..cells.len() {
            let (p, q) = values[(k * cells.len() + s) % values.len()];
            pred.step_mut(k)[s] = p;
            gt.step_mut(k)[s] = [q[0] * (k + 1) as f64, q[1] * (k + 1) as f64];
        }
    }
    (pred, gt)
}

fn vec2() -> impl Strategy<Value = [f64; 2]> {
    prop::array::uniform2(prop_oneof![Just(0.0), -0.05..0.05f64, -12.0..12.0f64])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn buckets_partition_valid_cells(
        cells in prop::collection::btree_set(0..256usize, 1..60),
        values in prop::collection::vec((vec2(), vec2()), 1..40),
        steps in 1..6usize,
    ) {
        let cells: Vec<usize> = cells.into_iter().collect();
        let (pred, gt) = pair(&cells, &values, steps);
        let m = bucketed_errors(&pred, Some(&gt), &Config::default()).unwrap();
        prop_assert_eq!(m.total_count(), cells.len());
        prop_assert_eq!(m.per_step.len(), steps);
        for s in &m.per_step {
            prop_assert_eq!(s.static_.count + s.slow.count + s.fast.count, cells.len());
            for b in [s.static_, s.slow, s.fast] {
                prop_assert!(b.mean.is_none_or(|v| v >= 0.0));
                prop_assert!(b.median.is_none_or(|v| v >= 0.0));
            }
        }
    }

    #[test]
    fn metrics_ignore_cell_order(
        cells in prop::collection::btree_set(0..256usize, 2..60),
        values in prop::collection::vec((vec2(), vec2()), 60),
        rotate in 1..59usize,
    ) {
        // same (prediction, truth) pairs attached to cells in another order
        let cells: Vec<usize> = cells.into_iter().collect();
        let n = cells.len();
        let a: Vec<_> = values[..n].to_vec();
        let mut b = a.clone();
        b.rotate_left(rotate % n);
        let (pa, ga) = pair(&cells, &a, 1);
        let (pb, gb) = pair(&cells, &b, 1);
        let cfg = Config::default();
        let (ma, mb) = (bucketed_errors(&pa, Some(&ga), &cfg).unwrap(), bucketed_errors(&pb, Some(&gb), &cfg).unwrap());
        for (x, y) in [(ma.static_, mb.static_), (ma.slow, mb.slow), (ma.fast, mb.fast)] {
            prop_assert_eq!(x.count, y.count);
            prop_assert_eq!(x.median, y.median);
            match (x.mean, y.mean) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() <= 1e-12 * p.abs().max(1.0)),
                (p, q) => prop_assert_eq!(p, q),
            }
        }
    }

    #[test]
    fn spearman_matches_tied_rank_pearson(
        x in prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -5.0..5.0f64], 3..40),
        y in prop::collection::vec(prop_oneof![Just(0.0), -5.0..5.0f64], 40),
    ) {
        let y = &y[..x.len()];
        let rx: Vec<f64> = (0..x.len()).map(|i| tied_rank(&x, i)).collect();
        let ry: Vec<f64> = (0..y.len()).map(|i| tied_rank(y, i)).collect();
        prop_assert_eq!(&average_ranks(&x), &rx);
        let n = x.len() as f64;
        let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
        match spearman(&x, y) {
            Some(r) => {
                prop_assert!((-1.0..=1.0).contains(&r));
                prop_assert!((r - cov / (vx * vy).sqrt()).abs() < 1e-12);
            }
            None => prop_assert!(vx == 0.0 || vy == 0.0),
        }
    }
}
