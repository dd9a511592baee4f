use bevmotion::{extract_cells, remove_ground, voxelize, Config, GridSpec, PointFrame};
use proptest::prelude::*;

#[test]
fn default_grid_is_256_square() {
    let g = GridSpec::new([-32.0, 32.0], [-32.0, 32.0], [-3.0, 2.0], 0.25, 0.5).unwrap();
    assert_eq!((g.rows(), g.cols(), g.channels()), (256, 256, 10));
    assert_eq!(GridSpec::default().rows(), 256);
}

#[test]
fn non_integer_divisions_rejected() {
    assert!(GridSpec::new([-32.0, 32.0], [-32.0, 32.0], [-3.0, 2.0], 0.3, 0.5).is_err());
    assert!(GridSpec::new([-32.0, 32.0], [-32.0, 32.0], [-3.0, 2.0], 0.25, 0.4).is_err());
    assert!(GridSpec::new([1.0, 1.0], [-32.0, 32.0], [-3.0, 2.0], 0.25, 0.5).is_err());
}

#[test]
fn flat_ground_separated_from_objects() {
    let mut pts = Vec::new();
    for i in 0..40 {
        for j in 0..40 {
            pts.push([i as f32 * 0.5 - 10.0, j as f32 * 0.5 - 10.0, -1.6 + ((i * 7 + j * 3) % 5) as f32 * 0.01]);
        }
    }
    let tall: Vec<[f32; 3]> = (0..50).map(|k| [2.0, 3.0, -1.0 + k as f32 * 0.03]).collect();
    pts.extend(&tall);
    let cfg = Config::default();
    let (kept, label) = remove_ground(&PointFrame::new(0.0, pts), cfg.ground_iters, cfg.ground_dist_tol, 3);
    let ground = label.is_ground.iter().filter(|&&g| g).count();
    assert_eq!(ground, 1600);
    assert_eq!(kept.points, tall);
    let plane = label.plane.unwrap();
    assert!(plane[2] > 0.99);
}

fn points() -> impl Strategy<Value = Vec<[f32; 3]>> {
    prop::collection::vec(prop::array::uniform3(-40.0..40.0f32), 0..300)
        .prop_map(|mut v| {
            for p in &mut v {
                p[2] /= 10.0;
            }
            v
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn duplication_is_idempotent(pts in points(), copies in 1..4usize) {
        let g = GridSpec::default();
        let once = voxelize(&PointFrame::new(0.0, pts.clone()), &g);
        let many: Vec<[f32; 3]> = (0..=copies).flat_map(|_| pts.iter().copied()).collect();
        prop_assert_eq!(&voxelize(&PointFrame::new(0.0, many), &g), &once);
        prop_assert!(extract_cells(&once).len() <= pts.len());
        prop_assert!(once.count() <= pts.len());
    }

    #[test]
    fn ground_split_partitions_points(pts in points(), seed in any::<u64>()) {
        let frame = PointFrame::new(1.5, pts.clone());
        let (kept, label) = remove_ground(&frame, 50, 0.15, seed);
        prop_assert_eq!(label.is_ground.len(), pts.len());
        let expected: Vec<[f32; 3]> = pts.iter().zip(&label.is_ground).filter(|(_, &g)| !g).map(|(p, _)| *p).collect();
        prop_assert_eq!(kept.points, expected);
        prop_assert_eq!(kept.timestamp, 1.5);
    }
}
