use bevmotion::{generate, recipe_suite, Config, Direction, GridSpec, MotionStack};
use bevmotion_cli::archive::{read_archive, read_manifest, write_archive, GT_FILE};
use bevmotion_cli::formats::{decode_motion, decode_points, encode_motion, encode_points, read_motion, write_motion};
use proptest::prelude::*;

fn grid() -> impl Strategy<Value = GridSpec> {
    (1..12usize, 1..12usize, 1..4usize, prop::sample::select(vec![0.25, 0.5, 1.0]), -20i32..20, -20i32..20).prop_map(
        |(h, w, c, v, x0, y0)| {
            let (x0, y0) = (x0 as f64 * v, y0 as f64 * v);
            GridSpec::new([x0, x0 + h as f64 * v], [y0, y0 + w as f64 * v], [-2.0, -2.0 + c as f64 * 0.5], v, 0.5).unwrap()
        },
    )
}

fn stack() -> impl Strategy<Value = MotionStack<f32>> {
    (grid(), any::<bool>(), 0..5usize, any::<u64>()).prop_flat_map(|(g, back, steps, _)| {
        let n = g.num_cells();
        (prop::collection::vec(any::<bool>(), n), prop::collection::vec(prop::array::uniform2(-50.0..50.0f32), n * steps.max(1)))
            .prop_map(move |(mask, vals)| {
                let dir = if back { Direction::Backward } else { Direction::Forward };
                let cells: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
                let mut m = MotionStack::<f32>::zeros(g, dir, cells.iter().copied(), steps).unwrap();
                for k in 0..steps {
                    for (s, v) in m.step_mut(k).iter_mut().enumerate() {
                        *v = vals[(k * n + s) % vals.len()];
                    }
                }
                m
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn points_round_trip_bytes(pts in prop::collection::vec(prop::array::uniform3(any::<f32>().prop_filter("finite", |v| v.is_finite())), 0..200)) {
        let bytes = encode_points(&pts);
        let back = decode_points(&bytes).unwrap();
        prop_assert_eq!(encode_points(&back), bytes);
        prop_assert_eq!(back.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>(), pts.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn motion_round_trip_bytes(m in stack()) {
        let mut bytes = Vec::new();
        write_motion(&mut bytes, &m).unwrap();
        let back = read_motion(&mut bytes.as_slice()).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(encode_motion(&back), bytes);
    }

    #[test]
    fn motion_truncation_rejected(m in stack(), cut in 1..64usize) {
        let bytes = encode_motion(&m);
        let cut = cut.min(bytes.len());
        prop_assert!(decode_motion(&bytes[..bytes.len() - cut]).is_err());
    }
}

#[test]
fn archive_round_trip() {
    let cfg = Config::default();
    let recipe = recipe_suite("smoke").unwrap().remove(1);
    let seq = generate(&recipe, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let m = write_archive(&a, &seq, Some(&recipe)).unwrap();
    assert_eq!(read_manifest(&a).unwrap(), m);
    let back = read_archive(&a).unwrap();
    assert_eq!(back.frames, seq.frames);
    assert_eq!(back.current, seq.current);
    assert_eq!(back.ground_truth, seq.ground_truth.as_ref().map(|g| g.cast::<f32>().cast::<f64>()));
    assert!(back.annotations.is_none());

    let b = dir.path().join("b");
    write_archive(&b, &back, Some(&recipe)).unwrap();
    for rel in ["manifest.json", GT_FILE, "frames/frame_000.bin", "frames/frame_010.bin"] {
        assert_eq!(std::fs::read(a.join(rel)).unwrap(), std::fs::read(b.join(rel)).unwrap(), "{rel}");
    }
}

#[test]
fn archive_rejects_missing_frame() {
    let cfg = Config::default();
    let recipe = recipe_suite("smoke").unwrap().remove(0);
    let seq = generate(&recipe, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_archive(dir.path(), &seq, None).unwrap();
    std::fs::remove_file(dir.path().join("frames/frame_004.bin")).unwrap();
    let err = read_archive(dir.path()).unwrap_err();
    assert!(format!("{err:#}").contains("frame_004"), "{err:#}");
}
