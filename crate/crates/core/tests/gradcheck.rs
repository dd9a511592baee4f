use std::time::Instant;

use bevmotion::gradcheck::{default_probes, run_gradcheck, GradcheckOptions, Probe, TermProbe};
use bevmotion::losses::loss_forward;
use bevmotion::Config;

#[test]
fn every_term_passes_at_default_settings() {
    let start = Instant::now();
    let report = run_gradcheck(&default_probes(), &Config::default(), &GradcheckOptions::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let names: Vec<&str> = report.terms.iter().map(|t| t.term).collect();
    assert_eq!(names, ["L_sup", "L_c", "L_f", "L_b", "L_knn", "L_total"]);
    for t in &report.terms {
        assert_eq!(t.points, 100);
        assert!(t.passed, "{}: max relative error {:e}", t.term, t.max_relative_error);
        assert!(t.max_relative_error < 1e-5);
    }
    assert!(report.passed);
    assert!(elapsed < 30.0, "gradcheck took {elapsed:.1} s");
}

#[test]
fn sign_bug_is_caught_and_named() {
    let buggy = TermProbe::new("L_f", |x, f, b| {
        let tf = loss_forward(f, x.params.delta)?;
        let tb = loss_forward(b, x.params.delta)?;
        let mut grad_forward = tf.grad;
        grad_forward.scale(-1.0);
        Ok(Probe { value: tf.value + tb.value, grad_forward, grad_backward: tb.grad })
    });
    let opts = GradcheckOptions { points: 10, ..GradcheckOptions::default() };
    let report = run_gradcheck(&[buggy], &Config::default(), &opts).unwrap();
    assert!(!report.passed);
    let failed: Vec<_> = report.failures().collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].term, "L_f");
    let worst = failed[0].worst.as_ref().unwrap();
    assert!(worst.relative_error > 0.5, "{worst:?}");
}

#[test]
fn impossible_tolerance_fails() {
    let opts = GradcheckOptions { points: 5, tolerance: 1e-12, ..GradcheckOptions::default() };
    let report = run_gradcheck(&default_probes(), &Config::default(), &opts).unwrap();
    assert!(!report.passed);
    assert!(report.failures().count() >= 1);
}

#[test]
fn seeded_runs_repeat() {
    let opts = GradcheckOptions { points: 5, seed: 42, ..GradcheckOptions::default() };
    let a = run_gradcheck(&default_probes(), &Config::default(), &opts).unwrap();
    let b = run_gradcheck(&default_probes(), &Config::default(), &opts).unwrap();
    let errs = |r: &bevmotion::gradcheck::GradcheckReport| r.terms.iter().map(|t| t.max_relative_error.to_bits()).collect::<Vec<_>>();
    assert_eq!(errs(&a), errs(&b));
}
