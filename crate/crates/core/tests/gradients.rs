mod common;

use common::{gaussian, gradient_suite};
use fewlabel::contrastive::{debiased_loss, nt_xent_loss};
use fewlabel::rng::seeded;
use fewlabel::tensor::normalize_rows;

#[test]
fn every_gradient_path_matches_finite_differences() {
    for r in gradient_suite(100) {
        assert!(r.ok(), "{}: worst error {:e} over {} trials", r.name, r.worst, r.trials);
    }
}

#[test]
fn gradient_suite_exercises_clamp_and_masks() {
    let results = gradient_suite(100);
    let hits = |name: &str| -> usize { results.iter().find(|r| r.name == name).unwrap().note.parse().unwrap() };
    assert!(
        hits("debiased, clamp active") > 0,
        "no trial had a partially clamped batch"
    );
    assert!(hits("pseudo-label unlabeled loss") > 0);
    assert!(hits("fixmatch unlabeled loss") > 0);
}

#[test]
fn zero_prior_reduces_to_nt_xent() {
    let mut rng = seeded(11);
    for trial in 0..100 {
        let rows = 2 * (2 + trial % 6);
        let (z, _) = normalize_rows(&gaussian(rows, 5, 1.0, &mut rng)).unwrap();
        for t in [0.1, 0.5, 1.0] {
            let (nt, nt_grad) = nt_xent_loss(&z, t).unwrap();
            let d = debiased_loss(&z, t, 0.0).unwrap();
            assert!((nt - d.loss).abs() < 1e-9, "trial {trial}, t {t}: {nt} vs {}", d.loss);
            assert!(nt_grad.max_abs_diff(&d.grad) < 1e-9);
        }
    }
}

#[test]
fn negative_estimate_never_below_floor() {
    let mut rng = seeded(12);
    for _ in 0..100 {
        let (z, _) = normalize_rows(&gaussian(8, 4, 1.0, &mut rng)).unwrap();
        for (t, tau) in [(0.5, 0.1), (0.2, 0.5), (1.0, 0.9)] {
            let floor = (-1.0f64 / t).exp();
            let out = debiased_loss(&z, t, tau).unwrap();
            assert!(out.g.iter().all(|&g| g >= floor * (1.0 - 1e-12)));
        }
    }
}
