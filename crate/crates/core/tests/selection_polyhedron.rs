mod common;

use approx::assert_abs_diff_eq;
use ndarray::{array, Array1};
use proptest::prelude::*;

use posi_track::lasso::{critical_lambda, fit_lasso, LassoProblem};
use posi_track::polyhedron::{build_polyhedron, truncation_interval, verify_membership};

#[test]
fn membership_matches_lasso_refits() {
    let (mut checked, mut agreed, mut inside) = (0, 0, 0);
    for seed in 0..20 {
        let tally = common::polyhedron_equivalence(seed, 200);
        checked += tally.checked;
        agreed += tally.agreed;
        inside += tally.inside;
        for m in &tally.disagreement_margins {
            assert!(
                *m <= 1e-8,
                "seed {seed}: disagreement {m:e} from the boundary"
            );
        }
    }
    println!("agreement {agreed}/{checked}, {inside} inside");
    assert!(inside > checked / 10 && inside < checked * 9 / 10);
    assert!(agreed as f64 / checked as f64 >= 0.99, "{agreed}/{checked}");
}

#[test]
fn single_feature_has_one_constraint() {
    let x = array![[1.0], [2.0], [-1.0], [0.5], [0.0]];
    let poly = build_polyhedron(x.view(), 0.1, &[0], &[1.0]).unwrap();
    assert_eq!(poly.n_constraints(), 1);
    assert!(build_polyhedron(x.view(), 0.1, &[], &[]).is_err());
}

#[test]
fn row_count_and_observed_membership() {
    for seed in 0..10 {
        let mut rng = common::rng(seed);
        let (t, p) = (30, 7);
        let x = common::gaussian_matrix(&mut rng, t, p);
        let y = x.column(1).to_owned() * 2.0 + common::gaussian_vector(&mut rng, t);
        let lambda = 0.2 * critical_lambda(x.view(), y.view());
        let prob = LassoProblem::new(x.clone(), y.clone(), lambda)
            .unwrap()
            .with_tol(1e-12)
            .unwrap();
        let fit = fit_lasso(&prob).unwrap();
        let poly = build_polyhedron(x.view(), lambda, &fit.active_set, &fit.signs).unwrap();
        let k = fit.active_set.len();
        assert_eq!(poly.n_constraints(), k + 2 * (p - k));
        assert!(verify_membership(&poly, y.view()).unwrap() <= 1e-9);
        // Flipping the response far outside flips signs, so membership fails.
        let flipped = y.mapv(|v| -10.0 * v);
        assert!(verify_membership(&poly, flipped.view()).unwrap() > 0.0);
    }
}

fn fitted_problem(seed: u64) -> (ndarray::Array2<f64>, Array1<f64>, f64, Vec<usize>, Vec<f64>) {
    let mut rng = common::rng(seed);
    let x = common::gaussian_matrix(&mut rng, 25, 5);
    let y = x.column(0).to_owned() * 1.5 + common::gaussian_vector(&mut rng, 25);
    let lambda = 0.3 * critical_lambda(x.view(), y.view());
    let prob = LassoProblem::new(x.clone(), y.clone(), lambda)
        .unwrap()
        .with_tol(1e-12)
        .unwrap();
    let fit = fit_lasso(&prob).unwrap();
    (x, y, lambda, fit.active_set, fit.signs)
}

proptest! {
    #![proptest_config(common::proptest_cases(24))]

    #[test]
    fn interval_scales_with_contrast(seed in 0u64..500, c in 0.01f64..100.0) {
        let (x, y, lambda, active, signs) = fitted_problem(seed);
        prop_assume!(!active.is_empty());
        let poly = build_polyhedron(x.view(), lambda, &active, &signs).unwrap();
        let eta = posi_track::inference::contrast_for(x.view(), &active, active[0]).unwrap();
        let base = truncation_interval(&poly, eta.view(), y.view(), 1.0).unwrap();
        let scaled = truncation_interval(&poly, (&eta * c).view(), y.view(), 1.0).unwrap();
        for (a, b) in [(base.nu_minus, scaled.nu_minus), (base.nu_plus, scaled.nu_plus)] {
            if a.is_finite() {
                prop_assert!((c * a - b).abs() <= 1e-9 * (1.0 + (c * a).abs()), "{} vs {b}", c * a);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn interval_ignores_noise_level(seed in 0u64..500, s2 in 1e-4f64..1e4) {
        let (x, y, lambda, active, signs) = fitted_problem(seed);
        prop_assume!(!active.is_empty());
        let poly = build_polyhedron(x.view(), lambda, &active, &signs).unwrap();
        let eta = posi_track::inference::contrast_for(x.view(), &active, active[0]).unwrap();
        let a = truncation_interval(&poly, eta.view(), y.view(), 1.0).unwrap();
        let b = truncation_interval(&poly, eta.view(), y.view(), s2).unwrap();
        let close = |u: f64, v: f64| u == v || (u - v).abs() <= 1e-9 * (1.0 + u.abs());
        prop_assert!(close(a.nu_minus, b.nu_minus) && close(a.nu_plus, b.nu_plus));
        prop_assert!(a.contains(eta.dot(&y)));
    }
}

#[test]
fn hand_computed_single_feature_interval() {
    // x = (1, 1)ᵀ, λ = 1 so λ' = 1; active {0} with s = +1:
    // −(1/2)(y1 + y2) ≤ −1/2, i.e. ηᵀy ≥ 1/2 for η = (1/2, 1/2).
    let x = array![[1.0], [1.0]];
    let poly = build_polyhedron(x.view(), 1.0, &[0], &[1.0]).unwrap();
    assert_abs_diff_eq!(poly.a, array![[-0.5, -0.5]], epsilon = 1e-15);
    assert_abs_diff_eq!(poly.b, array![-0.5], epsilon = 1e-15);
    let eta = array![0.5, 0.5];
    let iv = truncation_interval(&poly, eta.view(), array![2.0, 1.0].view(), 1.0).unwrap();
    assert_abs_diff_eq!(iv.nu_minus, 0.5, epsilon = 1e-15);
    assert_eq!(iv.nu_plus, f64::INFINITY);
}
