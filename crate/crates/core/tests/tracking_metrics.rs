mod common;

use ndarray::Array1;
use proptest::prelude::*;

use posi_track::tracking::{ete, pearson_corr};

fn series(seed: u64, n: usize) -> (Array1<f64>, Array1<f64>) {
    let mut rng = common::rng(seed);
    let a = common::gaussian_vector(&mut rng, n);
    let b = &a * 0.5 + common::gaussian_vector(&mut rng, n);
    (a, b)
}

proptest! {
    #![proptest_config(common::proptest_cases(64))]

    #[test]
    fn exact_replication_has_zero_tracking_error(seed in 0u64..10_000, t in 1usize..60, p in 1usize..10) {
        let mut rng = common::rng(seed);
        let x = common::gaussian_matrix(&mut rng, t, p);
        let w = common::gaussian_vector(&mut rng, p);
        let rb = x.dot(&w);
        prop_assert_eq!(ete(x.view(), w.view(), rb.view()).unwrap(), 0.0);
        prop_assert!(ete(x.view(), w.view(), (&rb + 0.1).view()).unwrap() > 0.0);
    }

    #[test]
    fn correlation_is_permutation_invariant(seed in 0u64..10_000, n in 3usize..80, shift in 1usize..79) {
        let (a, b) = series(seed, n);
        let k = shift % n;
        let rot = |v: &Array1<f64>| Array1::from_iter(v.iter().cycle().skip(k).take(n).copied());
        let c1 = pearson_corr(a.view(), b.view()).unwrap();
        let c2 = pearson_corr(rot(&a).view(), rot(&b).view()).unwrap();
        prop_assert!((c1 - c2).abs() <= 1e-12);
    }

    #[test]
    fn correlation_is_affine_invariant(seed in 0u64..10_000, n in 3usize..80, scale in 0.01f64..100.0, offset in -50.0f64..50.0) {
        let (a, b) = series(seed, n);
        let c1 = pearson_corr(a.view(), b.view()).unwrap();
        let c2 = pearson_corr(a.mapv(|v| scale * v + offset).view(), b.view()).unwrap();
        let c3 = pearson_corr(a.mapv(|v| -scale * v + offset).view(), b.view()).unwrap();
        prop_assert!((c1 - c2).abs() <= 1e-10);
        prop_assert!((c1 + c3).abs() <= 1e-10);
        prop_assert!((-1.0..=1.0).contains(&c1));
    }
}
