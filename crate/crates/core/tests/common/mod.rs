#![allow(dead_code)]

use std::fmt::Write;

use chrono::{Datelike, NaiveDate, Weekday};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || rng.sample(StandardNormal))
}

/// Business days starting 2016-01-04.
pub fn business_days(n: usize) -> Vec<NaiveDate> {
    let mut d = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().unwrap();
    }
    out
}

/// Long-format CSV with `n_assets` stocks driven by one market factor and an
/// `SPX` series whose returns are a fixed basket of the first eight stocks
/// plus a little noise.
#[allow(clippy::needless_range_loop)]
pub fn synthetic_price_csv(seed: u64, n_assets: usize, n_dates: usize) -> String {
    let mut rng = rng(seed);
    let dates = business_days(n_dates);
    let mut prices = vec![vec![0.0; n_assets]; n_dates];
    let mut index = vec![0.0; n_dates];
    for j in 0..n_assets {
        prices[0][j] = 20.0 + 5.0 * j as f64;
    }
    index[0] = 2000.0;
    let weights = [0.2, 0.15, 0.15, 0.1, 0.1, 0.1, 0.1, 0.1];
    for t in 1..n_dates {
        let market: f64 = 0.008 * rng.sample::<f64, _>(StandardNormal);
        let mut basket = 0.0;
        for j in 0..n_assets {
            let r = 0.0003 + market + 0.01 * rng.sample::<f64, _>(StandardNormal);
            prices[t][j] = prices[t - 1][j] * (1.0 + r);
            if j < weights.len() {
                basket += weights[j] * r;
            }
        }
        let noise = 0.001 * rng.sample::<f64, _>(StandardNormal);
        index[t] = index[t - 1] * (1.0 + basket + noise);
    }
    let mut out = String::from("date,ticker,close\n");
    for (t, d) in dates.iter().enumerate() {
        for j in 0..n_assets {
            writeln!(out, "{d},S{j:03},{:.6}", prices[t][j]).unwrap();
        }
        writeln!(out, "{d},SPX,{:.6}", index[t]).unwrap();
    }
    out
}

use posi_track::lasso::{critical_lambda, fit_lasso, LassoProblem};
use posi_track::polyhedron::{build_polyhedron, verify_membership};

pub struct EquivalenceTally {
    pub checked: usize,
    pub agreed: usize,
    /// Samples whose refit reproduced the observed event.
    pub inside: usize,
    /// `|max(Ay − b)|` for each disagreement.
    pub disagreement_margins: Vec<f64>,
}

/// Draws a small Lasso problem, builds the polyhedron of its observed
/// selection event and compares, for perturbed responses, "Lasso refit
/// reproduces `(M, s)`" with "`Ay ≤ b`".
pub fn polyhedron_equivalence(seed: u64, samples: usize) -> EquivalenceTally {
    let mut rng = rng(seed);
    let t = 8 + (seed as usize % 13);
    let p = 1 + (seed as usize % 5);
    let x = gaussian_matrix(&mut rng, t, p);
    let mut beta = Array1::zeros(p);
    beta[0] = 1.5;
    if p > 2 {
        beta[2] = -1.0;
    }
    let y = x.dot(&beta) + gaussian_vector(&mut rng, t);
    let lambda = 0.4 * critical_lambda(x.view(), y.view());
    let solve = |y: &Array1<f64>| {
        let prob = LassoProblem::new(x.clone(), y.clone(), lambda)
            .unwrap()
            .with_tol(1e-13)
            .unwrap();
        fit_lasso(&prob).unwrap()
    };
    let fit = solve(&y);
    let poly = build_polyhedron(x.view(), lambda, &fit.active_set, &fit.signs).unwrap();
    let mut tally = EquivalenceTally {
        checked: 0,
        agreed: 0,
        inside: 0,
        disagreement_margins: Vec::new(),
    };
    for _ in 0..samples {
        let y2 = &y + &(gaussian_vector(&mut rng, t) * 0.6);
        let refit = solve(&y2);
        let same_event = refit.active_set == fit.active_set && refit.signs == fit.signs;
        let margin = verify_membership(&poly, y2.view()).unwrap();
        tally.checked += 1;
        tally.inside += usize::from(same_event);
        if same_event == (margin <= 0.0) {
            tally.agreed += 1;
        } else {
            tally.disagreement_margins.push(margin.abs());
        }
    }
    tally
}

pub struct OracleRow {
    pub x: f64,
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
    pub cdf: f64,
}

/// High-precision truncated normal CDF values (see `data/gen_truncnorm_oracle.py`).
pub fn truncnorm_oracle() -> Vec<OracleRow> {
    let path = concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/data/truncnorm_oracle.csv"
    );
    let mut reader = csv::Reader::from_path(path).expect("oracle fixture");
    reader
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            let f = |i: usize| rec[i].parse::<f64>().unwrap();
            OracleRow {
                x: f(0),
                mu: f(1),
                sigma: f(2),
                lower: f(3),
                upper: f(4),
                cdf: f(5),
            }
        })
        .collect()
}

/// Proptest settings for integration tests, which have no source file for
/// proptest to anchor a regressions directory to.
pub fn proptest_cases(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..Default::default()
    }
}
