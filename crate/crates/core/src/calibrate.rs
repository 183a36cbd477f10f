//! Monte Carlo calibration of the selective p-values and intervals on a
//! synthetic Gaussian design.
//!
//! The design is drawn once; each replication redraws `y ~ N(Xβ*, σ²I)`
//! from its own ChaCha stream, so results do not depend on scheduling.

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::inference::{run_exact_posi_xy, InferenceConfig, SigmaSource};
use crate::truncnorm::TruncGaussParams;

pub const MIN_REPLICATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub n_samples: usize,
    pub n_features: usize,
    pub sigma: f64,
    /// Nonzero entries of β* as `[index, value]` pairs; empty is the global null.
    #[serde(default)]
    pub signal: Vec<(usize, f64)>,
    pub lambda: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Use the true σ² instead of the selected-model residual estimate.
    #[serde(default)]
    pub known_sigma: bool,
}

fn default_alpha() -> f64 {
    0.05
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            n_samples: 100,
            n_features: 20,
            sigma: 1.0,
            signal: Vec::new(),
            lambda: 0.3,
            alpha: 0.05,
            known_sigma: false,
        }
    }
}

impl Scenario {
    pub fn beta_star(&self) -> Result<Array1<f64>> {
        let mut b = Array1::zeros(self.n_features);
        for &(j, v) in &self.signal {
            if j >= self.n_features {
                return Err(Error::Config(format!(
                    "signal index {j} outside {} features",
                    self.n_features
                )));
            }
            b[j] = v;
        }
        Ok(b)
    }

    pub fn design(&self, seed: u64) -> Array2<f64> {
        let mut rng = stream(seed, 0);
        Array2::from_shape_simple_fn((self.n_samples, self.n_features), || {
            StandardNormal.sample(&mut rng)
        })
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 || self.n_features == 0 {
            return Err(Error::Config(format!(
                "scenario needs n_samples >= 2 and n_features >= 1, got {}x{}",
                self.n_samples, self.n_features
            )));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::Config(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// One selective interval from a replication, with its truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSample {
    pub replication: usize,
    pub j: usize,
    /// `ηᵀXβ*`, the parameter the interval targets.
    pub target: f64,
    pub stat: f64,
    pub scale: f64,
    pub nu_minus: f64,
    pub nu_plus: f64,
    pub p_value: f64,
    /// p-value of the test at the true target; uniform under the model.
    pub p_value_at_target: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub retained: bool,
}

impl IntervalSample {
    pub fn covers(&self) -> bool {
        self.ci_lo <= self.target && self.target <= self.ci_hi
    }

    pub fn naive_covers(&self, z: f64) -> bool {
        (self.stat - self.target).abs() <= z * self.scale
    }

    pub fn is_null(&self) -> bool {
        self.target.abs() <= 1e-12 * self.scale.max(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub scenario: Scenario,
    pub replications: usize,
    pub seed: u64,
    pub replications_with_selection: usize,
    pub n_intervals: usize,
    pub n_null: usize,
    /// Kolmogorov–Smirnov distance of pooled null p-values from U(0, 1).
    pub ks_null: Option<f64>,
    /// Same, for p-values evaluated at each interval's true target.
    pub ks_at_target: f64,
    pub coverage: f64,
    pub naive_coverage: f64,
    /// Share of selected null predictors that were retained.
    pub null_retention: Option<f64>,
    #[serde(skip)]
    pub samples: Vec<IntervalSample>,
}

/// `sup_x |F_n(x) − x|` for samples on `[0, 1]`.
pub fn ks_uniform(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len() as f64;
    v.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let above = (i + 1) as f64 / n - x;
        let below = x - i as f64 / n;
        d.max(above).max(below)
    })
}

pub fn calibrate_monte_carlo(
    scenario: &Scenario,
    replications: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    if replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPLICATIONS} replications, got {replications}"
        )));
    }
    scenario.validate()?;
    let x = scenario.design(seed);
    let beta_star = scenario.beta_star()?;
    let mean = x.dot(&beta_star);
    let mut config = InferenceConfig::new(scenario.lambda, scenario.alpha);
    if scenario.known_sigma {
        config.sigma = SigmaSource::Known(scenario.sigma * scenario.sigma);
    }

    let per_rep: Vec<Vec<IntervalSample>> = (0..replications)
        .into_par_iter()
        .map(|rep| {
            let mut rng = stream(seed, rep as u64 + 1);
            let y = mean.mapv(|m| {
                let e: f64 = StandardNormal.sample(&mut rng);
                m + scenario.sigma * e
            });
            let report = run_exact_posi_xy(x.view(), y.view(), None, &config)?;
            report
                .records
                .iter()
                .map(|r| {
                    let target: f64 = r.eta.iter().zip(mean.iter()).map(|(e, m)| e * m).sum();
                    let (below, above) = TruncGaussParams::new(
                        target,
                        r.scale,
                        r.interval.nu_minus,
                        r.interval.nu_plus,
                    )?
                    .tails(r.beta_selected)?;
                    Ok(IntervalSample {
                        replication: rep,
                        j: r.j,
                        target,
                        stat: r.beta_selected,
                        scale: r.scale,
                        nu_minus: r.interval.nu_minus,
                        nu_plus: r.interval.nu_plus,
                        p_value: r.p_value,
                        p_value_at_target: (2.0 * below.min(above)).min(1.0),
                        ci_lo: r.ci_lo,
                        ci_hi: r.ci_hi,
                        retained: r.retained,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let replications_with_selection = per_rep.iter().filter(|s| !s.is_empty()).count();
    let samples: Vec<IntervalSample> = per_rep.into_iter().flatten().collect();
    if samples.is_empty() {
        return Err(Error::NoSelections(replications));
    }
    let z = Normal::new(0.0, 1.0)
        .expect("standard normal")
        .inverse_cdf(1.0 - scenario.alpha / 2.0);
    let n = samples.len() as f64;
    let nulls: Vec<&IntervalSample> = samples.iter().filter(|s| s.is_null()).collect();
    let null_p: Vec<f64> = nulls.iter().map(|s| s.p_value).collect();
    let at_target: Vec<f64> = samples.iter().map(|s| s.p_value_at_target).collect();

    Ok(CalibrationReport {
        scenario: scenario.clone(),
        replications,
        seed,
        replications_with_selection,
        n_intervals: samples.len(),
        n_null: nulls.len(),
        ks_null: (!null_p.is_empty()).then(|| ks_uniform(&null_p)),
        ks_at_target: ks_uniform(&at_target),
        coverage: samples.iter().filter(|s| s.covers()).count() as f64 / n,
        naive_coverage: samples.iter().filter(|s| s.naive_covers(z)).count() as f64 / n,
        null_retention: (!nulls.is_empty())
            .then(|| nulls.iter().filter(|s| s.retained).count() as f64 / nulls.len() as f64),
        samples,
    })
}
