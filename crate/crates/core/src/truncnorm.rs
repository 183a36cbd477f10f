//! Truncated normal CDF, selective p-values and confidence-interval inversion.
//!
//! Probabilities are formed as ratios of interval masses computed in log
//! space. An interval entirely in one tail is measured through upper-tail
//! probabilities `Q(z) = ½ erfc(z/√2)` (with an asymptotic expansion past
//! the point where `erfc` underflows); an interval straddling zero is
//! measured as a sum of two `erf` terms; a narrow interval, over which the
//! density barely changes, is integrated directly by Gauss–Legendre
//! quadrature. None of the paths subtracts nearly equal quantities, so
//! truncations deep in either tail keep full relative precision.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};

use crate::error::{Error, Result};
use crate::polyhedron::TruncationInterval;

/// Beyond this standardized value `ln Q(z)` uses the asymptotic series.
const ASYMPTOTIC_Z: f64 = 35.0;
const MAX_BISECTIONS: usize = 200;
const MAX_EXPANSIONS: usize = 64;
/// Intervals with `h·(|m| + h) ≤` this (half-width `h`, midpoint `m`) are
/// integrated by quadrature.
const NARROW: f64 = 0.5;

/// Positive nodes and weights of the 10-point Gauss–Legendre rule on [−1, 1].
const GAUSS_LEGENDRE_10: [(f64, f64); 5] = [
    (0.148_874_338_981_631_2, 0.295_524_224_714_752_9),
    (0.433_395_394_129_247_2, 0.269_266_719_309_996_3),
    (0.679_409_568_299_024_4, 0.219_086_362_515_982),
    (0.865_063_366_688_984_5, 0.149_451_349_150_580_6),
    (0.973_906_528_517_171_7, 0.066_671_344_308_688_1),
];

/// `ln Q(z)` for `z ≥ 0`.
fn ln_upper_tail(z: f64) -> f64 {
    debug_assert!(z >= 0.0);
    if z == f64::INFINITY {
        f64::NEG_INFINITY
    } else if z < ASYMPTOTIC_Z {
        (0.5 * erfc(z * FRAC_1_SQRT_2)).ln()
    } else {
        // Q(z) = φ(z)/z · (1 − 1/z² + 3/z⁴ − 15/z⁶ + 105/z⁸ − 945/z¹⁰ + …)
        let w = 1.0 / (z * z);
        let series = 1.0 - w * (1.0 - w * (3.0 - w * (15.0 - w * (105.0 - w * 945.0))));
        -0.5 * z * z - z.ln() - 0.5 * (2.0 * PI).ln() + series.ln()
    }
}

fn erf_ext(z: f64) -> f64 {
    if z.is_infinite() {
        z.signum()
    } else {
        erf(z)
    }
}

/// `ln ∫ φ` over `[m − h, m + h]`, with `φ(m)` factored out of the integrand.
fn ln_mass_narrow(m: f64, h: f64) -> f64 {
    let sum: f64 = GAUSS_LEGENDRE_10
        .iter()
        .map(|&(x, w)| {
            let u = h * x;
            let damp = -0.5 * u * u;
            w * ((damp - m * u).exp() + (damp + m * u).exp())
        })
        .sum();
    -0.5 * m * m - 0.5 * (2.0 * PI).ln() + (h * sum).ln()
}

/// `ln(Φ(hi) − Φ(lo))` for standardized bounds `lo ≤ hi`.
fn ln_mass(lo: f64, hi: f64) -> f64 {
    if !(lo < hi) {
        return f64::NEG_INFINITY;
    }
    let h = 0.5 * (hi - lo);
    let m = 0.5 * (lo + hi);
    if h.is_finite() && h * (m.abs() + h) <= NARROW {
        ln_mass_narrow(m, h)
    } else if lo >= 0.0 {
        let (qa, qb) = (ln_upper_tail(lo), ln_upper_tail(hi));
        qa + (-(qb - qa).exp_m1()).ln()
    } else if hi <= 0.0 {
        ln_mass(-hi, -lo)
    } else {
        (0.5 * (erf_ext(hi * FRAC_1_SQRT_2) - erf_ext(lo * FRAC_1_SQRT_2))).ln()
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    if z >= 0.0 {
        1.0 - 0.5 * erfc(z * FRAC_1_SQRT_2)
    } else {
        0.5 * erfc(-z * FRAC_1_SQRT_2)
    }
}

/// Normal law `N(mu, sigma²)` restricted to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncGaussParams {
    pub mu: f64,
    pub sigma: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncGaussParams {
    pub fn new(mu: f64, sigma: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sigma must be > 0, got {sigma}"
            )));
        }
        if !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "mu must be finite, got {mu}"
            )));
        }
        if !(lower < upper) {
            return Err(Error::InvalidParameter(format!(
                "truncation needs lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            lower,
            upper,
        })
    }

    fn standardize(&self, v: f64) -> f64 {
        (v - self.mu) / self.sigma
    }

    /// `(P(X ≤ x), P(X ≥ x))`, each computed directly so the smaller of
    /// the two keeps relative precision.
    pub fn tails(&self, x: f64) -> Result<(f64, f64)> {
        let x = x.clamp(self.lower, self.upper);
        let (a, b, z) = (
            self.standardize(self.lower),
            self.standardize(self.upper),
            self.standardize(x),
        );
        let total = ln_mass(a, b);
        if !total.is_finite() {
            return Err(Error::DegenerateTruncation {
                mu: self.mu,
                sigma: self.sigma,
                lower: self.lower,
                upper: self.upper,
            });
        }
        let below = (ln_mass(a, z) - total).exp().clamp(0.0, 1.0);
        let above = (ln_mass(z, b) - total).exp().clamp(0.0, 1.0);
        Ok((below, above))
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.tails(x).map(|(lo, _)| lo)
    }
}

pub fn trunc_norm_cdf(x: f64, params: &TruncGaussParams) -> Result<f64> {
    params.cdf(x)
}

fn check_inside(stat: f64, interval: &TruncationInterval) -> Result<()> {
    if !stat.is_finite() || !interval.contains(stat) {
        return Err(Error::OutsideTruncation {
            stat,
            lower: interval.nu_minus,
            upper: interval.nu_plus,
        });
    }
    Ok(())
}

fn params_at(mu: f64, scale: f64, interval: &TruncationInterval) -> Result<TruncGaussParams> {
    TruncGaussParams::new(mu, scale, interval.nu_minus, interval.nu_plus)
}

/// Two-sided selective p-value `2·min(F, 1 − F)` for `H0: mean = null_value`.
pub fn selective_pvalue(
    stat: f64,
    scale: f64,
    interval: &TruncationInterval,
    null_value: f64,
) -> Result<f64> {
    check_inside(stat, interval)?;
    let (below, above) = params_at(null_value, scale, interval)?.tails(stat)?;
    Ok((2.0 * below.min(above)).min(1.0))
}

/// Solves `F(stat; μ) = target` for μ, where `F` decreases in μ.
fn solve_mean(stat: f64, scale: f64, interval: &TruncationInterval, target: f64) -> Result<f64> {
    let f = |mu: f64| params_at(mu, scale, interval)?.cdf(stat);
    let mut half = 10.0 * scale;
    let (mut lo, mut hi) = (stat - half, stat + half);
    let mut expansions = 0;
    loop {
        let (f_lo, f_hi) = (f(lo)?, f(hi)?);
        if f_lo >= target && f_hi <= target {
            break;
        }
        expansions += 1;
        if expansions > MAX_EXPANSIONS {
            return Err(Error::Bracketing(format!(
                "target {target} not bracketed: F({lo:e}) = {f_lo}, F({hi:e}) = {f_hi}, \
                 stat = {stat}, scale = {scale}, bounds = [{}, {}]",
                interval.nu_minus, interval.nu_plus
            )));
        }
        half *= 2.0;
        if f_lo < target {
            lo = stat - half;
        }
        if f_hi > target {
            hi = stat + half;
        }
    }
    let tol = 1e-8 * scale;
    for _ in 0..MAX_BISECTIONS {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Selective confidence interval `{μ : α/2 ≤ F(stat; μ) ≤ 1 − α/2}`.
pub fn invert_ci(
    stat: f64,
    scale: f64,
    interval: &TruncationInterval,
    alpha: f64,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha must be in (0, 1), got {alpha}"
        )));
    }
    if !(scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "scale must be > 0, got {scale}"
        )));
    }
    check_inside(stat, interval)?;
    let lower = solve_mean(stat, scale, interval, 1.0 - alpha / 2.0)?;
    let upper = solve_mean(stat, scale, interval, alpha / 2.0)?;
    Ok((lower, upper))
}

/// Mean at which `F(stat; μ) = ½`.
pub fn median_unbiased_estimate(
    stat: f64,
    scale: f64,
    interval: &TruncationInterval,
) -> Result<f64> {
    check_inside(stat, interval)?;
    solve_mean(stat, scale, interval, 0.5)
}
