//! Selection event of the Lasso as a polyhedron `{y : Ay ≤ b}` and the
//! truncation limits it implies for a linear statistic `ηᵀy`.
//!
//! The event conditions on the active set *and* the sign vector. Rows are
//! built for the half-squared-loss scaling `½‖y − Xβ‖² + λ'‖β‖₁` with
//! `λ' = Tλ/2`, which has the same minimizer as the `(1/T)‖·‖²` objective
//! solved in [`crate::lasso`].

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SelectedDesign;
use crate::serde_ext::extended_f64;

/// `|α_j|` below this puts row `j` in the α = 0 set.
pub const ALPHA_ZERO: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct SelectionPolyhedron {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub active_set: Vec<usize>,
    pub signs: Vec<f64>,
    pub lambda: f64,
    pub n_features: usize,
}

impl SelectionPolyhedron {
    pub fn n_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.a.ncols()
    }
}

/// Builds `{Ay ≤ b}` for the event "Lasso at `lambda` selects `active` with
/// signs `signs`".
///
/// Rows come in three blocks: one sign constraint per active variable, then
/// upper and lower subgradient bounds for each inactive variable, so there
/// are `|M| + 2(p − |M|)` rows.
pub fn build_polyhedron(
    x: ArrayView2<'_, f64>,
    lambda: f64,
    active: &[usize],
    signs: &[f64],
) -> Result<SelectionPolyhedron> {
    let (t, p) = x.dim();
    if active.len() != signs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} active indices but {} signs",
            active.len(),
            signs.len()
        )));
    }
    if signs.iter().any(|s| s.abs() != 1.0) {
        return Err(Error::InvalidParameter(
            "signs must be exactly +1 or -1".into(),
        ));
    }
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be > 0, got {lambda}"
        )));
    }
    let design = SelectedDesign::new(x, active)?;
    let lam = t as f64 * lambda / 2.0;
    let s = Array1::from_vec(signs.to_vec());

    let pinv = design.pseudo_inverse();
    let gram_inv_s = design.solve_gram(s.view());
    let mut a_active = pinv;
    for (mut row, &sj) in a_active.outer_iter_mut().zip(signs) {
        row *= -sj;
    }
    let b_active = &s * &gram_inv_s * (-lam);

    let inactive: Vec<usize> = (0..p).filter(|j| !active.contains(j)).collect();
    if inactive.is_empty() {
        return Ok(SelectionPolyhedron {
            a: a_active,
            b: b_active,
            active_set: active.to_vec(),
            signs: signs.to_vec(),
            lambda,
            n_features: p,
        });
    }
    let x_inactive = x.select(Axis(1), &inactive);
    // (I − P_M) X_{−M}, column by column
    let mut resid = x_inactive.clone();
    for mut col in resid.columns_mut() {
        let r = design.residual(col.view());
        col.assign(&r);
    }
    let upper = resid.t().mapv(|v| v / lam);
    let offset = x_inactive.t().dot(&design.x_m().dot(&gram_inv_s));
    let a = concatenate![Axis(0), a_active, upper, -&upper];
    let b = concatenate![
        Axis(0),
        b_active,
        offset.mapv(|v| 1.0 - v),
        offset.mapv(|v| 1.0 + v)
    ];
    Ok(SelectionPolyhedron {
        a,
        b,
        active_set: active.to_vec(),
        signs: signs.to_vec(),
        lambda,
        n_features: p,
    })
}

/// `max_j ((Ay)_j − b_j)`; non-positive iff `y` is in the polyhedron.
pub fn verify_membership(poly: &SelectionPolyhedron, y: ArrayView1<'_, f64>) -> Result<f64> {
    if y.len() != poly.n_samples() {
        return Err(Error::DimensionMismatch(format!(
            "polyhedron has {} columns, response has {}",
            poly.n_samples(),
            y.len()
        )));
    }
    Ok((poly.a.dot(&y) - &poly.b)
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Limits of `ηᵀy` on the polyhedron with everything orthogonal to `η` held
/// fixed. Empty index sets give `−∞`, `+∞`, `+∞`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncationInterval {
    #[serde(with = "extended_f64")]
    pub nu_minus: f64,
    #[serde(with = "extended_f64")]
    pub nu_plus: f64,
    #[serde(with = "extended_f64")]
    pub nu_zero: f64,
}

impl TruncationInterval {
    pub fn unbounded() -> Self {
        Self {
            nu_minus: f64::NEG_INFINITY,
            nu_plus: f64::INFINITY,
            nu_zero: f64::INFINITY,
        }
    }

    pub fn contains(&self, stat: f64) -> bool {
        self.nu_minus <= stat && stat <= self.nu_plus
    }
}

/// Truncation limits for `ηᵀy` under `y ~ N(μ, σ²I)`.
///
/// `α = AΣη / (ηᵀΣη)` with `Σ = σ²I`, so the result does not depend on
/// `sigma2` beyond validation.
pub fn truncation_interval(
    poly: &SelectionPolyhedron,
    eta: ArrayView1<'_, f64>,
    y: ArrayView1<'_, f64>,
    sigma2: f64,
) -> Result<TruncationInterval> {
    let t = poly.n_samples();
    if eta.len() != t || y.len() != t {
        return Err(Error::DimensionMismatch(format!(
            "polyhedron has {t} columns, eta has {}, y has {}",
            eta.len(),
            y.len()
        )));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sigma2 must be > 0, got {sigma2}"
        )));
    }
    let eta_var = sigma2 * eta.dot(&eta);
    if !(eta_var > 0.0) {
        return Err(Error::InvalidParameter("contrast vector is zero".into()));
    }
    let alpha = poly.a.dot(&eta.mapv(|e| e * sigma2)) / eta_var;
    let ay = poly.a.dot(&y);
    let stat = eta.dot(&y);

    let mut out = TruncationInterval::unbounded();
    for j in 0..alpha.len() {
        let (aj, slack) = (alpha[j], poly.b[j] - ay[j]);
        if aj.abs() < ALPHA_ZERO {
            out.nu_zero = out.nu_zero.min(slack);
        } else {
            let bound = (slack + aj * stat) / aj;
            if aj < 0.0 {
                out.nu_minus = out.nu_minus.max(bound);
            } else {
                out.nu_plus = out.nu_plus.min(bound);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn poly(a: Array2<f64>, b: Array1<f64>) -> SelectionPolyhedron {
        SelectionPolyhedron {
            a,
            b,
            active_set: vec![],
            signs: vec![],
            lambda: 1.0,
            n_features: 0,
        }
    }

    #[test]
    fn single_lower_constraint() {
        let p = poly(array![[-1.0]], array![0.0]);
        let iv = truncation_interval(&p, array![1.0].view(), array![0.7].view(), 1.0).unwrap();
        assert_eq!(iv.nu_minus, 0.0);
        assert_eq!(iv.nu_plus, f64::INFINITY);
        assert_eq!(iv.nu_zero, f64::INFINITY);
    }

    #[test]
    fn orthogonal_rows_only_feed_nu_zero() {
        let p = poly(array![[0.0, 1.0], [0.0, -2.0]], array![3.0, 1.0]);
        let y = array![5.0, 0.25];
        let iv = truncation_interval(&p, array![1.0, 0.0].view(), y.view(), 2.0).unwrap();
        assert_eq!(iv.nu_minus, f64::NEG_INFINITY);
        assert_eq!(iv.nu_plus, f64::INFINITY);
        assert_eq!(iv.nu_zero, (3.0_f64 - 0.25).min(1.0 + 0.5));
    }

    #[test]
    fn interval_constraints() {
        let (l, u) = (-0.5, 2.0);
        let p = poly(array![[1.0], [-1.0]], array![u, -l]);
        let iv = truncation_interval(&p, array![1.0].view(), array![0.3].view(), 1.0).unwrap();
        assert_eq!((iv.nu_minus, iv.nu_plus), (l, u));
        assert!(iv.contains(0.3));
    }

    #[test]
    fn zero_contrast_and_bad_sigma_rejected() {
        let p = poly(array![[1.0]], array![1.0]);
        assert!(truncation_interval(&p, array![0.0].view(), array![0.0].view(), 1.0).is_err());
        assert!(truncation_interval(&p, array![1.0].view(), array![0.0].view(), 0.0).is_err());
        assert!(truncation_interval(&p, array![1.0, 1.0].view(), array![0.0].view(), 1.0).is_err());
    }

    #[test]
    fn membership_dimension_checked() {
        let p = poly(array![[1.0, 0.0]], array![1.0]);
        assert!(verify_membership(&p, array![1.0].view()).is_err());
        assert_eq!(
            verify_membership(&p, array![0.5, 9.0].view()).unwrap(),
            -0.5
        );
    }

    #[test]
    fn full_selection_has_only_sign_rows() {
        let x = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let p = build_polyhedron(x.view(), 0.1, &[0, 1], &[1.0, -1.0]).unwrap();
        assert_eq!(p.n_constraints(), 2);
        let p = build_polyhedron(x.view(), 0.1, &[1], &[1.0]).unwrap();
        assert_eq!(p.n_constraints(), 3);
        assert!(build_polyhedron(x.view(), 0.1, &[1], &[0.5]).is_err());
        assert!(build_polyhedron(x.view(), 0.0, &[1], &[1.0]).is_err());
    }
}
