//! Exact post-selection inference for the Lasso-selected basket.
//!
//! Pipeline: fit the Lasso, encode its `(M, s)` selection event as a
//! polyhedron, then for every selected predictor test the selected-model
//! coefficient `ηᵀy` against its truncated Gaussian law.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{EventBlocks, ReturnsPanel};
use crate::lasso::{self, LassoFit, LassoProblem};
use crate::linalg::SelectedDesign;
use crate::polyhedron::{self, SelectionPolyhedron, TruncationInterval};
use crate::serde_ext::extended_f64;
use crate::truncnorm;

/// Residual variances below this are floored (and flagged).
pub const SIGMA2_FLOOR: f64 = 1e-12;
/// Target for `max(Ay_obs − b)` after refitting.
pub const MEMBERSHIP_TOL: f64 = 1e-8;
/// Largest membership violation the pipeline tolerates at all.
pub const MEMBERSHIP_HARD_TOL: f64 = 1e-6;
const REFINEMENTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma2: f64,
    pub dof: usize,
    /// Set when the residual variance hit [`SIGMA2_FLOOR`].
    pub floored: bool,
}

/// Selected-model residual variance `‖y − P_M y‖² / (T − |M|)`.
pub fn estimate_sigma2(design: &SelectedDesign, y: ArrayView1<'_, f64>) -> Result<NoiseModel> {
    let (t, k) = (design.n_samples(), design.n_selected());
    if t <= k {
        return Err(Error::Saturated {
            samples: t,
            selected: k,
        });
    }
    let r = design.residual(y);
    let dof = t - k;
    Ok(floor_sigma2(r.dot(&r) / dof as f64, dof))
}

fn floor_sigma2(sigma2: f64, dof: usize) -> NoiseModel {
    if sigma2 < SIGMA2_FLOOR {
        log::warn!(
            "residual variance {sigma2:e} is below {SIGMA2_FLOOR:e}; selected model fits exactly \
             and inference is unreliable"
        );
        NoiseModel {
            sigma2: SIGMA2_FLOOR,
            dof,
            floored: true,
        }
    } else {
        NoiseModel {
            sigma2,
            dof,
            floored: false,
        }
    }
}

/// Per-event residual variances pooled with weights equal to their degrees
/// of freedom. Block ranges index rows of `x`/`y`.
pub fn estimate_sigma2_per_event(
    x: ArrayView2<'_, f64>,
    active: &[usize],
    y: ArrayView1<'_, f64>,
    events: &EventBlocks,
) -> Result<NoiseModel> {
    let (mut rss, mut dof) = (0.0, 0usize);
    for block in &events.blocks {
        let xb = x.slice(ndarray::s![block.clone(), ..]);
        let yb = y.slice(ndarray::s![block.clone()]);
        let design = SelectedDesign::new(xb, active)?;
        let nm = estimate_sigma2(&design, yb)?;
        rss += nm.sigma2 * nm.dof as f64;
        dof += nm.dof;
    }
    if dof == 0 {
        return Err(Error::InvalidParameter("no events supplied".into()));
    }
    Ok(floor_sigma2(rss / dof as f64, dof))
}

/// `η = X_M (X_MᵀX_M)⁻¹ e_j`, so that `ηᵀy` is the `j`-th least-squares
/// coefficient of the selected model.
pub fn contrast_for(x: ArrayView2<'_, f64>, active: &[usize], j: usize) -> Result<Array1<f64>> {
    let design = SelectedDesign::new(x, active)?;
    contrast(&design, j)
}

fn contrast(design: &SelectedDesign, j: usize) -> Result<Array1<f64>> {
    if j >= design.n_selected() {
        return Err(Error::DimensionMismatch(format!(
            "position {j} outside selected set of size {}",
            design.n_selected()
        )));
    }
    let mut e = Array1::zeros(design.n_selected());
    e[j] = 1.0;
    Ok(design.lift(e.view()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaSource {
    /// Residual variance of the selected model on all rows.
    Pooled,
    /// Residual variances per event block, pooled by degrees of freedom.
    PerEvent,
    /// Known noise variance.
    Known(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub sigma: SigmaSource,
    /// Event blocks relative to the rows handed to the pipeline; needed for
    /// [`SigmaSource::PerEvent`].
    pub events: Option<EventBlocks>,
}

impl InferenceConfig {
    pub fn new(lambda: f64, alpha: f64) -> Self {
        Self {
            lambda,
            alpha,
            tol: lasso::DEFAULT_TOL,
            max_iter: lasso::DEFAULT_MAX_ITER,
            sigma: SigmaSource::Pooled,
            events: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if let SigmaSource::Known(s2) = self.sigma {
            if !(s2 > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "known sigma2 must be > 0, got {s2}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientInference {
    pub ticker: String,
    /// Column index in the design.
    pub j: usize,
    /// Coefficient of the Lasso fit.
    pub lasso_beta: f64,
    /// Selected-model least-squares coefficient, `ηᵀy`.
    pub beta_selected: f64,
    /// Standard deviation of `ηᵀy`, `σ‖η‖`.
    pub scale: f64,
    pub eta: Vec<f64>,
    pub interval: TruncationInterval,
    pub p_value: f64,
    #[serde(with = "extended_f64")]
    pub ci_lo: f64,
    #[serde(with = "extended_f64")]
    pub ci_hi: f64,
    /// `α/2 ≤ F(β̂; μ = 0) ≤ 1 − α/2`, equivalently `p_value ≥ α`.
    pub retained: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceDiagnostics {
    pub lasso_iterations: usize,
    pub lasso_converged: bool,
    pub lasso_objective: f64,
    pub lasso_tol: f64,
    pub critical_lambda: f64,
    pub kkt_max_violation: f64,
    pub n_constraints: usize,
    pub membership_violation: Option<f64>,
    pub refinements: usize,
    pub selected_rcond: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub lambda: f64,
    pub alpha: f64,
    pub n_samples: usize,
    pub n_features: usize,
    pub noise: Option<NoiseModel>,
    pub p_selected: usize,
    pub p_retained: usize,
    /// Lasso coefficients for all features.
    pub beta: Vec<f64>,
    pub records: Vec<CoefficientInference>,
    pub diagnostics: InferenceDiagnostics,
}

/// Runs the pipeline with the panel's asset returns as design and its
/// benchmark returns as response.
pub fn run_exact_posi(panel: &ReturnsPanel, config: &InferenceConfig) -> Result<InferenceReport> {
    run_exact_posi_xy(
        panel.x.view(),
        panel.r_b.view(),
        Some(&panel.tickers),
        config,
    )
}

pub fn run_exact_posi_xy(
    x: ArrayView2<'_, f64>,
    y: ArrayView1<'_, f64>,
    tickers: Option<&[String]>,
    config: &InferenceConfig,
) -> Result<InferenceReport> {
    config.validate()?;
    let (t, p) = x.dim();
    if let Some(names) = tickers {
        if names.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} tickers for {p} columns",
                names.len()
            )));
        }
    }
    let base = LassoProblem::new(x.to_owned(), y.to_owned(), config.lambda)?
        .with_max_iter(config.max_iter)?;
    let mut tol = config.tol;
    let mut fit = lasso::fit_lasso(&base.clone().with_tol(tol)?)?;

    let mut diag = InferenceDiagnostics {
        critical_lambda: base.critical_lambda(),
        ..Default::default()
    };

    // Step 2: selection polyhedron, tightening the solver until y_obs sits
    // inside the event of the (M, s) it reports.
    let mut poly = None;
    for round in 0..=REFINEMENTS {
        if fit.active_set.is_empty() {
            poly = None;
            break;
        }
        let candidate =
            polyhedron::build_polyhedron(x, config.lambda, &fit.active_set, &fit.signs)?;
        let violation = polyhedron::verify_membership(&candidate, y)?;
        diag.membership_violation = Some(violation);
        diag.refinements = round;
        poly = Some(candidate);
        if violation <= MEMBERSHIP_TOL || round == REFINEMENTS {
            break;
        }
        tol = (tol * 1e-2).max(1e-15);
        let problem = base.clone().with_tol(tol)?;
        fit = lasso::fit_lasso_warm(&problem, fit.beta.clone())?;
    }
    let problem = base.with_tol(tol)?;
    diag.lasso_iterations = fit.iterations;
    diag.lasso_converged = fit.converged;
    diag.lasso_objective = fit.objective;
    diag.lasso_tol = tol;
    diag.kkt_max_violation = lasso::check_kkt(&fit, &problem, 0.0).max_violation;
    if !fit.converged {
        diag.warnings.push(format!(
            "lasso did not converge in {} sweeps",
            fit.iterations
        ));
    }

    let Some(poly) = poly else {
        return Ok(InferenceReport {
            lambda: config.lambda,
            alpha: config.alpha,
            n_samples: t,
            n_features: p,
            noise: None,
            p_selected: 0,
            p_retained: 0,
            beta: fit.beta.to_vec(),
            records: Vec::new(),
            diagnostics: diag,
        });
    };
    diag.n_constraints = poly.n_constraints();
    let violation = diag.membership_violation.unwrap_or(0.0);
    if violation > MEMBERSHIP_HARD_TOL {
        return Err(Error::InvalidParameter(format!(
            "observed response violates its own selection event by {violation:e}"
        )));
    }
    if violation > MEMBERSHIP_TOL {
        diag.warnings.push(format!(
            "observed response violates its selection event by {violation:e}; truncation \
             intervals are widened to contain the observed statistics"
        ));
    }

    let design = SelectedDesign::new(x, &fit.active_set)?;
    diag.selected_rcond = Some(design.rcond());
    let noise = match &config.sigma {
        SigmaSource::Pooled => estimate_sigma2(&design, y)?,
        SigmaSource::PerEvent => {
            let events = config.events.as_ref().ok_or_else(|| {
                Error::InvalidParameter("per-event noise estimate needs event blocks".into())
            })?;
            estimate_sigma2_per_event(x, &fit.active_set, y, events)?
        }
        SigmaSource::Known(s2) => NoiseModel {
            sigma2: *s2,
            dof: t,
            floored: false,
        },
    };
    if noise.floored {
        diag.warnings
            .push("noise variance floored; selected model fits exactly".into());
    }

    let records = infer_coefficients(&design, &poly, &fit, y, tickers, noise.sigma2, config.alpha)?;
    let p_retained = records.iter().filter(|r| r.retained).count();
    Ok(InferenceReport {
        lambda: config.lambda,
        alpha: config.alpha,
        n_samples: t,
        n_features: p,
        noise: Some(noise),
        p_selected: records.len(),
        p_retained,
        beta: fit.beta.to_vec(),
        records,
        diagnostics: diag,
    })
}

/// Step 3, one independent task per selected coefficient.
fn infer_coefficients(
    design: &SelectedDesign,
    poly: &SelectionPolyhedron,
    fit: &LassoFit,
    y: ArrayView1<'_, f64>,
    tickers: Option<&[String]>,
    sigma2: f64,
    alpha: f64,
) -> Result<Vec<CoefficientInference>> {
    (0..fit.n_active())
        .into_par_iter()
        .map(|pos| {
            let j = fit.active_set[pos];
            let eta = contrast(design, pos)?;
            let stat = eta.dot(&y);
            let scale = (sigma2 * eta.dot(&eta)).sqrt();
            let mut interval = polyhedron::truncation_interval(poly, eta.view(), y, sigma2)?;
            let mut warning = None;
            if !interval.contains(stat) {
                interval.nu_minus = interval.nu_minus.min(stat);
                interval.nu_plus = interval.nu_plus.max(stat);
                warning =
                    Some("statistic outside truncation interval; interval widened".to_string());
            }
            let p_value = match truncnorm::selective_pvalue(stat, scale, &interval, 0.0) {
                Ok(p) => p,
                Err(Error::DegenerateTruncation { .. }) => {
                    warning =
                        Some("truncation mass underflows under the null; p-value set to 0".into());
                    0.0
                }
                Err(e) => return Err(e),
            };
            let (ci_lo, ci_hi) = truncnorm::invert_ci(stat, scale, &interval, alpha)?;
            Ok(CoefficientInference {
                ticker: tickers.map_or_else(|| format!("x{j}"), |names| names[j].clone()),
                j,
                lasso_beta: fit.beta[j],
                beta_selected: stat,
                scale,
                eta: eta.to_vec(),
                interval,
                p_value,
                ci_lo,
                ci_hi,
                retained: p_value >= alpha,
                warning,
            })
        })
        .collect()
}

impl InferenceReport {
    /// Lasso weights restricted to retained predictors.
    pub fn retained_beta(&self) -> Array1<f64> {
        let mut w = Array1::zeros(self.n_features);
        for r in self.records.iter().filter(|r| r.retained) {
            w[r.j] = r.lasso_beta;
        }
        w
    }

    pub fn lasso_beta(&self) -> Array1<f64> {
        Array1::from_vec(self.beta.clone())
    }
}

/// Columns of `x` at `active`, for callers that need `X_M` directly.
pub fn selected_columns(x: ArrayView2<'_, f64>, active: &[usize]) -> ndarray::Array2<f64> {
    x.select(Axis(1), active)
}
