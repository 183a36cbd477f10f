//! Cyclic coordinate descent for
//!
//! ```text
//! minimize  (1/T)·‖y − Xβ‖² + λ·‖β‖₁
//! ```
//!
//! with no intercept and no column standardization. Clearing the factor 2
//! from the smooth part gives the per-coordinate update
//! `β_j ← S(X_jᵀ r_j, λT/2) / ‖X_j‖²`, where `r_j` is the partial residual.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// `|β_j|` above this puts `j` in the active set.
pub const ACTIVE_THRESHOLD: f64 = 1e-10;

/// `sign(z)·max(|z| − γ, 0)`
#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    debug_assert!(gamma >= 0.0);
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Smallest λ for which the solution is identically zero: `max_j |(2/T) X_jᵀ y|`.
pub fn critical_lambda(x: ArrayView2<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
    let scale = 2.0 / x.nrows() as f64;
    x.t()
        .dot(&y)
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs() * scale))
}

#[derive(Debug, Clone)]
pub struct LassoProblem {
    x: Array2<f64>,
    y: Array1<f64>,
    lambda: f64,
    tol: f64,
    max_iter: usize,
    col_sq_norms: Array1<f64>,
}

impl LassoProblem {
    pub fn new(x: Array2<f64>, y: Array1<f64>, lambda: f64) -> Result<Self> {
        let (t, p) = x.dim();
        if t == 0 || p == 0 {
            return Err(Error::DimensionMismatch(format!("design is {t}x{p}")));
        }
        if y.len() != t {
            return Err(Error::DimensionMismatch(format!(
                "design has {t} rows but response has {}",
                y.len()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "design or response has non-finite entries".into(),
            ));
        }
        let col_sq_norms = x
            .columns()
            .into_iter()
            .map(|c| c.dot(&c))
            .collect::<Array1<f64>>();
        if let Some(j) = col_sq_norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroColumn(j));
        }
        Ok(Self {
            x,
            y,
            lambda,
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            col_sq_norms,
        })
    }

    pub fn with_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tol must be > 0, got {tol}"
            )));
        }
        self.tol = tol;
        Ok(self)
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Result<Self> {
        if max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be >= 1".into()));
        }
        self.max_iter = max_iter;
        Ok(self)
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn max_iter(&self) -> usize {
        self.max_iter
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// `(1/T)‖y − Xβ‖² + λ‖β‖₁`
    pub fn objective(&self, beta: ArrayView1<'_, f64>) -> f64 {
        let r = &self.y - &self.x.dot(&beta);
        r.dot(&r) / self.n_samples() as f64 + self.lambda * l1_norm(beta)
    }

    pub fn critical_lambda(&self) -> f64 {
        critical_lambda(self.x.view(), self.y.view())
    }
}

fn l1_norm(beta: ArrayView1<'_, f64>) -> f64 {
    beta.iter().map(|b| b.abs()).sum()
}

/// Coordinate descent state; one call to [`CoordinateDescent::sweep`] visits
/// every coordinate once in index order.
pub struct CoordinateDescent<'a> {
    problem: &'a LassoProblem,
    beta: Array1<f64>,
    residual: Array1<f64>,
    threshold: f64,
    sweeps: usize,
}

impl<'a> CoordinateDescent<'a> {
    pub fn new(problem: &'a LassoProblem) -> Self {
        Self::warm(problem, Array1::zeros(problem.n_features()))
            .expect("zero start has right length")
    }

    pub fn warm(problem: &'a LassoProblem, beta: Array1<f64>) -> Result<Self> {
        if beta.len() != problem.n_features() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} coefficients, problem has {}",
                beta.len(),
                problem.n_features()
            )));
        }
        let residual = &problem.y - &problem.x.dot(&beta);
        Ok(Self {
            problem,
            beta,
            residual,
            threshold: problem.lambda * problem.n_samples() as f64 / 2.0,
            sweeps: 0,
        })
    }

    /// Runs one full cyclic sweep and returns the largest absolute
    /// coordinate change.
    pub fn sweep(&mut self) -> Result<f64> {
        let x = &self.problem.x;
        let mut max_change = 0.0_f64;
        for j in 0..self.beta.len() {
            let col = x.column(j);
            let norm = self.problem.col_sq_norms[j];
            let old = self.beta[j];
            let z = col.dot(&self.residual) + norm * old;
            let new = soft_threshold(z, self.threshold) / norm;
            let delta = new - old;
            if delta != 0.0 {
                Zip::from(&mut self.residual)
                    .and(&col)
                    .for_each(|r, &xv| *r -= xv * delta);
                self.beta[j] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        self.sweeps += 1;
        if !max_change.is_finite() || self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite {
                iteration: self.sweeps,
            });
        }
        Ok(max_change)
    }

    pub fn beta(&self) -> ArrayView1<'_, f64> {
        self.beta.view()
    }

    pub fn objective(&self) -> f64 {
        self.residual.dot(&self.residual) / self.problem.n_samples() as f64
            + self.problem.lambda * l1_norm(self.beta.view())
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    fn into_fit(self, converged: bool) -> LassoFit {
        let objective = self.objective();
        LassoFit::from_beta(self.beta, self.sweeps, converged, objective)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub beta: Array1<f64>,
    /// Indices with `|β_j| > ACTIVE_THRESHOLD`, ascending.
    pub active_set: Vec<usize>,
    /// `±1` for each entry of `active_set`.
    pub signs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub objective: f64,
}

impl LassoFit {
    /// Extracts the active set and signs from `beta`; coordinates below the
    /// active threshold are set to exactly zero.
    pub fn from_beta(
        mut beta: Array1<f64>,
        iterations: usize,
        converged: bool,
        objective: f64,
    ) -> Self {
        let mut active_set = Vec::new();
        let mut signs = Vec::new();
        for (j, b) in beta.iter_mut().enumerate() {
            if b.abs() > ACTIVE_THRESHOLD {
                active_set.push(j);
                signs.push(b.signum());
            } else {
                *b = 0.0;
            }
        }
        Self {
            beta,
            active_set,
            signs,
            iterations,
            converged,
            objective,
        }
    }

    pub fn n_active(&self) -> usize {
        self.active_set.len()
    }
}

pub fn fit_lasso(problem: &LassoProblem) -> Result<LassoFit> {
    run(CoordinateDescent::new(problem))
}

/// Like [`fit_lasso`], starting from `beta`.
pub fn fit_lasso_warm(problem: &LassoProblem, beta: Array1<f64>) -> Result<LassoFit> {
    run(CoordinateDescent::warm(problem, beta)?)
}

fn run(mut cd: CoordinateDescent<'_>) -> Result<LassoFit> {
    let (tol, max_iter) = (cd.problem.tol, cd.problem.max_iter);
    while cd.sweeps() < max_iter {
        if cd.sweep()? < tol {
            return Ok(cd.into_fit(true));
        }
    }
    log::warn!("coordinate descent hit max_iter = {max_iter} without converging");
    Ok(cd.into_fit(false))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KktReport {
    pub max_violation: f64,
    /// `true` where coordinate `j` violates its condition by more than the tolerance.
    pub violated: Vec<bool>,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        !self.violated.iter().any(|&v| v)
    }
}

/// Stationarity check with `g = (2/T) Xᵀ(y − Xβ)`: `g_j = λ s_j` on the
/// active set and `|g_j| ≤ λ` off it.
pub fn check_kkt(fit: &LassoFit, problem: &LassoProblem, kkt_tol: f64) -> KktReport {
    let t = problem.n_samples() as f64;
    let r = &problem.y - &problem.x.dot(&fit.beta);
    let grad = problem.x.t().dot(&r) * (2.0 / t);
    let lambda = problem.lambda;
    let mut violation = grad.mapv(|g| (g.abs() - lambda).max(0.0));
    for (&j, &s) in fit.active_set.iter().zip(&fit.signs) {
        violation[j] = (grad[j] - lambda * s).abs();
    }
    KktReport {
        max_violation: violation.iter().cloned().fold(0.0, f64::max),
        violated: violation.iter().map(|&v| v > kkt_tol).collect(),
    }
}
