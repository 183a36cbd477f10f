//! Dense helpers for the selected design `X_M`: Gram factorization, least
//! squares and projections. Everything here is small (|M| columns), so a
//! plain Cholesky on the Gram matrix is enough.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Gram matrices whose reciprocal condition estimate falls below this are
/// treated as singular.
pub const MIN_RCOND: f64 = 1e-14;

/// Columns `active` of a design, with a Cholesky factor of their Gram matrix.
#[derive(Debug, Clone)]
pub struct SelectedDesign {
    x_m: Array2<f64>,
    chol: Array2<f64>,
    rcond: f64,
}

impl SelectedDesign {
    pub fn new(x: ArrayView2<'_, f64>, active: &[usize]) -> Result<Self> {
        if active.is_empty() {
            return Err(Error::InvalidParameter("empty active set".into()));
        }
        if let Some(&j) = active.iter().find(|&&j| j >= x.ncols()) {
            return Err(Error::DimensionMismatch(format!(
                "active index {j} out of range for {} columns",
                x.ncols()
            )));
        }
        let x_m = x.select(Axis(1), active);
        let gram = x_m.t().dot(&x_m);
        let (chol, rcond) = cholesky(&gram)?;
        Ok(Self { x_m, chol, rcond })
    }

    pub fn x_m(&self) -> ArrayView2<'_, f64> {
        self.x_m.view()
    }

    pub fn n_selected(&self) -> usize {
        self.x_m.ncols()
    }

    pub fn n_samples(&self) -> usize {
        self.x_m.nrows()
    }

    /// Crude reciprocal condition estimate of `X_Mᵀ X_M` from the Cholesky diagonal.
    pub fn rcond(&self) -> f64 {
        self.rcond
    }

    /// `(X_Mᵀ X_M)⁻¹ rhs`
    pub fn solve_gram(&self, rhs: ArrayView1<'_, f64>) -> Array1<f64> {
        cholesky_solve(&self.chol, rhs)
    }

    /// Least-squares coefficients of `y` on the selected columns.
    pub fn least_squares(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        self.solve_gram(self.x_m.t().dot(&y).view())
    }

    /// `X_M (X_Mᵀ X_M)⁻¹ v`, a length-T vector.
    pub fn lift(&self, v: ArrayView1<'_, f64>) -> Array1<f64> {
        self.x_m.dot(&self.solve_gram(v))
    }

    /// Pseudo-inverse `(X_Mᵀ X_M)⁻¹ X_Mᵀ`, |M|×T.
    pub fn pseudo_inverse(&self) -> Array2<f64> {
        let k = self.n_selected();
        let mut out = Array2::zeros((k, self.n_samples()));
        for (t, row) in self.x_m.outer_iter().enumerate() {
            out.column_mut(t).assign(&self.solve_gram(row));
        }
        out
    }

    /// Orthogonal projection of `y` onto the column space of `X_M`.
    pub fn project(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        self.x_m.dot(&self.least_squares(y))
    }

    /// `y - P_M y`
    pub fn residual(&self, y: ArrayView1<'_, f64>) -> Array1<f64> {
        &y - &self.project(y)
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix, plus a
/// reciprocal condition estimate `(min L_ii / max L_ii)²`.
pub fn cholesky(a: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch(
            "cholesky needs a square matrix".into(),
        ));
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        let head = l.slice(s![j, ..j]).to_owned();
        let d = a[[j, j]] - head.dot(&head);
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::SingularDesign { rcond: 0.0 });
        }
        let ljj = d.sqrt();
        l[[j, j]] = ljj;
        for i in (j + 1)..n {
            let v = a[[i, j]] - l.slice(s![i, ..j]).dot(&head);
            l[[i, j]] = v / ljj;
        }
    }
    let diag = l.diag();
    let max = diag.iter().cloned().fold(0.0_f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    let rcond = (min / max).powi(2);
    if rcond < MIN_RCOND {
        return Err(Error::SingularDesign { rcond });
    }
    Ok((l, rcond))
}

pub fn cholesky_solve(l: &Array2<f64>, rhs: ArrayView1<'_, f64>) -> Array1<f64> {
    let n = l.nrows();
    let mut z = rhs.to_owned();
    for i in 0..n {
        let mut v = z[i];
        for k in 0..i {
            v -= l[[i, k]] * z[k];
        }
        z[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = z[i];
        for k in (i + 1)..n {
            v -= l[[k, i]] * z[k];
        }
        z[i] = v / l[[i, i]];
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn solves_small_spd_system() {
        let a = array![[4.0, 2.0], [2.0, 3.0]];
        let (l, _) = cholesky(&a).unwrap();
        let x = cholesky_solve(&l, array![2.0, 1.0].view());
        assert_abs_diff_eq!(a.dot(&x), array![2.0, 1.0], epsilon = 1e-14);
    }

    #[test]
    fn rejects_collinear_columns() {
        let x = array![[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]];
        assert!(matches!(
            SelectedDesign::new(x.view(), &[0, 1]),
            Err(Error::SingularDesign { .. })
        ));
    }

    #[test]
    fn projection_is_idempotent() {
        let x = array![[1.0, 0.5], [0.0, 1.0], [1.0, -1.0], [2.0, 0.3]];
        let d = SelectedDesign::new(x.view(), &[0, 1]).unwrap();
        let y = array![0.3, -1.0, 2.0, 0.7];
        let p = d.project(y.view());
        assert_abs_diff_eq!(d.project(p.view()), p, epsilon = 1e-12);
        assert_abs_diff_eq!(
            x.t().dot(&d.residual(y.view())),
            array![0.0, 0.0],
            epsilon = 1e-12
        );
    }
}
