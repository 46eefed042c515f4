//! Reference estimators: least squares, ridge, lasso and elastic net.
//!
//! All penalized fits use the per-sample quadratic loss
//! `(1/2N)‖y − Xβ‖² + (λ₂/2)‖β‖² + λ₁‖β‖₁`, applied to every response column
//! independently.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::model::Matrix;
use crate::solver::shrink;

/// Coordinate descent stops once no coordinate moves more than this in a sweep.
pub const CD_TOLERANCE: f64 = 1e-8;
pub const CD_MAX_SWEEPS: usize = 100_000;

/// Once sweeps move no coordinate by more than this, the current support and
/// signs are solved exactly and accepted if the optimality conditions hold.
const POLISH_TOLERANCE: f64 = 1e-4;

fn check_rows(x: &Matrix, y: &Matrix, op: &'static str) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::mismatch(op, format!("{} rows in y", x.rows()), y.rows()));
    }
    if x.rows() == 0 || x.cols() == 0 {
        return Err(Error::invalid("x", format!("{op} needs a non-empty design")));
    }
    Ok(())
}

fn check_penalty(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("must be nonnegative, got {v}")))
    }
}

/// Least squares via the normal equations.
pub fn ols_fit(x: &Matrix, y: &Matrix) -> Result<Matrix> {
    check_rows(x, y, "ols_fit")?;
    let xa = x.as_array();
    let gram = xa.t().dot(xa);
    let rhs = xa.t().dot(y.as_array());
    let beta = Cholesky::new(gram.view(), "ols_fit")?.solve(rhs.view());
    Matrix::from_array(beta)
}

/// Ridge regression minimizing `(1/2N)‖y − Xβ‖² + (λ/2)‖β‖²`, i.e.
/// `β = (XᵀX/N + λI)⁻¹ Xᵀy/N`.
pub fn ridge_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<Matrix> {
    check_rows(x, y, "ridge_fit")?;
    check_penalty("lambda", lambda)?;
    let n = x.rows() as f64;
    let xa = x.as_array();
    let mut gram = xa.t().dot(xa) / n;
    for i in 0..gram.nrows() {
        gram[[i, i]] += lambda;
    }
    let rhs = xa.t().dot(y.as_array()) / n;
    let beta = Cholesky::new(gram.view(), "ridge_fit")?.solve(rhs.view());
    Matrix::from_array(beta)
}

/// Lasso by cyclic coordinate descent.
pub fn lasso_fit(x: &Matrix, y: &Matrix, lambda: f64) -> Result<Matrix> {
    elastic_net_fit(x, y, lambda, 0.0)
}

/// Elastic net by cyclic coordinate descent.
pub fn elastic_net_fit(x: &Matrix, y: &Matrix, lambda_l1: f64, lambda_l2: f64) -> Result<Matrix> {
    CoordinateDescent::new(x, y)?.fit(lambda_l1, lambda_l2, None)
}

/// Penalized objective `(1/2N)‖y − Xβ‖²_F + (λ₂/2)‖β‖²_F + λ₁‖β‖₁`.
pub fn penalized_objective(x: &Matrix, y: &Matrix, beta: &Matrix, lambda_l1: f64, lambda_l2: f64) -> f64 {
    let resid = x.as_array().dot(beta.as_array()) - y.as_array();
    let n = x.rows() as f64;
    let fit = resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * n);
    let l2 = beta.as_array().iter().map(|b| b * b).sum::<f64>();
    let l1 = beta.as_array().iter().map(|b| b.abs()).sum::<f64>();
    fit + 0.5 * lambda_l2 * l2 + lambda_l1 * l1
}

/// Coordinate-descent solver with the Gram matrix cached, so that fitting
/// many penalty values on the same data only pays for `XᵀX` once.
pub struct CoordinateDescent {
    /// `XᵀX / N`
    gram: Array2<f64>,
    /// `Xᵀy / N`
    xty: Array2<f64>,
}

impl CoordinateDescent {
    pub fn new(x: &Matrix, y: &Matrix) -> Result<Self> {
        check_rows(x, y, "coordinate descent")?;
        let n = x.rows() as f64;
        let xa = x.as_array();
        Ok(CoordinateDescent {
            gram: xa.t().dot(xa) / n,
            xty: xa.t().dot(y.as_array()) / n,
        })
    }

    /// Smallest `λ₁` at which the lasso solution is all zero, `max|Xᵀy|/N`.
    pub fn lambda_max(&self) -> f64 {
        self.xty.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Fits one penalty pair, optionally warm-started from `init`. The
    /// objective is strictly convex whenever `λ₂ > 0` or `X` has full column
    /// rank, so the warm start only changes the iteration count.
    pub fn fit(&self, lambda_l1: f64, lambda_l2: f64, init: Option<&Matrix>) -> Result<Matrix> {
        self.fit_traced(lambda_l1, lambda_l2, init, None)
    }

    pub(crate) fn fit_traced(
        &self,
        lambda_l1: f64,
        lambda_l2: f64,
        init: Option<&Matrix>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<Matrix> {
        check_penalty("lambda_l1", lambda_l1)?;
        check_penalty("lambda_l2", lambda_l2)?;
        let d = self.gram.nrows();
        let p = self.xty.ncols();
        let mut beta = match init {
            Some(b) if b.shape() == (d, p) => b.as_array().clone(),
            Some(b) => return Err(Error::mismatch("warm start", format!("({d}, {p})"), format!("{:?}", b.shape()))),
            None => Array2::zeros((d, p)),
        };
        for j in 0..p {
            let mut column = beta.column(j).to_owned();
            self.fit_column(self.xty.column(j), &mut column, lambda_l1, lambda_l2, trace.as_deref_mut())?;
            beta.column_mut(j).assign(&column);
        }
        Matrix::from_array(beta)
    }

    fn fit_column(
        &self,
        xty: ArrayView1<f64>,
        beta: &mut Array1<f64>,
        lambda_l1: f64,
        lambda_l2: f64,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<()> {
        let d = beta.len();
        // q = Gβ, kept in sync with every coordinate update.
        let mut q = self.gram.dot(&*beta);
        let mut tried: Option<Vec<i8>> = None;
        for _ in 0..CD_MAX_SWEEPS {
            let mut max_delta: f64 = 0.0;
            for j in 0..d {
                let g_jj = self.gram[[j, j]];
                let old = beta[j];
                let rho = xty[j] - q[j] + g_jj * old;
                let denom = g_jj + lambda_l2;
                let new = if denom > 0.0 { shrink(rho, lambda_l1) / denom } else { 0.0 };
                let delta = new - old;
                if delta != 0.0 {
                    beta[j] = new;
                    q.scaled_add(delta, &self.gram.column(j));
                    max_delta = max_delta.max(delta.abs());
                }
            }
            if let Some(trace) = trace.as_deref_mut() {
                trace.push(self.column_objective(xty, beta, lambda_l1, lambda_l2));
            }
            if max_delta < CD_TOLERANCE {
                return Ok(());
            }
            if max_delta < POLISH_TOLERANCE {
                let pattern: Vec<i8> = beta.iter().map(|b| sign(*b)).collect();
                if tried.as_ref() != Some(&pattern) {
                    if let Some(exact) = self.polish(xty, beta, lambda_l1, lambda_l2) {
                        *beta = exact;
                        if let Some(trace) = trace.as_deref_mut() {
                            trace.push(self.column_objective(xty, beta, lambda_l1, lambda_l2));
                        }
                        return Ok(());
                    }
                    tried = Some(pattern);
                }
            }
        }
        Err(Error::NotConverged {
            what: "coordinate descent",
            iterations: CD_MAX_SWEEPS,
        })
    }

    /// Solves the stationarity equations on the support of `beta` with its
    /// signs held fixed, `(G_AA + λ₂I)β_A = (Xᵀy/N)_A − λ₁·sign(β_A)`, and
    /// returns the result only if it keeps those signs and every coordinate
    /// outside the support satisfies `|(Xᵀy/N − Gβ)_j| ≤ λ₁`. Such a point is
    /// the exact minimizer.
    fn polish(&self, xty: ArrayView1<f64>, beta: &Array1<f64>, l1: f64, l2: f64) -> Option<Array1<f64>> {
        let d = beta.len();
        let active: Vec<usize> = (0..d).filter(|&j| l1 == 0.0 || beta[j] != 0.0).collect();
        let mut exact = Array1::zeros(d);
        if !active.is_empty() {
            let m = active.len();
            let mut a = Array2::zeros((m, m));
            let mut rhs = Array2::zeros((m, 1));
            for (r, &i) in active.iter().enumerate() {
                for (c, &j) in active.iter().enumerate() {
                    a[[r, c]] = self.gram[[i, j]];
                }
                a[[r, r]] += l2;
                rhs[[r, 0]] = xty[i] - l1 * f64::from(sign(beta[i]));
            }
            let solved = Cholesky::new(a.view(), "elastic net").ok()?.solve(rhs.view());
            for (r, &i) in active.iter().enumerate() {
                if l1 > 0.0 && sign(solved[[r, 0]]) != sign(beta[i]) {
                    return None;
                }
                exact[i] = solved[[r, 0]];
            }
        }
        if l1 > 0.0 {
            let q = self.gram.dot(&exact);
            let scale = xty.iter().fold(l1, |m, v| m.max(v.abs()));
            let slack = 1e-12 * (1.0 + scale);
            for j in 0..d {
                if exact[j] == 0.0 && (xty[j] - q[j]).abs() > l1 + slack {
                    return None;
                }
            }
        }
        Some(exact)
    }

    /// Column objective up to the constant `‖y‖²/2N`.
    fn column_objective(&self, xty: ArrayView1<f64>, beta: &Array1<f64>, l1: f64, l2: f64) -> f64 {
        let quad = 0.5 * beta.dot(&self.gram.dot(beta));
        quad - xty.dot(beta) + 0.5 * l2 * beta.dot(beta) + l1 * beta.iter().map(|b| b.abs()).sum::<f64>()
    }
}

fn sign(v: f64) -> i8 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

/// Ascending grid of penalty values from 0 to `lambda_max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaGrid {
    pub values: Vec<f64>,
    pub lambda_max: f64,
}

/// `n_points` equally spaced values on `[0, lambda_max]`, both ends included.
pub fn lambda_grid(lambda_max: f64, n_points: usize) -> Result<LambdaGrid> {
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::invalid("lambda_max", format!("must be positive, got {lambda_max}")));
    }
    if n_points < 2 {
        return Err(Error::invalid("n_points", format!("need at least 2, got {n_points}")));
    }
    let last = (n_points - 1) as f64;
    let mut values: Vec<f64> = (0..n_points).map(|i| lambda_max * i as f64 / last).collect();
    values[n_points - 1] = lambda_max;
    Ok(LambdaGrid { values, lambda_max })
}

/// Maps a mixture weight `a ∈ [0, 1]` and overall strength `λ` to
/// `(λ₁, λ₂) = (aλ, (1 − a)λ)`.
pub fn mixture_penalties(mixture: f64, lambda: f64) -> (f64, f64) {
    (mixture * lambda, (1.0 - mixture) * lambda)
}
