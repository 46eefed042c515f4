//! Multiple Split Linearized Bregman Iteration.
//!
//! For a design `X ∈ R^{N×d}` and responses `E ∈ R^{N×p}` the solver works
//! on the split loss
//!
//! ```text
//! ℓ(B, Γ) = s·‖XB − E‖²_F + (1/2ν)·‖B − Γ‖²_F
//! ```
//!
//! where `s` is the loss scale (`1/(2N)` by default). Each iteration is
//!
//! ```text
//! B_{k+1} = B_k − κα ∇_B ℓ(B_k, Γ_k)
//! Z_{k+1} = Z_k − α ∇_Γ ℓ(B_k, Γ_k)
//! Γ_{k+1} = κ · S(Z_{k+1}, 1)
//! B̃_{k+1} = B_{k+1} restricted to supp(Γ_{k+1})
//! ```
//!
//! starting from all-zero `B, Z, Γ, B̃`. The iterates indexed by `t_k = kα`
//! form a regularization path: `Γ` (and hence `B̃`) gains support as `t`
//! grows, while `B` stays dense and picks up the weaker coefficients.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    frobenius_norm, spectral_norm, Decomposition, Hyperparams, Matrix, Path, PathPoint,
    SolverState, StepSize,
};

/// Target number of recorded points when `record_every` is left to default.
pub const DEFAULT_PATH_POINTS: f64 = 500.0;

/// Relative slack allowed when an explicit step size is checked against the
/// stability bound.
const STEP_BOUND_SLACK: f64 = 1e-9;

/// A multi-response regression problem together with its solver settings.
///
/// Construction validates shapes and hyperparameters, resolves the loss
/// scale and step size, and caches `2s·XᵀX` and `2s·XᵀE` so each iteration
/// costs `O(d²p)` regardless of `N`.
#[derive(Clone, Debug)]
pub struct Problem {
    x: Matrix,
    e: Matrix,
    hyper: Hyperparams,
    loss_scale: f64,
    alpha: f64,
    gram: Array2<f64>,
    xte: Array2<f64>,
}

impl Problem {
    pub fn new(x: Matrix, e: Matrix, hyper: Hyperparams) -> Result<Self> {
        if x.rows() != e.rows() {
            return Err(Error::mismatch("Problem", format!("{} response rows", x.rows()), e.rows()));
        }
        if x.rows() == 0 || x.cols() == 0 || e.cols() == 0 {
            return Err(Error::invalid(
                "problem",
                format!("need N, d, p ≥ 1, got X {:?} and E {:?}", x.shape(), e.shape()),
            ));
        }
        hyper.validate()?;
        let loss_scale = hyper.loss_scale.resolve(x.rows());
        let bound = default_step_size(&x, hyper.nu, hyper.kappa, loss_scale)?;
        let alpha = match hyper.alpha {
            StepSize::Auto => bound,
            StepSize::Fixed(a) if a <= bound * (1.0 + STEP_BOUND_SLACK) => a,
            StepSize::Fixed(a) => {
                return Err(Error::invalid(
                    "alpha",
                    format!("{a} exceeds the stability bound {bound}"),
                ))
            }
        };
        let xa = x.as_array();
        let gram = xa.t().dot(xa) * (2.0 * loss_scale);
        let xte = xa.t().dot(e.as_array()) * (2.0 * loss_scale);
        Ok(Problem {
            x,
            e,
            hyper,
            loss_scale,
            alpha,
            gram,
            xte,
        })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn e(&self) -> &Matrix {
        &self.e
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    pub fn loss_scale(&self) -> f64 {
        self.loss_scale
    }

    /// Resolved step size.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_samples(&self) -> usize {
        self.x.rows()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn n_responses(&self) -> usize {
        self.e.cols()
    }

    /// Iterations between recorded points.
    pub fn record_every(&self) -> usize {
        self.hyper
            .record_every
            .unwrap_or_else(|| ((self.hyper.t_max / (DEFAULT_PATH_POINTS * self.alpha)).floor() as usize).max(1))
    }

    /// Same problem with different hyperparameters.
    pub fn with_hyper(&self, hyper: Hyperparams) -> Result<Problem> {
        Problem::new(self.x.clone(), self.e.clone(), hyper)
    }

    fn check_coef(&self, m: &Matrix, what: &'static str) -> Result<()> {
        let expected = (self.n_features(), self.n_responses());
        if m.shape() != expected {
            return Err(Error::mismatch(what, format!("{expected:?}"), format!("{:?}", m.shape())));
        }
        Ok(())
    }

    /// Split loss `s‖XB − E‖²_F + (1/2ν)‖B − Γ‖²_F`.
    pub fn loss(&self, b: &Matrix, gamma: &Matrix) -> Result<f64> {
        self.check_coef(b, "loss")?;
        self.check_coef(gamma, "loss")?;
        let resid = self.x.as_array().dot(b.as_array()) - self.e.as_array();
        let fit = resid.iter().map(|r| r * r).sum::<f64>();
        let split = (b.as_array() - gamma.as_array()).iter().map(|r| r * r).sum::<f64>();
        Ok(self.loss_scale * fit + split / (2.0 * self.hyper.nu))
    }
}

/// Elementwise soft-thresholding `sign(z)·max(|z| − λ, 0)`.
pub fn soft_threshold(z: &Matrix, lambda: f64) -> Result<Matrix> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid("lambda", format!("must be a nonnegative finite number, got {lambda}")));
    }
    Ok(z.map(|v| shrink(v, lambda)))
}

#[inline]
pub(crate) fn shrink(v: f64, lambda: f64) -> f64 {
    if v > lambda {
        v - lambda
    } else if v < -lambda {
        v + lambda
    } else {
        0.0
    }
}

/// `∇_B ℓ = 2s·Xᵀ(XB − E) + (1/ν)(B − Γ)`.
pub fn grad_b(problem: &Problem, b: &Matrix, gamma: &Matrix) -> Result<Matrix> {
    problem.check_coef(b, "grad_B")?;
    problem.check_coef(gamma, "grad_B")?;
    let inv_nu = 1.0 / problem.hyper.nu;
    let mut g = problem.gram.dot(b.as_array()) - &problem.xte;
    Zip::from(&mut g)
        .and(b.as_array())
        .and(gamma.as_array())
        .for_each(|g, &b, &c| *g += inv_nu * (b - c));
    Ok(Matrix::from_array_unchecked(g))
}

/// `∇_Γ ℓ = (1/ν)(Γ − B)`.
pub fn grad_gamma(problem: &Problem, b: &Matrix, gamma: &Matrix) -> Result<Matrix> {
    problem.check_coef(b, "grad_Gamma")?;
    problem.check_coef(gamma, "grad_Gamma")?;
    gamma.try_sub(b).map(|d| d.scale(1.0 / problem.hyper.nu))
}

/// Largest step size allowed by the stability condition
/// `κα ≤ ν / (κ(2 + νΛ_H))`, where `Λ_H = 2s·‖XᵀX‖₂` bounds the Hessian of
/// the data-fit term.
pub fn default_step_size(x: &Matrix, nu: f64, kappa: f64, loss_scale: f64) -> Result<f64> {
    for (name, v) in [("nu", nu), ("kappa", kappa), ("loss_scale", loss_scale)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, format!("must be positive, got {v}")));
        }
    }
    let sigma_max = spectral_norm(x)?;
    let hessian_bound = 2.0 * loss_scale * sigma_max * sigma_max;
    Ok(nu / (kappa * kappa * (2.0 + nu * hessian_bound)))
}

/// All-zero starting state.
pub fn init(problem: &Problem) -> SolverState {
    let shape = (problem.n_features(), problem.n_responses());
    let zero = Matrix::zeros(shape.0, shape.1);
    SolverState {
        b: zero.clone(),
        z: zero.clone(),
        gamma: zero.clone(),
        btilde: zero,
        k: 0,
        t: 0.0,
    }
}

/// Scratch buffers reused across iterations.
struct Workspace {
    b: Array2<f64>,
    z: Array2<f64>,
    gamma: Array2<f64>,
    grad: Array2<f64>,
    k: usize,
}

impl Workspace {
    fn from_state(state: &SolverState) -> Self {
        Workspace {
            b: state.b.as_array().clone(),
            z: state.z.as_array().clone(),
            gamma: state.gamma.as_array().clone(),
            grad: Array2::zeros(state.b.shape()),
            k: state.k,
        }
    }

    fn advance(&mut self, problem: &Problem) -> Result<()> {
        let kappa = problem.hyper.kappa;
        let alpha = problem.alpha;
        let inv_nu = 1.0 / problem.hyper.nu;

        // grad = 2s·XᵀX·B − 2s·XᵀE, evaluated at the old B.
        match (problem.gram.as_slice(), self.b.as_slice(), self.grad.as_slice_mut()) {
            // Single response: a plain matrix-vector loop avoids the packing
            // overhead of the general product, which dominates for small d.
            (Some(gram), Some(b), Some(grad)) if problem.xte.ncols() == 1 => {
                let d = b.len();
                for ((g, row), &xte) in grad.iter_mut().zip(gram.chunks_exact(d)).zip(problem.xte.iter()) {
                    *g = row.iter().zip(b).map(|(a, b)| a * b).sum::<f64>() - xte;
                }
            }
            _ => {
                self.grad.assign(&problem.xte);
                general_mat_mul(1.0, &problem.gram, &self.b, -1.0, &mut self.grad);
            }
        }

        let mut finite = true;
        Zip::from(&mut self.b)
            .and(&mut self.z)
            .and(&mut self.gamma)
            .and(&self.grad)
            .for_each(|b, z, gamma, &fit| {
                let coupling = inv_nu * (*b - *gamma);
                *b -= kappa * alpha * (fit + coupling);
                *z += alpha * coupling;
                *gamma = kappa * shrink(*z, 1.0);
                finite &= b.is_finite() && z.is_finite();
            });
        self.k += 1;
        if !finite {
            return Err(Error::Diverged { iteration: self.k });
        }
        Ok(())
    }

    fn min_column_support(&self) -> usize {
        self.gamma
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|v| **v != 0.0).count())
            .min()
            .unwrap_or(0)
    }

    fn gamma_nnz(&self) -> usize {
        self.gamma.iter().filter(|v| **v != 0.0).count()
    }

    fn state(&self, alpha: f64) -> SolverState {
        let mut btilde = self.b.clone();
        Zip::from(&mut btilde)
            .and(&self.gamma)
            .for_each(|bt, &g| {
                if g == 0.0 {
                    *bt = 0.0;
                }
            });
        SolverState {
            b: Matrix::from_array_unchecked(self.b.clone()),
            z: Matrix::from_array_unchecked(self.z.clone()),
            gamma: Matrix::from_array_unchecked(self.gamma.clone()),
            btilde: Matrix::from_array_unchecked(btilde),
            k: self.k,
            t: self.k as f64 * alpha,
        }
    }
}

/// Incremental driver for callers that need to inspect every iterate
/// without materializing a [`Path`].
pub struct Stepper<'a> {
    problem: &'a Problem,
    ws: Workspace,
}

impl<'a> Stepper<'a> {
    pub fn new(problem: &'a Problem) -> Self {
        Stepper {
            problem,
            ws: Workspace::from_state(&init(problem)),
        }
    }

    /// Performs one iteration.
    pub fn advance(&mut self) -> Result<()> {
        self.ws.advance(self.problem)
    }

    pub fn k(&self) -> usize {
        self.ws.k
    }

    pub fn t(&self) -> f64 {
        self.ws.k as f64 * self.problem.alpha
    }

    /// Current dense estimate.
    pub fn b(&self) -> ndarray::ArrayView2<'_, f64> {
        self.ws.b.view()
    }

    pub fn gamma(&self) -> ndarray::ArrayView2<'_, f64> {
        self.ws.gamma.view()
    }

    pub fn state(&self) -> SolverState {
        self.ws.state(self.problem.alpha)
    }
}

/// One iteration. Both gradients are evaluated at the incoming `(B_k, Γ_k)`.
pub fn step(problem: &Problem, state: &SolverState) -> Result<SolverState> {
    problem.check_coef(&state.b, "step")?;
    let mut ws = Workspace::from_state(state);
    ws.advance(problem)?;
    Ok(ws.state(problem.alpha))
}

fn point(state: SolverState) -> PathPoint {
    PathPoint {
        t: state.t,
        k: state.k,
        b: state.b,
        gamma: state.gamma,
        btilde: state.btilde,
    }
}

/// Runs the iteration up to `t_max`, recording the initial state, every
/// `record_every`-th iterate and the final iterate.
pub fn run_path(problem: &Problem) -> Result<Path> {
    run_path_until(problem, |_| false)
}

/// Like [`run_path`], but also stops (and records) as soon as `stop` returns
/// true for the current iterate.
pub fn run_path_until(problem: &Problem, mut stop: impl FnMut(&SolverState) -> bool) -> Result<Path> {
    let alpha = problem.alpha;
    let record_every = problem.record_every();
    // Largest k with kα ≤ t_max, tolerant of rounding in t_max / α.
    let max_iters = (problem.hyper.t_max / alpha * (1.0 + 1e-12)).floor() as usize;

    let start = init(problem);
    let mut ws = Workspace::from_state(&start);
    let mut points = vec![point(start)];
    while ws.k < max_iters {
        ws.advance(problem)?;
        let last = ws.k == max_iters;
        let state = ws.state(alpha);
        let halt = stop(&state);
        if last || halt || ws.k % record_every == 0 {
            points.push(point(state));
        }
        if halt {
            break;
        }
    }
    Ok(Path {
        points,
        hyper: problem.hyper,
        alpha,
        record_every,
    })
}

/// Like [`run_path_until`], stopping once every column of `Γ` has at least
/// `per_column` nonzero entries. Cheaper than a closure over the full state.
pub fn run_path_until_support(problem: &Problem, per_column: usize) -> Result<Path> {
    let alpha = problem.alpha;
    let record_every = problem.record_every();
    let max_iters = (problem.hyper.t_max / alpha * (1.0 + 1e-12)).floor() as usize;

    let start = init(problem);
    let mut ws = Workspace::from_state(&start);
    let mut points = vec![point(start)];
    while ws.k < max_iters {
        ws.advance(problem)?;
        let halt = ws.min_column_support() >= per_column;
        if halt || ws.k == max_iters || ws.k % record_every == 0 {
            points.push(point(ws.state(alpha)));
        }
        if halt {
            break;
        }
    }
    Ok(Path {
        points,
        hyper: problem.hyper,
        alpha,
        record_every,
    })
}

/// Time `t = kα` of the first iterate whose `Γ` is nonzero, searching up to
/// `t_limit`. Returns `None` if `Γ` stays zero.
pub fn first_support_time(problem: &Problem, t_limit: f64) -> Result<Option<f64>> {
    let alpha = problem.alpha;
    let max_iters = (t_limit / alpha).ceil() as usize;
    let mut ws = Workspace::from_state(&init(problem));
    while ws.k < max_iters {
        ws.advance(problem)?;
        if ws.gamma_nnz() > 0 {
            return Ok(Some(ws.k as f64 * alpha));
        }
    }
    Ok(None)
}

/// Splits `B` into the part on the sparse support (`B̃`) and a residual whose
/// entries are classed as weak (`|r| > tau`) or noise (`|r| ≤ tau`).
pub fn decompose(b: &Matrix, btilde: &Matrix, tau: f64) -> Result<Decomposition> {
    if b.shape() != btilde.shape() {
        return Err(Error::mismatch("decompose", format!("{:?}", b.shape()), format!("{:?}", btilde.shape())));
    }
    if !(tau >= 0.0) {
        return Err(Error::invalid("tau", format!("must be nonnegative, got {tau}")));
    }
    let strong = btilde.clone();
    let residual = b.try_sub(btilde)?;
    let weak = residual.map(|r| if r.abs() > tau { r } else { 0.0 });
    let noise = residual.map(|r| if r.abs() > tau { 0.0 } else { r });
    Ok(Decomposition {
        strong,
        weak,
        noise,
        tau,
    })
}

/// Robust noise-scale estimate for [`decompose`]: `median(|R|) / 0.6745`
/// over the residual entries `R = B − B̃` off the support of `B̃`.
pub fn default_tau(b: &Matrix, btilde: &Matrix) -> Result<f64> {
    if b.shape() != btilde.shape() {
        return Err(Error::mismatch("default_tau", format!("{:?}", b.shape()), format!("{:?}", btilde.shape())));
    }
    let mut off: Vec<f64> = b
        .as_array()
        .iter()
        .zip(btilde.as_array().iter())
        .filter(|(_, bt)| **bt == 0.0)
        .map(|(b, _)| b.abs())
        .collect();
    if off.is_empty() {
        return Ok(0.0);
    }
    off.sort_by(f64::total_cmp);
    let n = off.len();
    let median = if n % 2 == 1 {
        off[n / 2]
    } else {
        0.5 * (off[n / 2 - 1] + off[n / 2])
    };
    Ok(median / 0.6745)
}

/// Which of the two path estimators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// `B`, the dense estimator.
    Dense,
    /// `B̃`, the projection of `B` onto `supp(Γ)`.
    Sparse,
}

impl Estimator {
    pub fn pick<'a>(&self, point: &'a PathPoint) -> &'a Matrix {
        match self {
            Estimator::Dense => &point.b,
            Estimator::Sparse => &point.btilde,
        }
    }
}

/// Outcome of cross-validating `t` along the path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvSelection {
    pub t_star: f64,
    pub which: Estimator,
    /// Mean held-out loss at the selected point.
    pub validation_loss: f64,
    /// Step size shared by every fold (and to be reused on the full data so
    /// `t_star` lies on the recorded grid).
    pub alpha: f64,
    pub record_every: usize,
    /// `(t, mean dense loss, mean sparse loss)` at every recorded point.
    pub curve: Vec<(f64, f64, f64)>,
}

impl CvSelection {
    /// Hyperparameters that reproduce the cross-validated grid on the full
    /// data set.
    pub fn hyper_for(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            alpha: StepSize::Fixed(self.alpha),
            record_every: Some(self.record_every),
            ..*base
        }
    }
}

/// Chooses `t` and the estimator by K-fold cross-validation.
///
/// Rows are shuffled with `seed` and dealt round-robin into `folds` groups.
/// Every fold runs with one common step size (the smallest stable one
/// across folds) and recording schedule, so all folds share the same `t`
/// grid. The held-out loss is `(1/2N_val)‖X_val B − E_val‖²_F`; ties go to
/// the smaller `t`, and to the dense estimator at equal `t`.
pub fn select_t_cv(problem: &Problem, folds: usize, seed: u64) -> Result<CvSelection> {
    let n = problem.n_samples();
    if folds < 2 {
        return Err(Error::invalid("folds", format!("need at least 2 folds, got {folds}")));
    }
    if n < folds {
        return Err(Error::invalid("folds", format!("{folds} folds but only {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let assignment: Vec<Vec<usize>> = (0..folds)
        .map(|f| order.iter().copied().skip(f).step_by(folds).collect())
        .collect();
    if let Some(f) = assignment.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptyFold { fold: f });
    }

    let hyper = *problem.hyper();
    let splits: Vec<(Matrix, Matrix, Matrix, Matrix)> = assignment
        .iter()
        .map(|val| {
            let mut train: Vec<usize> = (0..n).filter(|i| !val.contains(i)).collect();
            train.sort_unstable();
            (
                problem.x().select_rows(&train),
                problem.e().select_rows(&train),
                problem.x().select_rows(val),
                problem.e().select_rows(val),
            )
        })
        .collect();
    if splits.iter().any(|s| s.0.rows() == 0) {
        return Err(Error::invalid("folds", "a training split has no rows"));
    }

    let alpha = match hyper.alpha {
        StepSize::Fixed(a) => a,
        StepSize::Auto => {
            let mut alpha = problem.alpha();
            for (xt, ..) in &splits {
                let s = hyper.loss_scale.resolve(xt.rows());
                alpha = alpha.min(default_step_size(xt, hyper.nu, hyper.kappa, s)?);
            }
            alpha
        }
    };
    let record_every = hyper
        .record_every
        .unwrap_or_else(|| ((hyper.t_max / (DEFAULT_PATH_POINTS * alpha)).floor() as usize).max(1));
    let fold_hyper = Hyperparams {
        alpha: StepSize::Fixed(alpha),
        record_every: Some(record_every),
        ..hyper
    };

    let per_fold: Vec<Result<Vec<(f64, f64, f64)>>> = splits
        .into_par_iter()
        .map(|(xt, et, xv, ev)| {
            let train = Problem::new(xt, et, fold_hyper)?;
            let path = run_path(&train)?;
            Ok(path
                .points
                .iter()
                .map(|p| {
                    (
                        p.t,
                        prediction_loss(&xv, &ev, &p.b),
                        prediction_loss(&xv, &ev, &p.btilde),
                    )
                })
                .collect())
        })
        .collect();
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;

    let len = per_fold.iter().map(Vec::len).min().unwrap_or(0);
    let mut curve = Vec::with_capacity(len);
    for j in 0..len {
        let t = per_fold[0][j].0;
        let dense = per_fold.iter().map(|f| f[j].1).sum::<f64>() / folds as f64;
        let sparse = per_fold.iter().map(|f| f[j].2).sum::<f64>() / folds as f64;
        curve.push((t, dense, sparse));
    }

    let mut best = (f64::INFINITY, 0.0, Estimator::Dense);
    for &(t, dense, sparse) in &curve {
        if dense < best.0 {
            best = (dense, t, Estimator::Dense);
        }
        if sparse < best.0 {
            best = (sparse, t, Estimator::Sparse);
        }
    }
    Ok(CvSelection {
        t_star: best.1,
        which: best.2,
        validation_loss: best.0,
        alpha,
        record_every,
        curve,
    })
}

/// `(1/2N)‖XB − E‖²_F`.
pub fn prediction_loss(x: &Matrix, e: &Matrix, b: &Matrix) -> f64 {
    let resid = x.as_array().dot(b.as_array()) - e.as_array();
    let n = x.rows().max(1) as f64;
    resid.iter().map(|r| r * r).sum::<f64>() / (2.0 * n)
}

/// `‖B̃ − B‖_F` at a recorded point.
pub fn split_gap(point: &PathPoint) -> f64 {
    frobenius_norm(&(&point.btilde - &point.b))
}
