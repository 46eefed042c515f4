//! Synthetic experiments on correlated Gaussian designs.
//!
//! Rows of `X` are drawn from `N(0, Σ)` with the equicorrelation matrix
//! `Σ = (1 − σ)I + σ11ᵀ`, the response is `y = Xβ* + ε`, and each estimator
//! is scored by its relative error `‖β̂ − β*‖₂ / ‖β*‖₂`, minimized over the
//! estimator's own tuning grid. [`run_table1`] aggregates these minima over
//! trials; [`path_error_curve`] traces the error along a single MSplit LBI
//! path.
//!
//! The Monte-Carlo bias checks for ridge, elastic net and the path
//! estimator live in [`lemmas`].

pub mod lemmas;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{lambda_grid, mixture_penalties, ols_fit, ridge_fit, CoordinateDescent};
use crate::error::{Error, Result};
use crate::model::{frobenius_norm, Hyperparams, LossScale, Matrix, StepSize};
use crate::solver::{
    first_support_time, run_path_until_support, select_t_cv, Estimator, Problem,
};

pub use lemmas::{
    verify_lemma1, verify_lemma2, Lemma1Config, Lemma1Report, Lemma2Config, Lemma2Report, MeanCheck,
};

/// Split strength used for each correlation level in the reference setup.
pub const NU_BY_SIGMA: [(f64, f64); 4] = [(0.2, 3.0), (0.4, 5.0), (0.6, 7.0), (0.8, 10.0)];

/// Path horizon as a multiple of the time at which `Γ` first becomes nonzero.
pub const HORIZON_FACTOR: f64 = 50.0;

/// Looks up the reference split strength for a correlation level.
pub fn nu_for_sigma(sigma: f64) -> Option<f64> {
    NU_BY_SIGMA
        .iter()
        .find(|(s, _)| (s - sigma).abs() < 1e-9)
        .map(|&(_, nu)| nu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub d: usize,
    /// Off-diagonal correlation of the design, in `[0, 1)`.
    pub sigma: f64,
    pub noise_sd: f64,
    pub trials: usize,
    pub seed: u64,
    pub kappa: f64,
    /// Split strength; `None` looks it up in [`NU_BY_SIGMA`].
    pub nu: Option<f64>,
    pub lambda_max: f64,
    pub grid_points: usize,
    /// Number of elastic-net mixture weights, equally spaced on `[0, 1]`.
    pub mixtures: usize,
    /// When set, also report MSplit LBI errors at the cross-validated `t`.
    pub cv_folds: Option<usize>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            d: 80,
            sigma: 0.2,
            noise_sd: 0.5,
            trials: 20,
            seed: 0,
            kappa: 5.0,
            nu: None,
            lambda_max: 5.0,
            grid_points: 500,
            mixtures: 21,
            cv_folds: None,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(Error::invalid("n/d", "design dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.sigma) {
            return Err(Error::invalid("sigma", format!("must lie in [0, 1), got {}", self.sigma)));
        }
        if !(self.noise_sd >= 0.0) || !self.noise_sd.is_finite() {
            return Err(Error::invalid("noise_sd", format!("must be nonnegative, got {}", self.noise_sd)));
        }
        if self.trials == 0 {
            return Err(Error::invalid("trials", "need at least one trial"));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::invalid("kappa", format!("must be positive, got {}", self.kappa)));
        }
        if self.mixtures < 2 {
            return Err(Error::invalid("mixtures", "need at least the two pure penalties"));
        }
        self.resolved_nu()?;
        lambda_grid(self.lambda_max, self.grid_points)?;
        Ok(())
    }

    pub fn resolved_nu(&self) -> Result<f64> {
        let nu = match self.nu {
            Some(nu) => nu,
            None => nu_for_sigma(self.sigma).ok_or_else(|| {
                Error::invalid("nu", format!("no reference value for sigma = {}; pass nu explicitly", self.sigma))
            })?,
        };
        if !(nu > 0.0) || !nu.is_finite() {
            return Err(Error::invalid("nu", format!("must be positive, got {nu}")));
        }
        Ok(nu)
    }

    /// Seeds `(design, noise)` for trial `i`.
    pub fn trial_seeds(&self, trial: usize) -> (u64, u64) {
        let base = self.seed.wrapping_add(2 * trial as u64);
        (base, base.wrapping_add(1))
    }
}

/// True coefficients: 2 on the first five features, 0.2 on the next 35,
/// zero elsewhere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrueBeta {
    pub values: Vec<f64>,
}

impl TrueBeta {
    pub fn reference(d: usize) -> Self {
        let values = (1..=d)
            .map(|i| match i {
                1..=5 => 2.0,
                6..=40 => 0.2,
                _ => 0.0,
            })
            .collect();
        TrueBeta { values }
    }

    pub fn as_column(&self) -> Matrix {
        Matrix::column_vector(&self.values).expect("finite by construction")
    }
}

/// `n` rows from `N(0, Σ)` with equicorrelation `σ`, generated exactly as
/// `x = √σ·g·1 + √(1 − σ)·z` with scalar `g` and vector `z` standard normal.
pub fn generate_design(config: &SimConfig, trial_seed: u64) -> Result<Matrix> {
    if !(0.0..1.0).contains(&config.sigma) {
        return Err(Error::invalid("sigma", format!("must lie in [0, 1), got {}", config.sigma)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let shared = config.sigma.sqrt();
    let own = (1.0 - config.sigma).sqrt();
    let mut data = Vec::with_capacity(config.n * config.d);
    for _ in 0..config.n {
        let g: f64 = StandardNormal.sample(&mut rng);
        for _ in 0..config.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push(shared * g + own * z);
        }
    }
    Matrix::new(config.n, config.d, data)
}

/// `y = Xβ* + ε` with `ε` i.i.d. `N(0, noise_sd²)`.
pub fn generate_response(x: &Matrix, beta: &TrueBeta, noise_sd: f64, trial_seed: u64) -> Result<Matrix> {
    if x.cols() != beta.values.len() {
        return Err(Error::mismatch("generate_response", x.cols(), beta.values.len()));
    }
    let signal = x.as_array().dot(&ndarray::Array1::from(beta.values.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let data = signal
        .iter()
        .map(|s| {
            let e: f64 = StandardNormal.sample(&mut rng);
            s + noise_sd * e
        })
        .collect();
    Matrix::new(x.rows(), 1, data)
}

/// `‖β̂ − β*‖₂ / ‖β*‖₂` (Frobenius norm for multi-column estimates).
pub fn relative_error(beta_hat: &Matrix, beta_star: &TrueBeta) -> Result<f64> {
    if beta_hat.shape() != (beta_star.values.len(), 1) {
        return Err(Error::mismatch(
            "relative_error",
            format!("({}, 1)", beta_star.values.len()),
            format!("{:?}", beta_hat.shape()),
        ));
    }
    let norm = beta_star.values.iter().map(|b| b * b).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(Error::invalid("beta_star", "relative error is undefined for β* = 0"));
    }
    Ok(frobenius_norm(&(beta_hat - &beta_star.as_column())) / norm)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mle,
    Ridge,
    ElasticNet,
    Lasso,
    MsplitSparse,
    MsplitDense,
    /// MSplit LBI sparse estimator at the cross-validated `t`.
    MsplitSparseCv,
    MsplitDenseCv,
}

impl Method {
    pub const TABLE: [Method; 6] = [
        Method::Mle,
        Method::Ridge,
        Method::ElasticNet,
        Method::Lasso,
        Method::MsplitSparse,
        Method::MsplitDense,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Mle => "MLE",
            Method::Ridge => "Ridge",
            Method::ElasticNet => "Elastic Net",
            Method::Lasso => "Lasso",
            Method::MsplitSparse => "MSplit LBI (beta_tilde)",
            Method::MsplitDense => "MSplit LBI (beta)",
            Method::MsplitSparseCv => "MSplit LBI (beta_tilde, CV)",
            Method::MsplitDenseCv => "MSplit LBI (beta, CV)",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-trial errors of one method at one correlation level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub mean: f64,
    /// Sample standard deviation (divisor `trials − 1`; zero for one trial).
    pub sd: f64,
    pub per_trial: Vec<f64>,
}

impl ErrorCell {
    pub fn from_trials(per_trial: Vec<f64>) -> Self {
        let n = per_trial.len() as f64;
        let mean = per_trial.iter().sum::<f64>() / n;
        let sd = if per_trial.len() > 1 {
            (per_trial.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        ErrorCell { mean, sd, per_trial }
    }
}

/// Mean ± sd of the oracle-tuned relative error, per method and `σ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    pub sigmas: Vec<f64>,
    pub methods: Vec<Method>,
    /// `cells[m][s]` belongs to `methods[m]` at `sigmas[s]`.
    pub cells: Vec<Vec<ErrorCell>>,
}

impl ErrorTable {
    pub fn cell(&self, method: Method, sigma: f64) -> Option<&ErrorCell> {
        let m = self.methods.iter().position(|x| *x == method)?;
        let s = self.sigmas.iter().position(|x| (x - sigma).abs() < 1e-12)?;
        Some(&self.cells[m][s])
    }

    /// Appends the columns of `other`; both tables must list the same methods.
    pub fn merge(mut self, other: ErrorTable) -> Result<ErrorTable> {
        if self.methods != other.methods {
            return Err(Error::invalid("table", "cannot merge tables with different methods"));
        }
        self.sigmas.extend(other.sigmas);
        for (row, extra) in self.cells.iter_mut().zip(other.cells) {
            row.extend(extra);
        }
        Ok(self)
    }
}

/// Errors of every method on one simulated data set.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialErrors {
    pub errors: Vec<(Method, f64)>,
}

/// MSplit LBI hyperparameters for the simulation: the horizon is
/// [`HORIZON_FACTOR`] times the time of the first activation.
fn simulation_problem(x: &Matrix, y: &Matrix, kappa: f64, nu: f64) -> Result<(Problem, f64)> {
    let base = Hyperparams {
        kappa,
        nu,
        alpha: StepSize::Auto,
        t_max: f64::MAX,
        record_every: None,
        loss_scale: LossScale::PerSample,
    };
    let probe = Problem::new(x.clone(), y.clone(), Hyperparams { t_max: 1.0, ..base })?;
    // Γ activates once some |Z| passes 1; Z grows no faster than |B|/ν, so
    // a generous cap only matters for degenerate data.
    let t_first = first_support_time(&probe, 1e6)?
        .ok_or_else(|| Error::invalid("data", "Γ never left zero; is the response identically zero?"))?;
    let t_max = HORIZON_FACTOR * t_first;
    let problem = probe.with_hyper(Hyperparams { t_max, ..base })?;
    Ok((problem, t_first))
}

/// Runs every method on trial `trial` of `config`.
pub fn run_trial(config: &SimConfig, trial: usize) -> Result<TrialErrors> {
    let nu = config.resolved_nu()?;
    let beta = TrueBeta::reference(config.d);
    let (design_seed, noise_seed) = config.trial_seeds(trial);
    let x = generate_design(config, design_seed)?;
    let y = generate_response(&x, &beta, config.noise_sd, noise_seed)?;
    let err = |b: &Matrix| relative_error(b, &beta);
    let grid = lambda_grid(config.lambda_max, config.grid_points)?;

    let ols = ols_fit(&x, &y)?;
    let mle = err(&ols)?;

    let mut ridge = mle;
    for &lambda in &grid.values[1..] {
        ridge = ridge.min(err(&ridge_fit(&x, &y, lambda)?)?);
    }

    // Coordinate descent from large to small λ, warm-starting each fit from
    // the previous one. λ = 0 is least squares for every penalty family.
    let cd = CoordinateDescent::new(&x, &y)?;
    let sweep = |mixture: f64| -> Result<f64> {
        let mut best = mle;
        let mut warm: Option<Matrix> = None;
        for &lambda in grid.values[1..].iter().rev() {
            let (l1, l2) = mixture_penalties(mixture, lambda);
            let fit = cd.fit(l1, l2, warm.as_ref())?;
            best = best.min(err(&fit)?);
            warm = Some(fit);
        }
        Ok(best)
    };
    let lasso = sweep(1.0)?;
    let mut elastic = lasso.min(ridge);
    let last = (config.mixtures - 1) as f64;
    for m in 1..config.mixtures - 1 {
        elastic = elastic.min(sweep(m as f64 / last)?);
    }

    let (problem, _) = simulation_problem(&x, &y, config.kappa, nu)?;
    let path = run_path_until_support(&problem, config.n.min(config.d))?;
    let mut dense = f64::INFINITY;
    let mut sparse = f64::INFINITY;
    for point in &path.points {
        dense = dense.min(err(&point.b)?);
        sparse = sparse.min(err(&point.btilde)?);
    }

    let mut errors = vec![
        (Method::Mle, mle),
        (Method::Ridge, ridge),
        (Method::ElasticNet, elastic),
        (Method::Lasso, lasso),
        (Method::MsplitSparse, sparse),
        (Method::MsplitDense, dense),
    ];
    if let Some(folds) = config.cv_folds {
        let sel = select_t_cv(&problem, folds, design_seed)?;
        let refit = problem.with_hyper(sel.hyper_for(problem.hyper()))?;
        let path = run_path_until_support(&refit, config.n.min(config.d))?;
        let point = path.at(sel.t_star).unwrap_or_else(|| path.last());
        errors.push((Method::MsplitSparseCv, err(Estimator::Sparse.pick(point))?));
        errors.push((Method::MsplitDenseCv, err(Estimator::Dense.pick(point))?));
    }
    Ok(TrialErrors { errors })
}

/// Oracle-tuned relative errors for every method, aggregated over
/// `config.trials` independent data sets. Trials run in parallel; the
/// result does not depend on scheduling.
pub fn run_table1(config: &SimConfig) -> Result<ErrorTable> {
    config.validate()?;
    let trials: Vec<Result<TrialErrors>> = (0..config.trials)
        .into_par_iter()
        .map(|i| {
            run_trial(config, i).map_err(|e| Error::invalid("trial", format!("trial {i} (sigma = {}): {e}", config.sigma)))
        })
        .collect();
    let trials = trials.into_iter().collect::<Result<Vec<_>>>()?;
    let methods: Vec<Method> = trials[0].errors.iter().map(|(m, _)| *m).collect();
    let cells = methods
        .iter()
        .enumerate()
        .map(|(k, _)| vec![ErrorCell::from_trials(trials.iter().map(|t| t.errors[k].1).collect())])
        .collect();
    Ok(ErrorTable {
        sigmas: vec![config.sigma],
        methods,
        cells,
    })
}

/// [`run_table1`] for several correlation levels, one column each.
pub fn run_table1_sweep(config: &SimConfig, sigmas: &[f64]) -> Result<ErrorTable> {
    let mut table: Option<ErrorTable> = None;
    for &sigma in sigmas {
        let column = run_table1(&SimConfig { sigma, ..config.clone() })?;
        table = Some(match table {
            None => column,
            Some(t) => t.merge(column)?,
        });
    }
    table.ok_or_else(|| Error::invalid("sigmas", "need at least one correlation level"))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub t: f64,
    pub err_beta: f64,
    pub err_btilde: f64,
    pub err_mle: f64,
}

/// Relative error of `B_k` and `B̃_k` at every recorded `t` of one simulated
/// path, alongside the (constant) least-squares error. `trial_seed` seeds
/// the design and `trial_seed + 1` the noise.
pub fn path_error_curve(config: &SimConfig, trial_seed: u64) -> Result<Vec<CurvePoint>> {
    config.validate()?;
    let nu = config.resolved_nu()?;
    let beta = TrueBeta::reference(config.d);
    let x = generate_design(config, trial_seed)?;
    let y = generate_response(&x, &beta, config.noise_sd, trial_seed.wrapping_add(1))?;
    let err_mle = relative_error(&ols_fit(&x, &y)?, &beta)?;
    let (problem, _) = simulation_problem(&x, &y, config.kappa, nu)?;
    let path = run_path_until_support(&problem, config.n.min(config.d))?;
    path.points
        .iter()
        .map(|p| {
            Ok(CurvePoint {
                t: p.t,
                err_beta: relative_error(&p.b, &beta)?,
                err_btilde: relative_error(&p.btilde, &beta)?,
                err_mle,
            })
        })
        .collect()
}

/// MSplit LBI path on one simulated data set, with the simulation's
/// horizon rule. Exposed for diagnostics and the guide.
pub fn simulate_path(config: &SimConfig, trial_seed: u64) -> Result<(crate::model::Path, TrueBeta)> {
    config.validate()?;
    let beta = TrueBeta::reference(config.d);
    let x = generate_design(config, trial_seed)?;
    let y = generate_response(&x, &beta, config.noise_sd, trial_seed.wrapping_add(1))?;
    let (problem, _) = simulation_problem(&x, &y, config.kappa, config.resolved_nu()?)?;
    Ok((run_path_until_support(&problem, config.n.min(config.d))?, beta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn column_means(x: &Matrix) -> Vec<f64> {
        (0..x.cols())
            .map(|j| x.column(j).iter().sum::<f64>() / x.rows() as f64)
            .collect()
    }

    fn covariance(x: &Matrix, i: usize, j: usize, means: &[f64]) -> f64 {
        let (a, b) = (x.column(i), x.column(j));
        a.iter()
            .zip(&b)
            .map(|(u, v)| (u - means[i]) * (v - means[j]))
            .sum::<f64>()
            / (x.rows() - 1) as f64
    }

    #[test]
    fn design_covariance_matches_sigma() {
        for sigma in [0.0, 0.8] {
            let config = SimConfig {
                n: 100_000,
                d: 4,
                sigma,
                ..SimConfig::default()
            };
            let x = generate_design(&config, 3).unwrap();
            let means = column_means(&x);
            for i in 0..4 {
                for j in 0..4 {
                    let target = if i == j { 1.0 } else { sigma };
                    let c = covariance(&x, i, j, &means);
                    assert!((c - target).abs() < 0.05, "σ={sigma} ({i},{j}): {c}");
                }
            }
        }
    }

    #[test]
    fn design_is_seeded() {
        let config = SimConfig::default();
        assert_eq!(generate_design(&config, 5).unwrap(), generate_design(&config, 5).unwrap());
        assert_ne!(generate_design(&config, 5).unwrap(), generate_design(&config, 6).unwrap());
        let bad = SimConfig { sigma: 1.0, ..config };
        assert!(generate_design(&bad, 1).is_err());
    }

    #[test]
    fn response_noise() {
        let config = SimConfig {
            n: 100_000,
            d: 40,
            ..SimConfig::default()
        };
        let beta = TrueBeta::reference(40);
        let x = generate_design(&config, 1).unwrap();
        let signal = crate::model::matmul(&x, &beta.as_column()).unwrap();
        let exact = generate_response(&x, &beta, 0.0, 9).unwrap();
        assert!((&exact - &signal).max_abs() < 1e-12);

        let y = generate_response(&x, &beta, 0.5f64.sqrt(), 9).unwrap();
        let resid = (&y - &signal).column(0);
        let mean = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!((var - 0.5).abs() < 0.02, "variance {var}");

        // The noise seed moves ε only; the design is untouched by it.
        let other = generate_response(&x, &beta, 0.5f64.sqrt(), 10).unwrap();
        assert_ne!(y, other);
        assert_eq!(generate_design(&config, 1).unwrap(), x);
    }

    #[test]
    fn true_beta_layout() {
        let b = TrueBeta::reference(80);
        assert_eq!(b.values.iter().filter(|v| **v == 2.0).count(), 5);
        assert_eq!(b.values.iter().filter(|v| **v == 0.2).count(), 35);
        assert_eq!(b.values[4], 2.0);
        assert_eq!(b.values[5], 0.2);
        assert_eq!(b.values[39], 0.2);
        assert_eq!(b.values[40], 0.0);
    }

    #[test]
    fn relative_error_cases() {
        let beta = TrueBeta::reference(50);
        let col = beta.as_column();
        assert_eq!(relative_error(&col, &beta).unwrap(), 0.0);
        assert_eq!(relative_error(&Matrix::zeros(50, 1), &beta).unwrap(), 1.0);
        assert!((relative_error(&col.scale(2.0), &beta).unwrap() - 1.0).abs() < 1e-15);
        assert!(relative_error(&Matrix::zeros(3, 1), &beta).is_err());
        let zero = TrueBeta { values: vec![0.0; 3] };
        assert!(relative_error(&Matrix::zeros(3, 1), &zero).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig { trials: 0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { sigma: 0.3, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { sigma: 0.3, nu: Some(4.0), ..SimConfig::default() }.validate().is_ok());
        assert_eq!(nu_for_sigma(0.8), Some(10.0));
        assert_eq!(SimConfig::default().trial_seeds(3), (6, 7));
    }

    #[test]
    fn error_cell_statistics() {
        let cell = ErrorCell::from_trials(vec![1.0, 2.0, 3.0]);
        assert_eq!(cell.mean, 2.0);
        assert_eq!(cell.sd, 1.0);
        assert_eq!(ErrorCell::from_trials(vec![0.5]).sd, 0.0);
    }

    #[test]
    fn noiseless_single_trial_mle_is_exact() {
        let config = SimConfig {
            trials: 1,
            noise_sd: 0.0,
            sigma: 0.0,
            nu: Some(3.0),
            grid_points: 20,
            mixtures: 3,
            ..SimConfig::default()
        };
        let table = run_table1(&config).unwrap();
        let mle = table.cell(Method::Mle, 0.0).unwrap();
        assert!(mle.mean < 1e-6, "MLE error {}", mle.mean);
        for row in &table.cells {
            assert!(row[0].mean >= 0.0);
        }
    }
}
