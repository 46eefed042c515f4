//! Monte-Carlo checks of the bias behaviour of ridge, elastic net and the
//! MSplit LBI dense estimator under an identity design.
//!
//! With `X = I` every coordinate is its own one-dimensional problem
//! `y = β* + ε`. Ridge shrinks by `1/(1 + λ₂)`, the elastic net
//! soft-thresholds and then shrinks, and MSplit LBI leaves the selected
//! coordinates unbiased while scaling the rest by `ν/(1 + ν)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::baselines::{elastic_net_fit, ridge_fit};
use crate::error::{Error, Result};
use crate::model::{Hyperparams, LossScale, Matrix, StepSize};
use crate::solver::{Problem, Stepper};

/// Smallest number of draws either verifier accepts.
pub const MIN_DRAWS: usize = 1000;

/// A Monte-Carlo mean compared against a reference value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanCheck {
    pub target: f64,
    pub mean: f64,
    /// Standard error of `mean`.
    pub se: f64,
    pub z: f64,
    pub samples: usize,
    /// Largest `|z|` accepted.
    pub tolerance: f64,
}

impl MeanCheck {
    pub fn new(samples: &[f64], target: f64, tolerance: f64) -> Self {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        MeanCheck {
            target,
            mean,
            se,
            z: z_score(mean - target, se),
            samples: samples.len(),
            tolerance,
        }
    }

    /// Same sample, different reference value.
    pub fn against(&self, target: f64) -> Self {
        MeanCheck {
            target,
            z: z_score(self.mean - target, self.se),
            ..self.clone()
        }
    }

    pub fn passed(&self) -> bool {
        self.z.abs() < self.tolerance
    }
}

fn z_score(diff: f64, se: f64) -> f64 {
    if se > 0.0 {
        diff / se
    } else if diff == 0.0 {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

fn check_draws(draws: usize) -> Result<()> {
    if draws < MIN_DRAWS {
        return Err(Error::invalid("draws", format!("need at least {MIN_DRAWS}, got {draws}")));
    }
    Ok(())
}

fn standard_normals(seed: u64, count: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Config {
    pub beta_star: f64,
    pub lambda_l1: f64,
    pub lambda_l2: f64,
    pub noise_sd: f64,
    pub draws: usize,
    pub seed: u64,
}

impl Default for Lemma1Config {
    fn default() -> Self {
        Lemma1Config {
            beta_star: 2.0,
            lambda_l1: 0.5,
            lambda_l2: 1.0,
            noise_sd: 0.5f64.sqrt(),
            draws: 10_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub config: Lemma1Config,
    /// Ridge mean against `β*/(1 + λ₂)`.
    pub ridge: MeanCheck,
    /// Ridge mean against the unshrunk `β*`; a large `|z|` exposes the bias.
    pub ridge_vs_truth: MeanCheck,
    /// Elastic-net mean against the three-region expectation averaged over
    /// the same noise draws.
    pub elastic_net: MeanCheck,
    /// Elastic-net mean against the exact Gaussian expectation.
    pub elastic_net_exact: MeanCheck,
}

impl Lemma1Report {
    pub fn passed(&self) -> bool {
        self.ridge.passed() && self.elastic_net.passed() && self.elastic_net_exact.passed()
    }

    /// Whether ridge is measurably biased (more than 10 standard errors).
    pub fn bias_detected(&self) -> bool {
        self.ridge_vs_truth.z.abs() > 10.0
    }
}

/// Elastic-net expectation split over the three noise regions
/// `ε ≤ −β − λ₁`, `|β + ε| < λ₁` and `ε ≥ λ₁ − β`, each term averaged over
/// the supplied draws.
pub fn elastic_net_piecewise_mean(beta: f64, lambda_l1: f64, lambda_l2: f64, noise: &[f64]) -> f64 {
    let n = noise.len() as f64;
    let mut low = 0.0;
    let mut middle = 0.0;
    let mut high = 0.0;
    for &e in noise {
        if e <= -beta - lambda_l1 {
            low += e + lambda_l1;
        } else if e >= lambda_l1 - beta {
            high += e - lambda_l1;
        } else {
            middle += 1.0;
        }
    }
    (beta + low / n - beta * middle / n + high / n) / (1.0 + lambda_l2)
}

/// `E[S(β + ε, λ₁)] / (1 + λ₂)` for `ε ~ N(0, sd²)`.
pub fn elastic_net_gaussian_mean(beta: f64, lambda_l1: f64, lambda_l2: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        let y = beta;
        return y.signum() * (y.abs() - lambda_l1).max(0.0) / (1.0 + lambda_l2);
    }
    let n = Normal::standard();
    let up = (beta - lambda_l1) / sd;
    let down = (-lambda_l1 - beta) / sd;
    let above = (beta - lambda_l1) * n.cdf(up) + sd * n.pdf(up);
    let below = (beta + lambda_l1) * n.cdf(down) - sd * n.pdf(down);
    (above + below) / (1.0 + lambda_l2)
}

/// Draws `y = β* + ε` and fits ridge and the elastic net on each one-point
/// identity design, then compares the sample means with their expectations.
pub fn verify_lemma1(config: &Lemma1Config) -> Result<Lemma1Report> {
    check_draws(config.draws)?;
    for (name, v) in [("lambda_l1", config.lambda_l1), ("lambda_l2", config.lambda_l2), ("noise_sd", config.noise_sd)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(name, format!("must be nonnegative, got {v}")));
        }
    }
    if !config.beta_star.is_finite() {
        return Err(Error::invalid("beta_star", "must be finite"));
    }
    let noise: Vec<f64> = standard_normals(config.seed, config.draws)
        .into_iter()
        .map(|z| config.noise_sd * z)
        .collect();
    let x = Matrix::identity(1);
    let mut ridge = Vec::with_capacity(noise.len());
    let mut enet = Vec::with_capacity(noise.len());
    for &e in &noise {
        let y = Matrix::new(1, 1, vec![config.beta_star + e])?;
        ridge.push(ridge_fit(&x, &y, config.lambda_l2)?.get(0, 0));
        enet.push(elastic_net_fit(&x, &y, config.lambda_l1, config.lambda_l2)?.get(0, 0));
    }
    let (b, l1, l2) = (config.beta_star, config.lambda_l1, config.lambda_l2);
    let ridge_check = MeanCheck::new(&ridge, b / (1.0 + l2), 4.0);
    let enet_check = MeanCheck::new(&enet, elastic_net_piecewise_mean(b, l1, l2, &noise), 4.0);
    Ok(Lemma1Report {
        config: config.clone(),
        ridge_vs_truth: ridge_check.against(b),
        ridge: ridge_check,
        elastic_net_exact: enet_check.against(elastic_net_gaussian_mean(b, l1, l2, config.noise_sd)),
        elastic_net: enet_check,
    })
}

/// Shrinkage applied off the selected set: `ν/(1 + ν)`.
pub fn off_support_factor(nu: f64) -> f64 {
    nu / (1.0 + nu)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Config {
    /// Number of coordinates (`N = d`).
    pub d: usize,
    /// The first `strong` coordinates carry `strong_value`, the rest `weak_value`.
    pub strong: usize,
    pub strong_value: f64,
    pub weak_value: f64,
    pub noise_sd: f64,
    pub kappa: f64,
    pub nu: f64,
    pub draws: usize,
    pub seed: u64,
    /// Time allowed after the selected set is reached before reading `B`;
    /// `None` uses `20ν/κ`.
    pub settle: Option<f64>,
}

impl Default for Lemma2Config {
    fn default() -> Self {
        Lemma2Config {
            d: 10,
            strong: 2,
            strong_value: 2.0,
            weak_value: 0.2,
            noise_sd: 0.25,
            kappa: 100.0,
            nu: 3.0,
            draws: 1000,
            seed: 0,
            settle: None,
        }
    }
}

impl Lemma2Config {
    fn validate(&self) -> Result<()> {
        check_draws(self.draws)?;
        if self.strong == 0 || self.strong >= self.d {
            return Err(Error::invalid("strong", format!("need 0 < strong < d = {}, got {}", self.d, self.strong)));
        }
        if !(self.kappa > 0.0) || !(self.nu > 0.0) {
            return Err(Error::invalid("kappa/nu", "must be positive"));
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::invalid("noise_sd", "must be nonnegative"));
        }
        if let Some(s) = self.settle {
            if !(s >= 0.0) {
                return Err(Error::invalid("settle", "must be nonnegative"));
            }
        }
        Ok(())
    }

    pub fn settle_time(&self) -> f64 {
        self.settle.unwrap_or(20.0 * self.nu / self.kappa)
    }

    fn beta(&self) -> Vec<f64> {
        (0..self.d)
            .map(|i| if i < self.strong { self.strong_value } else { self.weak_value })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub config: Lemma2Config,
    /// Draws whose path had `supp(Γ)` equal to the strong set at some `t`.
    pub reached: usize,
    pub reach_fraction: f64,
    /// `B` on the strong set against `β*_S`.
    pub on_support: MeanCheck,
    /// `B` off the strong set against `ν/(1 + ν)·β*`.
    pub off_support: MeanCheck,
    /// Largest `‖B_S − y_S‖ / ‖y_S‖` over reached draws.
    pub max_rel_err_on: f64,
    /// Largest `‖B_Sᶜ − ν/(1+ν)·y_Sᶜ‖ / ‖ν/(1+ν)·y_Sᶜ‖` over reached draws.
    pub max_rel_err_off: f64,
    /// Mean time at which `B` was read.
    pub mean_eval_t: f64,
}

impl Lemma2Report {
    pub fn passed(&self) -> bool {
        self.reached > 0 && self.on_support.passed() && self.off_support.passed()
    }
}

struct Lemma2Draw {
    b: Vec<f64>,
    y: Vec<f64>,
    t: f64,
}

/// Runs one identity-design path and returns `B` at the evaluation time, or
/// `None` when the support never equals the strong set.
fn lemma2_draw(problem: &Problem, strong: usize, settle: f64) -> Result<Option<Lemma2Draw>> {
    let is_target = |g: ndarray::ArrayView2<'_, f64>| {
        g.column(0)
            .iter()
            .enumerate()
            .all(|(i, v)| (*v != 0.0) == (i < strong))
    };
    let mut stepper = Stepper::new(problem);
    let mut reached_at: Option<f64> = None;
    let mut last_good: Option<(Vec<f64>, f64)> = None;
    // A weak coordinate activates before every strong one has only in
    // pathological draws; the horizon caps such runs.
    let horizon = problem.hyper().t_max;
    while stepper.t() < horizon {
        stepper.advance()?;
        let on_target = is_target(stepper.gamma());
        match (on_target, reached_at) {
            (true, None) => {
                reached_at = Some(stepper.t());
                last_good = Some((stepper.b().column(0).to_vec(), stepper.t()));
            }
            (true, Some(t0)) => {
                last_good = Some((stepper.b().column(0).to_vec(), stepper.t()));
                if stepper.t() >= t0 + settle {
                    break;
                }
            }
            (false, Some(_)) => break,
            (false, None) => {
                if stepper.gamma().column(0).iter().enumerate().any(|(i, v)| i >= strong && *v != 0.0) {
                    return Ok(None);
                }
            }
        }
    }
    let y = problem.e().column(0);
    Ok(last_good.map(|(b, t)| Lemma2Draw { b, y, t }))
}

/// Runs MSplit LBI on `y = β* + ε` with `X = I` and reads `B` once the
/// selected set equals the strong coordinates and `Γ` has settled there.
///
/// The loss is `½‖B − y‖² + (1/2ν)‖B − Γ‖²`, whose minimizer in `B` with
/// `Γ` fixed is `(νy + Γ)/(1 + ν)`; this is what makes the off-support
/// factor `ν/(1 + ν)`.
pub fn verify_lemma2(config: &Lemma2Config) -> Result<Lemma2Report> {
    config.validate()?;
    let beta = config.beta();
    let d = config.d;
    let noise = standard_normals(config.seed, config.draws * d);
    let min_strong = config.strong_value.abs().max(f64::MIN_POSITIVE);
    // Γ_j turns on near t = (1 + ν)/|y_j|; give the slowest strong
    // coordinate plenty of room before giving up on a draw.
    let horizon = 4.0 * (1.0 + config.nu) / (0.25 * min_strong) + config.settle_time();
    let hyper = Hyperparams {
        kappa: config.kappa,
        nu: config.nu,
        alpha: StepSize::Auto,
        t_max: horizon,
        record_every: None,
        loss_scale: LossScale::Fixed(0.5),
    };
    let x = Matrix::identity(d);
    let settle = config.settle_time();
    let results: Vec<Result<Option<Lemma2Draw>>> = (0..config.draws)
        .into_par_iter()
        .map(|i| {
            let y: Vec<f64> = (0..d).map(|j| beta[j] + config.noise_sd * noise[i * d + j]).collect();
            let problem = Problem::new(x.clone(), Matrix::column_vector(&y)?, hyper.clone())?;
            lemma2_draw(&problem, config.strong, settle)
        })
        .collect();
    let draws: Vec<Lemma2Draw> = results
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let factor = off_support_factor(config.nu);
    let s = config.strong;
    let mut on = Vec::new();
    let mut off = Vec::new();
    let mut max_on: f64 = 0.0;
    let mut max_off: f64 = 0.0;
    for draw in &draws {
        on.extend_from_slice(&draw.b[..s]);
        off.extend_from_slice(&draw.b[s..]);
        max_on = max_on.max(rel_err(&draw.b[..s], &draw.y[..s], 1.0));
        max_off = max_off.max(rel_err(&draw.b[s..], &draw.y[s..], factor));
    }
    let reached = draws.len();
    let (on_support, off_support) = if reached == 0 {
        let empty = MeanCheck {
            target: 0.0,
            mean: f64::NAN,
            se: f64::NAN,
            z: f64::NAN,
            samples: 0,
            tolerance: 4.0,
        };
        (
            MeanCheck { target: config.strong_value, ..empty.clone() },
            MeanCheck { target: factor * config.weak_value, ..empty },
        )
    } else {
        (
            MeanCheck::new(&on, config.strong_value, 4.0),
            MeanCheck::new(&off, factor * config.weak_value, 4.0),
        )
    };
    Ok(Lemma2Report {
        config: config.clone(),
        reached,
        reach_fraction: reached as f64 / config.draws as f64,
        on_support,
        off_support,
        max_rel_err_on: max_on,
        max_rel_err_off: max_off,
        mean_eval_t: draws.iter().map(|d| d.t).sum::<f64>() / reached.max(1) as f64,
    })
}

fn rel_err(b: &[f64], y: &[f64], factor: f64) -> f64 {
    let num = b.iter().zip(y).map(|(b, y)| (b - factor * y).powi(2)).sum::<f64>().sqrt();
    let den = y.iter().map(|y| (factor * y).powi(2)).sum::<f64>().sqrt();
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_check_arithmetic() {
        let c = MeanCheck::new(&[1.0, 2.0, 3.0, 4.0], 2.0, 4.0);
        assert_eq!(c.mean, 2.5);
        let se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((c.se - se).abs() < 1e-15);
        assert!((c.z - 0.5 / se).abs() < 1e-12);
        assert!(c.passed());
        assert!(!c.against(10.0).passed());
        assert_eq!(MeanCheck::new(&[1.0; 5], 1.0, 4.0).z, 0.0);
    }

    #[test]
    fn gaussian_mean_matches_quadrature() {
        // Trapezoid rule over ±10 sd as an independent oracle.
        let (beta, l1, l2, sd) = (0.7, 0.5, 0.3, 0.8);
        let steps = 200_000;
        let (lo, hi) = (-10.0 * sd, 10.0 * sd);
        let h = (hi - lo) / steps as f64;
        let mut acc = 0.0;
        for i in 0..=steps {
            let e: f64 = lo + h * i as f64;
            let y: f64 = beta + e;
            let f = y.signum() * (y.abs() - l1).max(0.0) / (1.0 + l2);
            let dens = (-0.5 * (e / sd).powi(2)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            acc += w * f * dens * h;
        }
        assert!((elastic_net_gaussian_mean(beta, l1, l2, sd) - acc).abs() < 1e-9);
    }

    #[test]
    fn piecewise_mean_equals_thresholded_average() {
        let noise = standard_normals(4, 500);
        let (beta, l1, l2) = (1.2, 0.4, 0.5);
        let direct = noise
            .iter()
            .map(|e| {
                let y: f64 = beta + e;
                y.signum() * (y.abs() - l1).max(0.0) / (1.0 + l2)
            })
            .sum::<f64>()
            / noise.len() as f64;
        assert!((elastic_net_piecewise_mean(beta, l1, l2, &noise) - direct).abs() < 1e-12);
    }

    #[test]
    fn lemma1_ridge_factor() {
        let report = verify_lemma1(&Lemma1Config::default()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert!(report.bias_detected());
        assert!((report.ridge.mean - 1.0).abs() < 0.03);
    }

    #[test]
    fn lemma1_without_penalty_is_unbiased() {
        let config = Lemma1Config {
            lambda_l1: 0.0,
            lambda_l2: 0.0,
            draws: 5000,
            ..Lemma1Config::default()
        };
        let report = verify_lemma1(&config).unwrap();
        assert!(report.passed());
        assert!(report.ridge_vs_truth.passed());
        assert!(report.elastic_net_exact.against(2.0).passed());
    }

    #[test]
    fn lemma1_rejects_few_draws() {
        let config = Lemma1Config { draws: 999, ..Lemma1Config::default() };
        assert!(verify_lemma1(&config).is_err());
    }

    #[test]
    fn off_support_factor_limits() {
        assert_eq!(off_support_factor(3.0), 0.75);
        assert!((1.0 - off_support_factor(1000.0)).abs() < 0.01);
    }

    #[test]
    fn lemma2_noiseless_path() {
        let config = Lemma2Config {
            noise_sd: 0.0,
            ..Lemma2Config::default()
        };
        let report = verify_lemma2(&config).unwrap();
        assert_eq!(report.reached, config.draws);
        assert!(report.max_rel_err_on < 0.02, "{report:?}");
        assert!(report.max_rel_err_off < 0.02, "{report:?}");
        assert!((report.off_support.mean - 0.15).abs() < 0.003);
    }

    #[test]
    fn lemma2_rejects_bad_config() {
        assert!(verify_lemma2(&Lemma2Config { strong: 10, ..Lemma2Config::default() }).is_err());
        assert!(verify_lemma2(&Lemma2Config { draws: 10, ..Lemma2Config::default() }).is_err());
    }
}
