//! Linear embeddings for few-shot and zero-shot classification.
//!
//! Few-shot: regress one-hot class indicators `E` on features `X`, then
//! label a query `x` by the largest entry of `xB`.
//!
//! Zero-shot: express each target class's semantic vector as a combination
//! of the source classes' semantic vectors (`Eᵗ = EˢB`), apply the same
//! combination to the source feature prototypes, and label a query by its
//! nearest synthesized prototype.

pub mod toy;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{lasso_fit, ridge_fit};
use crate::error::{Error, Result};
use crate::model::{matmul, Hyperparams, LossScale, Matrix, PathPoint, StepSize};
use crate::simulation::HORIZON_FACTOR;
use crate::solver::{first_support_time, run_path, select_t_cv, Estimator, Problem};

/// Feature vectors with integer class labels in `0..classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledFeatures {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl LabeledFeatures {
    pub fn new(x: Matrix, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(Error::mismatch("LabeledFeatures", format!("{} labels", x.rows()), labels.len()));
        }
        check_labels(&labels, classes)?;
        Ok(LabeledFeatures { x, labels, classes })
    }

    /// Number of classes taken as one past the largest label.
    pub fn infer_classes(x: Matrix, labels: Vec<usize>) -> Result<Self> {
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        Self::new(x, labels, classes)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_labels(labels: &[usize], classes: usize) -> Result<()> {
    match labels.iter().position(|&l| l >= classes) {
        Some(index) => Err(Error::LabelOutOfRange {
            index,
            label: labels[index],
            classes,
        }),
        None => Ok(()),
    }
}

/// One prototype (feature-space representative) per class, stored as rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrototypeSet {
    pub f: Matrix,
}

impl PrototypeSet {
    pub fn new(f: Matrix) -> Result<Self> {
        if f.rows() == 0 {
            return Err(Error::invalid("prototypes", "need at least one class"));
        }
        Ok(PrototypeSet { f })
    }

    pub fn classes(&self) -> usize {
        self.f.rows()
    }

    pub fn dim(&self) -> usize {
        self.f.cols()
    }
}

/// `N×K` indicator matrix with a single 1 per row at the row's label.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    check_labels(labels, classes)?;
    let mut m = Matrix::zeros(labels.len(), classes).into_array();
    for (i, &l) in labels.iter().enumerate() {
        m[[i, l]] = 1.0;
    }
    Matrix::from_array(m)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingMethod {
    MsplitDense,
    MsplitSparse,
    Lasso,
    Ridge,
}

impl EmbeddingMethod {
    pub const ALL: [EmbeddingMethod; 4] = [
        EmbeddingMethod::MsplitDense,
        EmbeddingMethod::MsplitSparse,
        EmbeddingMethod::Lasso,
        EmbeddingMethod::Ridge,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EmbeddingMethod::MsplitDense => "msplit_dense",
            EmbeddingMethod::MsplitSparse => "msplit_sparse",
            EmbeddingMethod::Lasso => "lasso",
            EmbeddingMethod::Ridge => "ridge",
        }
    }

    fn estimator(&self) -> Option<Estimator> {
        match self {
            EmbeddingMethod::MsplitDense => Some(Estimator::Dense),
            EmbeddingMethod::MsplitSparse => Some(Estimator::Sparse),
            _ => None,
        }
    }
}

impl fmt::Display for EmbeddingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EmbeddingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid("method", format!("unknown method {s:?}; expected msplit_dense, msplit_sparse, lasso or ridge")))
    }
}

/// Settings for [`fit_embedding`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingParams {
    /// MSplit LBI settings. `t_max` is ignored unless [`Self::horizon`] is set.
    pub hyper: Hyperparams,
    /// Path horizon; `None` runs to [`HORIZON_FACTOR`] times the first
    /// activation time.
    pub horizon: Option<f64>,
    /// Read the path at this `t` instead of cross-validating.
    pub t: Option<f64>,
    pub folds: usize,
    pub seed: u64,
    /// Penalty for the lasso and ridge baselines.
    pub lambda: f64,
}

impl Default for EmbeddingParams {
    fn default() -> Self {
        EmbeddingParams {
            hyper: Hyperparams::default(),
            horizon: None,
            t: None,
            folds: 5,
            seed: 0,
            lambda: 0.01,
        }
    }
}

/// Where the MSplit LBI path was read.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MsplitFit {
    pub point: PathPoint,
    pub horizon: f64,
    /// Whether `t` came from cross-validation.
    pub cross_validated: bool,
}

/// Runs MSplit LBI on `E ≈ XB` and returns the path point at the requested
/// or cross-validated `t`. With cross-validation the point minimizes the
/// held-out loss of `which`.
pub fn fit_msplit(x: &Matrix, e: &Matrix, which: Estimator, params: &EmbeddingParams) -> Result<MsplitFit> {
    let base = Hyperparams {
        t_max: params.horizon.unwrap_or(1.0),
        ..params.hyper
    };
    let problem = Problem::new(x.clone(), e.clone(), base)?;
    let horizon = match (params.horizon, params.t) {
        (Some(h), _) => h,
        (None, Some(t)) => t,
        (None, None) => {
            let t0 = first_support_time(&problem, 1e6)?
                .ok_or_else(|| Error::invalid("data", "Γ never left zero; is the response identically zero?"))?;
            HORIZON_FACTOR * t0
        }
    };
    if let Some(t) = params.t {
        if !(t >= 0.0) || t > horizon {
            return Err(Error::invalid("t", format!("{t} lies outside the path horizon [0, {horizon}]")));
        }
    }
    let problem = problem.with_hyper(Hyperparams { t_max: horizon, ..base })?;

    if let Some(t) = params.t {
        let path = run_path(&problem)?;
        let point = path
            .at(t)
            .ok_or_else(|| Error::invalid("t", format!("{t} lies outside the recorded path")))?;
        return Ok(MsplitFit {
            point: point.clone(),
            horizon,
            cross_validated: false,
        });
    }

    let cv = select_t_cv(&problem, params.folds, params.seed)?;
    let loss = |&(_, dense, sparse): &(f64, f64, f64)| match which {
        Estimator::Dense => dense,
        Estimator::Sparse => sparse,
    };
    let mut t_star = 0.0;
    let mut best = f64::INFINITY;
    for entry in &cv.curve {
        if loss(entry) < best {
            best = loss(entry);
            t_star = entry.0;
        }
    }
    let refit = problem.with_hyper(Hyperparams {
        t_max: t_star.max(cv.alpha),
        ..cv.hyper_for(problem.hyper())
    })?;
    let path = run_path(&refit)?;
    let point = path.at(t_star).unwrap_or_else(|| path.last()).clone();
    Ok(MsplitFit {
        point,
        horizon,
        cross_validated: true,
    })
}

/// Fits `B` in `E ≈ XB` by the chosen method.
pub fn fit_embedding(x: &Matrix, e: &Matrix, method: EmbeddingMethod, params: &EmbeddingParams) -> Result<Matrix> {
    if x.rows() != e.rows() {
        return Err(Error::mismatch("fit_embedding", format!("{} rows in E", x.rows()), e.rows()));
    }
    match method {
        EmbeddingMethod::Ridge => ridge_fit(x, e, params.lambda),
        EmbeddingMethod::Lasso => lasso_fit(x, e, params.lambda),
        _ => {
            let which = method.estimator().expect("msplit variant");
            let fit = fit_msplit(x, e, which, params)?;
            Ok(which.pick(&fit.point).clone())
        }
    }
}

fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Class with the largest score `xB`; ties go to the smallest index.
pub fn predict_fsl(b: &Matrix, x: &[f64]) -> Result<usize> {
    if x.len() != b.rows() || b.cols() == 0 {
        return Err(Error::mismatch("predict_fsl", format!("{} features", b.rows()), x.len()));
    }
    Ok(argmax((0..b.cols()).map(|k| (0..b.rows()).map(|i| x[i] * b[(i, k)]).sum::<f64>())))
}

/// [`predict_fsl`] for every row of `x`.
pub fn predict_fsl_batch(b: &Matrix, x: &Matrix) -> Result<Vec<usize>> {
    (0..x.rows()).map(|i| predict_fsl(b, &x.row(i))).collect()
}

/// Mean feature vector of each class.
pub fn class_prototypes(data: &LabeledFeatures) -> Result<PrototypeSet> {
    let d = data.x.cols();
    let mut sums = vec![vec![0.0; d]; data.classes];
    let mut counts = vec![0usize; data.classes];
    for (i, &l) in data.labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(data.x.row(i)) {
            *s += v;
        }
    }
    if let Some(k) = counts.iter().position(|&c| c == 0) {
        return Err(Error::EmptyClass(k));
    }
    let rows: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c as f64).collect())
        .collect();
    PrototypeSet::new(Matrix::from_rows(&rows)?)
}

/// Target prototypes `F̂ᵗ = BᵀFˢ`: target `j` is `Σ_k B[k, j]·Fˢ[k]`.
pub fn synthesize_prototypes(source: &PrototypeSet, b: &Matrix) -> Result<PrototypeSet> {
    if b.rows() != source.classes() {
        return Err(Error::mismatch("synthesize_prototypes", format!("{} source classes", source.classes()), b.rows()));
    }
    PrototypeSet::new(matmul(&b.transpose(), &source.f)?)
}

/// Index of the nearest prototype in Euclidean distance; ties go to the
/// smallest index.
pub fn predict_zsl(x: &[f64], prototypes: &PrototypeSet) -> Result<usize> {
    if x.len() != prototypes.dim() {
        return Err(Error::mismatch("predict_zsl", format!("{} features", prototypes.dim()), x.len()));
    }
    let dist = (0..prototypes.classes()).map(|k| {
        -prototypes
            .f
            .row(k)
            .iter()
            .zip(x)
            .map(|(p, v)| (p - v) * (p - v))
            .sum::<f64>()
    });
    Ok(argmax(dist))
}

/// [`predict_zsl`] for every row of `x`.
pub fn predict_zsl_batch(x: &Matrix, prototypes: &PrototypeSet) -> Result<Vec<usize>> {
    (0..x.rows()).map(|i| predict_zsl(&x.row(i), prototypes)).collect()
}

/// Fraction of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if predicted.len() != labels.len() || labels.is_empty() {
        return Err(Error::mismatch("accuracy", labels.len(), predicted.len()));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn structure_design(e_source: &Matrix, e_target: &Matrix) -> Result<(Matrix, Matrix)> {
    if e_source.cols() != e_target.cols() {
        return Err(Error::mismatch(
            "learn_structure",
            format!("{} semantic dimensions", e_source.cols()),
            e_target.cols(),
        ));
    }
    Ok((e_source.transpose(), e_target.transpose()))
}

/// Structure matrix `B` (`Kˢ×Kᵗ`) with `Eᵗᵀ ≈ EˢᵀB`: semantic dimensions
/// act as samples and source classes as features.
pub fn learn_structure(
    e_source: &Matrix,
    e_target: &Matrix,
    method: EmbeddingMethod,
    params: &EmbeddingParams,
) -> Result<Matrix> {
    let (design, response) = structure_design(e_source, e_target)?;
    if response.cols() == 0 {
        return Ok(Matrix::zeros(e_source.rows(), 0));
    }
    fit_embedding(&design, &response, method, params)
}

/// MSplit LBI path point for the structure regression, for signal reports.
pub fn learn_structure_point(
    e_source: &Matrix,
    e_target: &Matrix,
    which: Estimator,
    params: &EmbeddingParams,
) -> Result<MsplitFit> {
    let (design, response) = structure_design(e_source, e_target)?;
    if response.cols() == 0 {
        return Err(Error::invalid("e_target", "no target classes"));
    }
    fit_msplit(&design, &response, which, params)
}

/// A ranked coefficient.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub source: usize,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSignals {
    /// Nonzero entries of `B̃`, by decreasing magnitude.
    pub strong: Vec<Signal>,
    /// Nonzero entries of `B` outside `supp(Γ)`, by decreasing `|B − B̃|`.
    pub weak: Vec<Signal>,
}

/// Largest strong and weak coefficients of every response column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub columns: Vec<ColumnSignals>,
}

fn top(mut entries: Vec<Signal>, key: impl Fn(&Signal) -> f64, m: usize) -> Vec<Signal> {
    // Stable sort keeps equal magnitudes in index order.
    entries.sort_by(|a, b| key(b).total_cmp(&key(a)));
    entries.truncate(m);
    entries
}

/// The `m` largest strong and weak signals in each column of a path point.
pub fn signal_report(point: &PathPoint, m: usize) -> Result<SignalReport> {
    if m == 0 {
        return Err(Error::invalid("m", "need at least one entry per list"));
    }
    let (b, gamma, btilde) = (&point.b, &point.gamma, &point.btilde);
    let columns = (0..b.cols())
        .map(|j| {
            let mut strong = Vec::new();
            let mut weak = Vec::new();
            for i in 0..b.rows() {
                if gamma[(i, j)] != 0.0 {
                    if btilde[(i, j)] != 0.0 {
                        strong.push(Signal { source: i, weight: btilde[(i, j)] });
                    }
                } else if b[(i, j)] != 0.0 {
                    weak.push(Signal { source: i, weight: b[(i, j)] });
                }
            }
            let gap = |s: &Signal| (b[(s.source, j)] - btilde[(s.source, j)]).abs();
            ColumnSignals {
                strong: top(strong, |s| s.weight.abs(), m),
                weak: top(weak, gap, m),
            }
        })
        .collect();
    Ok(SignalReport { columns })
}

/// Hyperparameters suited to embedding problems: the reference `κ` and `ν`
/// with the per-sample loss and an automatic step.
pub fn default_hyper(nu: f64) -> Hyperparams {
    Hyperparams {
        nu,
        alpha: StepSize::Auto,
        loss_scale: LossScale::PerSample,
        ..Hyperparams::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::frobenius_norm;
    use crate::solver::prediction_loss;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn one_hot_cases() {
        assert_eq!(one_hot(&[0, 1], 2).unwrap(), Matrix::identity(2));
        let labels = [2, 0, 1, 2, 1];
        let m = one_hot(&labels, 3).unwrap();
        for i in 0..labels.len() {
            assert_eq!(m.row(i).iter().sum::<f64>(), 1.0);
            assert_eq!(predict_fsl(&Matrix::identity(3), &m.row(i)).unwrap(), labels[i]);
        }
        assert!(matches!(
            one_hot(&[0, 3], 3),
            Err(Error::LabelOutOfRange { index: 1, label: 3, classes: 3 })
        ));
    }

    #[test]
    fn method_names_round_trip() {
        for m in EmbeddingMethod::ALL {
            assert_eq!(m.name().parse::<EmbeddingMethod>().unwrap(), m);
        }
        assert!("elastic".parse::<EmbeddingMethod>().is_err());
    }

    #[test]
    fn ridge_on_square_design_inverts() {
        let x = Matrix::from_rows(&[[2.0, 1.0, 0.0], [0.0, 1.0, 3.0], [1.0, 0.0, 1.0]]).unwrap();
        let b_true = Matrix::from_rows(&[[1.0, -1.0], [0.5, 2.0], [0.0, 1.0]]).unwrap();
        let e = matmul(&x, &b_true).unwrap();
        let params = EmbeddingParams { lambda: 1e-12, ..EmbeddingParams::default() };
        let b = fit_embedding(&x, &e, EmbeddingMethod::Ridge, &params).unwrap();
        assert!((&b - &b_true).max_abs() < 1e-9);
    }

    #[test]
    fn fsl_argmax_cases() {
        let mut x = vec![0.0; 5];
        x[3] = 1.0;
        assert_eq!(predict_fsl(&Matrix::identity(5), &x).unwrap(), 3);
        // Ties go to the smallest index.
        assert_eq!(predict_fsl(&Matrix::identity(3), &[1.0, 1.0, 0.0]).unwrap(), 0);
        assert!(predict_fsl(&Matrix::identity(3), &[1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = Matrix::new(4, 3, (0..12).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        for _ in 0..50 {
            let q: Vec<f64> = (0..4).map(|_| rng.random::<f64>() - 0.5).collect();
            let c = 0.1 + 10.0 * rng.random::<f64>();
            let scaled: Vec<f64> = q.iter().map(|v| c * v).collect();
            assert_eq!(predict_fsl(&b, &q).unwrap(), predict_fsl(&b, &scaled).unwrap());
        }
    }

    #[test]
    fn ridge_fsl_on_separated_clusters() {
        let (train, _) = toy::fsl_clusters(3, 20, 1, 10, 4.0, 5).unwrap();
        let e = one_hot(&train.labels, train.classes).unwrap();
        let b = fit_embedding(&train.x, &e, EmbeddingMethod::Ridge, &EmbeddingParams::default()).unwrap();
        let acc = accuracy(&predict_fsl_batch(&b, &train.x).unwrap(), &train.labels).unwrap();
        assert!(acc >= 0.95, "training accuracy {acc}");
    }

    #[test]
    fn prototypes_are_class_means() {
        let x = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [0.0, 0.0], [5.0, -2.0]]).unwrap();
        let data = LabeledFeatures::new(x.clone(), vec![0, 0, 1, 2], 3).unwrap();
        let p = class_prototypes(&data).unwrap();
        assert_eq!(p.f.row(0), vec![2.0, 3.0]);
        assert_eq!(p.f.row(1), vec![0.0, 0.0]);
        assert_eq!(p.f.row(2), vec![5.0, -2.0]);

        let permuted = LabeledFeatures::new(x.select_rows(&[3, 1, 2, 0]), vec![2, 0, 1, 0], 3).unwrap();
        assert_eq!(class_prototypes(&permuted).unwrap(), p);

        let missing = LabeledFeatures::new(x, vec![0, 0, 2, 2], 3).unwrap();
        assert!(matches!(class_prototypes(&missing), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn self_classification_with_distinct_prototypes() {
        let (train, _) = toy::fsl_clusters(4, 3, 1, 6, 3.0, 2).unwrap();
        let p = class_prototypes(&train).unwrap();
        let pred = predict_zsl_batch(&p.f, &p).unwrap();
        assert_eq!(pred, vec![0, 1, 2, 3]);
    }

    #[test]
    fn synthesis_cases() {
        let src = PrototypeSet::new(Matrix::from_rows(&[[1.0, 0.0, 2.0], [0.0, 3.0, 1.0]]).unwrap()).unwrap();
        assert_eq!(synthesize_prototypes(&src, &Matrix::identity(2)).unwrap(), src);
        let pick = Matrix::from_rows(&[[0.0, 1.0, 0.5], [1.0, 0.0, 0.5]]).unwrap();
        let out = synthesize_prototypes(&src, &pick).unwrap();
        assert_eq!(out.f.row(0), src.f.row(1));
        assert_eq!(out.f.row(1), src.f.row(0));
        assert_eq!(out.f.row(2), vec![0.5, 1.5, 1.5]);
        assert!(synthesize_prototypes(&src, &Matrix::identity(3)).is_err());
    }

    #[test]
    fn zsl_nearest_prototype() {
        let p = PrototypeSet::new(Matrix::from_rows(&[[0.0, 0.0], [4.0, 0.0]]).unwrap()).unwrap();
        assert_eq!(predict_zsl(&[4.0, 0.0], &p).unwrap(), 1);
        assert_eq!(predict_zsl(&[1.0, 0.0], &p).unwrap(), 0);
        assert_eq!(predict_zsl(&[3.0, 0.0], &p).unwrap(), 1);
        assert_eq!(predict_zsl(&[2.0, 5.0], &p).unwrap(), 0);
        assert!(predict_zsl(&[1.0], &p).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let k = rng.random_range(1..6);
            let d = rng.random_range(1..5);
            let f = Matrix::new(k, d, (0..k * d).map(|_| rng.random::<f64>()).collect()).unwrap();
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let p = PrototypeSet::new(f).unwrap();
            let mut oracle = 0;
            let mut best = f64::INFINITY;
            for c in 0..k {
                let dist: f64 = p.f.row(c).iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dist < best {
                    best = dist;
                    oracle = c;
                }
            }
            assert_eq!(predict_zsl(&x, &p).unwrap(), oracle);
            let scaled = PrototypeSet::new(p.f.scale(3.0)).unwrap();
            let xs: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
            assert_eq!(predict_zsl(&xs, &scaled).unwrap(), oracle);
        }
    }

    #[test]
    fn structure_degenerate_and_mismatch() {
        let es = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let empty = Matrix::zeros(0, 2);
        let b = learn_structure(&es, &empty, EmbeddingMethod::Ridge, &EmbeddingParams::default()).unwrap();
        assert_eq!(b.shape(), (2, 0));
        assert!(learn_structure(&es, &Matrix::zeros(1, 3), EmbeddingMethod::Ridge, &EmbeddingParams::default()).is_err());
    }

    #[test]
    fn copy_instance_is_one_hot_and_ranked_first() {
        let inst = toy::copy_instance(6, 12, 3, 11).unwrap();
        let params = EmbeddingParams::default();
        for method in [EmbeddingMethod::MsplitSparse, EmbeddingMethod::Lasso] {
            let b = learn_structure(&inst.e_source, &inst.e_target, method, &params).unwrap();
            let col = b.column(0);
            let best = argmax(col.iter().map(|v| v.abs()));
            assert_eq!(best, inst.copied, "{method}");
        }
        let fit = learn_structure_point(&inst.e_source, &inst.e_target, Estimator::Sparse, &params).unwrap();
        let report = signal_report(&fit.point, 3).unwrap();
        assert_eq!(report.columns[0].strong[0].source, inst.copied);
    }

    #[test]
    fn structure_residual_shrinks_along_path() {
        let inst = toy::zsl_linear(7, 10, 3, 2, 3).unwrap();
        let (design, response) = structure_design(&inst.e_source, &inst.e_target).unwrap();
        let hyper = Hyperparams { t_max: 200.0, record_every: Some(200), ..default_hyper(3.0) };
        let path = run_path(&Problem::new(design.clone(), response.clone(), hyper).unwrap()).unwrap();
        let resid: Vec<f64> = path
            .points
            .iter()
            .map(|p| frobenius_norm(&(&matmul(&design, &p.b).unwrap() - &response)))
            .collect();
        for w in resid.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
        assert!(resid.last().unwrap() < &(0.05 * resid[0]));
    }

    #[test]
    fn sparse_support_within_gamma() {
        let (train, _) = toy::fsl_clusters(5, 5, 1, 12, 3.0, 8).unwrap();
        let e = one_hot(&train.labels, 5).unwrap();
        let fit = fit_msplit(&train.x, &e, Estimator::Sparse, &EmbeddingParams::default()).unwrap();
        let p = &fit.point;
        for i in 0..p.b.rows() {
            for j in 0..p.b.cols() {
                if p.btilde[(i, j)] != 0.0 {
                    assert_ne!(p.gamma[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn dense_residual_dominates_sparse() {
        let (train, _) = toy::fsl_clusters(5, 5, 1, 12, 3.0, 8).unwrap();
        let e = one_hot(&train.labels, 5).unwrap();
        let hyper = Hyperparams { t_max: 50.0, ..default_hyper(3.0) };
        let path = run_path(&Problem::new(train.x.clone(), e.clone(), hyper).unwrap()).unwrap();
        for p in &path.points {
            let dense = prediction_loss(&train.x, &e, &p.b);
            let sparse = prediction_loss(&train.x, &e, &p.btilde);
            assert!(dense <= sparse + 1e-12, "t = {}: {dense} > {sparse}", p.t);
        }
    }

    #[test]
    fn sparse_truth_support_recovered_on_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (n, d, p) = (200, 40, 3);
        let x = Matrix::new(n, d, (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
        let active = [3usize, 8, 17, 25, 33];
        let mut b = Matrix::zeros(d, p).into_array();
        for &i in &active {
            for j in 0..p {
                b[[i, j]] = 3.0 + j as f64;
            }
        }
        let b = Matrix::from_array(b).unwrap();
        let noise = Matrix::new(n, p, (0..n * p).map(|_| 0.01 * (rng.random::<f64>() - 0.5)).collect()).unwrap();
        let e = &matmul(&x, &b).unwrap() + &noise;
        let hyper = Hyperparams { t_max: 20.0, record_every: Some(20), ..default_hyper(3.0) };
        let path = run_path(&Problem::new(x, e, hyper).unwrap()).unwrap();
        let found = path.points.iter().any(|pt| {
            (0..d).all(|i| (0..p).all(|j| (pt.btilde[(i, j)] != 0.0) == active.contains(&i)))
        });
        assert!(found, "active rows never recovered exactly");
    }

    #[test]
    fn report_cases() {
        let point = PathPoint {
            t: 1.0,
            k: 1,
            b: Matrix::from_rows(&[[3.0, 1.0], [-0.5, 2.0], [0.2, -4.0], [0.0, 1.5]]).unwrap(),
            gamma: Matrix::from_rows(&[[2.0, 1.0], [0.0, 1.0], [0.0, 1.0], [0.0, 1.0]]).unwrap(),
            btilde: Matrix::from_rows(&[[3.0, 1.0], [0.0, 2.0], [0.0, -4.0], [0.0, 1.5]]).unwrap(),
        };
        let r = signal_report(&point, 2).unwrap();
        let c0 = &r.columns[0];
        assert_eq!(c0.strong, vec![Signal { source: 0, weight: 3.0 }]);
        assert_eq!(c0.weak, vec![Signal { source: 1, weight: -0.5 }, Signal { source: 2, weight: 0.2 }]);
        // Fully dense Γ leaves nothing weak.
        let c1 = &r.columns[1];
        assert!(c1.weak.is_empty());
        assert_eq!(c1.strong.iter().map(|s| s.source).collect::<Vec<_>>(), vec![2, 1]);
        assert!(signal_report(&point, 0).is_err());

        let wide = signal_report(&point, 10).unwrap();
        assert_eq!(wide.columns[1].strong.len(), 4);
        for col in &wide.columns {
            for list in [&col.strong, &col.weak] {
                assert!(list.windows(2).all(|w| w[0].weight.abs() >= w[1].weight.abs()));
            }
            assert!(col.strong.iter().all(|s| col.weak.iter().all(|w| w.source != s.source)));
        }
    }
}
