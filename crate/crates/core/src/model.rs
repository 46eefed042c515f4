//! Shared domain types and the handful of dense matrix utilities the solvers
//! need.
//!
//! [`Matrix`] is a thin newtype over [`ndarray::Array2<f64>`] that guarantees
//! every entry is finite. Everything else in the crate (designs, responses,
//! coefficient matrices, iterates) is carried as a `Matrix`.

use std::fmt;
use std::ops::{Add, Index, Sub};

use ndarray::{Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense real matrix with finite entries.
///
/// Zero-sized shapes are allowed (an empty set of target classes is a valid
/// input to structure learning); operations that need a non-empty matrix
/// check for it themselves.
#[derive(Clone, PartialEq)]
pub struct Matrix(Array2<f64>);

impl Matrix {
    /// Builds a matrix from row-major data.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BadShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        let array = Array2::from_shape_vec((rows, cols), data).expect("length checked above");
        Self::from_array(array)
    }

    /// Wraps an existing array, rejecting NaN and infinities.
    pub fn from_array(array: Array2<f64>) -> Result<Self> {
        if let Some(((row, col), _)) = array.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { row, col });
        }
        Ok(Matrix(array))
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::mismatch(
                    "from_rows",
                    format!("{cols} columns"),
                    format!("{} columns in row {i}", row.len()),
                ));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Single-column matrix.
    pub fn column_vector(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix(Array2::zeros((rows, cols)))
    }

    pub fn identity(n: usize) -> Self {
        Matrix(Array2::eye(n))
    }

    /// Wraps an array produced by arithmetic on already-finite matrices.
    /// Callers that can overflow must check [`Matrix::is_finite`] themselves.
    pub(crate) fn from_array_unchecked(array: Array2<f64>) -> Self {
        Matrix(array)
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[[row, col]]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        self.0.iter().copied().collect()
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        self.0.column(col).to_vec()
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        self.0.row(row).to_vec()
    }

    /// Selects the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        Matrix(self.0.select(Axis(0), rows))
    }

    pub fn transpose(&self) -> Matrix {
        Matrix(self.0.t().to_owned())
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix(&self.0 * factor)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix(self.0.mapv(f))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Number of nonzero entries.
    pub fn nnz(&self) -> usize {
        self.0.iter().filter(|v| **v != 0.0).count()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn check_same_shape(&self, other: &Matrix, op: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::mismatch(
                op,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }

    pub fn try_add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "add")?;
        Ok(Matrix(&self.0 + &other.0))
    }

    pub fn try_sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other, "sub")?;
        Ok(Matrix(&self.0 - &other.0))
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix{:?} {}", self.shape(), self.0)
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (row, col): (usize, usize)) -> &f64 {
        &self.0[[row, col]]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    /// Panics on shape mismatch; use [`Matrix::try_add`] for fallible code.
    fn add(self, rhs: &Matrix) -> Matrix {
        self.try_add(rhs).expect("shape mismatch in matrix addition")
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.try_sub(rhs).expect("shape mismatch in matrix subtraction")
    }
}

#[derive(Serialize, Deserialize)]
struct MatrixRepr {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Serialize for Matrix {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        MatrixRepr {
            rows: self.rows(),
            cols: self.cols(),
            data: self.to_row_major(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Matrix {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let repr = MatrixRepr::deserialize(deserializer)?;
        Matrix::new(repr.rows, repr.cols, repr.data).map_err(serde::de::Error::custom)
    }
}

/// Standard matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols() != b.rows() {
        return Err(Error::mismatch(
            "matmul",
            format!("{} rows in right operand", a.cols()),
            b.rows(),
        ));
    }
    Ok(Matrix(a.0.dot(&b.0)))
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(a: &Matrix) -> f64 {
    a.0.iter().map(|v| v * v).sum::<f64>().sqrt()
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 100_000;

/// Largest singular value, by power iteration on `aᵀa`.
///
/// Iterates until the Rayleigh quotient changes by less than `1e-10`
/// relative. The start vector is drawn from a fixed-seed generator so the
/// result is reproducible and almost surely not orthogonal to the leading
/// singular vector.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::invalid("a", "spectral norm of an empty matrix"));
    }
    let gram = a.0.t().dot(&a.0);
    let n = gram.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_5eed);
    let mut v = ndarray::Array1::<f64>::from_shape_fn(n, |_| rng.random_range(0.5..1.5));
    let norm = v.dot(&v).sqrt();
    v /= norm;

    let mut previous = 0.0;
    for _ in 0..POWER_MAX_ITERS {
        let w = gram.dot(&v);
        let rayleigh = v.dot(&w);
        let w_norm = w.dot(&w).sqrt();
        if w_norm == 0.0 {
            return Ok(0.0);
        }
        if (rayleigh - previous).abs() <= POWER_TOL * rayleigh.abs() {
            return Ok(rayleigh.max(0.0).sqrt());
        }
        previous = rayleigh;
        v = w / w_norm;
    }
    Err(Error::NotConverged {
        what: "spectral_norm power iteration",
        iterations: POWER_MAX_ITERS,
    })
}

/// Step-size policy for the MSplit LBI iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepSize {
    /// Saturate the stability bound (see [`crate::solver::default_step_size`]).
    Auto,
    Fixed(f64),
}

/// Scale applied to the quadratic data-fit term `‖XB − E‖²_F`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScale {
    /// `1 / (2N)`, the canonical scaling.
    PerSample,
    Fixed(f64),
}

impl LossScale {
    pub fn resolve(self, n_samples: usize) -> f64 {
        match self {
            LossScale::PerSample => 1.0 / (2.0 * n_samples as f64),
            LossScale::Fixed(s) => s,
        }
    }
}

/// Knobs of the MSplit LBI iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Damping factor.
    pub kappa: f64,
    /// Strength of the coupling `(1/2ν)‖B − Γ‖²_F`.
    pub nu: f64,
    pub alpha: StepSize,
    /// Path horizon; iteration stops once `t = kα` would pass it.
    pub t_max: f64,
    /// Iterations between recorded path points; `None` gives about 500 points.
    pub record_every: Option<usize>,
    pub loss_scale: LossScale,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            kappa: 5.0,
            nu: 3.0,
            alpha: StepSize::Auto,
            t_max: 10.0,
            record_every: None,
            loss_scale: LossScale::PerSample,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("kappa", self.kappa)?;
        positive("nu", self.nu)?;
        positive("t_max", self.t_max)?;
        if let StepSize::Fixed(a) = self.alpha {
            positive("alpha", a)?;
        }
        if let LossScale::Fixed(s) = self.loss_scale {
            positive("loss_scale", s)?;
        }
        if self.record_every == Some(0) {
            return Err(Error::invalid("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Iterate of the MSplit LBI recursion.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    /// Dense estimator.
    pub b: Matrix,
    /// Accumulated dual variable.
    pub z: Matrix,
    /// Sparse augmented variable, `κ·S(Z, 1)`.
    pub gamma: Matrix,
    /// `B` restricted to the support of `Γ`.
    pub btilde: Matrix,
    pub k: usize,
    pub t: f64,
}

/// One recorded point of a regularization path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathPoint {
    pub t: f64,
    pub k: usize,
    pub b: Matrix,
    pub gamma: Matrix,
    pub btilde: Matrix,
}

impl PathPoint {
    /// Number of nonzero entries of `Γ` in each column.
    pub fn support_sizes(&self) -> Vec<usize> {
        (0..self.gamma.cols())
            .map(|j| {
                (0..self.gamma.rows())
                    .filter(|&i| self.gamma[(i, j)] != 0.0)
                    .count()
            })
            .collect()
    }
}

/// Recorded regularization path, ordered by strictly increasing `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub points: Vec<PathPoint>,
    pub hyper: Hyperparams,
    /// Step size actually used.
    pub alpha: f64,
    pub record_every: usize,
}

impl Path {
    pub fn first(&self) -> &PathPoint {
        &self.points[0]
    }

    pub fn last(&self) -> &PathPoint {
        self.points.last().expect("a path always holds its initial point")
    }

    pub fn t_values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.t).collect()
    }

    /// The last recorded point with `t` not exceeding `t` (up to rounding).
    /// Returns `None` when `t` lies outside the recorded horizon.
    pub fn at(&self, t: f64) -> Option<&PathPoint> {
        let tol = 1e-9 * self.alpha.max(1.0);
        if !(t >= -tol) || t > self.last().t + tol {
            return None;
        }
        self.points.iter().take_while(|p| p.t <= t + tol).last()
    }
}

/// Split of a dense estimate into strong, weak and noise parts with pairwise
/// disjoint supports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub strong: Matrix,
    pub weak: Matrix,
    pub noise: Matrix,
    pub tau: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    fn triple_loop(a: &Matrix, b: &Matrix) -> Matrix {
        let mut out = vec![0.0; a.rows() * b.cols()];
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                for k in 0..a.cols() {
                    out[i * b.cols() + j] += a[(i, k)] * b[(k, j)];
                }
            }
        }
        Matrix::new(a.rows(), b.cols(), out).unwrap()
    }

    /// Eigenvalues of a symmetric matrix of size ≤ 4 by bracketing roots of
    /// its characteristic polynomial. The polynomial is evaluated through a
    /// determinant by cofactor expansion, so this is independent of any
    /// iterative method.
    fn symmetric_eigenvalues(m: &[[f64; 4]], n: usize) -> Vec<f64> {
        fn det(m: &[Vec<f64>]) -> f64 {
            let n = m.len();
            if n == 1 {
                return m[0][0];
            }
            (0..n)
                .map(|c| {
                    let minor: Vec<Vec<f64>> = m[1..]
                        .iter()
                        .map(|row| {
                            row.iter()
                                .enumerate()
                                .filter(|(j, _)| *j != c)
                                .map(|(_, v)| *v)
                                .collect()
                        })
                        .collect();
                    let sign = if c % 2 == 0 { 1.0 } else { -1.0 };
                    sign * m[0][c] * det(&minor)
                })
                .sum()
        }
        let charpoly = |lambda: f64| {
            let shifted: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| m[i][j] - if i == j { lambda } else { 0.0 })
                        .collect()
                })
                .collect();
            det(&shifted)
        };
        // Gershgorin bound on the spectrum.
        let bound = (0..n)
            .map(|i| (0..n).map(|j| m[i][j].abs()).sum::<f64>())
            .fold(0.0, f64::max);
        let steps = 200_000;
        let h = 2.0 * bound / steps as f64;
        let mut roots = Vec::new();
        let mut prev = charpoly(-bound - h);
        for s in 0..=steps {
            let x = -bound + s as f64 * h;
            let cur = charpoly(x);
            if cur == 0.0 || prev.signum() != cur.signum() {
                let (mut lo, mut hi) = (x - h, x);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if charpoly(lo).signum() == charpoly(mid).signum() {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            prev = cur;
        }
        roots
    }

    #[test]
    fn new_rejects_bad_length_and_nan() {
        assert!(matches!(Matrix::new(2, 2, vec![1.0; 3]), Err(Error::BadShape { .. })));
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn matmul_identity_and_small_case() {
        let a = random(2, 3, 1);
        assert_eq!(matmul(&Matrix::identity(2), &a).unwrap(), a);

        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let ones = Matrix::from_rows(&[[1.0], [1.0]]).unwrap();
        let expected = Matrix::from_rows(&[[3.0], [7.0]]).unwrap();
        assert_eq!(matmul(&a, &ones).unwrap(), expected);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(5, 4, 2);
        let b = random(4, 3, 3);
        let fast = matmul(&a, &b).unwrap();
        let slow = triple_loop(&a, &b);
        for i in 0..5 {
            for j in 0..3 {
                assert_relative_eq!(fast[(i, j)], slow[(i, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&random(2, 3, 1), &random(2, 3, 1)).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { op: "matmul", .. }));
    }

    #[test]
    fn spectral_norm_simple_cases() {
        let d = Matrix::from_rows(&[[3.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_relative_eq!(spectral_norm(&d).unwrap(), 3.0, max_relative = 1e-9);
        assert_relative_eq!(spectral_norm(&Matrix::identity(5)).unwrap(), 1.0, max_relative = 1e-9);
        assert_eq!(spectral_norm(&Matrix::zeros(3, 2)).unwrap(), 0.0);
        assert!(spectral_norm(&Matrix::zeros(0, 0)).is_err());
    }

    #[test]
    fn spectral_norm_matches_characteristic_polynomial() {
        let a = random(6, 4, 11);
        let gram = matmul(&a.transpose(), &a).unwrap();
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = gram[(i, j)];
            }
        }
        let eig = symmetric_eigenvalues(&m, 4);
        assert_eq!(eig.len(), 4);
        let top = eig.iter().cloned().fold(f64::MIN, f64::max);
        assert_relative_eq!(spectral_norm(&a).unwrap(), top.sqrt(), max_relative = 1e-8);
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 3)), 0.0);
        assert_eq!(frobenius_norm(&Matrix::from_rows(&[[3.0, 4.0]]).unwrap()), 5.0);
        let a = random(4, 5, 9);
        let oracle: f64 = a.to_row_major().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert_relative_eq!(frobenius_norm(&a), oracle, max_relative = 1e-14);
    }

    #[test]
    fn json_round_trip_and_validation() {
        let a = random(2, 3, 4);
        let json = serde_json::to_string(&a).unwrap();
        assert!(json.starts_with("{\"rows\":2,\"cols\":3,\"data\":["));
        let back: Matrix = serde_json::from_str(&json).unwrap();
        assert_eq!(a, back);
        assert!(serde_json::from_str::<Matrix>(r#"{"rows":2,"cols":2,"data":[1,2,3]}"#).is_err());
    }

    #[test]
    fn path_lookup() {
        let zero = Matrix::zeros(1, 1);
        let point = |t: f64, k| PathPoint {
            t,
            k,
            b: zero.clone(),
            gamma: zero.clone(),
            btilde: zero.clone(),
        };
        let path = Path {
            points: vec![point(0.0, 0), point(0.5, 5), point(1.0, 10)],
            hyper: Hyperparams::default(),
            alpha: 0.1,
            record_every: 5,
        };
        assert_eq!(path.at(0.7).unwrap().k, 5);
        assert_eq!(path.at(1.0).unwrap().k, 10);
        assert!(path.at(1.5).is_none());
        assert!(path.at(-1.0).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(-10.0..10.0f64, rows * cols)
                .prop_map(move |d| Matrix::new(rows, cols, d).unwrap())
        }

        proptest! {
            #[test]
            fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 3)) {
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                let scale = frobenius_norm(&left).max(1.0);
                prop_assert!(frobenius_norm(&(&left - &right)) <= 1e-10 * scale);
            }

            #[test]
            fn spectral_norm_of_transpose(a in matrix(4, 3)) {
                let s = spectral_norm(&a).unwrap();
                let st = spectral_norm(&a.transpose()).unwrap();
                prop_assert!((s - st).abs() <= 1e-8 * s.max(1.0));
            }

            #[test]
            fn frobenius_triangle_inequality(a in matrix(3, 3), b in matrix(3, 3)) {
                prop_assert!(frobenius_norm(&(&a + &b)) <= frobenius_norm(&a) + frobenius_norm(&b) + 1e-12);
            }
        }
    }
}
