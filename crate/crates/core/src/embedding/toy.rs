//! Small synthetic instances for the embedding pipelines.
//!
//! They back the unit tests, the guide and the files under `data/`.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{class_prototypes, synthesize_prototypes, LabeledFeatures, PrototypeSet};
use crate::error::{Error, Result};
use crate::model::Matrix;

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sd: f64) -> Result<Matrix> {
    let data = (0..rows * cols)
        .map(|_| sd * Distribution::<f64>::sample(&StandardNormal, &mut *rng))
        .collect::<Vec<f64>>();
    Matrix::new(rows, cols, data)
}

fn around(rng: &mut ChaCha8Rng, centers: &Matrix, per_class: usize, sd: f64) -> Result<LabeledFeatures> {
    let d = centers.cols();
    let mut rows = Vec::with_capacity(centers.rows() * per_class);
    let mut labels = Vec::with_capacity(rows.capacity());
    // Samples are grouped by round so every prefix stays class-balanced.
    for _ in 0..per_class {
        for k in 0..centers.rows() {
            let c = centers.row(k);
            let row: Vec<f64> = (0..d)
                .map(|i| {
                    let z: f64 = StandardNormal.sample(&mut *rng);
                    c[i] + sd * z
                })
                .collect();
            rows.push(row);
            labels.push(k);
        }
    }
    LabeledFeatures::new(Matrix::from_rows(&rows)?, labels, centers.rows())
}

/// `ways` Gaussian clusters in `d` dimensions with unit noise and centers
/// drawn from `N(0, separation²·I)`. Returns `shots` training and `queries`
/// test samples per class.
pub fn fsl_clusters(
    ways: usize,
    shots: usize,
    queries: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<(LabeledFeatures, LabeledFeatures)> {
    if ways == 0 || shots == 0 || d == 0 {
        return Err(Error::invalid("fsl_clusters", "ways, shots and d must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = gaussian(&mut rng, ways, d, separation)?;
    let train = around(&mut rng, &centers, shots, 1.0)?;
    let test = around(&mut rng, &centers, queries, 1.0)?;
    Ok((train, test))
}

/// Source semantics plus one target class whose semantic vector copies a
/// single source class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CopyInstance {
    pub e_source: Matrix,
    pub e_target: Matrix,
    pub copied: usize,
}

pub fn copy_instance(source_classes: usize, q: usize, copied: usize, seed: u64) -> Result<CopyInstance> {
    if copied >= source_classes {
        return Err(Error::invalid("copied", format!("must be below {source_classes}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e_source = gaussian(&mut rng, source_classes, q, 1.0)?;
    let e_target = Matrix::from_rows(&[e_source.row(copied)])?;
    Ok(CopyInstance {
        e_source,
        e_target,
        copied,
    })
}

/// Zero-shot instance in which target semantics and target features are
/// the same sparse combination of their source counterparts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZslInstance {
    /// `Kˢ×q` source semantic vectors.
    pub e_source: Matrix,
    /// `Kᵗ×q` target semantic vectors, equal to `CᵀEˢ`.
    pub e_target: Matrix,
    /// The `Kˢ×Kᵗ` combination `C`.
    pub coef: Matrix,
    /// Labeled source samples.
    pub source: LabeledFeatures,
    /// Labeled target samples, drawn around the true target prototypes.
    pub target: LabeledFeatures,
    /// `CᵀFˢ` with `Fˢ` the class means of `source`.
    pub target_prototypes: PrototypeSet,
}

/// Feature dimension of [`zsl_linear`] instances.
pub const ZSL_FEATURES: usize = 16;

/// Builds a [`ZslInstance`] with `source_classes` source and
/// `target_classes` target classes, `q`-dimensional semantics and `active`
/// source classes contributing to each target.
pub fn zsl_linear(
    source_classes: usize,
    q: usize,
    target_classes: usize,
    active: usize,
    seed: u64,
) -> Result<ZslInstance> {
    if active == 0 || active > source_classes || target_classes == 0 {
        return Err(Error::invalid("zsl_linear", "need 0 < active ≤ source classes and a target class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e_source = gaussian(&mut rng, source_classes, q, 1.0)?;
    let mut coef = Matrix::zeros(source_classes, target_classes).into_array();
    for j in 0..target_classes {
        for i in sample(&mut rng, source_classes, active) {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            coef[[i, j]] = sign * rng.random_range(0.5..1.5);
        }
    }
    let coef = Matrix::from_array(coef)?;
    let e_target = crate::model::matmul(&coef.transpose(), &e_source)?;

    let centers = gaussian(&mut rng, source_classes, ZSL_FEATURES, 2.0)?;
    let source = around(&mut rng, &centers, 5, 0.3)?;
    let prototypes = class_prototypes(&source)?;
    let target_prototypes = synthesize_prototypes(&prototypes, &coef)?;
    let target = around(&mut rng, &target_prototypes.f, 5, 0.1)?;
    Ok(ZslInstance {
        e_source,
        e_target,
        coef,
        source,
        target,
        target_prototypes,
    })
}
