//! Regenerates the small data sets under `data/`.
//!
//! ```text
//! cargo run -p msplit-core --example make_toy_data -- data
//! ```

use std::path::Path;

use msplit::embedding::toy::{fsl_clusters, zsl_linear};
use msplit::io::{write_labels, write_matrix_csv};
use msplit::model::{matmul, Matrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    let root = Path::new(&root);

    // Path demo: 40 samples, 8 features, 2 responses sharing a sparse core.
    let dir = root.join("path");
    std::fs::create_dir_all(&dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = Matrix::new(40, 8, (0..320).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let b = Matrix::from_rows(&[
        [2.0, -1.5],
        [0.0, 1.0],
        [0.3, 0.0],
        [0.0, 0.0],
        [-1.0, 0.2],
        [0.0, 0.0],
        [0.1, 0.1],
        [0.0, 0.0],
    ])?;
    let noise = Matrix::new(40, 2, (0..80).map(|_| 0.05 * rng.random_range(-1.0..1.0)).collect())?;
    write_matrix_csv(dir.join("x.csv"), &x)?;
    write_matrix_csv(dir.join("e.csv"), &(&matmul(&x, &b)? + &noise))?;

    let dir = root.join("fsl");
    std::fs::create_dir_all(&dir)?;
    let (train, test) = fsl_clusters(5, 5, 15, 20, 1.0, 7)?;
    write_matrix_csv(dir.join("train_x.csv"), &train.x)?;
    write_labels(dir.join("train_labels.csv"), &train.labels)?;
    write_matrix_csv(dir.join("test_x.csv"), &test.x)?;
    write_labels(dir.join("test_labels.csv"), &test.labels)?;

    let dir = root.join("zsl");
    std::fs::create_dir_all(&dir)?;
    let inst = zsl_linear(8, 12, 3, 2, 5)?;
    write_matrix_csv(dir.join("source_x.csv"), &inst.source.x)?;
    write_labels(dir.join("source_labels.csv"), &inst.source.labels)?;
    write_matrix_csv(dir.join("source_semantic.csv"), &inst.e_source)?;
    write_matrix_csv(dir.join("target_semantic.csv"), &inst.e_target)?;
    write_matrix_csv(dir.join("target_x.csv"), &inst.target.x)?;
    write_labels(dir.join("target_labels.csv"), &inst.target.labels)?;
    write_matrix_csv(dir.join("structure_true.csv"), &inst.coef)?;
    Ok(())
}
