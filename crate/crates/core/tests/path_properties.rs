use msplit::baselines::ridge_fit;
use msplit::model::{frobenius_norm, matmul};
use msplit::simulation::{generate_design, generate_response, SimConfig, TrueBeta};
use msplit::solver::{decompose, default_tau, run_path, run_path_until, select_t_cv, Estimator, Stepper};
use msplit::{Hyperparams, Matrix, Problem};

fn data(sigma: f64, seed: u64) -> (Matrix, Matrix) {
    let config = SimConfig { n: 60, d: 20, sigma, ..SimConfig::default() };
    let x = generate_design(&config, seed).unwrap();
    let y = generate_response(&x, &TrueBeta::reference(20), 0.5, seed + 1).unwrap();
    (x, y)
}

#[test]
fn btilde_is_projection_on_every_point() {
    for (sigma, seed) in [(0.0, 1), (0.5, 3), (0.8, 5)] {
        let (x, y) = data(sigma, seed);
        let hyper = Hyperparams { t_max: 40.0, record_every: Some(3), ..Hyperparams::default() };
        let path = run_path(&Problem::new(x, y, hyper).unwrap()).unwrap();
        for p in &path.points {
            for i in 0..20 {
                let on = p.gamma.get(i, 0) != 0.0;
                assert_eq!(p.btilde.get(i, 0), if on { p.b.get(i, 0) } else { 0.0 });
            }
        }
    }
}

#[test]
fn pre_support_dense_estimate_is_ridge() {
    let (x, y) = data(0.3, 9);
    for nu in [1.0, 3.0, 10.0] {
        let hyper = Hyperparams { kappa: 100.0, nu, t_max: 1e4, record_every: Some(1), ..Hyperparams::default() };
        let path = run_path_until(&Problem::new(x.clone(), y.clone(), hyper).unwrap(), |s| s.gamma.nnz() > 0).unwrap();
        let before = path.points.iter().rev().find(|p| p.gamma.nnz() == 0).unwrap();
        let ridge = ridge_fit(&x, &y, 1.0 / nu).unwrap();
        let gap = frobenius_norm(&before.b.try_sub(&ridge).unwrap()) / frobenius_norm(&ridge);
        assert!(gap < 0.05, "nu = {nu}: {gap}");
    }
}

#[test]
fn stepper_agrees_with_recorded_path() {
    let (x, y) = data(0.2, 2);
    let hyper = Hyperparams { t_max: 5.0, record_every: Some(1), ..Hyperparams::default() };
    let problem = Problem::new(x, y, hyper).unwrap();
    let path = run_path(&problem).unwrap();
    let mut stepper = Stepper::new(&problem);
    for p in path.points.iter().skip(1).take(200) {
        stepper.advance().unwrap();
        assert_eq!(stepper.k(), p.k);
        assert_eq!(stepper.state().b, p.b);
        assert_eq!(stepper.state().gamma, p.gamma);
    }
}

#[test]
fn residual_norm_shrinks_late_on_path() {
    let (x, y) = data(0.2, 4);
    let hyper = Hyperparams { t_max: 200.0, ..Hyperparams::default() };
    let path = run_path(&Problem::new(x.clone(), y.clone(), hyper).unwrap()).unwrap();
    let resid = |b: &Matrix| frobenius_norm(&matmul(&x, b).unwrap().try_sub(&y).unwrap());
    assert!(resid(&path.last().b) < 0.5 * resid(&path.first().b));
    assert!(path.last().gamma.nnz() >= 5);
}

#[test]
fn decomposition_parts_are_disjoint_and_sum_to_b() {
    let (x, y) = data(0.2, 6);
    let hyper = Hyperparams { t_max: 20.0, ..Hyperparams::default() };
    let path = run_path(&Problem::new(x, y, hyper).unwrap()).unwrap();
    let p = path.at(10.0).unwrap();
    let tau = default_tau(&p.b, &p.btilde).unwrap();
    let d = decompose(&p.b, &p.btilde, tau).unwrap();
    for i in 0..20 {
        let parts = [d.strong.get(i, 0), d.weak.get(i, 0), d.noise.get(i, 0)];
        assert!(parts.iter().filter(|v| **v != 0.0).count() <= 1, "row {i}: {parts:?}");
        assert!((parts.iter().sum::<f64>() - p.b.get(i, 0)).abs() < 1e-12);
    }
}

#[test]
fn cross_validation_is_deterministic() {
    let (x, y) = data(0.4, 8);
    let hyper = Hyperparams { t_max: 20.0, ..Hyperparams::default() };
    let problem = Problem::new(x, y, hyper).unwrap();
    let a = select_t_cv(&problem, 4, 11).unwrap();
    let b = select_t_cv(&problem, 4, 11).unwrap();
    assert_eq!(a, b);
    assert!(a.t_star >= 0.0 && a.t_star <= 20.0 + 1e-9);
    assert!(matches!(a.which, Estimator::Dense | Estimator::Sparse));
}
