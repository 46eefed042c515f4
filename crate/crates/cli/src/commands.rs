use std::io::Write;

use msplit::embedding::{
    accuracy, class_prototypes, fit_embedding, learn_structure, learn_structure_point, one_hot, predict_fsl_batch,
    predict_zsl_batch, signal_report, synthesize_prototypes, EmbeddingMethod, EmbeddingParams, LabeledFeatures,
};
use msplit::io;
use msplit::model::{Hyperparams, LossScale, Matrix, StepSize};
use msplit::simulation::{
    path_error_curve, run_table1_sweep, verify_lemma1, verify_lemma2, ErrorTable, Lemma1Config, Lemma2Config,
    MeanCheck, SimConfig, HORIZON_FACTOR,
};
use msplit::solver::{decompose, default_tau, first_support_time, run_path, Estimator, Problem};

use crate::manifest::OutputDir;
use crate::{CliError, CliResult, FitArgs, FslArgs, LemmaChoice, PathArgs, SimulateArgs, VerifyArgs, ZslArgs};

fn say(out: &mut (dyn Write + Send), text: std::fmt::Arguments<'_>) -> CliResult<()> {
    out.write_fmt(text)
        .and_then(|_| out.write_all(b"\n"))
        .map_err(|e| CliError::Usage(format!("cannot write to stdout: {e}")))
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => { say($out, format_args!($($arg)*)) };
}

fn print_table(out: &mut (dyn Write + Send), table: &ErrorTable) -> CliResult<()> {
    let mut header = format!("{:<30}", "method");
    for s in &table.sigmas {
        header.push_str(&format!("  {:>17}", format!("sigma={s}")));
    }
    say!(out, "{header}")?;
    for (m, cells) in table.methods.iter().zip(&table.cells) {
        let mut line = format!("{:<30}", m.label());
        for c in cells {
            line.push_str(&format!("  {:>17}", format!("{:.4} ± {:.4}", c.mean, c.sd)));
        }
        say!(out, "{line}")?;
    }
    Ok(())
}

pub fn simulate(args: SimulateArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if args.sigma.is_empty() {
        return Err(CliError::Usage("--sigma needs at least one value".into()));
    }
    let base = SimConfig {
        n: args.n,
        d: args.d,
        sigma: args.sigma[0],
        noise_sd: args.noise_sd,
        trials: args.trials,
        seed: args.seed,
        kappa: args.kappa,
        nu: args.nu,
        lambda_max: args.lambda_max,
        grid_points: args.grid_points,
        mixtures: args.mixtures,
        cv_folds: args.folds,
    };
    // Reject bad settings before any work or output.
    for &sigma in &args.sigma {
        SimConfig { sigma, ..base.clone() }.validate()?;
    }
    let mut dir = OutputDir::create(&args.out, "simulate", &args, args.seed)?;
    let table = run_table1_sweep(&base, &args.sigma)?;
    io::write_table_csv(dir.file("table.csv"), &table)?;
    io::write_table_long_csv(dir.file("table_long.csv"), &table)?;
    if args.curve {
        for &sigma in &args.sigma {
            let config = SimConfig { sigma, ..base.clone() };
            let curve = path_error_curve(&config, config.trial_seeds(0).0)?;
            io::write_curve_csv(dir.file(&format!("curve_sigma{sigma}.csv")), &curve)?;
        }
    }
    print_table(out, &table)?;
    dir.finish()?;
    Ok(())
}

fn step(alpha: Option<f64>) -> StepSize {
    alpha.map_or(StepSize::Auto, StepSize::Fixed)
}

pub fn path(args: PathArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let x = io::read_matrix(&args.x_file)?;
    let e = io::read_matrix(&args.e_file)?;
    let mut hyper = Hyperparams {
        kappa: args.kappa,
        nu: args.nu,
        alpha: step(args.alpha),
        t_max: args.t_max.unwrap_or(1.0),
        record_every: args.record_every,
        loss_scale: LossScale::PerSample,
    };
    let mut problem = Problem::new(x, e, hyper)?;
    if args.t_max.is_none() {
        let t0 = first_support_time(&problem, 1e6)?
            .ok_or_else(|| CliError::Usage("Γ never becomes nonzero; is E identically zero?".into()))?;
        hyper.t_max = HORIZON_FACTOR * t0;
        problem = problem.with_hyper(hyper)?;
    }
    if let Some(t) = args.t {
        if !(t >= 0.0) || t > hyper.t_max {
            return Err(CliError::Usage(format!(
                "--t {t} is outside the path range [0, {}]",
                hyper.t_max
            )));
        }
    }
    if let Some(tau) = args.decompose_tau {
        if !(tau >= 0.0) {
            return Err(CliError::Usage(format!("--decompose-tau must be nonnegative, got {tau}")));
        }
    }
    let mut dir = OutputDir::create(&args.out, "path", &args, 0)?;
    let path = run_path(&problem)?;
    io::write_path_csv(dir.file("path.csv"), &path)?;
    if args.json {
        io::write_path_json(dir.file("path.json"), &path)?;
    }
    say!(
        out,
        "recorded {} points up to t = {} (alpha = {}, every {} iterations)",
        path.points.len(),
        path.last().t,
        path.alpha,
        path.record_every
    )?;
    if args.t.is_some() || args.decompose_tau.is_some() {
        let point = match args.t {
            Some(t) => path
                .at(t)
                .ok_or_else(|| CliError::Usage(format!("--t {t} is outside the recorded path")))?,
            None => path.last(),
        };
        let tau = match args.decompose_tau {
            Some(tau) => tau,
            None => default_tau(&point.b, &point.btilde)?,
        };
        let parts = decompose(&point.b, &point.btilde, tau)?;
        io::write_decomposition_csv(dir.file("decomposition.csv"), &parts)?;
        say!(
            out,
            "decomposition at t = {}: {} strong, {} weak, {} noise entries (tau = {tau})",
            point.t,
            parts.strong.nnz(),
            parts.weak.nnz(),
            parts.noise.nnz()
        )?;
    }
    dir.finish()?;
    Ok(())
}

fn check_line(name: &str, c: &MeanCheck) -> String {
    format!(
        "  {name:<34} mean {:>9.5}  target {:>9.5}  se {:.5}  z {:>8.3}  {}",
        c.mean,
        c.target,
        c.se,
        c.z,
        if c.passed() { "ok" } else { "FAIL" }
    )
}

pub fn verify(args: VerifyArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let run1 = matches!(args.lemma, LemmaChoice::One | LemmaChoice::All);
    let run2 = matches!(args.lemma, LemmaChoice::Two | LemmaChoice::All);
    let l1 = Lemma1Config {
        lambda_l1: args.lambda1,
        lambda_l2: args.lambda2,
        noise_sd: args.noise_sd.unwrap_or(Lemma1Config::default().noise_sd),
        draws: args.draws.unwrap_or(Lemma1Config::default().draws),
        seed: args.seed,
        ..Lemma1Config::default()
    };
    let l2 = Lemma2Config {
        nu: args.nu,
        kappa: args.kappa,
        noise_sd: args.noise_sd.unwrap_or(Lemma2Config::default().noise_sd),
        draws: args.draws.unwrap_or(Lemma2Config::default().draws),
        seed: args.seed,
        ..Lemma2Config::default()
    };
    for draws in [run1.then_some(l1.draws), run2.then_some(l2.draws)].into_iter().flatten() {
        if draws < msplit::simulation::lemmas::MIN_DRAWS {
            return Err(CliError::Usage(format!(
                "--draws must be at least {}, got {draws}",
                msplit::simulation::lemmas::MIN_DRAWS
            )));
        }
    }
    let mut dir = OutputDir::create(&args.out, "verify", &args, args.seed)?;
    let mut failures = Vec::new();
    if run1 {
        let r = verify_lemma1(&l1)?;
        io::write_json(dir.file("lemma1.json"), &r)?;
        say!(
            out,
            "lemma 1: X = I, beta* = {}, lambda1 = {}, lambda2 = {}, {} draws",
            l1.beta_star,
            l1.lambda_l1,
            l1.lambda_l2,
            l1.draws
        )?;
        say!(out, "{}", check_line("ridge vs beta*/(1+lambda2)", &r.ridge))?;
        say!(
            out,
            "  ridge shrinkage factor {:.4}; z against unshrunk beta* {:.2}",
            r.ridge.mean / l1.beta_star,
            r.ridge_vs_truth.z
        )?;
        say!(out, "{}", check_line("elastic net vs three-region mean", &r.elastic_net))?;
        say!(out, "{}", check_line("elastic net vs Gaussian expectation", &r.elastic_net_exact))?;
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        say!(out, "lemma 1: {verdict}")?;
        if !r.passed() {
            failures.push("lemma 1");
        }
    }
    if run2 {
        let r = verify_lemma2(&l2)?;
        io::write_json(dir.file("lemma2.json"), &r)?;
        say!(
            out,
            "lemma 2: X = I, d = {}, kappa = {}, nu = {}, {} draws",
            l2.d,
            l2.kappa,
            l2.nu,
            l2.draws
        )?;
        say!(
            out,
            "  selected set reached in {} of {} draws; B read at mean t = {:.4}",
            r.reached,
            l2.draws,
            r.mean_eval_t
        )?;
        say!(out, "{}", check_line("B on strong set vs beta*", &r.on_support))?;
        say!(out, "{}", check_line("B off strong set vs nu/(1+nu) beta*", &r.off_support))?;
        say!(
            out,
            "  off-support factor {:.4} (nu/(1+nu) = {:.4}); max relative error on {:.2e}, off {:.2e}",
            r.off_support.mean / l2.weak_value,
            msplit::simulation::lemmas::off_support_factor(l2.nu),
            r.max_rel_err_on,
            r.max_rel_err_off
        )?;
        let verdict = if r.passed() { "PASS" } else { "FAIL" };
        say!(out, "lemma 2: {verdict}")?;
        if !r.passed() {
            failures.push("lemma 2");
        }
    }
    dir.finish()?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!("{} outside tolerance", failures.join(" and "))))
    }
}

fn params(fit: &FitArgs) -> EmbeddingParams {
    EmbeddingParams {
        hyper: Hyperparams {
            kappa: fit.kappa,
            nu: fit.nu,
            alpha: step(fit.alpha),
            ..Hyperparams::default()
        },
        horizon: fit.t_max,
        t: fit.t,
        folds: fit.folds,
        seed: fit.seed,
        lambda: fit.lambda,
    }
}

fn labeled(x: &std::path::Path, labels: &std::path::Path, classes: Option<usize>) -> CliResult<LabeledFeatures> {
    let x = io::read_matrix(x)?;
    let labels = io::read_labels(labels)?;
    Ok(match classes {
        Some(k) => LabeledFeatures::new(x, labels, k)?,
        None => LabeledFeatures::infer_classes(x, labels)?,
    })
}

fn write_predictions(path: std::path::PathBuf, predicted: &[usize], labels: Option<&[usize]>) -> CliResult<()> {
    let mut text = String::from(if labels.is_some() { "index,predicted,label\n" } else { "index,predicted\n" });
    for (i, p) in predicted.iter().enumerate() {
        match labels {
            Some(l) => text.push_str(&format!("{i},{p},{}\n", l[i])),
            None => text.push_str(&format!("{i},{p}\n")),
        }
    }
    std::fs::write(&path, text).map_err(|source| CliError::Core(msplit::Error::Io { path, source }))
}

pub fn fsl(args: FslArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    let method = args.fit.method.unwrap_or(EmbeddingMethod::MsplitDense);
    let train = labeled(&args.x_file, &args.labels_file, None)?;
    let test = match (&args.test_x_file, &args.test_labels_file) {
        (Some(x), Some(l)) => Some(labeled(x, l, Some(train.classes))?),
        _ => None,
    };
    let e = one_hot(&train.labels, train.classes)?;
    let mut dir = OutputDir::create(&args.fit.out, "embed fsl", &args, args.fit.seed)?;
    let b = fit_embedding(&train.x, &e, method, &params(&args.fit))?;
    io::write_matrix_csv(dir.file("embedding.csv"), &b)?;
    let (eval, which) = match &test {
        Some(t) => (t, "held-out"),
        None => (&train, "training"),
    };
    let predicted = predict_fsl_batch(&b, &eval.x)?;
    write_predictions(dir.file("predictions.csv"), &predicted, Some(&eval.labels))?;
    let acc = accuracy(&predicted, &eval.labels)?;
    let hits = (acc * eval.len() as f64).round() as usize;
    say!(out, "method {method}, {} classes, {} training samples", train.classes, train.len())?;
    say!(out, "{which} accuracy: {acc:.4} ({hits}/{})", eval.len())?;
    dir.finish()?;
    Ok(())
}

pub fn zsl(args: ZslArgs, out: &mut (dyn Write + Send)) -> CliResult<()> {
    if args.top == 0 {
        return Err(CliError::Usage("--top must be at least 1".into()));
    }
    let method = args.fit.method.unwrap_or(EmbeddingMethod::MsplitSparse);
    let source = labeled(&args.source_x_file, &args.source_labels_file, None)?;
    let e_source = io::read_matrix(&args.source_semantic_file)?;
    let e_target = io::read_matrix(&args.target_semantic_file)?;
    if e_source.rows() != source.classes {
        return Err(CliError::Usage(format!(
            "{} has {} rows but the source labels name {} classes",
            args.source_semantic_file.display(),
            e_source.rows(),
            source.classes
        )));
    }
    let target_x: Option<Matrix> = args.target_x_file.as_ref().map(io::read_matrix).transpose()?;
    let target_labels = args.target_labels_file.as_ref().map(io::read_labels).transpose()?;
    if let (Some(x), Some(l)) = (&target_x, &target_labels) {
        LabeledFeatures::new(x.clone(), l.clone(), e_target.rows())?;
    }

    let mut dir = OutputDir::create(&args.fit.out, "embed zsl", &args, args.fit.seed)?;
    let prototypes = class_prototypes(&source)?;
    let p = params(&args.fit);
    let (structure, report) = match method {
        EmbeddingMethod::MsplitDense | EmbeddingMethod::MsplitSparse => {
            let which = if method == EmbeddingMethod::MsplitDense { Estimator::Dense } else { Estimator::Sparse };
            let fit = learn_structure_point(&e_source, &e_target, which, &p)?;
            let report = signal_report(&fit.point, args.top)?;
            (which.pick(&fit.point).clone(), Some(report))
        }
        _ => (learn_structure(&e_source, &e_target, method, &p)?, None),
    };
    io::write_matrix_csv(dir.file("structure.csv"), &structure)?;
    let synthesized = synthesize_prototypes(&prototypes, &structure)?;
    io::write_matrix_csv(dir.file("prototypes.csv"), &synthesized.f)?;
    if let Some(report) = &report {
        io::write_signal_report_csv(dir.file("signals.csv"), report)?;
    }
    say!(
        out,
        "method {method}, {} source and {} target classes",
        e_source.rows(),
        e_target.rows()
    )?;
    if let Some(report) = &report {
        for (j, col) in report.columns.iter().enumerate() {
            let fmt = |list: &[msplit::embedding::Signal]| {
                list.iter()
                    .map(|s| format!("{}:{:.4}", s.source, s.weight))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            say!(out, "  target {j}: strong [{}] weak [{}]", fmt(&col.strong), fmt(&col.weak))?;
        }
    } else {
        say!(out, "  signal report needs an msplit method; skipped")?;
    }
    if let Some(x) = &target_x {
        let predicted = predict_zsl_batch(x, &synthesized)?;
        write_predictions(dir.file("predictions.csv"), &predicted, target_labels.as_deref())?;
        if let Some(labels) = &target_labels {
            let acc = accuracy(&predicted, labels)?;
            let hits = (acc * labels.len() as f64).round() as usize;
            say!(out, "target accuracy: {acc:.4} ({hits}/{})", labels.len())?;
        }
    }
    dir.finish()?;
    Ok(())
}
