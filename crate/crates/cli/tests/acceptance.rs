//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion does.

use std::path::Path;
use std::process::Command;

use gde_cli::artifacts::Table;
use gde_cli::{gradcheck, run};
use gde_core::datagen::*;
use gde_core::models::{kl_standard_normal, PosteriorParams};
use gde_core::numerics::{Matrix, RngStream};
use gde_core::solvers::{integrate_euler_heun, solve, BrownianPath, FnField, SolverConfig, SolverKind};
use gde_core::training::latent::{latent_sample, repressilator_dataset, repressilator_model, train_latent, LatentConfig};
use gde_core::training::metrics::{extrapolation_eval, forecast_metrics};
use gde_core::training::ScheduleSpec;
use statrs::distribution::{ChiSquared, ContinuousCDF};

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn fail<E: std::fmt::Display>(e: E) -> String {
    format!("error: {e}")
}

/// Mean of `metric` for `model` over the seeds in `summary.csv`.
fn summary_mean(run_dir: &Path, model: &str, metric: &str) -> Result<f64, String> {
    let t = Table::read(&run_dir.join(run::SUMMARY_FILE)).map_err(fail)?;
    let v = t
        .filter("model", model)
        .and_then(|t| t.filter("metric", metric))
        .and_then(|t| t.floats("value"))
        .map_err(fail)?;
    if v.is_empty() {
        return Err(format!("no {model}/{metric} rows"));
    }
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

fn preset_run(name: &str, dir: &Path) -> Result<std::path::PathBuf, String> {
    let out = dir.join(name);
    let (exp, settings) = run::reproduce_settings(name, None, Some(&out)).map_err(fail)?;
    run::train(exp, &settings, 0).map_err(fail)
}

fn gradients() -> Outcome {
    let checks = gradcheck::gradient_suite().map_err(fail)?;
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.rel_err))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(checks.iter().all(|c| c.passed()), detail)
}

fn hybrid_equivalence() -> Outcome {
    let c = gradcheck::hybrid_equivalence().map_err(fail)?;
    ensure(c.passed(), format!("rel err {:.1e}", c.rel_err))
}

fn series_exp(a: &Matrix, t: f64) -> Matrix {
    let mut out = Matrix::identity(a.rows());
    let mut term = Matrix::identity(a.rows());
    for k in 1..60 {
        term = term.matmul(a).unwrap().scale(t / k as f64);
        out.add_assign(&term);
    }
    out
}

fn slope(hs: &[f64], errs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn solver_orders() -> Outcome {
    let decay = FnField(|_t: f64, z: &Matrix| z.scale(-1.0));
    let hs = [0.1, 0.05, 0.025, 0.0125];
    let z0 = Matrix::filled(1, 1, 1.0);
    let order = |kind| -> Result<f64, String> {
        let errs = hs
            .iter()
            .map(|&h| {
                let tr = solve(&decay, &z0, (0.0, 1.0), &SolverConfig::fixed(kind, h)).map_err(fail)?;
                Ok((tr.last_state()[(0, 0)] - (-1f64).exp()).abs())
            })
            .collect::<Result<Vec<f64>, String>>()?;
        Ok(slope(&hs, &errs))
    };
    let (euler, rk4) = (order(SolverKind::Euler)?, order(SolverKind::Rk4)?);
    let gen = Matrix::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
    let l = gen.clone();
    let rot = FnField(move |_t: f64, z: &Matrix| l.matmul(z).unwrap());
    let z0 = Matrix::from_rows(&[[1.0, 0.3], [0.5, -1.0]]);
    let tr = solve(&rot, &z0, (0.0, 2.0), &SolverConfig::dopri5(1e-8, 1e-8)).map_err(fail)?;
    let err = tr.last_state().sub(&series_exp(&gen, 2.0).matmul(&z0).unwrap()).max_abs();
    ensure(
        (0.9..=1.1).contains(&euler) && (3.8..=4.2).contains(&rk4) && err < 1e-6,
        format!("euler slope {euler:.3}, rk4 slope {rk4:.3}, dopri5 rotation err {err:.1e}"),
    )
}

fn stratonovich() -> Outcome {
    let drift = FnField(|_t: f64, z: &Matrix| Matrix::zeros(z.rows(), z.cols()));
    let diffusion = FnField(|_t: f64, z: &Matrix| z.clone());
    let z0 = Matrix::filled(1, 1, 1.0);
    let cfg = SolverConfig::fixed(SolverKind::EulerHeun, 1e-3);
    let (mut checked, mut worst) = (0, 0.0f64);
    for seed in 0..20 {
        let mut path = BrownianPath::new(RngStream::new(seed, 11), 1, 1, (0.0, 1.0)).map_err(fail)?;
        let z1 = integrate_euler_heun(&drift, &diffusion, &z0, (0.0, 1.0), &mut path, &cfg)
            .map_err(fail)?
            .traj
            .last_state()[(0, 0)];
        let b1 = path.value(1.0).map_err(fail)?[(0, 0)];
        if b1.abs() >= 2.0 {
            continue;
        }
        checked += 1;
        worst = worst.max((z1 - b1.exp()).abs());
        if (z1 - (b1 - 0.5).exp()).abs() < 1e-2 {
            return Err(format!("seed {seed} matches the Itô value"));
        }
    }
    ensure(worst < 1e-2, format!("{checked} paths, max Stratonovich err {worst:.1e}"))
}

fn particle_physics() -> Outcome {
    let p = ParticleParams::default();
    let mut rng = RngStream::new(5, 0);
    let mut antisym = true;
    for _ in 0..100 {
        let mut pt = || [rng.uniform_range(-0.7, 0.7), rng.uniform_range(-0.7, 0.7)];
        let (xi, xj, vi, vj) = (pt(), pt(), pt(), pt());
        let f = pair_force(&p, xi, xj, vi, vj).map_err(fail)?;
        let g = pair_force(&p, xj, xi, vj, vi).map_err(fail)?;
        antisym &= f[0] == -g[0] && f[1] == -g[1];
    }

    let single = ParticleParams { n: 1, ..p };
    let z0 = Matrix::from_rows(&[[1.0, 0.5, 0.0, 0.0]]);
    let period = 2.0 * std::f64::consts::PI;
    let h = period / (period / 1e-3).floor();
    let out = simulate_multi_particle(&single, period, h, &z0).map_err(fail)?;
    let end = out.states.last().unwrap();
    let ret = (end[(0, 0)] - 1.0).abs().max((end[(0, 1)] - 0.5).abs());

    let z0 = initial_particles(&p, &mut RngStream::new(0, 0));
    let out = simulate_multi_particle(&p, ROLLOUT_HORIZON, ROLLOUT_DT, &z0).map_err(fail)?;
    let mut rise = f64::NEG_INFINITY;
    for k in 0..out.len() - 1 {
        let g = &out.graphs[k];
        rise = rise.max(particle_energy(&p, &out.states[k + 1], g) - particle_energy(&p, &out.states[k], g));
    }
    ensure(
        antisym && ret < 1e-5 && rise <= 1e-6,
        format!("antisymmetric {antisym}, period return err {ret:.1e}, max energy rise {rise:.1e}"),
    )
}

fn particle_ordering(tmp: &Path) -> Outcome {
    let dir = preset_run("particles", tmp)?;
    let m = |name| summary_mean(&dir, name, "mape_k5");
    let (gcde, node, stat) = (m("gcde")?, m("node")?, m("static")?);
    ensure(
        gcde < 0.5 * node && node < stat,
        format!("5-step MAPE gcde {gcde:.2}, node {node:.2}, static {stat:.2}"),
    )
}

fn forecast_ordering(tmp: &Path) -> Outcome {
    let dir = preset_run("hybrid_forecast", tmp)?;
    let m = |name| summary_mean(&dir, name, "mape@0.3");
    let (hybrid, gcgru, gru) = (m("gcde_gru")?, m("gcgru")?, m("gru")?);
    ensure(
        hybrid <= gcgru && gcgru < gru && hybrid < gru,
        format!("MAPE gcde_gru {hybrid:.3}, gcgru {gcgru:.3}, gru {gru:.3}"),
    )
}

fn oversmoothing(tmp: &Path) -> Outcome {
    let dir = preset_run("oversmoothing", tmp)?;
    let a1 = 100.0 * summary_mean(&dir, "S1", "accuracy")?;
    let a10 = 100.0 * summary_mean(&dir, "S10", "accuracy")?;
    ensure((a1 - a10).abs() <= 3.0, format!("accuracy S=1 {a1:.1}%, S=10 {a10:.1}%"))
}

fn tau_leap_fidelity() -> Outcome {
    let net = ReactionNetwork::repressilator(RepressilatorRates::default());
    let cfg = TauLeapConfig::default();
    let runs = (0..200)
        .map(|i| tau_leap(&net, &cfg, &mut RngStream::new(11, i)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(fail)?;
    let exact = runs.iter().all(|r| r.states[0].as_slice() == [0.0, 0.0, 0.0, 0.0, 20.0, 0.0]);
    let mean = ensemble_mean(&runs).map_err(fail)?;
    let ode = mean_field_trajectory(&net, &cfg, 0.01).map_err(fail)?;
    let (a, b) = match (first_peak_time(&mean, 0, 20), first_peak_time(&ode, 0, 20)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err("no protein peak found".into()),
    };
    ensure(
        exact && (a - b).abs() <= 0.1 * b,
        format!("initial state exact {exact}, peak ensemble {a:.2} vs mean-field {b:.2}"),
    )
}

fn elbo() -> Outcome {
    let prior = PosteriorParams {
        mean: Matrix::zeros(3, 1),
        logvar: Matrix::zeros(3, 1),
    };
    let unit = PosteriorParams {
        mean: Matrix::from_rows(&[[1.0]]),
        logvar: Matrix::zeros(1, 1),
    };
    let (k0, k1) = (kl_standard_normal(&prior), kl_standard_normal(&unit));
    let kl_ok = k0.abs() <= 1e-12 && (k1 - 0.5).abs() <= 1e-12;

    let cfg = LatentConfig {
        n_train: 2,
        n_test: 1,
        ..LatentConfig::default()
    };
    let schedule = ScheduleSpec::OneCycle {
        lr_max: 1e-2,
        peak: 15,
        lr_min: 4e-4,
        total: 50,
    };
    let mut drops = Vec::new();
    for seed in 0..2 {
        let data = repressilator_dataset(&cfg, &mut RngStream::new(seed, 0)).map_err(fail)?;
        let samples = data
            .train
            .iter()
            .map(|t| latent_sample(t, &data.times, &cfg))
            .collect::<Result<Vec<_>, _>>()
            .map_err(fail)?;
        let model = repressilator_model(&cfg).map_err(fail)?;
        let mut params = gde_core::layers::ParamStore::new();
        model.register(&mut params, &mut RngStream::new(seed, 1)).map_err(fail)?;
        let rec = train_latent(&model, &mut params, &samples, 50, &schedule, &mut RngStream::new(seed, 2)).map_err(fail)?;
        let mean = |r: &[gde_core::training::EpochRecord]| r.iter().map(|e| e.loss).sum::<f64>() / r.len() as f64;
        drops.push((mean(&rec[..5]), mean(&rec[45..])));
    }
    let improved = drops.iter().all(|(first, last)| last < first);
    let detail = drops
        .iter()
        .map(|(a, b)| format!("{a:.1} -> {b:.1}"))
        .collect::<Vec<_>>()
        .join(", ");
    ensure(kl_ok && improved, format!("KL {k0:e} / {k1}, loss first 5 vs last 5 epochs: {detail}"))
}

fn geometric_chi_square(deltas: &[usize], p: f64) -> (f64, usize) {
    let n = deltas.len() as f64;
    let pmf = |k: usize| p * (1.0 - p).powi(k as i32 - 1);
    let mut k_max = 1;
    while n * pmf(k_max + 1) >= 5.0 && n * (1.0 - p).powi(k_max as i32 + 1) >= 5.0 {
        k_max += 1;
    }
    let mut stat = 0.0;
    for k in 1..=k_max {
        let observed = deltas.iter().filter(|&&d| d == k).count() as f64;
        stat += (observed - n * pmf(k)).powi(2) / (n * pmf(k));
    }
    let tail_obs = deltas.iter().filter(|&&d| d > k_max).count() as f64;
    let tail_exp = n * (1.0 - p).powi(k_max as i32);
    stat += (tail_obs - tail_exp).powi(2) / tail_exp;
    (stat, k_max)
}

fn undersampling() -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for (i, p) in [0.3, 0.5, 0.7].into_iter().enumerate() {
        let n = 10_000;
        let kept = bernoulli_mask(n, p, &mut RngStream::new(21, i as u64)).map_err(fail)?;
        let frac = kept.len() as f64 / n as f64;
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        let mut deltas = Vec::new();
        let mut rng = RngStream::new(22, i as u64);
        while deltas.len() < 10_000 {
            let k = bernoulli_mask(2000, p, &mut rng).map_err(fail)?;
            deltas.extend(k.windows(2).map(|w| w[1] - w[0]));
        }
        deltas.truncate(10_000);
        let (stat, dof) = geometric_chi_square(&deltas, p);
        let crit = ChiSquared::new(dof as f64).map_err(fail)?.inverse_cdf(0.99);
        ok &= (frac - p).abs() <= 3.0 * sigma && stat < crit;
        details.push(format!("p={p}: kept {frac:.4}, chi2 {stat:.1} < {crit:.1}"));
    }
    ensure(ok, details.join("; "))
}

fn metrics_and_eval_counts() -> Outcome {
    let one = forecast_metrics(&Matrix::filled(1, 1, 100.0), &Matrix::filled(1, 1, 90.0)).map_err(fail)?;
    let two = forecast_metrics(&Matrix::from_rows(&[[1.0, 1.0]]), &Matrix::from_rows(&[[-2.0, -3.0]])).map_err(fail)?;
    let nominal: Vec<Matrix> = (1..=5).map(|t| Matrix::filled(1, 1, t as f64)).collect();
    let ex = extrapolation_eval(&nominal[..5], 2, |_, _, x| Ok(x.clone())).map_err(fail)?;
    let apes = ex.percentage_errors();
    let want = [50.0, 200.0 / 3.0, 25.0, 40.0];
    let ex_ok = apes.len() == 4 && apes.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-9);
    let metrics_ok = (one.mape - 10.0).abs() < 1e-12 && (one.rmse - 10.0).abs() < 1e-12 && (two.rmse - 3.5).abs() < 1e-12;

    let decay = FnField(|_t: f64, z: &Matrix| z.scale(-1.0));
    let z0 = Matrix::filled(3, 2, 0.5);
    let mut counts_ok = true;
    for (kind, k) in [(SolverKind::Euler, 1), (SolverKind::Rk4, 4)] {
        for (s, eps) in [(1.0, 0.1), (2.5, 0.25), (0.7, 0.05), (3.0, 0.4)] {
            let tr = solve(&decay, &z0, (0.0, s), &SolverConfig::fixed(kind, eps)).map_err(fail)?;
            counts_ok &= tr.n_field_evals == k * (s / eps - 1e-9f64).ceil() as usize;
        }
    }
    ensure(
        metrics_ok && ex_ok && counts_ok,
        format!(
            "MAPE {} RMSE {} / RMSE {} / APEs {:?} / eval counts {counts_ok}",
            one.mape,
            one.rmse,
            two.rmse,
            apes.iter().map(|a| format!("{a:.1}")).collect::<Vec<_>>()
        ),
    )
}

fn metrics_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let seed = dir.join("seed_7");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&seed).map_err(fail)? {
        let path = entry.map_err(fail)?.path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if name.starts_with("metrics_") && name.ends_with(".csv") {
            out.push((name, std::fs::read(&path).map_err(fail)?));
        }
    }
    out.sort();
    Ok(out)
}

fn determinism(tmp: &Path) -> Outcome {
    let mut runs = Vec::new();
    for i in 0..2 {
        let out = tmp.join(format!("repro_{i}"));
        let status = Command::new(env!("CARGO_BIN_EXE_gde"))
            .args(["reproduce", "particles", "--seed", "7", "-o"])
            .arg(&out)
            .env_remove("GDE_OUT_DIR")
            .env_remove("GDE_SEED")
            .output()
            .map_err(fail)?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        runs.push(metrics_files(&out)?);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    ensure(
        !runs[0].is_empty() && runs[0] == runs[1],
        format!("{} metrics files identical: {}", names.len(), names.join(", ")),
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("gradient correctness", Box::new(gradients)),
        ("hybrid adjoint equivalence", Box::new(hybrid_equivalence)),
        ("solver orders", Box::new(solver_orders)),
        ("Stratonovich discrimination", Box::new(stratonovich)),
        ("multi-particle physics", Box::new(particle_physics)),
        ("multi-particle ordering", Box::new(move || particle_ordering(t))),
        ("hybrid forecasting ordering", Box::new(move || forecast_ordering(t))),
        ("oversmoothing robustness", Box::new(move || oversmoothing(t))),
        ("tau-leaping fidelity", Box::new(tau_leap_fidelity)),
        ("ELBO components", Box::new(elbo)),
        ("undersampling law", Box::new(undersampling)),
        ("metric formulas and eval counts", Box::new(metrics_and_eval_counts)),
        ("determinism", Box::new(move || determinism(t))),
    ];
    println!();
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let outcome = check();
        let secs = start.elapsed().as_secs_f64();
        match &outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} ({secs:.1}s)", i + 1),
            Err(d) => {
                println!("FAIL {:>2} {name}: {d} ({secs:.1}s)", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
