use std::path::{Path, PathBuf};

use gde_core::datagen::{TauLeapConfig, N_SPECIES};
use gde_core::layers::ParamStore;
use gde_core::models::LatentGDEModel;
use gde_core::solvers::SolverConfig;
use gde_core::training::latent::{
    attention_traces, latent_sample, repressilator_dataset, repressilator_model, sample_band, train_latent,
    LatentConfig, LatentSample, RepressilatorData, SampleBand,
};
use gde_core::training::EpochRecord;
use gde_core::Matrix;

use super::{data_rng, eval_rng, init_rng, train_rng, Experiment};
use crate::artifacts::{load_checkpoint, save_checkpoint, seed_dir, write_metrics, write_table, SummaryRow, Table};
use crate::config::{key, KeyDef, Settings};
use crate::error::{CliError, Result};
use crate::plot::{render, Panel, Series};

pub struct Repressilator;

const KEYS: &[KeyDef] = &[
    key("data.horizon", "300", "simulated seconds per training trajectory"),
    key("data.sample_dt", "0.5", "sampling interval in seconds"),
    key("data.substeps", "10", "tau-leaps per sampling interval"),
    key("data.n_train", "10", "training trajectories"),
    key("data.n_test", "10", "test trajectories"),
    key("data.condition_time", "150", "seconds fed to the encoder"),
    key("data.extrapolation", "50", "extra seconds simulated for test trajectories"),
    key("data.time_scale", "0.1", "model time per second"),
    key("data.target_stride", "10", "decode every k-th sample"),
    key("model.hidden", "16", "encoder width"),
    key("model.step", "0.1", "initial or fixed Euler-Heun step"),
    key("model.rtol", "1e-3", "relative tolerance of the step control"),
    key("model.atol", "1e-3", "absolute tolerance of the step control"),
    key("model.adaptive", "true", "adapt the Euler-Heun step"),
    key("train.epochs", "1000", "training epochs"),
    key("train.schedule", "one_cycle:0.01:300:0.0004:1000", "learning-rate schedule"),
    key("eval.n_samples", "8", "decoder samples per test trajectory"),
    key("eval.plot_trajectories", "2", "test trajectories drawn by `plot`"),
];

pub const SPECIES: [&str; N_SPECIES] = ["LacI", "TetR", "cI", "lacI mRNA", "tetR mRNA", "cI mRNA"];

const MODEL: &str = "latent";

fn config(s: &Settings) -> Result<LatentConfig> {
    let mut solver = SolverConfig::euler_heun_adaptive(s.f64("model.step")?, s.f64("model.rtol")?, s.f64("model.atol")?);
    solver.adaptive = s.bool("model.adaptive")?;
    Ok(LatentConfig {
        tau: TauLeapConfig {
            horizon: s.f64("data.horizon")?,
            sample_dt: s.f64("data.sample_dt")?,
            substeps: s.usize("data.substeps")?,
        },
        n_train: s.usize("data.n_train")?,
        n_test: s.usize("data.n_test")?,
        condition_time: s.f64("data.condition_time")?,
        extrapolation: s.f64("data.extrapolation")?,
        time_scale: s.f64("data.time_scale")?,
        target_stride: s.usize("data.target_stride")?,
        hidden: s.usize("model.hidden")?,
        solver,
        epochs: s.usize("train.epochs")?,
        schedule: s.schedule("train.schedule")?,
        n_samples: s.usize("eval.n_samples")?,
    })
}

fn descriptor(cfg: &LatentConfig) -> String {
    format!("repressilator:{MODEL}:h{}", cfg.hidden)
}

fn species_rows(times: &[f64], traj: &Matrix) -> Vec<Vec<String>> {
    times
        .iter()
        .enumerate()
        .map(|(r, t)| {
            let mut row = vec![t.to_string()];
            row.extend((0..N_SPECIES).map(|c| traj[(r, c)].to_string()));
            row
        })
        .collect()
}

fn band_rows(band: &SampleBand) -> Vec<[String; 6]> {
    let mut rows = Vec::new();
    for (k, t) in band.times.iter().enumerate() {
        for (c, name) in SPECIES.iter().enumerate() {
            rows.push([
                t.to_string(),
                name.to_string(),
                band.mean[(k, c)].to_string(),
                band.lo[(k, c)].to_string(),
                band.hi[(k, c)].to_string(),
                band.target[(k, c)].to_string(),
            ]);
        }
    }
    rows
}

/// Mean squared error of the band mean over rows with `keep(t)`.
fn band_mse(band: &SampleBand, keep: impl Fn(f64) -> bool) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for (k, &t) in band.times.iter().enumerate() {
        if keep(t) {
            for c in 0..N_SPECIES {
                acc += (band.mean[(k, c)] - band.target[(k, c)]).powi(2);
                n += 1;
            }
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        acc / n as f64
    }
}

fn evaluate_model(
    cfg: &LatentConfig,
    model: &LatentGDEModel,
    params: &ParamStore,
    data: &RepressilatorData,
    seed: u64,
    dir: &Path,
) -> Result<(Vec<SummaryRow>, EpochRecord)> {
    let mut rng = eval_rng(seed);
    let (mut recon, mut extra, mut cover) = (0.0, 0.0, 0.0);
    for (i, traj) in data.test.iter().enumerate() {
        let sample = latent_sample(traj, &data.test_times, cfg)?;
        let (band, pass) = sample_band(model, params, &sample, &data.test_times, cfg.n_samples, &mut rng)?;
        write_table(
            &dir.join(format!("band_{i}.csv")),
            &["t", "species", "mean", "lo", "hi", "target"],
            band_rows(&band),
        )?;
        recon += band_mse(&band, |t| t <= cfg.tau.horizon);
        extra += band_mse(&band, |t| t > cfg.tau.horizon);
        cover += band.coverage();
        if i == 0 {
            let (times, traces) = attention_traces(model, params, &pass.sde, cfg.time_scale)?;
            let mut rows = Vec::new();
            for tr in &traces {
                for (t, a) in times.iter().zip(&tr.values) {
                    rows.push([
                        t.to_string(),
                        tr.node.to_string(),
                        tr.neighbor.to_string(),
                        if tr.incoming { "in" } else { "out" }.to_string(),
                        a.to_string(),
                    ]);
                }
            }
            write_table(&dir.join("attention.csv"), &["t", "node", "neighbor", "direction", "alpha"], rows)?;
        }
    }
    let k = data.test.len().max(1) as f64;
    let rows = vec![
        SummaryRow::new(MODEL, "reconstruction_mse", recon / k),
        SummaryRow::new(MODEL, "extrapolation_mse", extra / k),
        SummaryRow::new(MODEL, "band_coverage", cover / k),
    ];
    let mut record = EpochRecord::train(cfg.epochs, recon / k, 0.0).with_split("test");
    record.rmse = Some((recon / k).sqrt());
    Ok((rows, record))
}

fn samples(data: &RepressilatorData, cfg: &LatentConfig) -> Result<Vec<LatentSample>> {
    data.train
        .iter()
        .map(|t| latent_sample(t, &data.times, cfg).map_err(Into::into))
        .collect()
}

impl Experiment for Repressilator {
    fn name(&self) -> &'static str {
        "repressilator"
    }

    fn keys(&self) -> &'static [KeyDef] {
        KEYS
    }

    fn preset(&self) -> &'static [(&'static str, &'static str)] {
        &[
            ("run.seeds", "0"),
            ("data.n_train", "4"),
            ("data.n_test", "2"),
            ("train.epochs", "100"),
            ("train.schedule", "one_cycle:0.01:30:0.0004:100"),
        ]
    }

    fn generate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
        let cfg = config(s)?;
        let data = repressilator_dataset(&cfg, &mut data_rng(seed))?;
        let header: Vec<&str> = std::iter::once("t").chain(SPECIES).collect();
        let mut files = Vec::new();
        for (split, trajs, times) in [("train", &data.train, &data.times), ("test", &data.test, &data.test_times)] {
            for (i, traj) in trajs.iter().enumerate() {
                let path = dir.join(format!("{split}_{i}.csv"));
                write_table(&path, &header, species_rows(times, &data.denormalize(traj)))?;
                files.push(path);
            }
        }
        Ok(files)
    }

    fn run_seed(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let cfg = config(s)?;
        let data = repressilator_dataset(&cfg, &mut data_rng(seed))?;
        let model = repressilator_model(&cfg)?;
        let mut params = ParamStore::new();
        model.register(&mut params, &mut init_rng(seed))?;
        let mut records = train_latent(&model, &mut params, &samples(&data, &cfg)?, cfg.epochs, &cfg.schedule, &mut train_rng(seed))?;
        save_checkpoint(&dir.join(format!("{MODEL}.ckpt")), &descriptor(&cfg), seed, &params)?;
        let mut rows = Vec::new();
        if let Some(last) = records.last() {
            rows.push(SummaryRow::new(MODEL, "final_loss", last.loss));
        }
        let (r, test) = evaluate_model(&cfg, &model, &params, &data, seed, dir)?;
        rows.extend(r);
        records.push(test);
        write_metrics(&dir.join(format!("metrics_{MODEL}.csv")), &records)?;
        Ok(rows)
    }

    fn evaluate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let cfg = config(s)?;
        let data = repressilator_dataset(&cfg, &mut data_rng(seed))?;
        let model = repressilator_model(&cfg)?;
        let params = load_checkpoint(&dir.join(format!("{MODEL}.ckpt")), &descriptor(&cfg))?;
        Ok(evaluate_model(&cfg, &model, &params, &data, seed, dir)?.0)
    }

    fn plot(&self, s: &Settings, run_dir: &Path) -> Result<Vec<PathBuf>> {
        let seed = s.seeds()?[0];
        let dir = seed_dir(run_dir, seed);
        let horizon = s.f64("data.horizon")?;
        let n_plot = s.usize("eval.plot_trajectories")?.min(s.usize("data.n_test")?);
        let mut out = Vec::new();
        for i in 0..n_plot {
            let t = Table::read(&dir.join(format!("band_{i}.csv")))?;
            let panels = SPECIES
                .iter()
                .map(|name| {
                    let rows = t.filter("species", name)?;
                    let x = rows.floats("t")?;
                    Ok(Panel {
                        title: name.to_string(),
                        x_desc: "time (s)".into(),
                        y_desc: "normalized count".into(),
                        series: vec![
                            Series::line("target", x.clone(), rows.floats("target")?),
                            Series::line("sample mean", x, rows.floats("mean")?)
                                .with_band(rows.floats("lo")?, rows.floats("hi")?),
                        ],
                        markers: vec![horizon],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = run_dir.join(format!("bands_{i}.svg"));
            render(&path, &format!("Test trajectory {i}: min-max sample band, seed {seed}"), &panels, 3)?;
            out.push(path);
        }
        let att = Table::read(&dir.join("attention.csv"))?;
        let mut panels = Vec::new();
        for (node, name) in SPECIES.iter().enumerate() {
            let rows = att.filter("node", &node.to_string())?;
            let mut keys: Vec<(String, String)> = Vec::new();
            for (nb, dirn) in rows.strings("neighbor")?.into_iter().zip(rows.strings("direction")?) {
                let k = (nb.to_string(), dirn.to_string());
                if !keys.contains(&k) {
                    keys.push(k);
                }
            }
            if keys.is_empty() {
                return Err(CliError::Failed(format!("{}: no traces for node {node}", att.path.display())));
            }
            let mut panel = Panel {
                title: name.to_string(),
                x_desc: "time (s)".into(),
                y_desc: "attention".into(),
                ..Panel::default()
            };
            for (nb, dirn) in keys {
                let tr = rows.filter("neighbor", &nb)?.filter("direction", &dirn)?;
                let label = if dirn == "in" { format!("{nb} -> {node}") } else { format!("{node} -> {nb}") };
                panel.series.push(Series::line(label, tr.floats("t")?, tr.floats("alpha")?));
            }
            panels.push(panel);
        }
        let path = run_dir.join("attention.svg");
        render(&path, &format!("Drift attention coefficients, test trajectory 0, seed {seed}"), &panels, 3)?;
        out.push(path);
        Ok(out)
    }
}
