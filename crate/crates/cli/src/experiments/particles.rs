use std::path::{Path, PathBuf};

use gde_core::datagen::{initial_particles, simulate_multi_particle, ParticleParams, ParticleRollout};
use gde_core::graph::format_edge_list;
use gde_core::layers::ParamStore;
use gde_core::training::particles::{
    one_step_mse, particle_extrapolation, train_step_model, ParticleDataset, StepModel, StepModelRegistry,
    StepModelSpec, StepTrainConfig,
};
use gde_core::training::EpochRecord;

use super::{data_rng, init_rng, model_names, train_rng, Experiment};
use crate::artifacts::{
    create_dir, load_checkpoint, save_checkpoint, seed_dir, write_metrics, write_table, write_text, SummaryRow, Table,
};
use crate::config::{key, KeyDef, Settings};
use crate::error::Result;
use crate::plot::{mean_std, render, Panel, Series};

pub struct Particles;

const KEYS: &[KeyDef] = &[
    key("data.n", "10", "number of particles"),
    key("data.alpha", "1", "spring stiffness"),
    key("data.beta", "0.5", "drag"),
    key("data.r", "1", "interaction radius"),
    key("data.horizon", "5", "rollout length in seconds"),
    key("data.dt", "0.00195", "integration step of the rollout"),
    key("data.stride", "8", "keep every k-th rollout state"),
    key("model.names", "gcde, node, static", "models to train"),
    key("model.hidden", "32", "hidden width"),
    key("train.epochs", "200", "training epochs"),
    key("train.schedule", "constant:0.01", "learning-rate schedule"),
    key("train.batch_size", "0", "pairs per step, 0 for full batch"),
    key("eval.max_steps", "5", "longest extrapolation evaluated"),
];

const STATE_COLS: [&str; 4] = ["x", "y", "vx", "vy"];

struct Setup {
    physics: ParticleParams,
    horizon: f64,
    dt: f64,
    stride: usize,
}

impl Setup {
    fn from(s: &Settings) -> Result<Self> {
        Ok(Self {
            physics: ParticleParams {
                n: s.usize("data.n")?,
                alpha: s.f64("data.alpha")?,
                beta: s.f64("data.beta")?,
                r: s.f64("data.r")?,
            },
            horizon: s.f64("data.horizon")?,
            dt: s.f64("data.dt")?,
            stride: s.usize("data.stride")?,
        })
    }

    fn rollout(&self, seed: u64) -> Result<ParticleRollout> {
        let z0 = initial_particles(&self.physics, &mut data_rng(seed));
        Ok(simulate_multi_particle(&self.physics, self.horizon, self.dt, &z0)?)
    }

    fn dataset(&self, seed: u64) -> Result<ParticleDataset> {
        Ok(ParticleDataset::from_rollout(self.physics, &self.rollout(seed)?, self.stride)?)
    }
}

fn spec(s: &Settings) -> Result<StepModelSpec> {
    Ok(StepModelSpec {
        n_nodes: s.usize("data.n")?,
        hidden: s.usize("model.hidden")?,
        ..StepModelSpec::default()
    })
}

fn descriptor(name: &str, spec: &StepModelSpec) -> String {
    format!("particles:{name}:n{}:h{}", spec.n_nodes, spec.hidden)
}

/// Writes the extrapolation tables and returns the summary rows plus the
/// test record appended to the metrics log.
fn evaluate_model(
    s: &Settings,
    name: &str,
    model: &dyn StepModel,
    params: &ParamStore,
    data: &ParticleDataset,
    dir: &Path,
) -> Result<(Vec<SummaryRow>, EpochRecord)> {
    let max_steps = s.usize("eval.max_steps")?.max(1);
    let mse = one_step_mse(model, params, &data.test_states, &data.test_contexts, data.dt)?;
    let mut rows = vec![SummaryRow::new(name, "test_mse", mse)];
    let mut curve = Vec::with_capacity(max_steps);
    let mut last = None;
    for k in 1..=max_steps {
        let ext = particle_extrapolation(model, params, data, k)?;
        let m = ext.mape()?;
        rows.push(SummaryRow::new(name, format!("mape_k{k}"), m));
        curve.push([k.to_string(), m.to_string()]);
        last = Some(ext);
    }
    write_table(&dir.join(format!("extrapolation_{name}.csv")), &["steps", "mape"], curve)?;
    let ext = last.expect("max_steps ≥ 1");
    let mut pred_rows = Vec::new();
    for (i, ((y, p), h)) in ext.targets.iter().zip(&ext.predictions).zip(&ext.horizon).enumerate() {
        for node in 0..y.rows() {
            for (c, col) in STATE_COLS.iter().enumerate() {
                pred_rows.push([
                    i.to_string(),
                    h.to_string(),
                    node.to_string(),
                    col.to_string(),
                    y[(node, c)].to_string(),
                    p[(node, c)].to_string(),
                ]);
            }
        }
    }
    write_table(
        &dir.join(format!("predictions_{name}.csv")),
        &["sample", "horizon", "node", "feature", "target", "prediction"],
        pred_rows,
    )?;
    let epochs = s.usize("train.epochs")?;
    let record = EpochRecord::train(epochs, mse, 0.0)
        .with_split("test")
        .with_metrics(ext.mape()?, mse.sqrt());
    Ok((rows, record))
}

impl Experiment for Particles {
    fn name(&self) -> &'static str {
        "particles"
    }

    fn keys(&self) -> &'static [KeyDef] {
        KEYS
    }

    fn preset(&self) -> &'static [(&'static str, &'static str)] {
        &[("run.seeds", "0, 1, 2")]
    }

    fn generate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
        let setup = Setup::from(s)?;
        let stream = setup.rollout(seed)?.to_stream(setup.stride)?;
        let mut rows = Vec::new();
        for (t, x) in stream.timestamps().iter().zip(stream.features()) {
            for node in 0..x.rows() {
                let mut r = vec![t.to_string(), node.to_string()];
                r.extend(x.row(node).iter().map(|v| v.to_string()));
                rows.push(r);
            }
        }
        let data_path = dir.join("dataset.csv");
        write_table(&data_path, &["t", "node", "x", "y", "vx", "vy"], rows)?;
        let gdir = dir.join("graphs");
        create_dir(&gdir)?;
        let mut files = vec![data_path];
        let mut index = Vec::new();
        let mut prev: Option<String> = None;
        for (t, g) in stream.timestamps().iter().zip(stream.graphs()) {
            let text = format_edge_list(g);
            if prev.as_ref() != Some(&text) {
                let name = format!("g{:05}.txt", files.len() - 1);
                let path = gdir.join(&name);
                write_text(&path, &text)?;
                files.push(path);
                prev = Some(text);
            }
            let current = files.last().and_then(|p| p.file_name()).expect("snapshot written");
            index.push([t.to_string(), format!("graphs/{}", current.to_string_lossy())]);
        }
        let index_path = gdir.join("index.csv");
        write_table(&index_path, &["t", "file"], index)?;
        files.push(index_path);
        Ok(files)
    }

    fn run_seed(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let data = Setup::from(s)?.dataset(seed)?;
        let spec = spec(s)?;
        let cfg = StepTrainConfig {
            epochs: s.usize("train.epochs")?,
            schedule: s.schedule("train.schedule")?,
            batch_size: s.usize("train.batch_size")?,
        };
        let mut rows = Vec::new();
        for name in model_names(s, &StepModelRegistry::global().names())? {
            let model = StepModelRegistry::global().build(&name, &spec)?;
            let mut params = ParamStore::new();
            model.register(&mut params, &mut init_rng(seed))?;
            let mut records = train_step_model(model.as_ref(), &mut params, &data, &cfg, &mut train_rng(seed))?;
            save_checkpoint(&dir.join(format!("{name}.ckpt")), &descriptor(&name, &spec), seed, &params)?;
            let (r, test) = evaluate_model(s, &name, model.as_ref(), &params, &data, dir)?;
            records.push(test);
            write_metrics(&dir.join(format!("metrics_{name}.csv")), &records)?;
            rows.extend(r);
        }
        Ok(rows)
    }

    fn evaluate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let data = Setup::from(s)?.dataset(seed)?;
        let spec = spec(s)?;
        let mut rows = Vec::new();
        for name in model_names(s, &StepModelRegistry::global().names())? {
            let model = StepModelRegistry::global().build(&name, &spec)?;
            let params = load_checkpoint(&dir.join(format!("{name}.ckpt")), &descriptor(&name, &spec))?;
            rows.extend(evaluate_model(s, &name, model.as_ref(), &params, &data, dir)?.0);
        }
        Ok(rows)
    }

    fn plot(&self, s: &Settings, run_dir: &Path) -> Result<Vec<PathBuf>> {
        let seeds = s.seeds()?;
        let mut mape_panel = Panel {
            title: "Extrapolation error".into(),
            x_desc: "extrapolation steps".into(),
            y_desc: "MAPE (%)".into(),
            ..Panel::default()
        };
        let mut loss_panel = Panel {
            title: "Training loss".into(),
            x_desc: "epoch".into(),
            y_desc: "one-step MSE".into(),
            ..Panel::default()
        };
        for name in model_names(s, &StepModelRegistry::global().names())? {
            let mut curves = Vec::new();
            let mut losses = Vec::new();
            let mut steps = Vec::new();
            for &seed in &seeds {
                let dir = seed_dir(run_dir, seed);
                let t = Table::read(&dir.join(format!("extrapolation_{name}.csv")))?;
                steps = t.floats("steps")?;
                curves.push(t.floats("mape")?);
                losses.push(Table::read(&dir.join(format!("metrics_{name}.csv")))?.filter("split", "train")?.floats("loss")?);
            }
            let (m, sd) = mean_std(&curves);
            let lo = m.iter().zip(&sd).map(|(m, s)| m - s).collect();
            let hi = m.iter().zip(&sd).map(|(m, s)| m + s).collect();
            mape_panel.series.push(Series::line(&name, steps, m).with_band(lo, hi));
            let (lm, _) = mean_std(&losses);
            let epochs = (1..=lm.len()).map(|e| e as f64).collect();
            loss_panel.series.push(Series::line(&name, epochs, lm));
        }
        let path = run_dir.join("mape_vs_steps.svg");
        render(&path, "Multi-particle extrapolation (mean ± 1 std over seeds)", &[mape_panel, loss_panel], 2)?;
        Ok(vec![path])
    }
}
