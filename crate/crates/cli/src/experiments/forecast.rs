use std::path::{Path, PathBuf};

use gde_core::datagen::{synth_traffic, TrafficConfig};
use gde_core::graph::format_edge_list;
use gde_core::layers::ParamStore;
use gde_core::solvers::{SolverConfig, SolverKind};
use gde_core::training::forecast::{
    evaluate_forecaster, prepare_forecast_data, train_forecaster, ForecastConfig, ForecastData, ForecastTrainConfig,
    Forecaster, ForecasterRegistry, ForecasterSpec,
};
use gde_core::training::EpochRecord;

use super::{data_rng, init_rng, model_names, train_rng, Experiment};
use crate::artifacts::{load_checkpoint, save_checkpoint, seed_dir, write_metrics, write_table, write_text, SummaryRow, Table};
use crate::config::{key, KeyDef, Settings};
use crate::error::Result;
use crate::plot::{render, Panel, Series};

pub struct HybridForecast;

const KEYS: &[KeyDef] = &[
    key("data.n_stations", "12", "number of sensors"),
    key("data.days", "12", "length of the series in days"),
    key("data.steps_per_day", "48", "regular samples per day"),
    key("data.base_speed", "60", "mean speed"),
    key("data.amplitude", "15", "daily cycle amplitude"),
    key("data.phase_spread", "0", "position dependence of the daily phase"),
    key("data.ar", "0.9", "persistence of the fluctuation"),
    key("data.coupling", "0.6", "pull toward the neighbor mean"),
    key("data.noise", "3", "fluctuation noise scale"),
    key("data.percentile", "40", "distance percentile for edges"),
    key("data.keep_probs", "0.3", "Bernoulli keep probabilities"),
    key("data.window", "5", "observed graphs per window"),
    key("data.train_fraction", "0.7", "leading fraction used for training"),
    key("data.test_repeats", "5", "undersampled copies of the test segment"),
    key("data.gap_scale", "0.25", "scale of the gap feature"),
    key("data.time_scale", "0.1", "flow time per grid step"),
    key("model.names", "gcde_gru, gcgru, gru", "models to train"),
    key("model.hidden", "16", "hidden width of the graph models"),
    key("model.gru_hidden", "32", "hidden width of the graph-free GRU"),
    key("model.solver", "dopri5", "flow solver"),
    key("model.step", "0.01", "step of fixed-step solvers"),
    key("model.rtol", "1e-3", "relative tolerance"),
    key("model.atol", "1e-4", "absolute tolerance"),
    key("model.zero_flow_init", "true", "start the flow's last layer at zero"),
    key("train.epochs", "40", "training epochs"),
    key("train.schedule", "cosine:10:0.01:0", "learning-rate schedule"),
    key("train.batch_size", "8", "windows per step"),
];

fn traffic(s: &Settings) -> Result<TrafficConfig> {
    Ok(TrafficConfig {
        n_stations: s.usize("data.n_stations")?,
        days: s.f64("data.days")?,
        steps_per_day: s.usize("data.steps_per_day")?,
        base_speed: s.f64("data.base_speed")?,
        amplitude: s.f64("data.amplitude")?,
        phase_spread: s.f64("data.phase_spread")?,
        ar: s.f64("data.ar")?,
        coupling: s.f64("data.coupling")?,
        noise: s.f64("data.noise")?,
        percentile: s.f64("data.percentile")?,
    })
}

fn forecast_config(s: &Settings, keep_prob: f64) -> Result<ForecastConfig> {
    Ok(ForecastConfig {
        traffic: traffic(s)?,
        keep_prob,
        window: s.usize("data.window")?,
        train_fraction: s.f64("data.train_fraction")?,
        test_repeats: s.usize("data.test_repeats")?,
        gap_scale: s.f64("data.gap_scale")?,
        time_scale: s.f64("data.time_scale")?,
    })
}

fn spec(s: &Settings) -> Result<ForecasterSpec> {
    let kind: SolverKind = s.parse("model.solver")?;
    let solver = SolverConfig {
        method: kind,
        h: s.f64("model.step")?,
        rtol: s.f64("model.rtol")?,
        atol: s.f64("model.atol")?,
        ..SolverConfig::default()
    };
    Ok(ForecasterSpec {
        n_stations: s.usize("data.n_stations")?,
        hidden: s.usize("model.hidden")?,
        gru_hidden: s.usize("model.gru_hidden")?,
        solver,
        zero_flow_init: s.bool("model.zero_flow_init")?,
        ..ForecasterSpec::default()
    })
}

fn descriptor(name: &str, spec: &ForecasterSpec) -> String {
    format!(
        "hybrid_forecast:{name}:n{}:h{}:g{}",
        spec.n_stations, spec.hidden, spec.gru_hidden
    )
}

fn tag(name: &str, p: f64) -> String {
    format!("{name}_keep{p}")
}

fn keep_probs(s: &Settings) -> Result<Vec<f64>> {
    s.f64_list("data.keep_probs")
}

/// Writes the first undersampled test copy as a prediction table and
/// returns summary rows and the test record.
fn evaluate_model(
    s: &Settings,
    name: &str,
    p: f64,
    model: &dyn Forecaster,
    params: &ParamStore,
    data: &ForecastData,
    dir: &Path,
) -> Result<(Vec<SummaryRow>, EpochRecord)> {
    let report = evaluate_forecaster(model, params, data)?;
    let time_scale = s.f64("data.time_scale")?;
    let mut rows = Vec::new();
    for w in &data.test[0] {
        let t = w.stream.timestamps().last().expect("window is nonempty") / time_scale;
        let pred = data.denormalize(&model.predict(params, w)?);
        let target = data.denormalize(&w.target);
        for node in 0..pred.rows() {
            rows.push([
                t.round().to_string(),
                node.to_string(),
                target[(node, 0)].to_string(),
                pred[(node, 0)].to_string(),
            ]);
        }
    }
    write_table(
        &dir.join(format!("predictions_{}.csv", tag(name, p))),
        &["t", "node", "target", "prediction"],
        rows,
    )?;
    let suffix = format!("@{p}");
    let summary = vec![
        SummaryRow::new(name, format!("mape{suffix}"), report.mape),
        SummaryRow::new(name, format!("rmse{suffix}"), report.rmse),
        SummaryRow::new(name, format!("mape_signed_sum{suffix}"), report.mape_signed_sum),
    ];
    let record = EpochRecord::train(s.usize("train.epochs")?, report.mse, 0.0)
        .with_split("test")
        .with_metrics(report.mape, report.rmse);
    Ok((summary, record))
}

impl Experiment for HybridForecast {
    fn name(&self) -> &'static str {
        "hybrid_forecast"
    }

    fn keys(&self) -> &'static [KeyDef] {
        KEYS
    }

    fn preset(&self) -> &'static [(&'static str, &'static str)] {
        &[("run.seeds", "0, 1, 2, 3, 4")]
    }

    fn generate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
        let data = synth_traffic(&traffic(s)?, &mut data_rng(seed))?;
        let stream = &data.stream;
        let mut rows = Vec::new();
        for (t, x) in stream.timestamps().iter().zip(stream.features()) {
            for node in 0..x.rows() {
                rows.push([t.to_string(), node.to_string(), x[(node, 0)].to_string()]);
            }
        }
        let series = dir.join("dataset.csv");
        write_table(&series, &["t", "node", "speed"], rows)?;
        let positions = dir.join("positions.csv");
        write_table(
            &positions,
            &["node", "x", "y"],
            data.positions
                .iter()
                .enumerate()
                .map(|(i, p)| [i.to_string(), p[0].to_string(), p[1].to_string()]),
        )?;
        let graph = dir.join("graph.txt");
        write_text(&graph, &format_edge_list(&stream.graphs()[0]))?;
        Ok(vec![series, positions, graph])
    }

    fn run_seed(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let spec = spec(s)?;
        let cfg = ForecastTrainConfig {
            epochs: s.usize("train.epochs")?,
            schedule: s.schedule("train.schedule")?,
            batch_size: s.usize("train.batch_size")?,
        };
        let names = model_names(s, &ForecasterRegistry::global().names())?;
        let mut rows = Vec::new();
        for p in keep_probs(s)? {
            let data = prepare_forecast_data(&forecast_config(s, p)?, &mut data_rng(seed))?;
            for name in &names {
                let model = ForecasterRegistry::global().build(name, &spec)?;
                let mut params = ParamStore::new();
                model.register(&mut params, &mut init_rng(seed))?;
                let mut records = train_forecaster(model.as_ref(), &mut params, &data, &cfg, &mut train_rng(seed))?;
                save_checkpoint(&dir.join(format!("{}.ckpt", tag(name, p))), &descriptor(name, &spec), seed, &params)?;
                let (r, test) = evaluate_model(s, name, p, model.as_ref(), &params, &data, dir)?;
                records.push(test);
                write_metrics(&dir.join(format!("metrics_{}.csv", tag(name, p))), &records)?;
                rows.extend(r);
            }
        }
        Ok(rows)
    }

    fn evaluate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let spec = spec(s)?;
        let names = model_names(s, &ForecasterRegistry::global().names())?;
        let mut rows = Vec::new();
        for p in keep_probs(s)? {
            let data = prepare_forecast_data(&forecast_config(s, p)?, &mut data_rng(seed))?;
            for name in &names {
                let model = ForecasterRegistry::global().build(name, &spec)?;
                let params = load_checkpoint(&dir.join(format!("{}.ckpt", tag(name, p))), &descriptor(name, &spec))?;
                rows.extend(evaluate_model(s, name, p, model.as_ref(), &params, &data, dir)?.0);
            }
        }
        Ok(rows)
    }

    fn plot(&self, s: &Settings, run_dir: &Path) -> Result<Vec<PathBuf>> {
        let seed = s.seeds()?[0];
        let dir = seed_dir(run_dir, seed);
        let names = model_names(s, &ForecasterRegistry::global().names())?;
        let mut out = Vec::new();
        for p in keep_probs(s)? {
            let mut panels = Vec::new();
            let n = s.usize("data.n_stations")?.min(4);
            for node in 0..n {
                let mut panel = Panel {
                    title: format!("sensor {node}"),
                    x_desc: "time step".into(),
                    y_desc: "speed".into(),
                    ..Panel::default()
                };
                for (k, name) in names.iter().enumerate() {
                    let t = Table::read(&dir.join(format!("predictions_{}.csv", tag(name, p))))?
                        .filter("node", &node.to_string())?;
                    let x = t.floats("t")?;
                    if k == 0 {
                        panel.series.push(Series::line("target", x.clone(), t.floats("target")?));
                    }
                    panel.series.push(Series::line(name, x, t.floats("prediction")?));
                }
                panels.push(panel);
            }
            let path = run_dir.join(format!("predictions_keep{p}.svg"));
            render(&path, &format!("Test predictions, keep probability {p}, seed {seed}"), &panels, 2)?;
            out.push(path);
        }
        Ok(out)
    }
}
