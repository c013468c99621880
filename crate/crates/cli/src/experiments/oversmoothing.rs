use std::path::{Path, PathBuf};

use gde_core::datagen::{two_block_community, CommunityConfig, CommunityData};
use gde_core::graph::format_edge_list;
use gde_core::training::classify::{train_classifier, ClassifierConfig};

use super::{data_rng, init_rng, Experiment};
use crate::artifacts::{seed_dir, write_metrics, write_table, write_text, SummaryRow, Table};
use crate::config::{key, KeyDef, Settings};
use crate::error::{CliError, Result};
use crate::plot::{mean_std, render, Panel, Series};

/// Node classification accuracy of a GCDE at several integration spans.
pub struct Oversmoothing;

const KEYS: &[KeyDef] = &[
    key("data.n", "60", "number of nodes"),
    key("data.p_in", "0.2", "edge probability within a block"),
    key("data.p_out", "0.02", "edge probability across blocks"),
    key("data.n_features", "4", "feature dimension"),
    key("data.signal", "0.5", "class-mean offset"),
    key("data.train_fraction", "0.3", "fraction of labeled nodes"),
    key("model.spans", "1, 10", "integration spans S"),
    key("model.hidden", "16", "hidden width"),
    key("model.step", "0.1", "RK4 step"),
    key("train.epochs", "100", "training epochs"),
    key("train.schedule", "constant:0.01", "learning-rate schedule"),
];

fn dataset(s: &Settings, seed: u64) -> Result<CommunityData> {
    let cfg = CommunityConfig {
        n: s.usize("data.n")?,
        p_in: s.f64("data.p_in")?,
        p_out: s.f64("data.p_out")?,
        n_features: s.usize("data.n_features")?,
        signal: s.f64("data.signal")?,
        train_fraction: s.f64("data.train_fraction")?,
    };
    Ok(two_block_community(&cfg, &mut data_rng(seed))?)
}

fn spans(s: &Settings) -> Result<Vec<f64>> {
    let spans = s.f64_list("model.spans")?;
    if spans.is_empty() || spans.iter().any(|v| *v <= 0.0) {
        return Err(CliError::BadValue {
            key: "model.spans".into(),
            origin: "resolved".into(),
            msg: "need one or more positive spans".into(),
        });
    }
    Ok(spans)
}

impl Experiment for Oversmoothing {
    fn name(&self) -> &'static str {
        "oversmoothing"
    }

    fn keys(&self) -> &'static [KeyDef] {
        KEYS
    }

    fn preset(&self) -> &'static [(&'static str, &'static str)] {
        &[("run.seeds", "0, 1, 2, 3, 4")]
    }

    fn generate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>> {
        let data = dataset(s, seed)?;
        let mut split = vec!["test"; data.labels.len()];
        for &v in &data.train {
            split[v] = "train";
        }
        let mut header = vec!["node".to_string(), "label".to_string(), "split".to_string()];
        header.extend((0..data.features.cols()).map(|j| format!("f{j}")));
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..data.labels.len()).map(|v| {
            let mut r = vec![v.to_string(), data.labels[v].to_string(), split[v].to_string()];
            r.extend(data.features.row(v).iter().map(|x| x.to_string()));
            r
        });
        let nodes = dir.join("nodes.csv");
        write_table(&nodes, &header, rows)?;
        let graph = dir.join("graph.txt");
        write_text(&graph, &format_edge_list(&data.graph))?;
        Ok(vec![nodes, graph])
    }

    fn run_seed(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        let data = dataset(s, seed)?;
        let mut rows = Vec::new();
        for span in spans(s)? {
            let cfg = ClassifierConfig {
                hidden: s.usize("model.hidden")?,
                span,
                step: s.f64("model.step")?,
                epochs: s.usize("train.epochs")?,
                schedule: s.schedule("train.schedule")?,
                ..ClassifierConfig::default()
            };
            let (records, acc) = train_classifier(&data, &cfg, &mut init_rng(seed))?;
            write_metrics(&dir.join(format!("metrics_S{span}.csv")), &records)?;
            rows.push(SummaryRow::new(format!("S{span}"), "accuracy", acc));
        }
        Ok(rows)
    }

    fn evaluate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>> {
        // No checkpoint is kept; retrain.
        self.run_seed(s, seed, dir)
    }

    fn plot(&self, s: &Settings, run_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut panel = Panel {
            title: "Training loss".into(),
            x_desc: "epoch".into(),
            y_desc: "cross-entropy".into(),
            ..Panel::default()
        };
        for span in spans(s)? {
            let mut runs = Vec::new();
            for &seed in &s.seeds()? {
                let t = Table::read(&seed_dir(run_dir, seed).join(format!("metrics_S{span}.csv")))?;
                runs.push(t.filter("split", "train")?.floats("loss")?);
            }
            let (m, sd) = mean_std(&runs);
            let x = (1..=m.len()).map(|e| e as f64).collect();
            let lo = m.iter().zip(&sd).map(|(a, b)| a - b).collect();
            let hi = m.iter().zip(&sd).map(|(a, b)| a + b).collect();
            panel.series.push(Series::line(format!("S = {span}"), x, m).with_band(lo, hi));
        }
        let path = run_dir.join("loss_by_span.svg");
        render(&path, "GCDE node classification", &[panel], 1)?;
        Ok(vec![path])
    }
}
