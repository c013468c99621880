//! Experiment families behind a common interface, looked up by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use gde_core::numerics::RngStream;

use crate::artifacts::SummaryRow;
use crate::config::{KeyDef, Settings, COMMON_KEYS};
use crate::error::{CliError, Result};

mod forecast;
mod oversmoothing;
mod particles;
mod repressilator;

pub use forecast::HybridForecast;
pub use oversmoothing::Oversmoothing;
pub use particles::Particles;
pub use repressilator::Repressilator;

/// Streams derived from a run seed.
pub fn data_rng(seed: u64) -> RngStream {
    RngStream::new(seed, 0)
}

pub fn init_rng(seed: u64) -> RngStream {
    RngStream::new(seed, 1)
}

pub fn train_rng(seed: u64) -> RngStream {
    RngStream::new(seed, 2)
}

pub fn eval_rng(seed: u64) -> RngStream {
    RngStream::new(seed, 3)
}

pub trait Experiment: Send + Sync {
    fn name(&self) -> &'static str;

    /// Keys accepted on top of [`COMMON_KEYS`].
    fn keys(&self) -> &'static [KeyDef];

    /// Overrides used by `reproduce`.
    fn preset(&self) -> &'static [(&'static str, &'static str)];

    /// Writes the seed's dataset below `dir` and returns the files written.
    fn generate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<PathBuf>>;

    /// Trains and evaluates every model for one seed, writing logs,
    /// checkpoints and prediction tables into `dir`.
    fn run_seed(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>>;

    /// Re-evaluates the checkpoints in `dir` and rewrites the prediction
    /// tables.
    fn evaluate(&self, s: &Settings, seed: u64, dir: &Path) -> Result<Vec<SummaryRow>>;

    /// Renders the run's SVG figures into `run_dir`.
    fn plot(&self, s: &Settings, run_dir: &Path) -> Result<Vec<PathBuf>>;

    /// Common keys followed by the experiment's own.
    fn schema(&self) -> Vec<KeyDef> {
        COMMON_KEYS.iter().chain(self.keys()).copied().collect()
    }
}

pub struct ExperimentRegistry {
    entries: BTreeMap<&'static str, Box<dyn Experiment>>,
}

impl ExperimentRegistry {
    pub fn empty() -> Self {
        Self { entries: BTreeMap::new() }
    }

    pub fn register(&mut self, exp: Box<dyn Experiment>) {
        self.entries.insert(exp.name(), exp);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Experiment> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| CliError::UnknownExperiment {
            name: name.to_string(),
            known: self.names().join(", "),
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }

    pub fn global() -> &'static ExperimentRegistry {
        static REG: OnceLock<ExperimentRegistry> = OnceLock::new();
        REG.get_or_init(|| {
            let mut r = ExperimentRegistry::empty();
            r.register(Box::new(Particles));
            r.register(Box::new(HybridForecast));
            r.register(Box::new(Repressilator));
            r.register(Box::new(Oversmoothing));
            r
        })
    }
}

/// `model.names` as a list, each checked against `known`.
pub(crate) fn model_names(s: &Settings, known: &[&str]) -> Result<Vec<String>> {
    let names = s.list("model.names")?;
    if names.is_empty() {
        return Err(CliError::BadValue {
            key: "model.names".into(),
            origin: "resolved".into(),
            msg: "no models selected".into(),
        });
    }
    for n in &names {
        if !known.contains(&n.as_str()) {
            return Err(CliError::BadValue {
                key: "model.names".into(),
                origin: "resolved".into(),
                msg: format!("unknown model `{n}` (known: {})", known.join(", ")),
            });
        }
    }
    Ok(names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_lists_every_family() {
        let reg = ExperimentRegistry::global();
        assert_eq!(reg.names(), vec!["hybrid_forecast", "oversmoothing", "particles", "repressilator"]);
        let err = reg.get("weather").err().unwrap().to_string();
        assert!(err.contains("weather") && err.contains("particles"), "{err}");
    }

    #[test]
    fn schemas_have_unique_keys_and_valid_presets() {
        for name in ExperimentRegistry::global().names() {
            let exp = ExperimentRegistry::global().get(name).unwrap();
            let schema = exp.schema();
            let mut keys: Vec<_> = schema.iter().map(|k| k.key).collect();
            keys.sort();
            let before = keys.len();
            keys.dedup();
            assert_eq!(keys.len(), before, "{name}");
            for (k, _) in exp.preset() {
                assert!(keys.contains(k), "{name}: preset key {k}");
            }
        }
    }
}
