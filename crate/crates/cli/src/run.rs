//! Subcommand drivers: resolve settings, fan seeds out over a thread pool,
//! merge per-seed results and keep the manifest current.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::artifacts::{create_dir, read_text, seed_dir, write_summary, write_text, SummaryRow};
use crate::config::{parse_ini, RawEntry, Settings, Sources};
use crate::error::{CliError, Result};
use crate::experiments::{Experiment, ExperimentRegistry};
use crate::manifest::{Manifest, Status, MANIFEST_FILE};

pub const CONFIG_FILE: &str = "config.ini";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const EVAL_SUMMARY_FILE: &str = "eval_summary.csv";

/// Config file or run manifest; a manifest contributes its embedded config.
pub fn load_sources(path: &Path) -> Result<Sources> {
    let text = read_text(path)?;
    let label = path.display().to_string();
    let file = if text.starts_with("gde-manifest") {
        parse_ini(&Manifest::parse(&text)?.config, &format!("{label} [config]"))?
    } else {
        parse_ini(&text, &label)?
    };
    Ok(Sources {
        file,
        ..Sources::default()
    })
}

pub fn resolve(sources: &Sources) -> Result<(&'static dyn Experiment, Settings)> {
    let name = sources.experiment().ok_or_else(|| CliError::BadValue {
        key: "run.experiment".into(),
        origin: "config".into(),
        msg: "must be set".into(),
    })?;
    let exp = ExperimentRegistry::global().get(&name)?;
    let settings = Settings::resolve(&exp.schema(), sources)?;
    Ok((exp, settings))
}

/// Settings stored in a finished run directory.
pub fn settings_of_run(run_dir: &Path) -> Result<(&'static dyn Experiment, Settings)> {
    let m = Manifest::read(run_dir)?;
    let sources = Sources {
        file: parse_ini(&m.config, &format!("{} [config]", run_dir.join(MANIFEST_FILE).display()))?,
        ..Sources::default()
    };
    let (exp, settings) = resolve(&sources)?;
    if settings.hash() != m.config_hash {
        return Err(CliError::Failed(format!(
            "{}: embedded config does not match its hash",
            run_dir.join(MANIFEST_FILE).display()
        )));
    }
    Ok((exp, settings))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Failed(format!("thread pool: {e}")))
}

/// Refuses to mix artifacts into a directory that holds something else.
fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let occupied = std::fs::read_dir(dir)
            .map_err(crate::error::io_err(format!("listing {}", dir.display())))?
            .next()
            .is_some();
        if occupied && !dir.join(MANIFEST_FILE).exists() {
            return Err(CliError::Failed(format!(
                "{} is not empty and holds no {MANIFEST_FILE}",
                dir.display()
            )));
        }
    }
    create_dir(dir)
}

/// Runs `f` for every seed in parallel, each in its own `seed_<s>` dir,
/// and returns the results in seed order.
fn per_seed<T, F>(dir: &Path, seeds: &[u64], threads: usize, f: F) -> Result<Vec<(u64, T)>>
where
    T: Send,
    F: Fn(u64, &Path) -> Result<T> + Sync,
{
    let results: Vec<(u64, Result<T>)> = pool(threads)?.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let d = seed_dir(dir, seed);
                (seed, create_dir(&d).and_then(|_| f(seed, &d)))
            })
            .collect()
    });
    results
        .into_iter()
        .map(|(seed, r)| r.map(|v| (seed, v)).map_err(|e| CliError::Failed(format!("seed {seed}: {e}"))))
        .collect()
}

fn finish(manifest: &mut Manifest, dir: &Path, outcome: Result<()>) -> Result<()> {
    manifest.status = match &outcome {
        Ok(()) => Status::Complete,
        Err(e) => Status::Failed(e.to_string()),
    };
    manifest.record_files(dir)?;
    manifest.write(dir)?;
    outcome
}

/// Writes each seed's dataset below `run.out_dir`.
pub fn generate(exp: &dyn Experiment, settings: &Settings, threads: usize) -> Result<PathBuf> {
    let dir = settings.out_dir().to_path_buf();
    prepare_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &settings.to_ini())?;
    let mut manifest = Manifest::new(settings)?;
    manifest.write(&dir)?;
    let seeds = settings.seeds()?;
    let outcome = per_seed(&dir, &seeds, threads, |seed, d| exp.generate(settings, seed, d)).map(|_| ());
    finish(&mut manifest, &dir, outcome)?;
    Ok(dir)
}

/// Trains every seed and writes `summary.csv`.
pub fn train(exp: &dyn Experiment, settings: &Settings, threads: usize) -> Result<PathBuf> {
    let dir = settings.out_dir().to_path_buf();
    prepare_dir(&dir)?;
    write_text(&dir.join(CONFIG_FILE), &settings.to_ini())?;
    let mut manifest = Manifest::new(settings)?;
    manifest.write(&dir)?;
    let seeds = settings.seeds()?;
    let outcome = per_seed(&dir, &seeds, threads, |seed, d| exp.run_seed(settings, seed, d)).and_then(|per| {
        let rows: Vec<(u64, SummaryRow)> = per
            .into_iter()
            .flat_map(|(seed, rows)| rows.into_iter().map(move |r| (seed, r)))
            .collect();
        write_summary(&dir.join(SUMMARY_FILE), &rows)
    });
    finish(&mut manifest, &dir, outcome)?;
    Ok(dir)
}

/// Re-evaluates the checkpoints of a finished run into `eval_summary.csv`.
pub fn evaluate(run_dir: &Path, threads: usize) -> Result<PathBuf> {
    let (exp, settings) = settings_of_run(run_dir)?;
    let mut manifest = Manifest::read(run_dir)?;
    let seeds = settings.seeds()?;
    let outcome = per_seed(run_dir, &seeds, threads, |seed, d| exp.evaluate(&settings, seed, d)).and_then(|per| {
        let rows: Vec<(u64, SummaryRow)> = per
            .into_iter()
            .flat_map(|(seed, rows)| rows.into_iter().map(move |r| (seed, r)))
            .collect();
        write_summary(&run_dir.join(EVAL_SUMMARY_FILE), &rows)
    });
    finish(&mut manifest, run_dir, outcome)?;
    Ok(run_dir.join(EVAL_SUMMARY_FILE))
}

pub fn plot(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let (exp, settings) = settings_of_run(run_dir)?;
    let files = exp.plot(&settings, run_dir)?;
    let mut manifest = Manifest::read(run_dir)?;
    manifest.record_files(run_dir)?;
    manifest.write(run_dir)?;
    Ok(files)
}

/// Preset for `name`, then environment, then the given seed and output
/// directory.
pub fn reproduce_settings(name: &str, seed: Option<u64>, out: Option<&Path>) -> Result<(&'static dyn Experiment, Settings)> {
    let exp = ExperimentRegistry::global().get(name)?;
    let sources = Sources {
        file: exp
            .preset()
            .iter()
            .map(|(k, v)| RawEntry {
                key: k.to_string(),
                value: v.to_string(),
                line: 0,
            })
            .collect(),
        ..Sources::default()
    };
    let mut sources = sources.with_env().set("run.experiment", name);
    if !sources.env.iter().any(|(var, _, _)| *var == "GDE_OUT_DIR") {
        sources = sources.set("run.out_dir", format!("runs/{name}"));
    }
    if let Some(seed) = seed {
        sources = sources.set("run.seeds", seed.to_string());
    }
    if let Some(out) = out {
        sources = sources.set("run.out_dir", out.display().to_string());
    }
    let settings = Settings::resolve(&exp.schema(), &sources)?;
    Ok((exp, settings))
}

/// Trains with the preset and renders the plots.
pub fn reproduce(name: &str, seed: Option<u64>, out: Option<&Path>, threads: usize) -> Result<PathBuf> {
    let (exp, settings) = reproduce_settings(name, seed, out)?;
    let dir = train(exp, &settings, threads)?;
    plot(&dir)?;
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_doubles_as_config() {
        let dir = tempfile::tempdir().unwrap();
        let src = Sources::default()
            .set("run.experiment", "oversmoothing")
            .set("train.epochs", "7");
        let (_, s) = resolve(&src).unwrap();
        let mut m = Manifest::new(&s).unwrap();
        m.status = Status::Complete;
        m.write(dir.path()).unwrap();
        let (exp, back) = settings_of_run(dir.path()).unwrap();
        assert_eq!(exp.name(), "oversmoothing");
        assert_eq!(back.usize("train.epochs").unwrap(), 7);
        let (_, again) = resolve(&load_sources(&dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
        assert_eq!(again.hash(), s.hash());
    }

    #[test]
    fn unknown_key_in_file_names_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ini");
        write_text(&p, "[run]\nexperiment = particles\n\n[model]\nhiden = 3\n").unwrap();
        let err = resolve(&load_sources(&p).unwrap()).err().unwrap().to_string();
        assert_eq!(err, "unknown config key `model.hiden` (line 5)");
    }

    #[test]
    fn small_oversmoothing_run_completes_and_is_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let src = Sources::default()
            .set("run.experiment", "oversmoothing")
            .set("run.seeds", "3, 1")
            .set("run.out_dir", out.display().to_string())
            .set("data.n", "20")
            .set("train.epochs", "3");
        let (exp, s) = resolve(&src).unwrap();
        train(exp, &s, 2).unwrap();
        let m = Manifest::read(&out).unwrap();
        assert_eq!(m.status, Status::Complete);
        assert_eq!(m.seeds, vec![3, 1]);
        assert!(m.files.iter().any(|(p, _)| p == "seed_1/metrics_S10.csv"));
        let summary = std::fs::read_to_string(out.join(SUMMARY_FILE)).unwrap();
        let seeds: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
        assert_eq!(seeds, vec!["3", "3", "1", "1"]);
        assert_eq!(plot(&out).unwrap().len(), 1);
        assert!(Manifest::read(&out).unwrap().verify(&out).unwrap().is_empty());
    }

    #[test]
    fn failed_run_leaves_failed_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        let src = Sources::default()
            .set("run.experiment", "oversmoothing")
            .set("run.out_dir", out.display().to_string())
            .set("data.n", "20")
            .set("train.schedule", "constant:-1");
        let (exp, s) = resolve(&src).unwrap();
        assert!(train(exp, &s, 1).is_err());
        match Manifest::read(&out).unwrap().status {
            Status::Failed(e) => assert!(e.starts_with("seed 0:"), "{e}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn occupied_foreign_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("notes.txt"), "keep").unwrap();
        assert!(prepare_dir(dir.path()).is_err());
    }
}
