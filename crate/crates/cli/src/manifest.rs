//! Run manifest.
//!
//! ```text
//! gde-manifest 1
//! experiment particles
//! status complete
//! config_hash <sha256 of the canonical config>
//! seeds 0 1 2
//! file seed_0/metrics_gcde.csv <sha256>
//! ...
//! [config]
//! <resolved config, INI>
//! ```
//! A failed run has `status failed` followed by an `error` line. The
//! embedded config is enough to rerun `train` and regenerate every file.

use std::path::Path;

use crate::artifacts::{list_files, read_text, sha256_file, write_text};
use crate::config::Settings;
use crate::error::{CliError, Result};

const MAGIC: &str = "gde-manifest 1";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Running,
    Complete,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub experiment: String,
    pub status: Status,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub files: Vec<(String, String)>,
    pub config: String,
}

impl Manifest {
    pub fn new(settings: &Settings) -> Result<Self> {
        Ok(Self {
            experiment: settings.experiment().to_string(),
            status: Status::Running,
            config_hash: settings.hash(),
            seeds: settings.seeds()?,
            files: Vec::new(),
            config: settings.to_ini(),
        })
    }

    pub fn render(&self) -> String {
        let mut s = format!("{MAGIC}\nexperiment {}\n", self.experiment);
        match &self.status {
            Status::Running => s.push_str("status running\n"),
            Status::Complete => s.push_str("status complete\n"),
            Status::Failed(e) => {
                s.push_str("status failed\n");
                s.push_str(&format!("error {}\n", e.replace('\n', " ")));
            }
        }
        s.push_str(&format!("config_hash {}\n", self.config_hash));
        let seeds: Vec<String> = self.seeds.iter().map(u64::to_string).collect();
        s.push_str(&format!("seeds {}\n", seeds.join(" ")));
        for (path, hash) in &self.files {
            s.push_str(&format!("file {path} {hash}\n"));
        }
        s.push_str("[config]\n");
        s.push_str(&self.config);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| CliError::Syntax {
            path: MANIFEST_FILE.into(),
            line,
            msg: msg.into(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, MAGIC)) => {}
            _ => return Err(bad(1, "not a run manifest")),
        }
        let mut m = Manifest {
            experiment: String::new(),
            status: Status::Running,
            config_hash: String::new(),
            seeds: Vec::new(),
            files: Vec::new(),
            config: String::new(),
        };
        for (i, line) in lines.by_ref() {
            if line == "[config]" {
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| bad(i + 1, "expected `key value`"))?;
            match k {
                "experiment" => m.experiment = v.to_string(),
                "status" => {
                    m.status = match v {
                        "running" => Status::Running,
                        "complete" => Status::Complete,
                        "failed" => Status::Failed(String::new()),
                        _ => return Err(bad(i + 1, "unknown status")),
                    }
                }
                "error" => m.status = Status::Failed(v.to_string()),
                "config_hash" => m.config_hash = v.to_string(),
                "seeds" => {
                    m.seeds = v
                        .split_whitespace()
                        .map(|s| s.parse().map_err(|_| bad(i + 1, "bad seed")))
                        .collect::<Result<_>>()?
                }
                "file" => {
                    let (p, h) = v.rsplit_once(' ').ok_or_else(|| bad(i + 1, "expected `file <path> <sha256>`"))?;
                    m.files.push((p.to_string(), h.to_string()));
                }
                _ => return Err(bad(i + 1, "unknown manifest key")),
            }
        }
        for (_, line) in lines {
            m.config.push_str(line);
            m.config.push('\n');
        }
        Ok(m)
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::parse(&read_text(&dir.join(MANIFEST_FILE))?)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(MANIFEST_FILE), &self.render())
    }

    /// Records the hash of every file in `dir` except the manifest.
    pub fn record_files(&mut self, dir: &Path) -> Result<()> {
        self.files = list_files(dir)?
            .into_iter()
            .filter(|p| p != MANIFEST_FILE)
            .map(|p| {
                let h = sha256_file(&dir.join(&p))?;
                Ok((p, h))
            })
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Files whose current content differs from the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<Vec<String>> {
        let mut changed = Vec::new();
        for (p, h) in &self.files {
            let path = dir.join(p);
            if !path.exists() || &sha256_file(&path)? != h {
                changed.push(p.clone());
            }
        }
        Ok(changed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Manifest {
        Manifest {
            experiment: "particles".into(),
            status: Status::Failed("seed 2: diverged".into()),
            config_hash: "ab".repeat(32),
            seeds: vec![0, 2],
            files: vec![("seed_0/a b.csv".into(), "cd".repeat(32))],
            config: "[run]\nexperiment = particles\n".into(),
        }
    }

    #[test]
    fn render_parse_round_trip() {
        let m = sample();
        assert_eq!(Manifest::parse(&m.render()).unwrap(), m);
    }

    #[test]
    fn verify_reports_edits() {
        let dir = tempfile::tempdir().unwrap();
        write_text(&dir.path().join("x.csv"), "1\n").unwrap();
        let mut m = sample();
        m.record_files(dir.path()).unwrap();
        m.write(dir.path()).unwrap();
        assert_eq!(m.files.len(), 1);
        assert!(m.verify(dir.path()).unwrap().is_empty());
        write_text(&dir.path().join("x.csv"), "2\n").unwrap();
        assert_eq!(m.verify(dir.path()).unwrap(), vec!["x.csv"]);
    }
}
