//! Sectioned `key = value` configuration.
//!
//! ```text
//! # comment
//! [run]
//! experiment = particles
//! seeds = 0, 1, 2
//!
//! [train]
//! epochs = 200
//! ```
//!
//! Every key is addressed as `section.key` and must be declared by the
//! common schema or by the selected experiment. Values resolve in order:
//! schema default, file, environment (`GDE_OUT_DIR`, `GDE_SEED`), `--set`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use gde_core::training::ScheduleSpec;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

/// A declared key with its default value.
#[derive(Debug, Clone, Copy)]
pub struct KeyDef {
    pub key: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

pub const fn key(key: &'static str, default: &'static str, help: &'static str) -> KeyDef {
    KeyDef { key, default, help }
}

/// Keys every experiment accepts.
pub const COMMON_KEYS: &[KeyDef] = &[
    key("run.experiment", "", "experiment name"),
    key("run.seeds", "0", "comma-separated seed list"),
    key("run.out_dir", "runs", "output directory"),
];

/// Keys that do not influence results and are left out of the config hash.
const UNHASHED: &[&str] = &["run.out_dir"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    Default,
    File { line: usize },
    Env(&'static str),
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::Default => write!(f, "default"),
            Origin::File { line } => write!(f, "line {line}"),
            Origin::Env(var) => write!(f, "env {var}"),
            Origin::Flag => write!(f, "--set"),
        }
    }
}

/// One `section.key = value` line of a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parses the INI text; `path` only labels errors.
pub fn parse_ini(text: &str, path: &str) -> Result<Vec<RawEntry>> {
    let syntax = |line: usize, msg: String| CliError::Syntax {
        path: path.to_string(),
        line,
        msg,
    };
    let mut section: Option<String> = None;
    let mut out: Vec<RawEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| syntax(line, format!("unterminated section header `{s}`")))?
                .trim();
            if name.is_empty() || name.contains(char::is_whitespace) {
                return Err(syntax(line, format!("bad section name `{name}`")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| syntax(line, format!("expected `key = value`, got `{s}`")))?;
        let sec = section
            .as_deref()
            .ok_or_else(|| syntax(line, "key outside any [section]".to_string()))?;
        let full = format!("{sec}.{}", k.trim());
        if let Some(prev) = out.iter().find(|e| e.key == full) {
            return Err(syntax(line, format!("`{full}` already set on line {}", prev.line)));
        }
        out.push(RawEntry {
            key: full,
            value: v.trim().to_string(),
            line,
        });
    }
    Ok(out)
}

/// Splits `section.key=value` as given to `--set`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| CliError::BadValue {
        key: s.to_string(),
        origin: Origin::Flag.to_string(),
        msg: "expected section.key=value".into(),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Fully resolved configuration for one experiment.
#[derive(Debug, Clone)]
pub struct Settings {
    entries: BTreeMap<String, (String, Origin)>,
}

/// Inputs to [`Settings::resolve`] besides the schema.
#[derive(Debug, Clone, Default)]
pub struct Sources {
    pub file: Vec<RawEntry>,
    pub env: Vec<(&'static str, String, String)>,
    pub overrides: Vec<(String, String)>,
}

impl Sources {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        Ok(Self {
            file: parse_ini(&text, &path.display().to_string())?,
            ..Self::default()
        })
    }

    /// Picks up `GDE_OUT_DIR` and `GDE_SEED`.
    pub fn with_env(mut self) -> Self {
        if let Ok(v) = std::env::var("GDE_OUT_DIR") {
            self.env.push(("GDE_OUT_DIR", "run.out_dir".into(), v));
        }
        if let Ok(v) = std::env::var("GDE_SEED") {
            self.env.push(("GDE_SEED", "run.seeds".into(), v));
        }
        self
    }

    pub fn set(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.overrides.push((key.into(), value.into()));
        self
    }

    /// Experiment name as it will resolve, if given anywhere.
    pub fn experiment(&self) -> Option<String> {
        let k = "run.experiment";
        self.overrides
            .iter()
            .rev()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .or_else(|| self.file.iter().find(|e| e.key == k).map(|e| e.value.clone()))
    }
}

impl Settings {
    /// Layers `sources` over the defaults of `schema`; any key outside the
    /// schema is an error naming where it came from.
    pub fn resolve(schema: &[KeyDef], sources: &Sources) -> Result<Self> {
        let mut entries: BTreeMap<String, (String, Origin)> = schema
            .iter()
            .map(|d| (d.key.to_string(), (d.default.to_string(), Origin::Default)))
            .collect();
        let mut put = |key: &str, value: &str, origin: Origin| -> Result<()> {
            match entries.get_mut(key) {
                Some(slot) => {
                    *slot = (value.to_string(), origin);
                    Ok(())
                }
                None => Err(CliError::UnknownKey {
                    key: key.to_string(),
                    origin: origin.to_string(),
                }),
            }
        };
        for e in &sources.file {
            put(&e.key, &e.value, Origin::File { line: e.line })?;
        }
        for (var, key, value) in &sources.env {
            put(key, value, Origin::Env(var))?;
        }
        for (key, value) in &sources.overrides {
            put(key, value, Origin::Flag)?;
        }
        let s = Self { entries };
        if s.str("run.experiment")?.is_empty() {
            return Err(s.bad("run.experiment", "must be set"));
        }
        s.seeds()?;
        Ok(s)
    }

    fn bad(&self, key: &str, msg: impl Into<String>) -> CliError {
        CliError::BadValue {
            key: key.to_string(),
            origin: self.entries.get(key).map_or("unknown".into(), |(_, o)| o.to_string()),
            msg: msg.into(),
        }
    }

    pub fn str(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(|(v, _)| v.as_str())
            .ok_or_else(|| CliError::UnknownKey {
                key: key.to_string(),
                origin: "lookup".into(),
            })
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.str(key)?;
        raw.parse::<T>().map_err(|e| self.bad(key, format!("cannot parse `{raw}`: {e}")))
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        let v: f64 = self.parse(key)?;
        if !v.is_finite() {
            return Err(self.bad(key, "must be finite"));
        }
        Ok(v)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn bool(&self, key: &str) -> Result<bool> {
        self.parse(key)
    }

    /// Comma-separated list, empty items dropped.
    pub fn list(&self, key: &str) -> Result<Vec<String>> {
        Ok(self
            .str(key)?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>> {
        self.list(key)?
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| self.bad(key, format!("`{s}`: {e}"))))
            .collect()
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds: Vec<u64> = self
            .list("run.seeds")?
            .iter()
            .map(|s| s.parse::<u64>().map_err(|e| self.bad("run.seeds", format!("`{s}`: {e}"))))
            .collect::<Result<_>>()?;
        if seeds.is_empty() {
            return Err(self.bad("run.seeds", "seed list is empty"));
        }
        Ok(seeds)
    }

    pub fn schedule(&self, key: &str) -> Result<ScheduleSpec> {
        self.parse(key)
    }

    pub fn experiment(&self) -> &str {
        self.str("run.experiment").unwrap_or_default()
    }

    pub fn out_dir(&self) -> &Path {
        Path::new(self.str("run.out_dir").unwrap_or("runs"))
    }

    /// INI text with every resolved key, sorted; loading it back gives the
    /// same settings.
    pub fn to_ini(&self) -> String {
        self.render(|_| true)
    }

    fn render(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut out = String::new();
        let mut current = "";
        for (k, (v, _)) in &self.entries {
            if !keep(k) {
                continue;
            }
            let (sec, name) = k.split_once('.').expect("keys are section.key");
            if sec != current {
                if !out.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{sec}]\n"));
                current = sec;
            }
            out.push_str(&format!("{name} = {v}\n"));
        }
        out
    }

    /// SHA-256 of the canonical text of every result-affecting key.
    pub fn hash(&self) -> String {
        let text = self.render(|k| !UNHASHED.contains(&k));
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}
