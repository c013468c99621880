//! CSV tables, metrics logs and checkpoints on disk.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read};
use std::path::{Path, PathBuf};

use gde_core::layers::ParamStore;
use gde_core::models::{read_checkpoint, write_checkpoint, Checkpoint};
use gde_core::training::EpochRecord;
use sha2::{Digest, Sha256};

use crate::error::{io_err, CliError, Result};

/// Header of every metrics log.
pub const METRICS_HEADER: [&str; 7] = ["epoch", "split", "loss", "mape", "rmse", "lr", "seconds"];

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub metric: String,
    pub value: f64,
}

impl SummaryRow {
    pub fn new(model: impl Into<String>, metric: impl Into<String>, value: f64) -> Self {
        Self {
            model: model.into(),
            metric: metric.into(),
            value,
        }
    }
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(format!("creating {}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(format!("writing {}", path.display())))
}

pub fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))
}

/// Writes a header and string rows.
pub fn write_table<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>()).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(format!("writing {}", path.display())))
}

/// Rows of a CSV file keyed by its header.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CliError::MissingFile(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = r.headers().map_err(csv_err(path))?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(csv_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn index(&self, col: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == col)
            .ok_or_else(|| CliError::Failed(format!("{}: no column `{col}`", self.path.display())))
    }

    pub fn strings(&self, col: &str) -> Result<Vec<&str>> {
        let i = self.index(col)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn floats(&self, col: &str) -> Result<Vec<f64>> {
        let i = self.index(col)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(k, r)| {
                r[i].parse::<f64>().map_err(|e| {
                    CliError::Failed(format!("{} row {}: column `{col}`: {e}", self.path.display(), k + 2))
                })
            })
            .collect()
    }

    /// Rows where `col` equals `value`.
    pub fn filter(&self, col: &str, value: &str) -> Result<Table> {
        let i = self.index(col)?;
        Ok(Table {
            path: self.path.clone(),
            header: self.header.clone(),
            rows: self.rows.iter().filter(|r| r[i] == value).cloned().collect(),
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Wall-clock time is left out so logs of identical runs are identical.
pub fn write_metrics(path: &Path, records: &[EpochRecord]) -> Result<()> {
    write_table(
        path,
        &METRICS_HEADER,
        records.iter().map(|r| {
            [
                r.epoch.to_string(),
                r.split.clone(),
                r.loss.to_string(),
                opt(r.mape),
                opt(r.rmse),
                r.lr.to_string(),
                "NA".to_string(),
            ]
        }),
    )
}

pub fn write_summary(path: &Path, rows: &[(u64, SummaryRow)]) -> Result<()> {
    write_table(
        path,
        &["seed", "model", "metric", "value"],
        rows.iter()
            .map(|(s, r)| [s.to_string(), r.model.clone(), r.metric.clone(), r.value.to_string()]),
    )
}

pub fn save_checkpoint(path: &Path, descriptor: &str, seed: u64, params: &ParamStore) -> Result<()> {
    let file = File::create(path).map_err(io_err(format!("creating {}", path.display())))?;
    let ckpt = Checkpoint {
        descriptor: descriptor.to_string(),
        seeds: vec![seed],
        params: params.clone(),
    };
    write_checkpoint(BufWriter::new(file), &ckpt)?;
    Ok(())
}

/// Loads a checkpoint and checks it was written for `descriptor`.
pub fn load_checkpoint(path: &Path, descriptor: &str) -> Result<ParamStore> {
    if !path.exists() {
        return Err(CliError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let ckpt = read_checkpoint(BufReader::new(file))?;
    if ckpt.descriptor != descriptor {
        return Err(CliError::Failed(format!(
            "{}: checkpoint is for `{}`, expected `{descriptor}`",
            path.display(),
            ckpt.descriptor
        )));
    }
    Ok(ckpt.params)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(io_err(format!("opening {}", path.display())))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(io_err(format!("reading {}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Every file below `root`, as sorted `/`-separated relative paths.
pub fn list_files(root: &Path) -> Result<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
        let entries = std::fs::read_dir(dir).map_err(io_err(format!("listing {}", dir.display())))?;
        for e in entries {
            let e = e.map_err(io_err(format!("listing {}", dir.display())))?;
            let p = e.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else {
                let rel = p.strip_prefix(root).expect("walk stays below root");
                let parts: Vec<String> = rel.components().map(|c| c.as_os_str().to_string_lossy().into_owned()).collect();
                out.push(parts.join("/"));
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    walk(root, root, &mut out)?;
    out.sort();
    Ok(out)
}

pub fn seed_dir(run_dir: &Path, seed: u64) -> PathBuf {
    run_dir.join(format!("seed_{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_log_has_fixed_header_and_na_cells() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let recs = vec![
            EpochRecord::train(1, 0.5, 0.01),
            EpochRecord::train(1, 0.25, 0.01).with_split("test").with_metrics(12.5, 0.3),
        ];
        write_metrics(&p, &recs).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "epoch,split,loss,mape,rmse,lr,seconds\n1,train,0.5,NA,NA,0.01,NA\n1,test,0.25,12.5,0.3,0.01,NA\n"
        );
        let t = Table::read(&p).unwrap();
        assert_eq!(t.filter("split", "test").unwrap().floats("mape").unwrap(), vec![12.5]);
    }

    #[test]
    fn missing_table_is_named() {
        let err = Table::read(Path::new("/nonexistent/x.csv")).unwrap_err();
        assert_eq!(err.to_string(), "missing file /nonexistent/x.csv");
    }

    #[test]
    fn listing_is_sorted_and_relative() {
        let dir = tempfile::tempdir().unwrap();
        create_dir(&dir.path().join("b")).unwrap();
        write_text(&dir.path().join("b/z.txt"), "z").unwrap();
        write_text(&dir.path().join("a.txt"), "a").unwrap();
        assert_eq!(list_files(dir.path()).unwrap(), vec!["a.txt", "b/z.txt"]);
        assert_eq!(
            sha256_file(&dir.path().join("a.txt")).unwrap(),
            "ca978112ca1bbdcafac231b39a23dc4da786eff8147c4e72b9807785afee48bb"
        );
    }
}
