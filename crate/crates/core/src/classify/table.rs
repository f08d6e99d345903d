use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::CellResult;
use crate::checkpoint;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    pub seed: u64,
    pub epochs: usize,
}

/// Test accuracy (percent) per architecture row and condition column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTable {
    pub archs: Vec<String>,
    pub conditions: Vec<String>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<f64>>,
    pub meta: TableMeta,
}

const META_PREFIX: &str = "# ";

impl AccuracyTable {
    /// Collects cells keyed by (arch, condition); rows and columns keep
    /// first-seen order. Every pair must appear exactly once.
    pub fn from_results(results: &[CellResult], meta: TableMeta) -> Result<Self> {
        let mut archs: Vec<String> = Vec::new();
        let mut conditions: Vec<String> = Vec::new();
        for r in results {
            if !archs.contains(&r.arch) {
                archs.push(r.arch.clone());
            }
            if !conditions.contains(&r.condition) {
                conditions.push(r.condition.clone());
            }
        }
        let mut cells = vec![vec![f64::NAN; conditions.len()]; archs.len()];
        for r in results {
            let i = archs.iter().position(|a| *a == r.arch).expect("collected");
            let j = conditions.iter().position(|c| *c == r.condition).expect("collected");
            if !cells[i][j].is_nan() {
                return Err(Error::Contract(format!("duplicate cell ({}, {})", r.arch, r.condition)));
            }
            cells[i][j] = r.test_accuracy;
        }
        let t = Self {
            archs,
            conditions,
            cells,
            meta,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cells.len() != self.archs.len() {
            return Err(Error::Contract(format!(
                "{} rows for {} archs",
                self.cells.len(),
                self.archs.len()
            )));
        }
        for (a, row) in self.archs.iter().zip(&self.cells) {
            if row.len() != self.conditions.len() {
                return Err(Error::Contract(format!(
                    "row {a} has {} of {} cells",
                    row.len(),
                    self.conditions.len()
                )));
            }
            for (c, v) in self.conditions.iter().zip(row) {
                if !(0.0..=100.0).contains(v) {
                    return Err(Error::Contract(format!(
                        "cell ({a}, {c}) = {v} is missing or outside [0, 100]"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, arch: &str, condition: &str) -> Option<f64> {
        let i = self.archs.iter().position(|a| a == arch)?;
        let j = self.conditions.iter().position(|c| c == condition)?;
        Some(self.cells[i][j])
    }

    /// A `# seed=.. epochs=..` line followed by CSV with header
    /// `arch,<conditions>` and one row per arch.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Config(format!("accuracy csv: {e}"));
        w.write_record(std::iter::once("arch").chain(self.conditions.iter().map(String::as_str)))
            .map_err(csv_err)?;
        for (a, row) in self.archs.iter().zip(&self.cells) {
            w.write_record(std::iter::once(a.clone()).chain(row.iter().map(f64::to_string)))
                .map_err(csv_err)?;
        }
        let body = w
            .into_inner()
            .map_err(|e| Error::Config(format!("accuracy csv: {e}")))?;
        Ok(format!(
            "{META_PREFIX}seed={} epochs={}\n{}",
            self.meta.seed,
            self.meta.epochs,
            String::from_utf8(body).expect("csv output is utf-8")
        ))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("accuracy csv: {m}"));
        let (meta_line, body) = text.split_once('\n').ok_or_else(|| bad("missing header".into()))?;
        let meta_body = meta_line
            .strip_prefix(META_PREFIX)
            .ok_or_else(|| bad(format!("expected a metadata line, got `{meta_line}`")))?;
        let (mut seed, mut epochs) = (None, None);
        for kv in meta_body.split_whitespace() {
            match kv.split_once('=') {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("epochs", v)) => epochs = v.parse().ok(),
                _ => return Err(bad(format!("unknown metadata `{kv}`"))),
            }
        }
        let meta = TableMeta {
            seed: seed.ok_or_else(|| bad("missing seed".into()))?,
            epochs: epochs.ok_or_else(|| bad("missing epochs".into()))?,
        };
        let mut r = csv::Reader::from_reader(body.as_bytes());
        let header = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if header.get(0) != Some("arch") {
            return Err(bad("header must start with `arch`".into()));
        }
        let conditions: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let (mut archs, mut cells) = (Vec::new(), Vec::new());
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            archs.push(rec[0].to_string());
            cells.push(
                rec.iter()
                    .skip(1)
                    .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad number `{v}`"))))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let t = Self {
            archs,
            conditions,
            cells,
            meta,
        };
        t.validate()?;
        Ok(t)
    }

    /// Fixed-width text rendering with two decimals.
    pub fn to_text(&self) -> String {
        let w0 = self.archs.iter().map(String::len).chain([12]).max().unwrap_or(12);
        let widths: Vec<usize> = self.conditions.iter().map(|c| c.len().max(7)).collect();
        let mut s = format!("{:<w0$}", "Classifier");
        for (c, w) in self.conditions.iter().zip(&widths) {
            let _ = write!(s, "  {c:>w$}");
        }
        s.push('\n');
        s.push_str(&"-".repeat(w0 + widths.iter().map(|w| w + 2).sum::<usize>()));
        s.push('\n');
        for (a, row) in self.archs.iter().zip(&self.cells) {
            let _ = write!(s, "{a:<w0$}");
            for (v, w) in row.iter().zip(&widths) {
                let _ = write!(s, "  {v:>w$.2}");
            }
            s.push('\n');
        }
        let _ = writeln!(
            s,
            "test accuracy (%), seed {}, {} epochs",
            self.meta.seed, self.meta.epochs
        );
        s
    }
}

/// JSON companion of an accuracy table with per-run details.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationReport {
    pub table: AccuracyTable,
    pub config_digest: String,
    pub split_seed: u64,
    /// Synthetic set kind -> manifest digest.
    pub sources: std::collections::BTreeMap<String, String>,
    pub runs: Vec<CellResult>,
}

impl AblationReport {
    /// Checks that every cell equals the accuracy recomputed from its stored predictions.
    pub fn verify(&self) -> Result<()> {
        self.table.validate()?;
        for r in &self.runs {
            let recomputed = super::train::accuracy(&r.predictions);
            let cell = self.table.get(&r.arch, &r.condition);
            if cell != Some(recomputed) || r.test_accuracy != recomputed {
                return Err(Error::Contract(format!(
                    "cell ({}, {}) = {cell:?} but its predictions give {recomputed}",
                    r.arch, r.condition
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path, overwrite: bool) -> Result<()> {
        checkpoint::check_writable(path, overwrite)?;
        checkpoint::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        checkpoint::read_json(path)
    }
}
