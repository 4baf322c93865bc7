//! Tables, summaries and snapshots collected by an experiment, and their files.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use beris_core::diag::fmt_f64;
use beris_core::snapshot;
use beris_core::spectral::Field;
use beris_core::Params;
use serde_json::Value;

/// One CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: String,
    pub rows: Vec<String>,
}

impl Table {
    pub fn new(file: &str, header: &str) -> Table {
        Table {
            file: file.to_string(),
            header: header.to_string(),
            rows: Vec::new(),
        }
    }

    /// Captures the output of a CSV writer that emits a header line first.
    pub fn capture<F>(file: &str, write: F) -> Table
    where
        F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf).expect("writing to memory");
        let text = String::from_utf8(buf).expect("CSV is UTF-8");
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default().to_string();
        Table {
            file: file.to_string(),
            header,
            rows: lines.map(str::to_string).collect(),
        }
    }

    pub fn push(&mut self, row: String) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(64 * (self.rows.len() + 1));
        s.push_str(&self.header);
        s.push('\n');
        for r in &self.rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }
}

pub fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Quotes a free-text CSV cell.
pub fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

pub struct Snapshot {
    pub name: String,
    pub field: Field,
    pub time: f64,
}

/// Everything an experiment produces. The first table is `diagnostics.csv`.
#[derive(Default)]
pub struct Artifacts {
    pub tables: Vec<Table>,
    pub summary: BTreeMap<String, Value>,
    pub snapshots: Vec<Snapshot>,
    /// Summary key that sweeps aggregate.
    pub headline: Option<&'static str>,
}

impl Artifacts {
    pub fn diagnostics(&mut self) -> &mut Table {
        &mut self.tables[0]
    }

    pub fn set(&mut self, key: &str, v: impl Into<Value>) {
        self.summary.insert(key.to_string(), v.into());
    }

    /// Stores a float, mapping non-finite values to `null`.
    pub fn set_f64(&mut self, key: &str, v: f64) {
        self.set(
            key,
            serde_json::Number::from_f64(v)
                .map(Value::Number)
                .unwrap_or(Value::Null),
        );
    }

    pub fn set_opt(&mut self, key: &str, v: Option<f64>) {
        match v {
            Some(x) => self.set_f64(key, x),
            None => self.set(key, Value::Null),
        }
    }

    pub fn snapshot(&mut self, name: String, field: &Field, time: f64) {
        self.snapshots.push(Snapshot {
            name,
            field: field.clone(),
            time,
        });
    }

    pub fn headline_value(&self) -> Option<f64> {
        self.summary.get(self.headline?)?.as_f64()
    }

    /// Writes tables and snapshots; returns the relative paths written.
    pub fn write(&self, dir: &Path, params: &Params) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for t in &self.tables {
            let rel = PathBuf::from(&t.file);
            fs::File::create(dir.join(&rel))?.write_all(t.to_csv().as_bytes())?;
            written.push(rel);
        }
        if !self.snapshots.is_empty() {
            fs::create_dir_all(dir.join("snapshots"))?;
        }
        for s in &self.snapshots {
            let rel = Path::new("snapshots").join(format!("{}.bin", s.name));
            snapshot::save(&dir.join(&rel), &s.field, s.time, Some(params)).map_err(
                |e| match e {
                    beris_core::Error::Io(io) => io,
                    other => std::io::Error::other(other.to_string()),
                },
            )?;
            written.push(rel);
        }
        Ok(written)
    }
}
