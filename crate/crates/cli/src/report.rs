//! Experiment reports: a JSON document plus a CSV table per run.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, ExperimentKind};

pub const TOOL: &str = "gibbslab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }
}

/// Shortest round-trip decimal, so reports are stable across runs.
pub fn num(x: f64) -> String {
    format!("{x}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub tool: String,
    pub version: String,
    pub kind: ExperimentKind,
    pub name: String,
    /// Seconds since the Unix epoch; the only field that differs between reruns.
    pub created_unix: u64,
    pub config: ExperimentConfig,
    pub config_text: String,
    /// None when the experiment has no pass criterion.
    pub pass: Option<bool>,
    pub summary: BTreeMap<String, Value>,
    pub table: Table,
}

impl Report {
    pub fn new(config: &ExperimentConfig, config_text: &str, name: &str) -> Self {
        let created_unix =
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            kind: config.kind,
            name: name.into(),
            created_unix,
            config: config.clone(),
            config_text: config_text.into(),
            pass: None,
            summary: BTreeMap::new(),
            table: Table::default(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.summary.insert(key.into(), v);
    }

    /// Write `<dir>/<name>.json` and `<dir>/<name>.csv`.
    pub fn write(&self, dir: &Path) -> std::io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let json = dir.join(format!("{}.json", self.name));
        let csv_path = dir.join(format!("{}.csv", self.name));
        let mut text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        text.push('\n');
        fs::write(&json, text)?;
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(&self.table.columns)?;
        for r in &self.table.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok((json, csv_path))
    }

    pub fn read(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| e.to_string())?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// One line per report found in `dir`, sorted by file name.
pub fn collect(dir: &Path) -> Result<Vec<(PathBuf, Report)>, String> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| format!("{}: {e}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        // other JSON files may share the directory
        if let Ok(r) = Report::read(&p) {
            if r.tool == TOOL {
                out.push((p, r));
            }
        }
    }
    Ok(out)
}

pub fn summary_table(reports: &[(PathBuf, Report)]) -> Table {
    let mut t = Table::new(&["name", "kind", "version", "pass", "seed"]);
    for (_, r) in reports {
        let pass = match r.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "-",
        };
        let kind = serde_json::to_value(r.kind).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        t.push(vec![r.name.clone(), kind, r.version.clone(), pass.into(), r.config.seed.to_string()]);
    }
    t
}
