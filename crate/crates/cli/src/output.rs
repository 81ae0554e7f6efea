//! CSV export and the JSON run manifest.

use mfg_core::grid::{GridField, TimeGrid};
use mfg_core::noise_tree::{NodeId, TreeField};
use serde::Serialize;
use serde_json::Value;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const FIELD_HEADER: &str = "t,node_id,x,value";
pub const SERIES_HEADER: &str = "iter,residual";
pub const MANIFEST: &str = "manifest.json";
pub const SCHEMA_VERSION: u32 = 1;

/// Evenly spaced time levels `0 = k_0 < ... < k_last = n_steps`.
pub fn snapshot_levels(n_steps: usize, count: usize) -> Vec<usize> {
    let count = count.max(2);
    let mut ks: Vec<usize> = (0..count)
        .map(|j| ((j * n_steps) as f64 / (count - 1) as f64).round() as usize)
        .collect();
    ks.dedup();
    ks
}

pub struct FieldWriter {
    out: BufWriter<File>,
    pub path: PathBuf,
}

impl FieldWriter {
    pub fn create(dir: &Path, name: &str) -> std::io::Result<Self> {
        let path = dir.join(name);
        let mut out = BufWriter::new(File::create(&path)?);
        writeln!(out, "{FIELD_HEADER}")?;
        Ok(FieldWriter { out, path })
    }

    pub fn field(&mut self, t: f64, node: usize, f: &GridField) -> std::io::Result<()> {
        for (i, v) in f.values.iter().enumerate() {
            writeln!(self.out, "{t},{node},{},{v}", f.grid.x(i))?;
        }
        Ok(())
    }

    pub fn tree_field(&mut self, t: f64, tf: &TreeField) -> std::io::Result<()> {
        for (j, f) in tf.fields.iter().enumerate() {
            self.field(t, NodeId::new(tf.level, j).global_id(), f)?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> std::io::Result<PathBuf> {
        self.out.flush()?;
        Ok(self.path)
    }
}

pub fn write_single(dir: &Path, name: &str, tgrid: &TimeGrid, fields: &[GridField], count: usize) -> std::io::Result<PathBuf> {
    let mut w = FieldWriter::create(dir, name)?;
    for k in snapshot_levels(fields.len() - 1, count) {
        w.field(tgrid.time(k), 0, &fields[k])?;
    }
    w.finish()
}

/// Writes `fields[k]` for every `k` in `levels` (time levels of `tgrid`).
pub fn write_tree(dir: &Path, name: &str, tgrid: &TimeGrid, fields: &[TreeField], levels: &[usize]) -> std::io::Result<PathBuf> {
    let mut w = FieldWriter::create(dir, name)?;
    for &k in levels {
        w.tree_field(tgrid.time(k), &fields[k])?;
    }
    w.finish()
}

pub fn write_series(dir: &Path, name: &str, series: &[f64]) -> std::io::Result<PathBuf> {
    let path = dir.join(name);
    let mut out = BufWriter::new(File::create(&path)?);
    writeln!(out, "{SERIES_HEADER}")?;
    for (i, r) in series.iter().enumerate() {
        writeln!(out, "{},{r}", i + 1)?;
    }
    out.flush()?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteRow {
    pub suite: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorRecord {
    pub module: String,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub version: String,
    pub status: String,
    pub exit_code: i32,
    pub config: Value,
    pub workers: usize,
    pub seed: u64,
    pub error: Option<ErrorRecord>,
    pub timings: serde_json::Map<String, Value>,
    pub diagnostics: serde_json::Map<String, Value>,
    pub pass_table: Vec<SuiteRow>,
    pub files: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, config: Value, workers: usize, seed: u64) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            status: "running".into(),
            exit_code: -1,
            config,
            workers,
            seed,
            error: None,
            timings: Default::default(),
            diagnostics: Default::default(),
            pass_table: vec![],
            files: vec![],
        }
    }

    pub fn diag(&mut self, key: &str, v: impl Serialize) {
        let v = serde_json::to_value(v).unwrap_or(Value::Null);
        self.diagnostics.insert(key.to_string(), v);
    }

    pub fn time(&mut self, key: &str, seconds: f64) {
        self.timings.insert(key.to_string(), seconds.into());
    }

    pub fn file(&mut self, p: &Path) {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        self.files.push(name);
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(MANIFEST), text + "\n")
    }
}
