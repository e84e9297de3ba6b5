use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use compsel::sim::fmt_f64;
use serde::Serialize;

use crate::error::CliError;

/// Output directory plus the reproducibility switch.
pub struct Output {
    dir: PathBuf,
    reproducible: bool,
}

impl Output {
    pub fn new(dir: &Path, reproducible: bool) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            reproducible,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Writes CSV text, prefixed by a timestamp comment unless reproducible.
    pub fn csv_text(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let mut text = String::new();
        if !self.reproducible {
            let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            text.push_str(&format!("# generated_unix={secs}\n"));
        }
        text.push_str(body);
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    pub fn csv(&self, name: &str, table: &Table) -> Result<PathBuf, CliError> {
        self.csv_text(name, &table.render())
    }

    pub fn csv_with<F>(&self, name: &str, write: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut Vec<u8>) -> compsel::Result<()>,
    {
        let mut buf = Vec::new();
        write(&mut buf)?;
        let body = String::from_utf8(buf).map_err(|e| CliError::Input(e.to_string()))?;
        self.csv_text(name, &body)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        let path = self.path(name);
        fs::write(&path, serde_json::to_string_pretty(value)? + "\n")?;
        Ok(path)
    }
}

/// Small row-oriented CSV builder.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn num(v: f64) -> String {
    fmt_f64(v)
}
