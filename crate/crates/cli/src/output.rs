//! Artifact files: CSV series, summary and error JSON, gnuplot scripts.

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub const TOOL: &str = "billiard-lab";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats a float so that it parses back to the same value.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

/// A CSV series under construction.
pub struct Csv {
    name: String,
    columns: Vec<&'static str>,
    rows: Vec<String>,
}

impl Csv {
    pub fn new(name: &str, columns: &[&'static str]) -> Self {
        Self {
            name: name.to_string(),
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells.join(","));
    }
}

/// Log-log plot of one CSV column against another.
pub struct Plot {
    pub csv: String,
    pub x: usize,
    pub y: usize,
    pub title: String,
    pub log_x: bool,
    pub log_y: bool,
}

/// The output directory of one run. Every file written here carries the
/// tool version, config hash and master seed.
pub struct OutputDir {
    dir: PathBuf,
    header: String,
    written: Vec<String>,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# {TOOL} {VERSION} config={config_hash} seed={seed}"),
            written: Vec::new(),
        })
    }

    /// CSV files written so far, in order.
    pub fn csv_files(&self) -> &[String] {
        &self.written
    }

    pub fn write_csv(&mut self, csv: &Csv) -> Result<()> {
        let mut text = format!("{}\n{}\n", self.header, csv.columns.join(","));
        for r in &csv.rows {
            text.push_str(r);
            text.push('\n');
        }
        let file = format!("{}.csv", csv.name);
        fs::write(self.dir.join(&file), text).with_context(|| format!("cannot write {file}"))?;
        self.written.push(file);
        Ok(())
    }

    pub fn write_plot(&self, name: &str, plots: &[Plot]) -> Result<()> {
        let mut text = format!("{}\nset datafile separator ','\nset key left bottom\n", self.header);
        for p in plots {
            let _ = writeln!(text, "set title '{}'", p.title);
            let _ = writeln!(text, "{}set logscale x", if p.log_x { "" } else { "un" });
            let _ = writeln!(text, "{}set logscale y", if p.log_y { "" } else { "un" });
            let _ = writeln!(
                text,
                "plot '{}.csv' every ::1 using {}:(abs(${})) with linespoints title '{}'\npause -1",
                p.csv,
                p.x + 1,
                p.y + 1,
                p.title
            );
        }
        fs::write(self.dir.join(format!("{name}.gp")), text).with_context(|| format!("cannot write {name}.gp"))?;
        Ok(())
    }

    pub fn write_json(&self, name: &str, value: &impl Serialize) -> Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.dir.join(name), text + "\n").with_context(|| format!("cannot write {name}"))?;
        Ok(())
    }
}

/// Machine-readable failure report.
#[derive(Serialize)]
pub struct ErrorReport {
    pub tool: &'static str,
    pub version: &'static str,
    pub error: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1e-300, 2.0 / 3.0, -5.5e12, 0.0] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn csv_carries_header() {
        let dir = std::env::temp_dir().join(format!("billiard-lab-out-{}", std::process::id()));
        let mut out = OutputDir::create(&dir, "abc", 9).unwrap();
        let mut csv = Csv::new("series", &["n", "value"]);
        csv.row(&["1".into(), num(0.5)]);
        out.write_csv(&csv).unwrap();
        let text = fs::read_to_string(dir.join("series.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], format!("# billiard-lab {VERSION} config=abc seed=9"));
        assert_eq!(lines[1], "n,value");
        assert_eq!(lines[2], "1,5e-1");
        fs::remove_dir_all(dir).unwrap();
    }
}
