//! Re-runs a recorded experiment and compares its CSV outputs byte for byte.

use crate::config::ExperimentConfig;
use crate::experiments::Failure;
use anyhow::{Context, Result};
use serde_json::{json, Value};
use std::fs;
use std::path::Path;

/// First line at which two files differ.
#[derive(Debug, PartialEq)]
pub struct Difference {
    pub file: String,
    /// 1-based line number.
    pub line: usize,
    pub expected: Option<String>,
    pub found: Option<String>,
}

pub fn first_difference(file: &str, expected: &str, found: &str) -> Option<Difference> {
    let (mut a, mut b) = (expected.lines(), found.lines());
    let mut line = 0;
    loop {
        line += 1;
        match (a.next(), b.next()) {
            (None, None) => return None,
            (x, y) if x == y => continue,
            (x, y) => {
                return Some(Difference {
                    file: file.to_string(),
                    line,
                    expected: x.map(str::to_string),
                    found: y.map(str::to_string),
                })
            }
        }
    }
}

fn mismatch(message: String, details: Value) -> anyhow::Error {
    Failure {
        kind: "mismatch",
        message,
        details,
    }
    .into()
}

/// Re-runs the configuration recorded in `summary_path` in a scratch
/// directory next to it and compares every recorded CSV output.
pub fn reproduce(summary_path: &Path) -> Result<()> {
    let text = fs::read_to_string(summary_path).with_context(|| format!("cannot read {}", summary_path.display()))?;
    let summary: Value = serde_json::from_str(&text).context("summary is not valid JSON")?;
    let config: ExperimentConfig =
        serde_json::from_value(summary["config"].clone()).context("summary has no readable config")?;
    let recorded_hash = summary["config_hash"].as_str().unwrap_or_default();
    if config.hash() != recorded_hash {
        return Err(mismatch(
            format!("config hash {} does not match the recorded {recorded_hash}", config.hash()),
            Value::Null,
        ));
    }
    let outputs: Vec<String> = serde_json::from_value(summary["outputs"].clone()).context("summary has no output list")?;
    let dir = summary_path.parent().unwrap_or(Path::new("."));
    let scratch = dir.join(".reproduce");
    if scratch.exists() {
        fs::remove_dir_all(&scratch).context("cannot clear the previous reproduce directory")?;
    }
    let result = crate::execute(&config, &scratch, false).and_then(|fresh| compare(dir, &scratch, &outputs, &fresh));
    fs::remove_dir_all(&scratch).ok();
    result?;
    println!("reproduced {} output files of {} (config {recorded_hash})", outputs.len(), config.experiment.name());
    Ok(())
}

fn compare(dir: &Path, scratch: &Path, outputs: &[String], fresh: &[String]) -> Result<()> {
    if fresh != outputs {
        return Err(mismatch(
            format!("output files differ: recorded {outputs:?}, re-run wrote {fresh:?}"),
            Value::Null,
        ));
    }
    for file in outputs {
        let expected = fs::read_to_string(dir.join(file)).with_context(|| format!("cannot read recorded {file}"))?;
        let found = fs::read_to_string(scratch.join(file)).with_context(|| format!("cannot read re-run {file}"))?;
        if let Some(d) = first_difference(file, &expected, &found) {
            return Err(mismatch(
                format!("{} differs at line {}", d.file, d.line),
                json!({ "file": d.file, "line": d.line, "expected": d.expected, "found": d.found }),
            ));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_texts() {
        assert_eq!(first_difference("a", "x\ny\n", "x\ny\n"), None);
    }

    #[test]
    fn changed_row() {
        let d = first_difference("a.csv", "h\n1,2\n3,4\n", "h\n1,2\n3,5\n").unwrap();
        assert_eq!(d.line, 3);
        assert_eq!(d.expected.as_deref(), Some("3,4"));
        assert_eq!(d.found.as_deref(), Some("3,5"));
    }

    #[test]
    fn truncated_file() {
        let d = first_difference("a.csv", "h\n1\n", "h\n").unwrap();
        assert_eq!(d.line, 2);
        assert_eq!(d.found, None);
    }
}
