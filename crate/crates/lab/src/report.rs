//! CSV tables (RFC 4180 quoting, LF line endings) and the JSON run manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{LabError, LabResult};
use crate::stage::Stage;

pub fn write_csv<T: Serialize>(dir: &Path, name: &str, rows: &[T]) -> LabResult<PathBuf> {
    let path = dir.join(name);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .quote_style(csv::QuoteStyle::Necessary)
        .from_path(&path)
        .map_err(|e| LabError::io(&path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| LabError::io(&path, e))?;
    }
    w.flush().map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> LabResult<PathBuf> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LabError::io(&path, e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| LabError::io(&path, e))?;
    Ok(path)
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub os: &'static str,
    pub arch: &'static str,
    pub lab_version: &'static str,
    pub threads: usize,
    pub available_parallelism: usize,
}

impl Environment {
    pub fn capture(threads: usize) -> Self {
        Self {
            os: std::env::consts::OS,
            arch: std::env::consts::ARCH,
            lab_version: env!("CARGO_PKG_VERSION"),
            threads,
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub stage: Stage,
    /// File names relative to the output directory.
    pub files: Vec<String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub seed_mixing: &'static str,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    pub environment: Environment,
    pub failure: Option<Failure>,
}

impl RunReport {
    pub fn stage(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == stage)
    }

    /// Every CSV named by a completed stage, as absolute paths.
    pub fn csv_paths(&self) -> Vec<PathBuf> {
        self.stages
            .iter()
            .flat_map(|s| s.files.iter())
            .filter(|f| f.ends_with(".csv"))
            .map(|f| self.config.output.join(f))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize)]
    struct Row {
        n: usize,
        seed: u64,
        label: &'static str,
        value: f64,
    }

    #[test]
    fn csv_quotes_and_uses_lf() {
        let dir = std::env::temp_dir().join(format!("lab-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let rows = [
            Row { n: 1, seed: 0, label: "plain", value: 0.5 },
            Row { n: 2, seed: 1, label: "a,\"b\"", value: 1e-20 },
        ];
        let path = write_csv(&dir, "t.csv", &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "n,seed,label,value\n1,0,plain,0.5\n2,1,\"a,\"\"b\"\"\",1e-20\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
