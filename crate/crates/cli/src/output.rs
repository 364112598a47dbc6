//! Artifact writing: atomic CSV and JSON files, and the failed/ area.

use crate::config::{ExperimentConfig, RawConfig};
use crate::error::{LabError, Result};
use crate::experiments::{self, Gate, Table};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SCHEMA_VERSION: u32 = 1;

pub fn build_id() -> String {
    format!("kpz-lab {} ({})", env!("CARGO_PKG_VERSION"), env!("KPZ_LAB_BUILD_ID"))
}

/// Contents of `<subcommand>.summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub subcommand: String,
    pub build_id: String,
    pub wall_clock_s: f64,
    pub config: ExperimentConfig,
    pub config_file: Option<RawConfig>,
    pub flag_overrides: RawConfig,
    pub csv: String,
    pub gates: Vec<Gate>,
    pub all_gates_passed: bool,
    pub results: serde_json::Value,
}

/// Record written under `failed/` when a run aborts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub schema_version: u32,
    pub subcommand: String,
    pub build_id: String,
    pub error: String,
    pub config: ExperimentConfig,
}

/// Write to a sibling temp file, sync, then rename over `path`.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| LabError::Config(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV bytes with a leading `schema_version` column; header only when empty.
pub fn csv_bytes(table: &Table) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["schema_version".to_string()];
    header.extend(table.header.iter().cloned());
    w.write_record(&header)?;
    let version = SCHEMA_VERSION.to_string();
    for row in &table.rows {
        w.write_record(std::iter::once(&version).chain(row.iter()))?;
    }
    let bytes = w.into_inner().map_err(|e| LabError::Io(e.into_error()))?;
    if !bytes.is_ascii() {
        return Err(LabError::Config("CSV output must be ASCII".into()));
    }
    Ok(bytes)
}

pub fn csv_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("{}.csv", cfg.subcommand.name()))
}

pub fn summary_path(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    dir.join(format!("{}.summary.json", cfg.subcommand.name()))
}

/// Run the experiment and persist its artifacts under `cfg.output_dir`.
///
/// On failure a record goes to `failed/` in the output directory and the
/// error is returned.
pub fn execute(cfg: &ExperimentConfig, config_file: Option<RawConfig>, flags: RawConfig) -> Result<Summary> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    let start = Instant::now();
    match experiments::run(cfg) {
        Ok(out) => {
            let csv = csv_path(dir, cfg);
            atomic_write(&csv, &csv_bytes(&out.table)?)?;
            let summary = Summary {
                schema_version: SCHEMA_VERSION,
                subcommand: cfg.subcommand.name().into(),
                build_id: build_id(),
                wall_clock_s: start.elapsed().as_secs_f64(),
                config: cfg.clone(),
                config_file,
                flag_overrides: flags,
                csv: csv.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                all_gates_passed: out.gates.iter().all(|g| g.passed),
                gates: out.gates,
                results: out.results,
            };
            atomic_write(&summary_path(dir, cfg), &serde_json::to_vec_pretty(&summary)?)?;
            Ok(summary)
        }
        Err(e) => {
            let failed = dir.join("failed");
            fs::create_dir_all(&failed)?;
            let record = FailureRecord {
                schema_version: SCHEMA_VERSION,
                subcommand: cfg.subcommand.name().into(),
                build_id: build_id(),
                error: e.to_string(),
                config: cfg.clone(),
            };
            let path = failed.join(format!("{}.error.json", cfg.subcommand.name()));
            atomic_write(&path, &serde_json::to_vec_pretty(&record)?)?;
            Err(e)
        }
    }
}
