//! Experiment harness around `kpz_core`: configuration, seeded replica
//! scheduling and CSV/JSON artifacts, one subcommand per checked claim.

pub mod config;
pub mod error;
pub mod experiments;
pub mod output;

pub use config::{ExperimentConfig, RawConfig, Subcommand};
pub use error::{LabError, Result};

/// Cap the global worker pool at `KPZ_LAB_THREADS` when it is set.
pub fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("KPZ_LAB_THREADS") else { return Ok(()) };
    let k: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|k| *k > 0)
        .ok_or_else(|| LabError::Config(format!("KPZ_LAB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build_global()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))
}
