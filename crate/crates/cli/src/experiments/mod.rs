//! One experiment per subcommand. Each returns a CSV table, pass/fail gates
//! and a JSON block of headline numbers.

mod fixed_point;
mod fractal;
mod marginal;
mod melon;
mod twin_peaks;

pub use fixed_point::fixed_point_det;
pub use fractal::{dimension, energy, holder, read_flag_file, write_flag_file};
pub use marginal::tw_marginal;
pub use melon::melon_check;
pub use twin_peaks::{twin_peaks_lower, twin_peaks_upper};

use crate::config::{ExperimentConfig, Subcommand};
use crate::error::Result;
use kpz_core::rng::stream_rng;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Rows of one CSV artifact; cells are already formatted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(cols: &[&str]) -> Self {
        Self { header: cols.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }
}

/// Shortest round-trip decimal form; stable across runs and platforms.
pub fn num(x: f64) -> String {
    format!("{x}")
}

/// Plain decimals for ordinary sizes, exponent form for tolerances.
fn fmt_target(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-3 {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// A pass/fail check tied to an acceptance criterion where one applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub id: String,
    pub criterion: Option<u8>,
    pub passed: bool,
    pub measured: f64,
    pub target: String,
}

impl Gate {
    pub fn within(id: &str, criterion: Option<u8>, measured: f64, centre: f64, tol: f64) -> Self {
        Self {
            id: id.into(),
            criterion,
            passed: (measured - centre).abs() <= tol,
            measured,
            target: format!("{} +/- {}", fmt_target(centre), fmt_target(tol)),
        }
    }

    pub fn at_most(id: &str, criterion: Option<u8>, measured: f64, bound: f64) -> Self {
        Self { id: id.into(), criterion, passed: measured <= bound, measured, target: format!("<= {}", fmt_target(bound)) }
    }
}

/// Everything an experiment hands back for persistence.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub table: Table,
    pub gates: Vec<Gate>,
    pub results: serde_json::Value,
}

pub fn run(cfg: &ExperimentConfig) -> Result<Outcome> {
    match cfg.subcommand {
        Subcommand::MelonCheck => melon_check(cfg),
        Subcommand::TwMarginal => tw_marginal(cfg),
        Subcommand::FixedPointDet => fixed_point_det(cfg),
        Subcommand::TwinPeaksUpper => twin_peaks_upper(cfg),
        Subcommand::TwinPeaksLower => twin_peaks_lower(cfg),
        Subcommand::Holder => holder(cfg),
        Subcommand::Dimension => dimension(cfg),
        Subcommand::Energy => energy(cfg),
    }
}

/// Seed of replica `r`, independent of scheduling.
pub fn replica_seed(master_seed: u64, r: u64) -> u64 {
    stream_rng(master_seed, r).next_u64()
}

/// Seed for an auxiliary family of draws, kept clear of the replica streams.
pub(crate) fn aux_seed(master_seed: u64, tag: u64) -> u64 {
    stream_rng(master_seed, u64::MAX - tag).next_u64()
}
