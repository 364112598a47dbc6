//! Run configuration: TOML file, command-line overrides and per-subcommand defaults.

use crate::error::{LabError, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    MelonCheck,
    TwMarginal,
    FixedPointDet,
    TwinPeaksUpper,
    TwinPeaksLower,
    Holder,
    Dimension,
    Energy,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::MelonCheck => "melon-check",
            Subcommand::TwMarginal => "tw-marginal",
            Subcommand::FixedPointDet => "fixed-point-det",
            Subcommand::TwinPeaksUpper => "twin-peaks-upper",
            Subcommand::TwinPeaksLower => "twin-peaks-lower",
            Subcommand::Holder => "holder",
            Subcommand::Dimension => "dimension",
            Subcommand::Energy => "energy",
        }
    }
}

/// Optional settings as they appear in a file or on the command line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub subcommand: Option<Subcommand>,
    pub n: Option<usize>,
    pub grid_step: Option<f64>,
    pub x_max: Option<f64>,
    pub replicas: Option<usize>,
    pub master_seed: Option<u64>,
    pub eps_list: Option<Vec<f64>>,
    #[serde(rename = "A")]
    pub a: Option<f64>,
    #[serde(rename = "L")]
    pub l: Option<f64>,
    #[serde(rename = "K")]
    pub k: Option<f64>,
    pub beta: Option<f64>,
    pub t_grid: Option<Vec<f64>>,
    pub quad_order: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub m_list: Option<Vec<f64>>,
    pub gamma_list: Option<Vec<f64>>,
    pub pairs: Option<usize>,
    pub x_window: Option<f64>,
    pub flag_file: Option<PathBuf>,
}

impl RawConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(e.message().to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| LabError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `over` replace those in `self`.
    pub fn overlay(mut self, over: &RawConfig) -> Self {
        macro_rules! take {
            ($($f:ident),*) => { $( if over.$f.is_some() { self.$f = over.$f.clone(); } )* };
        }
        take!(
            subcommand, n, grid_step, x_max, replicas, master_seed, eps_list, a, l, k, beta, t_grid, quad_order,
            output_dir, m_list, gamma_list, pairs, x_window, flag_file
        );
        self
    }
}

/// Fully resolved settings of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub n: usize,
    pub grid_step: f64,
    pub x_max: f64,
    pub replicas: usize,
    pub master_seed: u64,
    pub eps_list: Vec<f64>,
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub beta: f64,
    pub t_grid: Vec<f64>,
    pub quad_order: usize,
    pub output_dir: PathBuf,
    pub m_list: Vec<f64>,
    pub gamma_list: Vec<f64>,
    pub pairs: usize,
    pub x_window: f64,
    pub flag_file: Option<PathBuf>,
}

pub const DEFAULT_BETA: f64 = 0.9;
const DEFAULT_EPS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];

impl ExperimentConfig {
    /// Defaults for `sub`, sized to the corresponding acceptance runs.
    pub fn defaults(sub: Subcommand) -> Self {
        let base = Self {
            subcommand: sub,
            n: 50,
            grid_step: 0.25,
            x_max: 25.0,
            replicas: 20,
            master_seed: 1,
            eps_list: DEFAULT_EPS.to_vec(),
            a: 1.0,
            l: 3.0,
            k: 20.0,
            beta: DEFAULT_BETA,
            t_grid: Vec::new(),
            quad_order: 10,
            output_dir: PathBuf::from("kpz-lab-out"),
            m_list: vec![-1.0, 0.0, 1.0],
            gamma_list: vec![0.0, 0.2, 0.4, 0.6],
            pairs: 100,
            x_window: 3.0,
            flag_file: None,
        };
        match sub {
            Subcommand::MelonCheck => base,
            Subcommand::TwMarginal => Self { n: 2000, replicas: 10_000, quad_order: 40, ..base },
            Subcommand::FixedPointDet => Self { n: 1000, replicas: 10_000, ..base },
            Subcommand::TwinPeaksUpper => Self { l: 2.0, m_list: vec![0.0], ..base },
            Subcommand::TwinPeaksLower => Self { n: 128, replicas: 2000, l: 250.0, ..base },
            Subcommand::Holder => Self { n: 512, replicas: 200, x_window: 1.0, ..base },
            Subcommand::Dimension | Subcommand::Energy => {
                Self { n: 256, replicas: 800, a: 0.5, l: 400.0, x_window: 3.0, ..base }
            }
        }
    }

    /// Fill unset fields with the defaults of the chosen subcommand and validate.
    pub fn resolve(raw: &RawConfig) -> Result<Self> {
        let sub = raw.subcommand.ok_or_else(|| LabError::Config("no subcommand given".into()))?;
        let d = Self::defaults(sub);
        let cfg = Self {
            subcommand: sub,
            n: raw.n.unwrap_or(d.n),
            grid_step: raw.grid_step.unwrap_or(d.grid_step),
            x_max: raw.x_max.unwrap_or(d.x_max),
            replicas: raw.replicas.unwrap_or(d.replicas),
            master_seed: raw.master_seed.unwrap_or(d.master_seed),
            eps_list: raw.eps_list.clone().unwrap_or(d.eps_list),
            a: raw.a.unwrap_or(d.a),
            l: raw.l.unwrap_or(d.l),
            k: raw.k.unwrap_or(d.k),
            beta: raw.beta.unwrap_or(d.beta),
            t_grid: raw.t_grid.clone().unwrap_or(d.t_grid),
            quad_order: raw.quad_order.unwrap_or(d.quad_order),
            output_dir: raw.output_dir.clone().unwrap_or(d.output_dir),
            m_list: raw.m_list.clone().unwrap_or(d.m_list),
            gamma_list: raw.gamma_list.clone().unwrap_or(d.gamma_list),
            pairs: raw.pairs.unwrap_or(d.pairs),
            x_window: raw.x_window.unwrap_or(d.x_window),
            flag_file: raw.flag_file.clone(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LabError::Config(m));
        if !(self.beta > 0.0 && self.beta < 1.0) {
            return bad(format!("beta must lie in (0, 1), got {}", self.beta));
        }
        if self.n == 0 || self.replicas == 0 {
            return bad("n and replicas must be positive".into());
        }
        if !(self.grid_step > 0.0 && self.x_max > 0.0 && self.x_window > 0.0) {
            return bad("grid_step, x_max and x_window must be positive".into());
        }
        if !(self.a > 0.0 && self.l > 0.0 && self.k > 0.0) {
            return bad("A, L and K must be positive".into());
        }
        if self.eps_list.iter().any(|e| !(*e > 0.0)) {
            return bad("eps_list entries must be positive".into());
        }
        if self.gamma_list.iter().any(|g| !(0.0..1.0).contains(g)) {
            return bad("gamma_list entries must lie in [0, 1)".into());
        }
        if self.t_grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
            return bad("t_grid entries must lie in (0, 1]".into());
        }
        if self.quad_order < 2 {
            return bad("quad_order must be at least 2".into());
        }
        Ok(())
    }
}
