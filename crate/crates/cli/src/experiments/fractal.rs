use super::{num, replica_seed, Gate, Outcome, Table};
use crate::config::ExperimentConfig;
use crate::error::{LabError, Result};
use kpz_core::fractal::{box_count, box_counting_dim, detect_tp_times, implied_dimension, mu_and_energy, scaling_fit, TPTimeSet};
use kpz_core::kpz::{h_spacetime, InitialData, Sheet, SpaceTimeField};
use kpz_core::stats::{fit_line, median};
use rayon::prelude::*;
use serde_json::json;
use std::path::Path;

const TEMPORAL_LAGS: [usize; 6] = [1, 2, 4, 8, 16, 32];
const SPATIAL_LAGS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// Locations on the raw lattice inside `[-w, w]`, so no interpolation enters.
fn lattice_window(n: usize, grid_step: f64, w: f64) -> Vec<f64> {
    let dx = grid_step / (2.0 * (n as f64).powf(2.0 / 3.0));
    let m = (w / dx).round() as i64;
    (-m..=m).map(|j| j as f64 * dx).collect()
}

/// `cfg.t_grid`, or every line from `n/2` to `n`.
fn levels(cfg: &ExperimentConfig) -> Vec<f64> {
    if cfg.t_grid.is_empty() {
        (cfg.n / 2..=cfg.n).map(|k| k as f64 / cfg.n as f64).collect()
    } else {
        cfg.t_grid.clone()
    }
}

fn simulate(cfg: &ExperimentConfig, r: u64, ts: &[f64], xs: &[f64]) -> Result<SpaceTimeField> {
    let sheet = Sheet::sample(cfg.n, cfg.grid_step, 0.0, cfg.x_window + 0.1, replica_seed(cfg.master_seed, r))?;
    Ok(h_spacetime(&sheet, &InitialData::narrow_wedge(0.0), ts, xs)?)
}

fn window_max(f: &SpaceTimeField) -> Vec<f64> {
    f.slices.iter().map(|s| s.h.iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
}

fn abs_increments(series: &[f64], lag: usize) -> impl Iterator<Item = f64> + '_ {
    series.iter().zip(series.iter().skip(lag)).filter(|(a, b)| a.is_finite() && b.is_finite()).map(|(a, b)| (b - a).abs())
}

/// Slope of log median increment against log lag, pooled over replicas.
fn pooled_exponent(pools: &[Vec<f64>], lags: &[usize], spacing: f64, kind: &str, table: &mut Table) -> f64 {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (pool, &lag) in pools.iter().zip(lags) {
        let med = median(pool).unwrap_or(f64::NAN);
        table.push(vec![kind.into(), lag.to_string(), num(lag as f64 * spacing), num(med), pool.len().to_string()]);
        if med > 0.0 {
            x.push((lag as f64 * spacing).ln());
            y.push(med.ln());
        }
    }
    fit_line(&x, &y).map(|f| f.slope).unwrap_or(f64::NAN)
}

/// Temporal exponent of the windowed maximum and spatial exponent of the top
/// profile.
///
/// The lattice lowers the maximum by an amount that drifts with time; the
/// ensemble mean at each time is subtracted before differencing.
pub fn holder(cfg: &ExperimentConfig) -> Result<Outcome> {
    let ts = levels(cfg);
    let xs = lattice_window(cfg.n, cfg.grid_step, cfg.x_window);
    let dx = xs.get(1).map_or(f64::NAN, |b| b - xs[0]);
    let dt = if ts.len() > 1 { (ts[ts.len() - 1] - ts[0]) / (ts.len() - 1) as f64 } else { f64::NAN };
    let fields: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let f = simulate(cfg, r, &ts, &xs)?;
            let top = f.slices.last().map(|s| s.h.clone()).unwrap_or_default();
            Ok((window_max(&f), top))
        })
        .collect::<Result<_>>()?;

    let reps = fields.len() as f64;
    let mean: Vec<f64> = (0..ts.len()).map(|i| fields.iter().map(|f| f.0[i]).sum::<f64>() / reps).collect();
    let mut temporal = vec![Vec::new(); TEMPORAL_LAGS.len()];
    let mut spatial = vec![Vec::new(); SPATIAL_LAGS.len()];
    for (mx, top) in &fields {
        let centred: Vec<f64> = mx.iter().zip(&mean).map(|(a, b)| a - b).collect();
        for (pool, &lag) in temporal.iter_mut().zip(&TEMPORAL_LAGS) {
            pool.extend(abs_increments(&centred, lag));
        }
        for (pool, &lag) in spatial.iter_mut().zip(&SPATIAL_LAGS) {
            pool.extend(abs_increments(top, lag));
        }
    }
    let mut table = Table::new(&["kind", "lag", "scale", "median_increment", "count"]);
    let t_exp = pooled_exponent(&temporal, &TEMPORAL_LAGS, dt, "temporal", &mut table);
    let x_exp = pooled_exponent(&spatial, &SPATIAL_LAGS, dx, "spatial", &mut table);
    let gates = vec![
        Gate::within("temporal-holder", Some(9), t_exp, 1.0 / 3.0, 0.07),
        Gate::within("spatial-holder", Some(9), x_exp, 0.5, 0.05),
    ];
    let results = json!({ "temporal_exponent": t_exp, "spatial_exponent": x_exp, "dt": dt, "dx": dx, "levels": ts.len() });
    Ok(Outcome { table, gates, results })
}

/// Twin-peak time sets per replica, one per `ε`.
fn tp_sets(cfg: &ExperimentConfig) -> Result<Vec<Vec<TPTimeSet>>> {
    let ts = levels(cfg);
    let xs = lattice_window(cfg.n, cfg.grid_step, cfg.x_window);
    (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| {
            let f = simulate(cfg, r, &ts, &xs)?;
            Ok(cfg.eps_list.iter().map(|&e| detect_tp_times(&f, e, cfg.a, cfg.l, cfg.beta)).collect())
        })
        .collect()
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

/// Box ladder `span·3^{-k}` down to the cell width.
fn triadic_ladder(tps: &TPTimeSet) -> Vec<f64> {
    let span = match (tps.t_grid.first(), tps.t_grid.last()) {
        (Some(a), Some(b)) => b - a + tps.dt,
        _ => return Vec::new(),
    };
    let mut out = Vec::new();
    let mut d = span / 3.0;
    while d >= tps.dt * (1.0 - 1e-9) {
        out.push(d);
        d /= 3.0;
    }
    out
}

fn fixture_dimension(path: &Path) -> Result<Outcome> {
    let tps = read_flag_file(path)?;
    let ladder = triadic_ladder(&tps);
    let bc = box_counting_dim(&tps, &ladder)?;
    let mut table = Table::new(&["delta", "boxes"]);
    for (d, c) in &bc.counts {
        table.push(vec![num(*d), c.to_string()]);
    }
    let results = json!({ "source": path.display().to_string(), "flagged": tps.count(), "box_dimension": bc.slope });
    Ok(Outcome { table, gates: Vec::new(), results })
}

/// Scaling of the flagged-time mass and run lengths with `ε`, or the box
/// dimension of a flag file when one is given.
pub fn dimension(cfg: &ExperimentConfig) -> Result<Outcome> {
    if let Some(path) = &cfg.flag_file {
        return fixture_dimension(path);
    }
    let sets = tp_sets(cfg)?;
    let reps = sets.len() as f64;
    let mut table =
        Table::new(&["eps", "lebesgue", "mean_run_length", "runs", "nonempty_fraction", "matched_scale", "matched_boxes"]);
    let (mut mass, mut run) = (Vec::new(), Vec::new());
    for (k, &e) in cfg.eps_list.iter().enumerate() {
        let leb = sets.iter().map(|s| s[k].lebesgue()).sum::<f64>() / reps;
        let lengths: Vec<f64> = sets.iter().flat_map(|s| s[k].run_lengths()).collect();
        let mean_run = mean(lengths.iter().copied());
        let nonempty = sets.iter().filter(|s| s[k].count() > 0).count() as f64 / reps;
        let boxes = if mean_run > 0.0 { mean(sets.iter().map(|s| box_count(&s[k], mean_run) as f64)) } else { f64::NAN };
        table.push(vec![
            num(e),
            num(leb),
            num(mean_run),
            lengths.len().to_string(),
            num(nonempty),
            num(mean_run),
            num(boxes),
        ]);
        mass.push(leb);
        run.push(mean_run);
    }
    let slope = |v: &[f64]| scaling_fit(&cfg.eps_list, v).map(|f| f.slope).unwrap_or(f64::NAN);
    let (mass_slope, run_slope) = (slope(&mass), slope(&run));
    let dim = implied_dimension(mass_slope, run_slope).unwrap_or(f64::NAN);
    let gates = vec![
        Gate::within("mass-slope", Some(10), mass_slope, 1.0, 0.25),
        Gate::within("run-length-slope", Some(10), run_slope, 3.0, 0.75),
        Gate::within("implied-dimension", Some(10), dim, 2.0 / 3.0, 0.15),
    ];
    let results = json!({
        "mass_slope": mass_slope,
        "run_length_slope": run_slope,
        "implied_dimension": dim,
        "time_step": levels(cfg).windows(2).next().map(|w| w[1] - w[0]),
    });
    Ok(Outcome { table, gates, results })
}

/// Mass and `γ`-energy of the flagged-time measure, averaged over replicas.
pub fn energy(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sets = tp_sets(cfg)?;
    let reps = sets.len() as f64;
    let mut table = Table::new(&["eps", "gamma", "mean_mass", "mean_energy", "nonempty_fraction"]);
    let mut worst = 0.0f64;
    for (k, &e) in cfg.eps_list.iter().enumerate() {
        let nonempty = sets.iter().filter(|s| s[k].count() > 0).count() as f64 / reps;
        let leb = sets.iter().map(|s| s[k].lebesgue()).sum::<f64>() / reps;
        for &g in &cfg.gamma_list {
            let pairs: Vec<(f64, f64)> = sets.iter().map(|s| mu_and_energy(&s[k], g)).collect::<kpz_core::Result<_>>()?;
            let m = pairs.iter().map(|p| p.0).sum::<f64>() / reps;
            let en = pairs.iter().map(|p| p.1).sum::<f64>() / reps;
            worst = worst.max((m - leb / e).abs() / (1.0 + m.abs()));
            table.push(vec![num(e), num(g), num(m), num(en), num(nonempty)]);
        }
    }
    let gates = vec![Gate::at_most("mass-matches-lebesgue", None, worst, 1e-12)];
    let results = json!({ "replicas": cfg.replicas, "max_mass_rel_err": worst });
    Ok(Outcome { table, gates, results })
}

/// Flag files are CSV with columns `t,flag`, flags 0 or 1, times increasing.
pub fn read_flag_file(path: &Path) -> Result<TPTimeSet> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut t_grid = Vec::new();
    let mut flags = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = || LabError::Config(format!("{}: malformed row {:?}", path.display(), rec));
        let t: f64 = rec.get(0).and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let f = match rec.get(1).map(str::trim) {
            Some("0") => false,
            Some("1") => true,
            _ => return Err(bad()),
        };
        t_grid.push(t);
        flags.push(f);
    }
    let dt = match t_grid.len() {
        0 => return Err(LabError::Config(format!("{}: no rows", path.display()))),
        1 => 1.0,
        k => (t_grid[k - 1] - t_grid[0]) / (k - 1) as f64,
    };
    Ok(TPTimeSet::from_flags(t_grid, flags, dt, 1.0)?)
}

pub fn write_flag_file(path: &Path, tps: &TPTimeSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "flag"])?;
    for (t, f) in tps.t_grid.iter().zip(&tps.flags) {
        w.write_record([num(*t), if *f { "1".into() } else { "0".into() }])?;
    }
    w.flush()?;
    Ok(())
}
