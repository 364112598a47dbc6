use super::{aux_seed, num, replica_seed, Gate, Outcome, Table};
use crate::config::ExperimentConfig;
use crate::error::Result;
use kpz_core::lpp::{lpp_disjoint_idx, melon, melon_identity_report_with, sample_environment, IdentityRow};
use kpz_core::rng::stream_rng;
use rand::{Rng, RngCore};
use rayon::prelude::*;
use serde_json::json;

/// Grid points of the small instances checked against disjoint paths.
const SMALL_POINTS: usize = 40;
const SMALL_LINES: usize = 3;
const TOL: f64 = 1e-9;

struct ReplicaCheck {
    rows: Vec<IdentityRow>,
    order_err: f64,
    sum_err: f64,
}

fn check_replica(cfg: &ExperimentConfig, r: u64) -> Result<ReplicaCheck> {
    let mut rng = stream_rng(cfg.master_seed, r);
    let env = sample_environment(cfg.n, cfg.grid_step, cfg.x_max, 1.0, 0.0, rng.next_u64())?;
    let w = melon(&env)?;
    let m = env.m();
    let samples: Vec<(f64, f64)> = (0..cfg.pairs)
        .map(|_| {
            let (a, b) = (rng.gen_range(0..m), rng.gen_range(0..m));
            (env.x(a.min(b)), env.x(a.max(b)))
        })
        .collect();
    let rows = melon_identity_report_with(&env, &w, &samples)?;

    let knots = w.as_environment().m();
    let mut order_err = 0.0f64;
    for j in 1..cfg.n {
        let (hi, lo) = (w.curve(j), w.curve(j + 1));
        for i in 0..knots {
            order_err = order_err.max(lo[i] - hi[i]);
        }
    }
    let g = w.grid_environment();
    let mut sum_err = 0.0f64;
    for i in 0..m {
        let s: f64 = (1..=cfg.n).map(|j| g.line(j)[i]).sum();
        let s0: f64 = (1..=cfg.n).map(|j| env.line(j)[i] - env.line(j)[0]).sum();
        sum_err = sum_err.max((s - s0).abs() / (1.0 + s0.abs()));
    }
    Ok(ReplicaCheck { rows, order_err, sum_err })
}

/// Largest gap between melon curve differences and disjoint-path values.
fn small_instance_error(seed: u64, grid_step: f64) -> Result<f64> {
    let x_max = (SMALL_POINTS - 1) as f64 * grid_step;
    let env = sample_environment(SMALL_LINES, grid_step, x_max, 1.0, 0.0, seed)?;
    let w = melon(&env)?;
    let mut err = 0.0f64;
    for ix in 0..env.m() {
        let mut prev = 0.0;
        for j in 1..=SMALL_LINES {
            let d = lpp_disjoint_idx(&env, j, ix)?;
            err = err.max((w.curve_on_grid(j)[ix] - (d - prev)).abs());
            prev = d;
        }
    }
    Ok(err)
}

pub fn melon_check(cfg: &ExperimentConfig) -> Result<Outcome> {
    let checks: Vec<ReplicaCheck> =
        (0..cfg.replicas as u64).into_par_iter().map(|r| check_replica(cfg, r)).collect::<Result<_>>()?;
    let small_base = aux_seed(cfg.master_seed, 3);
    let small: Vec<f64> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| small_instance_error(replica_seed(small_base, r), cfg.grid_step))
        .collect::<Result<_>>()?;

    let mut table = Table::new(&["replica", "y", "x", "direct", "melon", "diff"]);
    let mut identity_err = 0.0f64;
    for (r, c) in checks.iter().enumerate() {
        for row in &c.rows {
            identity_err = identity_err.max(row.diff.abs() / (1.0 + row.direct.abs()));
            table.push(vec![r.to_string(), num(row.y), num(row.x), num(row.direct), num(row.melon), num(row.diff)]);
        }
    }
    let order_err = checks.iter().map(|c| c.order_err).fold(0.0, f64::max);
    let sum_err = checks.iter().map(|c| c.sum_err).fold(0.0, f64::max);
    let disjoint_err = small.iter().copied().fold(0.0, f64::max);
    let gates = vec![
        Gate::at_most("melon-identity", Some(1), identity_err, TOL),
        Gate::at_most("melon-order-and-sum", Some(2), order_err.max(sum_err), TOL),
        Gate::at_most("disjoint-paths", Some(3), disjoint_err, TOL),
    ];
    let results = json!({
        "environments": cfg.replicas,
        "pairs_per_environment": cfg.pairs,
        "max_identity_rel_err": identity_err,
        "max_order_violation": order_err,
        "max_sum_rel_err": sum_err,
        "small_instances": { "lines": SMALL_LINES, "points": SMALL_POINTS, "max_err": disjoint_err },
    });
    Ok(Outcome { table, gates, results })
}
