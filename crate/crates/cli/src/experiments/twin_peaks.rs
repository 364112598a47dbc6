use super::{num, Gate, Outcome, Table};
use crate::config::ExperimentConfig;
use crate::error::Result;
use kpz_core::fractal::scaling_fit;
use kpz_core::fredholm::{density_f, dip_shape_factor, twin_peaks_prob_det, Eta, OperatorSettings};
use kpz_core::gibbs::{lower_bound_experiment, LowerBoundConfig};
use kpz_core::kpz::InitialData;
use kpz_core::stats::aitken_limit;
use serde_json::json;

/// Dip widths of the finite-difference sequence; depths are `δ^{3/4}`.
const FD_WIDTHS: [f64; 3] = [0.2, 0.1, 0.05];
const FD_LOCATIONS: (f64, f64) = (-1.0, 1.0);

/// At `t = 8` the separations below are small next to `t^{2/3} = 4`, so the
/// density ratio isolates the separation prefactor. Time-8 densities are
/// time-1 densities at rescaled arguments.
const RATIO_TIME: f64 = 8.0;
const RATIO_WINDOW: f64 = 8.0;
const RATIO_HALF_GAPS: (f64, f64) = (0.25, 0.5);

pub fn twin_peaks_lower(cfg: &ExperimentConfig) -> Result<Outcome> {
    let lb = LowerBoundConfig {
        n: cfg.n,
        grid_step: cfg.grid_step,
        h0: InitialData::narrow_wedge(0.0),
        a_sep: cfg.a,
        l: cfg.l,
        k: cfg.k,
        beta: cfg.beta,
        x_window: cfg.x_window,
        eps: cfg.eps_list.clone(),
        replicas: cfg.replicas,
        seed: cfg.master_seed,
    };
    let report = lower_bound_experiment(&lb)?;
    let mut table = Table::new(&["eps", "successes", "trials", "p_hat", "ci_lo", "ci_hi"]);
    for r in &report.rows {
        table.push(vec![num(r.eps), r.successes.to_string(), r.trials.to_string(), num(r.p_hat), num(r.ci_lo), num(r.ci_hi)]);
    }
    let eps: Vec<f64> = report.rows.iter().map(|r| r.eps).collect();
    let freq: Vec<f64> = report.rows.iter().map(|r| r.p_hat).collect();
    let all_positive = !freq.is_empty() && freq.iter().all(|&p| p > 0.0);
    let slope = if all_positive { scaling_fit(&eps, &freq).map(|f| f.slope).unwrap_or(f64::NAN) } else { f64::NAN };
    let mut linear = Gate::within("twin-peaks-slope", Some(6), slope, 1.0, 0.2);
    linear.passed &= all_positive;
    let gates = vec![
        linear,
        Gate::at_most("reconstruction-checks", Some(7), report.reconstruction.total() as f64, 0.0),
        Gate::at_most("corner-order", Some(8), report.corner_order_violations as f64, 0.0),
        Gate::at_most("corner-deficit", Some(8), report.max_corner_deficit, 1e-6),
    ];
    let results = json!({ "slope": slope, "all_positive": all_positive, "report": report });
    Ok(Outcome { table, gates, results })
}

pub fn twin_peaks_upper(cfg: &ExperimentConfig) -> Result<Outcome> {
    let h0 = InitialData::narrow_wedge(0.0);
    let s1 = OperatorSettings { panel_nodes: cfg.quad_order, beta: cfg.beta, ..OperatorSettings::default() };
    let m = cfg.m_list.first().copied().unwrap_or(0.0);
    let (x1, x2) = FD_LOCATIONS;
    let mut table = Table::new(&["kind", "x1", "x2", "eps", "delta", "value", "gap", "normalized"]);

    let density = density_f(x1, x2, m, cfg.l, &h0, &s1)?;
    table.push(vec!["density".into(), num(x1), num(x2), num(0.0), num(0.0), num(density.value), num(density.gap), num(1.0)]);
    // probability / (εδ)², with the single-dip shape factor divided out per dip
    let mut seq = Vec::new();
    for &d in &FD_WIDTHS {
        let e = Eta { eps: d.powf(0.75), delta: d };
        let p = twin_peaks_prob_det(e, e, x1, x2, m, cfg.l, &h0, &s1)?;
        let shape = dip_shape_factor(d.powf(0.25))?;
        let q = p.value / (e.size() * e.size()) / (shape * shape);
        table.push(vec!["twin-peaks".into(), num(x1), num(x2), num(e.eps), num(e.delta), num(p.value), num(p.gap), num(q / density.value)]);
        seq.push(q);
    }
    let limit = aitken_limit(seq[0], seq[1], seq[2])?;
    let fd_ratio = limit / density.value;

    let st = OperatorSettings { t: RATIO_TIME, ..s1 };
    let (near_h, far_h) = RATIO_HALF_GAPS;
    let near = density_f(-near_h, near_h, m, RATIO_WINDOW, &h0, &st)?;
    let far = density_f(-far_h, far_h, m, RATIO_WINDOW, &h0, &st)?;
    for (h, r) in [(near_h, &near), (far_h, &far)] {
        table.push(vec!["density-t8".into(), num(-h), num(h), num(0.0), num(0.0), num(r.value), num(r.gap), num(r.value / far.value)]);
    }
    let ratio = near.value / far.value;
    let target = 2f64.powf(1.5);

    let gates = vec![
        Gate::within("separation-ratio", Some(12), ratio / target, 1.0, 0.1),
        Gate::within("finite-difference-limit", Some(12), fd_ratio, 1.0, 0.05),
    ];
    let results = json!({
        "m": m,
        "window": cfg.l,
        "density": density.value,
        "finite_difference_sequence": seq,
        "extrapolated": limit,
        "extrapolated_over_density": fd_ratio,
        "separation_ratio": ratio,
        "separation_ratio_target": target,
    });
    Ok(Outcome { table, gates, results })
}
