use super::{aux_seed, num, Gate, Outcome, Table};
use crate::config::ExperimentConfig;
use crate::error::Result;
use kpz_core::bridge::{nohit_mc, nohit_prob, theta, Barrier, BridgeSpec, Bump};
use kpz_core::fredholm::{fixed_point_prob, fredholm_det, rank_one_det, Ceiling, DiscretizedKernel, OperatorSettings};
use kpz_core::kpz::InitialData;
use kpz_core::lpp::corner_growth_window_sup;
use kpz_core::quad::QuadratureRule;
use kpz_core::rng::stream_rng;
use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

const RANK_ONE_INSTANCES: u64 = 100;
const RANK_ONE_TOL: f64 = 1e-10;
const MC_PATHS: usize = 20_000;
const MC_STEP: f64 = 0.01;

/// Worst `|det(I - A + φ⊗ψ) - rank_one_det|` over random small kernels.
fn rank_one_worst(seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..RANK_ONE_INSTANCES {
        let mut rng = stream_rng(seed, i);
        let q = rng.gen_range(4..=16);
        let rule = QuadratureRule::gauss_legendre(q, 0.0, 1.0)?;
        let vals: Vec<f64> = (0..q * q).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let a = DiscretizedKernel::from_values(rule.clone(), vals)?;
        let phi: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let psi: Vec<f64> = (0..q).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = DiscretizedKernel::rank_one(rule, &phi, &psi)?;
        let direct = fredholm_det(&a.scaled(-1.0).add(&b)?)?;
        worst = worst.max((direct - rank_one_det(&a, &phi, &psi)?).abs());
    }
    Ok(worst)
}

/// Barrier cases checked against Monte Carlo.
fn bridge_cases() -> Result<Vec<(&'static str, Barrier, BridgeSpec)>> {
    Ok(vec![
        ("flat-low", Barrier::constant(-0.3), BridgeSpec::new(0.0, 1.0, 0.7, 1.2)?),
        ("flat-touching", Barrier::constant(0.0), BridgeSpec::new(0.0, 2.0, 0.5, 0.4)?),
        ("flat-shifted", Barrier::constant(-1.0), BridgeSpec::new(-1.0, 1.0, 0.0, -0.5)?),
        (
            "bump",
            Barrier::new(0.0, vec![Bump { start: 0.4, width: 0.2, height: 0.3 }])?,
            BridgeSpec::new(0.0, 1.0, 1.0, 1.0)?,
        ),
    ])
}

pub fn fixed_point_det(cfg: &ExperimentConfig) -> Result<Outcome> {
    let h0 = InitialData::narrow_wedge(0.0);
    let settings = OperatorSettings { panel_nodes: cfg.quad_order, beta: cfg.beta, ..OperatorSettings::default() };
    let sups: Vec<f64> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| corner_growth_window_sup(cfg.n, cfg.l, &mut stream_rng(cfg.master_seed, r)))
        .collect::<kpz_core::Result<_>>()?;
    let reps = sups.len() as f64;

    let mut table = Table::new(&["m", "det", "det_gap", "mc", "mc_se", "z"]);
    let mut worst_z = 0.0f64;
    let mut rows = Vec::new();
    for &m in &cfg.m_list {
        let det = fixed_point_prob(&h0, &Ceiling::constant(m), cfg.l, &settings)?;
        let p = sups.iter().filter(|&&s| s <= m).count() as f64 / reps;
        let se = (p * (1.0 - p) / reps).sqrt();
        let z = if se > 0.0 { (p - det.value) / se } else { f64::INFINITY };
        worst_z = worst_z.max(z.abs());
        table.push(vec![num(m), num(det.value), num(det.gap), num(p), num(se), num(z)]);
        rows.push(json!({ "m": m, "det": det.value, "gap": det.gap, "mc": p, "se": se, "z": z }));
    }

    let rank_one_err = rank_one_worst(aux_seed(cfg.master_seed, 1))?;
    let bridge_base = aux_seed(cfg.master_seed, 2);
    let mut bridge_rows = Vec::new();
    let mut worst_bridge_z = 0.0f64;
    for (i, (label, barrier, spec)) in bridge_cases()?.into_iter().enumerate() {
        let exact = if barrier.bumps.is_empty() { theta(barrier.base_level, spec)? } else { nohit_prob(&barrier, spec)? };
        let est = nohit_mc(&barrier, spec, MC_STEP, MC_PATHS, bridge_base.wrapping_add(i as u64))?;
        let z = (est.mean - exact) / est.std_err;
        worst_bridge_z = worst_bridge_z.max(z.abs());
        bridge_rows.push(json!({ "case": label, "exact": exact, "mc": est.mean, "se": est.std_err, "z": z }));
    }

    let gates = vec![
        Gate::at_most("fixed-point-vs-lpp", Some(5), worst_z, 3.0),
        Gate::at_most("rank-one-identity", Some(11), rank_one_err, RANK_ONE_TOL),
        Gate::at_most("bridge-monte-carlo", Some(11), worst_bridge_z, 3.0),
    ];
    let results = json!({
        "lattice_size": cfg.n,
        "window": cfg.l,
        "replicas": cfg.replicas,
        "levels": rows,
        "rank_one": { "instances": RANK_ONE_INSTANCES, "max_abs_err": rank_one_err },
        "bridge": bridge_rows,
    });
    Ok(Outcome { table, gates, results })
}
