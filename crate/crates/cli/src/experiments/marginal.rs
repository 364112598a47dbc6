use super::{num, Gate, Outcome, Table};
use crate::config::ExperimentConfig;
use crate::error::Result;
use kpz_core::fredholm::tw_gue_cdf_refined;
use kpz_core::kpz::sample_s00;
use kpz_core::rng::stream_rng;
use kpz_core::stats::{ks_one_sample, mean_and_std};
use rayon::prelude::*;
use serde_json::json;

const GAP_POINTS: [f64; 6] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0];
const GAP_TOL: f64 = 1e-8;
const KS_TOL: f64 = 0.05;

// Outside this range the distribution function is 0 or 1 to double precision.
const LOWER_CUT: f64 = -12.0;
const UPPER_CUT: f64 = 9.0;

pub fn tw_marginal(cfg: &ExperimentConfig) -> Result<Outcome> {
    let q = cfg.quad_order;
    let gaps: Vec<f64> = GAP_POINTS.iter().map(|&m| tw_gue_cdf_refined(m, q).map(|r| r.gap)).collect::<kpz_core::Result<_>>()?;
    let samples: Vec<f64> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| sample_s00(cfg.n, &mut stream_rng(cfg.master_seed, r)))
        .collect::<kpz_core::Result<_>>()?;
    let cdf_values: Vec<f64> = samples
        .par_iter()
        .map(|&s| match s {
            s if s < LOWER_CUT => Ok(0.0),
            s if s > UPPER_CUT => Ok(1.0),
            s => tw_gue_cdf_refined(s, q).map(|r| r.value.clamp(0.0, 1.0)),
        })
        .collect::<kpz_core::Result<_>>()?;
    // the KS statistic only needs F at the sample points
    let mut lookup: Vec<(f64, f64)> = samples.iter().copied().zip(cdf_values.iter().copied()).collect();
    lookup.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ks = ks_one_sample(&samples, |x| match lookup.binary_search_by(|p| p.0.total_cmp(&x)) {
        Ok(i) => lookup[i].1,
        Err(_) => f64::NAN,
    });

    let mut table = Table::new(&["replica", "s00", "tw_cdf"]);
    for (r, (s, f)) in samples.iter().zip(&cdf_values).enumerate() {
        table.push(vec![r.to_string(), num(*s), num(*f)]);
    }
    let max_gap = gaps.iter().copied().fold(0.0, f64::max);
    let (mean, sd) = mean_and_std(&samples);
    let gates = vec![
        Gate::at_most("tw-refinement-gap", Some(4), max_gap, GAP_TOL),
        Gate::at_most("tw-ks-distance", Some(4), ks, KS_TOL),
    ];
    let results = json!({
        "quad_order": q,
        "gap_points": GAP_POINTS,
        "gaps": gaps,
        "ks_distance": ks,
        "sample_mean": mean,
        "sample_sd": sd,
    });
    Ok(Outcome { table, gates, results })
}
