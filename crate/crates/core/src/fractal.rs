//! Exceptional-time statistics: twin-peaks time sets, the measure `μ` and its
//! `γ`-energy, box counting, Hölder exponents and log-log scaling fits.

use crate::error::{invalid, KpzError, Result};
use crate::kpz::{find_near_maximizers, SpaceTimeField};
use crate::stats::{fit_line, median, LineFit};
use serde::{Deserialize, Serialize};

/// Times of a space-time field flagged as twin-peaks times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPTimeSet {
    pub t_grid: Vec<f64>,
    pub flags: Vec<bool>,
    /// Cell width attached to each time.
    pub dt: f64,
    pub eps: f64,
    pub a: f64,
    pub l: f64,
}

impl TPTimeSet {
    /// A time set from explicit flags on a uniform grid with spacing `dt`.
    pub fn from_flags(t_grid: Vec<f64>, flags: Vec<bool>, dt: f64, eps: f64) -> Result<Self> {
        if t_grid.len() != flags.len() {
            return invalid(format!("{} times but {} flags", t_grid.len(), flags.len()));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("cell width must be positive, got {dt}"));
        }
        if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return invalid("time grid must be strictly increasing");
        }
        Ok(Self { t_grid, flags, dt, eps, a: f64::NAN, l: f64::NAN })
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    /// Flagged times.
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.t_grid.iter().zip(&self.flags).filter(|(_, &f)| f).map(|(&t, _)| t)
    }

    /// Lengths (in time) of maximal runs of consecutive flags.
    pub fn run_lengths(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut run = 0usize;
        for &f in self.flags.iter().chain(std::iter::once(&false)) {
            if f {
                run += 1;
            } else if run > 0 {
                out.push(run as f64 * self.dt);
                run = 0;
            }
        }
        out
    }

    /// Lebesgue measure of the flagged cells.
    pub fn lebesgue(&self) -> f64 {
        self.count() as f64 * self.dt
    }
}

/// Apply [`find_near_maximizers`] to every slice of `field`.
///
/// The cell width is the mean spacing of the slice times (1 for a single slice).
pub fn detect_tp_times(field: &SpaceTimeField, eps: f64, a: f64, l: f64, beta: f64) -> TPTimeSet {
    let t_grid: Vec<f64> = field.slices.iter().map(|s| s.t).collect();
    let flags = field.slices.iter().map(|s| find_near_maximizers(s, eps, a, l, beta).in_tp_set).collect();
    let dt = match t_grid.len() {
        0 | 1 => 1.0,
        k => (t_grid[k - 1] - t_grid[0]) / (k - 1) as f64,
    };
    TPTimeSet { t_grid, flags, dt, eps, a, l }
}

/// Atoms of mass `Δt/ε` at flagged times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureMu {
    pub atoms: Vec<(f64, f64)>,
    pub dt: f64,
    pub eps: f64,
}

impl MeasureMu {
    pub fn new(tps: &TPTimeSet) -> Result<Self> {
        if !(tps.eps > 0.0 && tps.eps.is_finite()) {
            return invalid(format!("measure needs eps > 0, got {}", tps.eps));
        }
        let m = tps.dt / tps.eps;
        Ok(Self { atoms: tps.times().map(|t| (t, m)).collect(), dt: tps.dt, eps: tps.eps })
    }

    pub fn mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.1).sum()
    }

    /// `∫∫ |t - s|^{-γ} dμ dμ`, with each atom spread uniformly over its cell
    /// on the diagonal.
    pub fn energy(&self, gamma: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&gamma) {
            return invalid(format!("energy exponent must lie in [0, 1), got {gamma}"));
        }
        let self_cell = 2.0 * self.dt.powf(2.0 - gamma) / ((1.0 - gamma) * (2.0 - gamma)) / (self.eps * self.eps);
        let mut off = 0.0;
        for (i, &(ti, mi)) in self.atoms.iter().enumerate() {
            for &(tj, mj) in &self.atoms[i + 1..] {
                off += mi * mj * (ti - tj).abs().powf(-gamma);
            }
        }
        Ok(2.0 * off + self.atoms.len() as f64 * self_cell)
    }
}

/// `(mass, energy)` of `μ` for the time set.
pub fn mu_and_energy(tps: &TPTimeSet, gamma: f64) -> Result<(f64, f64)> {
    let mu = MeasureMu::new(tps)?;
    let e = mu.energy(gamma)?;
    Ok((mu.mass(), e))
}

/// Box counts `N(δ)` and the fitted dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCount {
    pub slope: f64,
    pub counts: Vec<(f64, usize)>,
}

/// Number of `δ`-boxes, aligned with the left edge of the first cell, that
/// contain a flagged time.
pub fn box_count(tps: &TPTimeSet, delta: f64) -> usize {
    let Some(&t0) = tps.t_grid.first() else { return 0 };
    let origin = t0 - 0.5 * tps.dt;
    let mut boxes: Vec<i64> = tps.times().map(|t| ((t - origin) / delta).floor() as i64).collect();
    boxes.dedup();
    boxes.len()
}

/// Least-squares slope of `-log N(δ)` against `log δ`.
pub fn box_counting_dim(tps: &TPTimeSet, ladder: &[f64]) -> Result<BoxCount> {
    if ladder.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return invalid("box sizes must be positive");
    }
    let (lo, hi) = ladder.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &d| (a.min(d), b.max(d)));
    if ladder.is_empty() || (hi / lo).log10() < 1.5 {
        return invalid("box sizes must span at least 1.5 decades");
    }
    let counts: Vec<(f64, usize)> = ladder.iter().map(|&d| (d, box_count(tps, d))).collect();
    if tps.count() == 0 {
        return Ok(BoxCount { slope: 0.0, counts });
    }
    let used: Vec<&(f64, usize)> = counts.iter().filter(|c| c.1 > 0).collect();
    if used.len() < 3 {
        return Err(KpzError::InsufficientData(format!("{} nonempty scales, need 3", used.len())));
    }
    let x: Vec<f64> = used.iter().map(|c| c.0.ln()).collect();
    let y: Vec<f64> = used.iter().map(|c| (c.1 as f64).ln()).collect();
    let fit = fit_line(&x, &y)?;
    Ok(BoxCount { slope: -fit.slope, counts })
}

/// Slope of `log median |f(t + ℓ) - f(t)|` against `log ℓ` over integer lags
/// on a series with spacing `dt`. Non-finite entries are skipped.
pub fn holder_exponent(series: &[f64], dt: f64, lags: &[usize]) -> Result<f64> {
    if !(dt > 0.0) {
        return invalid(format!("spacing must be positive, got {dt}"));
    }
    let (lo, hi) = lags.iter().fold((usize::MAX, 0usize), |(a, b), &l| (a.min(l), b.max(l)));
    if lags.is_empty() || lo == 0 || (hi as f64) < 10.0 * lo as f64 {
        return invalid("lags must be positive and span at least one decade");
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &lag in lags {
        let inc: Vec<f64> = series
            .iter()
            .zip(series.iter().skip(lag))
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (b - a).abs())
            .collect();
        match median(&inc) {
            Some(m) if m > 0.0 => {
                x.push((lag as f64 * dt).ln());
                y.push(m.ln());
            }
            _ => {}
        }
    }
    if x.len() < 2 {
        return Err(KpzError::InsufficientData("increments vanish or too few lags usable".into()));
    }
    Ok(fit_line(&x, &y)?.slope)
}

/// Least-squares line through `(log ε, log value)`.
pub fn scaling_fit(eps: &[f64], values: &[f64]) -> Result<LineFit> {
    if eps.len() != values.len() {
        return invalid("need as many values as eps");
    }
    if eps.len() < 3 {
        return Err(KpzError::InsufficientData(format!("{} points, need 3", eps.len())));
    }
    if let Some(v) = eps.iter().chain(values).find(|v| !(**v > 0.0)) {
        return invalid(format!("log-log fit needs positive inputs, got {v}"));
    }
    let x: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    fit_line(&x, &y)
}

/// Box dimension implied by a mass exponent and a run-length exponent:
/// `mass/run ~ δ^{-d}` at `δ = run`.
pub fn implied_dimension(mass_slope: f64, run_slope: f64) -> Result<f64> {
    if run_slope == 0.0 || !run_slope.is_finite() {
        return invalid("run-length exponent must be nonzero");
    }
    Ok((run_slope - mass_slope) / run_slope)
}

/// Middle-thirds Cantor fixture: cells of width `3^{-depth}` on `[0, 1]`,
/// flagged when the cell lies in the depth-`depth` construction.
pub fn cantor_fixture(depth: u32) -> TPTimeSet {
    let n = 3usize.pow(depth);
    let dt = 1.0 / n as f64;
    let flags = (0..n)
        .map(|mut i| {
            for _ in 0..depth {
                if i % 3 == 1 {
                    return false;
                }
                i /= 3;
            }
            true
        })
        .collect();
    let t_grid = (0..n).map(|i| (i as f64 + 0.5) * dt).collect();
    TPTimeSet { t_grid, flags, dt, eps: 1.0, a: f64::NAN, l: f64::NAN }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kpz::SpatialProfile;
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn uniform(n: usize, flags: impl Fn(usize) -> bool, eps: f64) -> TPTimeSet {
        let dt = 1.0 / n as f64;
        TPTimeSet::from_flags(
            (0..n).map(|i| (i as f64 + 0.5) * dt).collect(),
            (0..n).map(flags).collect(),
            dt,
            eps,
        )
        .unwrap()
    }

    fn two_bump_field(times: usize) -> SpaceTimeField {
        let x: Vec<f64> = (0..81).map(|i| -2.0 + 0.05 * i as f64).collect();
        let slices = (0..times)
            .map(|k| {
                let s = (k + 1) as f64 / times as f64;
                let h = x.iter().map(|&y| -((y * y - 1.0).powi(2)) + 0.1 * s * y).collect();
                SpatialProfile { x: x.clone(), h, t: (k + 1) as f64 / times as f64 }
            })
            .collect();
        SpaceTimeField { slices }
    }

    #[test]
    fn huge_eps_flags_everything_and_sets_are_nested() {
        let f = two_bump_field(20);
        let all = detect_tp_times(&f, 1e6, 0.5, 2.0, 0.9);
        assert!(all.flags.iter().all(|&b| b));
        let none = detect_tp_times(&f, 0.0, 0.5, 2.0, 0.9);
        assert_eq!(none.count(), 0);
        let small = detect_tp_times(&f, 0.05, 0.5, 2.0, 0.9);
        let large = detect_tp_times(&f, 0.15, 0.5, 2.0, 0.9);
        assert!(small.flags.iter().zip(&large.flags).all(|(s, l)| !s || *l));
        assert!(small.count() > 0 && small.count() < large.count());
    }

    #[test]
    fn measure_trivial_cases() {
        let empty = uniform(10, |_| false, 0.1);
        assert_eq!(mu_and_energy(&empty, 0.5).unwrap(), (0.0, 0.0));
        let one = uniform(10, |i| i == 3, 0.1);
        let (m, e) = mu_and_energy(&one, 0.5).unwrap();
        let dt: f64 = 0.1;
        assert!((m - 1.0).abs() < 1e-12);
        assert!((e - 2.0 * dt.powf(1.5) / (0.5 * 1.5) / 0.01).abs() < 1e-12);
        let full = uniform(50, |_| true, 0.3);
        let (m, e) = mu_and_energy(&full, 0.0).unwrap();
        assert!((e - m * m).abs() < 1e-9 * m * m);
        assert!(mu_and_energy(&full, 1.0).is_err());
        assert!(mu_and_energy(&uniform(5, |_| true, 0.0), 0.1).is_err());
    }

    #[test]
    fn energy_of_uniform_measure_matches_double_integral() {
        // μ → Lebesgue on [0,1]: ∫∫|t-s|^{-γ} = 2/((1-γ)(2-γ)), with a midpoint
        // error of order Δt^{1-γ}
        let g = 0.5;
        let exact = 2.0 / ((1.0 - g) * (2.0 - g));
        let err = |n: usize| (mu_and_energy(&uniform(n, |_| true, 1.0), g).unwrap().1 - exact).abs();
        let (coarse, fine) = (err(500), err(2000));
        assert!(fine < 1e-2);
        assert!((coarse / fine - 2.0).abs() < 0.2, "{coarse} {fine}");
    }

    #[test]
    fn box_counting_fixtures() {
        let ladder: Vec<f64> = (1..=7).map(|k| 3f64.powi(-k)).collect();
        let c = box_counting_dim(&cantor_fixture(9), &ladder).unwrap();
        assert!((c.slope - 2f64.ln() / 3f64.ln()).abs() < 0.05, "{}", c.slope);
        let full = uniform(4096, |_| true, 1.0);
        let ladder2: Vec<f64> = (1..=8).map(|k| 2f64.powi(-k)).collect();
        assert!((box_counting_dim(&full, &ladder2).unwrap().slope - 1.0).abs() < 0.02);
        assert_eq!(box_counting_dim(&uniform(64, |_| false, 1.0), &ladder2).unwrap().slope, 0.0);
        let single = uniform(64, |i| i == 5, 1.0);
        assert!(box_counting_dim(&single, &ladder2).unwrap().slope.abs() < 1e-12);
        assert!(box_counting_dim(&full, &[0.1, 0.05]).is_err());
    }

    #[test]
    fn box_counting_needs_three_scales() {
        let full = uniform(100, |_| true, 1.0);
        assert!(matches!(box_counting_dim(&full, &[1.0, 0.01]), Err(KpzError::InsufficientData(_))));
        assert!(matches!(box_counting_dim(&full, &[f64::NAN, 0.1]), Err(KpzError::InvalidArgument(_))));
    }

    #[test]
    fn holder_fixtures() {
        let lags = [1, 2, 4, 8, 16, 32];
        let lin: Vec<f64> = (0..1000).map(|i| i as f64 * 0.01).collect();
        assert!((holder_exponent(&lin, 0.01, &lags).unwrap() - 1.0).abs() < 0.02);
        let mut rng = stream_rng(21, 0);
        let dt: f64 = 1e-4;
        let mut acc = 0.0;
        let bm: Vec<f64> = (0..20000)
            .map(|_| {
                let z: f64 = rng.sample(StandardNormal);
                acc += dt.sqrt() * z;
                acc
            })
            .collect();
        assert!((holder_exponent(&bm, dt, &lags).unwrap() - 0.5).abs() < 0.05);
        assert!(matches!(holder_exponent(&[3.0; 100], 1.0, &lags), Err(KpzError::InsufficientData(_))));
        assert!(holder_exponent(&lin, 0.01, &[1, 2, 4]).is_err());
    }

    #[test]
    fn scaling_fits() {
        let eps = [0.05, 0.1, 0.2, 0.4];
        let lin: Vec<f64> = eps.iter().map(|e| 3.0 * e).collect();
        let f = scaling_fit(&eps, &lin).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        let cub: Vec<f64> = eps.iter().map(|e| e * e * e).collect();
        assert!((scaling_fit(&eps, &cub).unwrap().slope - 3.0).abs() < 1e-12);
        assert!(scaling_fit(&eps, &[1.0, 0.0, 1.0, 1.0]).is_err());
        assert!((implied_dimension(1.0, 3.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn runs() {
        let t = uniform(10, |i| matches!(i, 1 | 2 | 5 | 7 | 8 | 9), 1.0);
        let r: Vec<f64> = t.run_lengths().iter().map(|v| (v * 10.0).round()).collect();
        assert_eq!(r, vec![2.0, 1.0, 3.0]);
    }

    proptest! {
        #[test]
        fn invariants(bits in proptest::collection::vec(any::<bool>(), 1..200), eps in 0.01f64..2.0, g1 in 0.0f64..0.9, g2 in 0.0f64..0.9) {
            let n = bits.len();
            let t = uniform(n, |i| bits[i], eps);
            let (m, _) = mu_and_energy(&t, 0.0).unwrap();
            prop_assert!((m * eps - t.dt * t.count() as f64).abs() < 1e-12);
            let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
            let e_lo = mu_and_energy(&t, lo).unwrap().1;
            let e_hi = mu_and_energy(&t, hi).unwrap().1;
            prop_assert!(e_lo <= e_hi * (1.0 + 1e-12));
            let ladder = [0.5, 0.25, 0.1, 0.05, 0.02, 0.01];
            let counts: Vec<usize> = ladder.iter().map(|&d| box_count(&t, d)).collect();
            prop_assert!(counts.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
