//! Prelimiting KPZ profiles built from Brownian last passage values.
//!
//! Scaled coordinates: a start point `y` sits at `Y = 2 y n^{2/3}` on the
//! bottom line, an end point `x` at time `t` sits at `X = tn + 2 x n^{2/3}`,
//! and `S_n(y, x) = n^{-1/3}(LPP - tn - X + Y)`.

use crate::error::{invalid, KpzError, Result};
use crate::lpp::{lpp_row, running_max_step, sample_corner_passage, sample_environment, Environment, MelonEnsemble};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Default half-width of the `x` and `y` windows.
pub const DEFAULT_WINDOW: f64 = 3.0;

/// Support of the initial profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    NarrowWedge { u: f64 },
    DoubleWedge { u1: f64, u2: f64 },
    /// Linear interpolation between nodes, `-∞` outside `[grid[0], grid[last]]`.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

/// Initial profile with its envelope constants: `h₀(y) ≤ α - γ y²`,
/// `h₀ = -∞` below `-λ`, and `sup_{|y|≤θ} h₀ ≥ -θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialData {
    pub shape: Shape,
    pub alpha: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub theta: f64,
}

/// `h̃(x) = h(x - dx) - dh`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Shift {
    pub dx: f64,
    pub dh: f64,
}

impl InitialData {
    pub fn narrow_wedge(u: f64) -> Self {
        Self { shape: Shape::NarrowWedge { u }, alpha: u * u, gamma: 1.0, lambda: -u, theta: u.abs().max(1e-9) }
    }

    pub fn double_wedge(u1: f64, u2: f64) -> Self {
        let (lo, hi) = (u1.min(u2), u1.max(u2));
        let alpha = lo.powi(2).max(hi.powi(2));
        Self { shape: Shape::DoubleWedge { u1: lo, u2: hi }, alpha, gamma: 1.0, lambda: -lo, theta: lo.abs().max(1e-9) }
    }

    pub fn tabulated(grid: Vec<f64>, values: Vec<f64>, alpha: f64, gamma: f64, lambda: f64, theta: f64) -> Result<Self> {
        let d = Self { shape: Shape::Tabulated { grid, values }, alpha, gamma, lambda, theta };
        d.validate()?;
        Ok(d)
    }

    /// Check the envelope constants against the data.
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.theta > 0.0 && self.alpha.is_finite() && self.lambda.is_finite()) {
            return invalid("need γ > 0, θ > 0 and finite α, λ");
        }
        let pts: Vec<(f64, f64)> = match &self.shape {
            Shape::NarrowWedge { u } => vec![(*u, 0.0)],
            Shape::DoubleWedge { u1, u2 } => vec![(*u1, 0.0), (*u2, 0.0)],
            Shape::Tabulated { grid, values } => {
                if grid.len() != values.len() || grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return invalid("tabulated initial data needs a strictly increasing grid matching the values");
                }
                if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
                    return invalid("tabulated values must be real or -inf");
                }
                grid.iter().copied().zip(values.iter().copied()).collect()
            }
        };
        let slack = 1e-12 * (1.0 + self.alpha.abs());
        let mut witness = false;
        for (y, v) in pts {
            if v == f64::NEG_INFINITY {
                continue;
            }
            if y < -self.lambda - 1e-12 {
                return invalid(format!("finite value at y = {y} below the left cutoff"));
            }
            if v > self.alpha - self.gamma * y * y + slack {
                return invalid(format!("value {v} at y = {y} exceeds the parabolic envelope"));
            }
            witness |= y.abs() <= self.theta && v >= -self.theta;
        }
        if !witness {
            return invalid("no finite value inside the θ witness box");
        }
        Ok(())
    }

    /// `h₀(y)`; wedges are finite only at their exact support points.
    pub fn value(&self, y: f64) -> f64 {
        match &self.shape {
            Shape::NarrowWedge { u } => {
                if y == *u {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Shape::DoubleWedge { u1, u2 } => {
                if y == *u1 || y == *u2 {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            Shape::Tabulated { grid, values } => interp(grid, values, y),
        }
    }

    /// Shift to `α = λ = 0` and relabel `γ/2 → γ`; returns the new data and the shift applied.
    pub fn normalized(&self) -> (InitialData, Shift) {
        let dx = self.lambda;
        let dh = self.alpha + self.gamma * self.lambda * self.lambda;
        let shape = match &self.shape {
            Shape::NarrowWedge { u } => Shape::NarrowWedge { u: u + dx },
            Shape::DoubleWedge { u1, u2 } => Shape::DoubleWedge { u1: u1 + dx, u2: u2 + dx },
            Shape::Tabulated { grid, values } => Shape::Tabulated {
                grid: grid.iter().map(|g| g + dx).collect(),
                values: values.iter().map(|v| v - dh).collect(),
            },
        };
        // wedge heights stay at 0; the vertical shift is carried by `dh` alone
        let dh = match self.shape {
            Shape::Tabulated { .. } => dh,
            _ => 0.0,
        };
        let theta = self.theta + self.lambda.abs() + dh.abs();
        (InitialData { shape, alpha: 0.0, gamma: self.gamma / 2.0, lambda: 0.0, theta }, Shift { dx, dh })
    }

    fn support(&self) -> Option<Vec<f64>> {
        match self.shape {
            Shape::NarrowWedge { u } => Some(vec![u]),
            Shape::DoubleWedge { u1, u2 } => Some(vec![u1, u2]),
            Shape::Tabulated { .. } => None,
        }
    }
}

fn interp(grid: &[f64], values: &[f64], y: f64) -> f64 {
    let last = grid.len() - 1;
    if y < grid[0] || y > grid[last] {
        return f64::NEG_INFINITY;
    }
    let k = grid.partition_point(|&g| g <= y);
    if k == 0 {
        return values[0];
    }
    let i = k - 1;
    if grid[i] == y || i == last {
        return values[i];
    }
    let (a, b) = (values[i], values[i + 1]);
    if a == f64::NEG_INFINITY || b == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    a + (y - grid[i]) / (grid[i + 1] - grid[i]) * (b - a)
}

/// A profile on a grid of scaled locations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialProfile {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub t: f64,
}

impl SpatialProfile {
    /// Maximum value and the largest location attaining it.
    pub fn max(&self) -> Option<(f64, f64)> {
        let mut best: Option<(f64, f64)> = None;
        for (&x, &h) in self.x.iter().zip(&self.h) {
            if h.is_finite() && best.is_none_or(|(b, _)| h >= b) {
                best = Some((h, x));
            }
        }
        best
    }
}

/// A set of profiles at increasing times, all from one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub slices: Vec<SpatialProfile>,
}

/// Brownian lines with an offset: physical coordinate `X` sits at grid
/// position `X + origin`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sheet {
    env: Environment,
    origin: f64,
}

impl Sheet {
    pub fn new(env: Environment, origin: f64) -> Result<Self> {
        env.index_of(origin)?;
        Ok(Self { env, origin })
    }

    /// Sample `n` rate-one lines covering start points `y ≥ y_min` and end
    /// points `x ≤ x_max`.
    pub fn sample(n: usize, grid_step: f64, y_min: f64, x_max: f64, seed: u64) -> Result<Self> {
        let nf = n as f64;
        let c = 2.0 * nf.powf(2.0 / 3.0);
        let origin = ((-y_min * c).max(0.0) / grid_step).ceil() * grid_step;
        let extent = origin + nf + x_max * c + grid_step;
        if extent <= origin {
            return invalid("x window lies left of the origin");
        }
        let env = sample_environment(n, grid_step, extent, 1.0, 0.0, seed)?;
        Ok(Self { env, origin })
    }

    /// Use the melon curves, on their refined grid, as the environment.
    /// Passage values from any start point agree with the input lines only
    /// for the exact melon; [`crate::lpp::melon_grid`] is exact from the origin.
    pub fn from_melon(w: &MelonEnsemble) -> Self {
        Self { env: w.as_environment().clone(), origin: 0.0 }
    }

    pub fn env(&self) -> &Environment {
        &self.env
    }

    pub fn into_env(self) -> Environment {
        self.env
    }

    pub fn n(&self) -> usize {
        self.env.n()
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    /// Grid index nearest to physical `X`, and whether snapping moved it.
    pub fn locate(&self, big_x: f64) -> Result<(usize, bool)> {
        let g = big_x + self.origin;
        if g < -1e-9 || g > self.env.x_max() + 1e-9 {
            return invalid(format!("coordinate {big_x} outside the sampled lines"));
        }
        let i = self.env.snap(g);
        Ok((i, (self.env.x(i) - g).abs() > 1e-9 * self.env.dx()))
    }

    fn physical(&self, i: usize) -> f64 {
        self.env.x(i) - self.origin
    }
}

/// `S_n(y, x)` values and whether any endpoint had to be snapped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheetSlice {
    pub ys: Vec<f64>,
    pub xs: Vec<f64>,
    /// `values[i][j] = S_n(ys[i], xs[j])` at the snapped locations.
    pub values: Vec<Vec<f64>>,
    pub snapped: bool,
}

/// `S_n(y, x)` for every pair, using the snapped grid locations in the centring.
pub fn airy_sheet_slice(sheet: &Sheet, ys: &[f64], xs: &[f64]) -> Result<SheetSlice> {
    let n = sheet.n();
    let nf = n as f64;
    let c = 2.0 * nf.powf(2.0 / 3.0);
    let scale = nf.powf(-1.0 / 3.0);
    let mut snapped = false;
    let mut x_idx = Vec::with_capacity(xs.len());
    for &x in xs {
        let (i, s) = sheet.locate(nf + c * x)?;
        snapped |= s;
        x_idx.push(i);
    }
    let mut values = Vec::with_capacity(ys.len());
    for &y in ys {
        let (iy, s) = sheet.locate(c * y)?;
        snapped |= s;
        let row = lpp_row(&sheet.env, iy, n, 1)?;
        let yy = sheet.physical(iy);
        values.push(
            x_idx
                .iter()
                .map(|&ix| if ix < iy { f64::NEG_INFINITY } else { scale * (row[ix] - nf - sheet.physical(ix) + yy) })
                .collect(),
        );
    }
    Ok(SheetSlice { ys: ys.to_vec(), xs: xs.to_vec(), values, snapped })
}

/// Exact sample of `S_n(0, 0)` through the largest GUE eigenvalue.
pub fn sample_s00<R: Rng>(n: usize, rng: &mut R) -> Result<f64> {
    let nf = n as f64;
    Ok(nf.powf(-1.0 / 3.0) * (sample_corner_passage(n, nf, rng)? - 2.0 * nf))
}

/// Boundary values on the bottom line: `n^{1/3} h̃₀(y) + Y` at `Y = 2 y n^{2/3}`.
pub(crate) fn start_vector(sheet: &Sheet, h0: &InitialData, y_window: f64) -> Result<Vec<f64>> {
    let env = &sheet.env;
    let nf = sheet.n() as f64;
    let c = 2.0 * nf.powf(2.0 / 3.0);
    let lift = nf.powf(1.0 / 3.0);
    let mut start = vec![f64::NEG_INFINITY; env.m()];
    match h0.support() {
        Some(points) => {
            for u in points {
                if u < 0.0 || u > y_window {
                    continue;
                }
                let (i, _) = sheet.locate(c * u)?;
                start[i] = sheet.physical(i);
            }
        }
        None => {
            for (i, s) in start.iter_mut().enumerate() {
                let yy = sheet.physical(i);
                if yy < -1e-12 {
                    continue;
                }
                let y = yy / c;
                if y > y_window + 1e-12 {
                    break;
                }
                let v = h0.value(y);
                if v.is_finite() {
                    *s = lift * v + yy;
                }
            }
        }
    }
    if start.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(KpzError::DegenerateInput("initial data has no finite value in the window".into()));
    }
    Ok(start)
}

/// Best boundary-plus-passage value to every grid point of the line reached
/// after `k` lines, for each requested `k` (ascending).
pub(crate) fn sweep_levels(env: &Environment, start: &[f64], levels: &[usize]) -> Vec<Vec<f64>> {
    let n = env.n();
    let mut out = Vec::with_capacity(levels.len());
    let mut cur = vec![f64::NEG_INFINITY; env.m()];
    running_max_step(env.line(n), start, &mut cur);
    let mut tmp = vec![0.0; env.m()];
    let mut next = 0;
    for k in 1..=n {
        if k > 1 {
            running_max_step(env.line(n + 1 - k), &cur, &mut tmp);
            std::mem::swap(&mut cur, &mut tmp);
        }
        while next < levels.len() && levels[next] == k {
            out.push(cur.clone());
            next += 1;
        }
    }
    out
}

fn profile_from_row(sheet: &Sheet, row: &[f64], k: usize, xs: &[f64], shift: Shift) -> Result<SpatialProfile> {
    let nf = sheet.n() as f64;
    let c = 2.0 * nf.powf(2.0 / 3.0);
    let scale = nf.powf(-1.0 / 3.0);
    let kf = k as f64;
    let mut px = Vec::with_capacity(xs.len());
    let mut ph = Vec::with_capacity(xs.len());
    for &x in xs {
        let target = kf + c * (x + shift.dx);
        if target + sheet.origin < -1e-9 {
            // left of every start point: no path arrives
            px.push(x);
            ph.push(f64::NEG_INFINITY);
            continue;
        }
        let (i, _) = sheet.locate(target)?;
        let big_x = sheet.physical(i);
        px.push((big_x - kf) / c - shift.dx);
        let v = row[i];
        ph.push(if v == f64::NEG_INFINITY { v } else { scale * (v - kf - big_x) + shift.dh });
    }
    if ph.iter().all(|v| !v.is_finite()) {
        return Err(KpzError::DegenerateInput("profile is -inf everywhere".into()));
    }
    Ok(SpatialProfile { x: px, h: ph, t: kf / nf })
}

/// `h^(n)(x) = sup_y (h₀(y) + S_n(y, x))` with `y` in `[0, DEFAULT_WINDOW]`
/// after normalisation.
pub fn h_profile(sheet: &Sheet, h0: &InitialData, xs: &[f64]) -> Result<SpatialProfile> {
    h_profile_windowed(sheet, h0, xs, DEFAULT_WINDOW)
}

pub fn h_profile_windowed(sheet: &Sheet, h0: &InitialData, xs: &[f64], y_window: f64) -> Result<SpatialProfile> {
    h0.validate()?;
    let (norm, shift) = h0.normalized();
    let start = start_vector(sheet, &norm, y_window)?;
    let n = sheet.n();
    let row = sweep_levels(&sheet.env, &start, &[n]).pop().expect("one level requested");
    profile_from_row(sheet, &row, n, xs, shift)
}

/// Profiles at times `t` in `(0, 1]`: the slice at `t` uses the first
/// `⌊tn⌋` lines counted from the bottom, so later slices extend earlier
/// paths by more lines. Slice times are reported as `⌊tn⌋/n`.
pub fn h_spacetime(sheet: &Sheet, h0: &InitialData, t_grid: &[f64], xs: &[f64]) -> Result<SpaceTimeField> {
    h0.validate()?;
    let n = sheet.n();
    let mut levels = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        if !(t > 0.0 && t <= 1.0) {
            return invalid(format!("time {t} outside (0, 1]"));
        }
        let k = (t * n as f64 + 1e-9).floor() as usize;
        if k < 2 {
            return invalid(format!("time {t} uses fewer than two lines"));
        }
        levels.push(k);
    }
    let mut order: Vec<usize> = (0..levels.len()).collect();
    order.sort_by_key(|&i| levels[i]);
    let mut sorted: Vec<usize> = order.iter().map(|&i| levels[i]).collect();
    sorted.dedup();
    let (norm, shift) = h0.normalized();
    let start = start_vector(sheet, &norm, DEFAULT_WINDOW)?;
    let rows = sweep_levels(&sheet.env, &start, &sorted);
    let slices = levels
        .iter()
        .map(|k| {
            let r = sorted.binary_search(k).expect("level present");
            profile_from_row(sheet, &rows[r], *k, xs, shift)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SpaceTimeField { slices })
}

/// Near-maximiser summary of one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TPReport {
    pub max_value: f64,
    pub argmax: f64,
    /// `(x1, x2, deficit1, deficit2)`; for each admissible `x1`, the farthest admissible `x2`.
    pub pairs: Vec<(f64, f64, f64, f64)>,
    pub in_tp_set: bool,
}

/// Pairs in `[-βL, βL]²` at distance at least `A` whose deficits from the
/// maximum are at most `eps`; membership also needs the maximum value in
/// `[-β√L, β√L]`.
pub fn find_near_maximizers(profile: &SpatialProfile, eps: f64, a: f64, l: f64, beta: f64) -> TPReport {
    let Some((max_value, argmax)) = profile.max() else {
        return TPReport { max_value: f64::NEG_INFINITY, argmax: f64::NAN, pairs: vec![], in_tp_set: false };
    };
    let reach = beta * l;
    let near: Vec<(f64, f64)> = profile
        .x
        .iter()
        .zip(&profile.h)
        .filter(|(x, h)| x.abs() <= reach && h.is_finite() && max_value - **h <= eps)
        .map(|(&x, &h)| (x, max_value - h))
        .collect();
    let mut pairs = Vec::new();
    if let Some(&(xl, dl)) = near.iter().max_by(|p, q| p.0.total_cmp(&q.0)) {
        for &(x1, d1) in &near {
            if xl - x1 >= a {
                pairs.push((x1, xl, d1, dl));
            }
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0));
    let in_tp_set = !pairs.is_empty() && max_value.abs() <= beta * l.sqrt();
    TPReport { max_value, argmax, pairs, in_tp_set }
}

/// Evenly spaced scaled locations.
pub fn linspace(a: f64, b: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![a],
        _ => (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect(),
    }
}
