//! Multi-line environments, last passage values, disjoint-path maxima and the
//! melon transform.
//!
//! Line `j` (1-based) is stored in row `j - 1`. Paths start on a high line
//! index and move up to line 1, jumping only at grid times. Lines are read as
//! the piecewise-linear interpolants of their grid values; for such lines the
//! optimal jump times can always be taken on the grid.

use crate::error::{invalid, KpzError, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rand_distr::{Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Default cap on `n·m` stored values (1 GiB of f64).
pub const DEFAULT_MEMORY_BUDGET: usize = 1 << 27;

/// How an environment was produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Brownian { rate: f64, drift: f64, seed: u64 },
    Deterministic,
}

/// `n` functions sampled on a common grid starting at 0: the uniform grid
/// `0, Δ, …, X_max`, or a refinement of it produced by the melon transform.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    n: usize,
    m: usize,
    dx: f64,
    xs: Vec<f64>,
    values: Vec<f64>,
    provenance: Provenance,
}

impl Environment {
    /// Build from explicit lines (line 1 first), all of equal length.
    pub fn from_lines(lines: Vec<Vec<f64>>, dx: f64) -> Result<Self> {
        if lines.is_empty() {
            return invalid("environment needs at least one line");
        }
        if !(dx > 0.0 && dx.is_finite()) {
            return invalid("grid step must be positive");
        }
        let m = lines[0].len();
        if m == 0 || lines.iter().any(|l| l.len() != m) {
            return invalid("lines must share a nonempty grid");
        }
        let n = lines.len();
        let values: Vec<f64> = lines.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return invalid("environment values must be finite");
        }
        Ok(Self { n, m, dx, xs: uniform_grid(m, dx), values, provenance: Provenance::Deterministic })
    }

    /// Build on an explicit strictly increasing grid starting at 0; `dx` is
    /// the nominal step recorded with the environment.
    pub fn from_lines_on(lines: Vec<Vec<f64>>, xs: Vec<f64>, dx: f64) -> Result<Self> {
        let mut env = Self::from_lines(lines, dx)?;
        if xs.len() != env.m || xs[0] != 0.0 || xs.windows(2).any(|w| !(w[0] < w[1])) {
            return invalid("grid must start at 0, increase strictly and match the lines");
        }
        env.xs = xs;
        Ok(env)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of grid points.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn x_max(&self) -> f64 {
        self.xs[self.m - 1]
    }

    /// True when the grid is `0, Δ, 2Δ, …`.
    pub fn is_uniform(&self) -> bool {
        self.xs.iter().enumerate().all(|(i, &x)| x == self.dx * i as f64)
    }

    pub fn grid(&self) -> &[f64] {
        &self.xs
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn x(&self, i: usize) -> f64 {
        self.xs[i]
    }

    /// Values of line `j` (1-based).
    pub fn line(&self, j: usize) -> &[f64] {
        &self.values[(j - 1) * self.m..j * self.m]
    }

    fn line_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.values[(j - 1) * self.m..j * self.m]
    }

    /// Index of the grid point at `x`; errors if `x` is not on the grid.
    pub fn index_of(&self, x: f64) -> Result<usize> {
        let k = self.snap(x);
        if (self.xs[k] - x).abs() > 1e-9 * self.dx.max(x.abs() * 1e-3) {
            return invalid(format!("{x} is not a grid point"));
        }
        Ok(k)
    }

    /// Nearest grid index, clamped to the grid.
    pub fn snap(&self, x: f64) -> usize {
        let k = self.xs.partition_point(|&v| v < x);
        if k == 0 {
            0
        } else if k == self.m || x - self.xs[k - 1] <= self.xs[k] - x {
            k - 1
        } else {
            k
        }
    }

    /// First `k` lines as a new environment sharing the grid.
    pub fn top_lines(&self, k: usize) -> Result<Environment> {
        if k == 0 || k > self.n {
            return invalid(format!("cannot take {k} of {} lines", self.n));
        }
        Ok(Self {
            n: k,
            m: self.m,
            dx: self.dx,
            xs: self.xs.clone(),
            values: self.values[..k * self.m].to_vec(),
            provenance: self.provenance,
        })
    }

    /// Write the binary snapshot: header `n, Δ, X_max, rate, drift, seed`, then values.
    /// Only uniform grids can be written.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if !self.is_uniform() {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidInput, "snapshot needs a uniform grid"));
        }
        let (rate, drift, seed) = match self.provenance {
            Provenance::Brownian { rate, drift, seed } => (rate, drift, seed),
            Provenance::Deterministic => (f64::NAN, f64::NAN, u64::MAX),
        };
        w.write_all(&(self.n as u64).to_le_bytes())?;
        for v in [self.dx, self.x_max(), rate, drift] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&seed.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let io = |e: std::io::Error| KpzError::InvalidArgument(format!("snapshot read: {e}"));
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut R| -> Result<[u8; 8]> {
            r.read_exact(&mut b8).map_err(io)?;
            Ok(b8)
        };
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        let dx = f64::from_le_bytes(next(&mut r)?);
        let x_max = f64::from_le_bytes(next(&mut r)?);
        let rate = f64::from_le_bytes(next(&mut r)?);
        let drift = f64::from_le_bytes(next(&mut r)?);
        let seed = u64::from_le_bytes(next(&mut r)?);
        let m = (x_max / dx + 1e-9).floor() as usize + 1;
        if n == 0 || n.saturating_mul(m) > DEFAULT_MEMORY_BUDGET {
            return invalid("snapshot header out of range");
        }
        let mut values = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            values.push(f64::from_le_bytes(next(&mut r)?));
        }
        let provenance = if seed == u64::MAX && rate.is_nan() {
            Provenance::Deterministic
        } else {
            Provenance::Brownian { rate, drift, seed }
        };
        Ok(Self { n, m, dx, xs: uniform_grid(m, dx), values, provenance })
    }
}

fn uniform_grid(m: usize, dx: f64) -> Vec<f64> {
    (0..m).map(|i| dx * i as f64).collect()
}

/// Sample `n` independent Brownian lines with increments `N(drift·Δ, rate·Δ)`.
pub fn sample_environment(n: usize, grid_step: f64, x_max: f64, rate: f64, drift: f64, seed: u64) -> Result<Environment> {
    sample_environment_with_budget(n, grid_step, x_max, rate, drift, seed, DEFAULT_MEMORY_BUDGET)
}

pub fn sample_environment_with_budget(
    n: usize,
    grid_step: f64,
    x_max: f64,
    rate: f64,
    drift: f64,
    seed: u64,
    budget: usize,
) -> Result<Environment> {
    if n == 0 {
        return invalid("need at least one line");
    }
    if !(grid_step > 0.0 && x_max > 0.0 && rate > 0.0 && drift.is_finite()) {
        return invalid("grid step, extent and rate must be positive");
    }
    let m = (x_max / grid_step + 1e-9).floor() as usize + 1;
    let needed = n.saturating_mul(m);
    if needed > budget {
        return Err(KpzError::MemoryBudget { needed, budget });
    }
    let mut values = vec![0.0; needed];
    let sd = (rate * grid_step).sqrt();
    let mu = drift * grid_step;
    for (j, row) in values.chunks_mut(m).enumerate() {
        // one stream per line, so the first k lines do not depend on n
        let mut rng = stream_rng(seed, j as u64);
        let mut acc = 0.0;
        for v in row.iter_mut().skip(1) {
            let z: f64 = rng.sample(StandardNormal);
            acc += mu + sd * z;
            *v = acc;
        }
    }
    Ok(Environment {
        n,
        m,
        dx: grid_step,
        xs: uniform_grid(m, grid_step),
        values,
        provenance: Provenance::Brownian { rate, drift, seed },
    })
}

/// Sweep lines `from, from-1, …, to`, starting from `start(r)` = best value of
/// being on line `from` at grid index `r` (`-∞` where not allowed).
/// Returns the best value of being on line `to` at each grid index.
pub fn lpp_sweep(env: &Environment, start: &[f64], from: usize, to: usize) -> Result<Vec<f64>> {
    if !(to >= 1 && from >= to && from <= env.n) {
        return invalid(format!("line range {from} -> {to} invalid for {} lines", env.n));
    }
    if start.len() != env.m {
        return invalid("boundary length must match the grid");
    }
    let mut cur = vec![f64::NEG_INFINITY; env.m];
    running_max_step(env.line(from), start, &mut cur);
    let mut tmp = vec![0.0; env.m];
    for k in (to..from).rev() {
        running_max_step(env.line(k), &cur, &mut tmp);
        std::mem::swap(&mut cur, &mut tmp);
    }
    Ok(cur)
}

/// `out(s) = f(s) + max_{r ≤ s} (g(r) - f(r))`.
#[inline]
pub(crate) fn running_max_step(f: &[f64], g: &[f64], out: &mut [f64]) {
    let mut best = f64::NEG_INFINITY;
    for i in 0..f.len() {
        let c = g[i] - f[i];
        if c > best {
            best = c;
        }
        out[i] = f[i] + best;
    }
}

/// Last passage value from `(y, from_line)` to `(x, to_line)`; `-∞` when `y > x`.
pub fn lpp_value(env: &Environment, y: f64, x: f64, from_line: usize, to_line: usize) -> Result<f64> {
    let iy = env.index_of(y)?;
    let ix = env.index_of(x)?;
    lpp_value_idx(env, iy, ix, from_line, to_line)
}

pub fn lpp_value_idx(env: &Environment, iy: usize, ix: usize, from_line: usize, to_line: usize) -> Result<f64> {
    if !(to_line >= 1 && from_line >= to_line && from_line <= env.n) {
        return invalid(format!("line range {from_line} -> {to_line} invalid for {} lines", env.n));
    }
    if iy > ix {
        return Ok(f64::NEG_INFINITY);
    }
    let row = lpp_row(env, iy, from_line, to_line)?;
    Ok(row[ix])
}

/// Passage values from `(y_idx, from_line)` to every grid point on `to_line`.
pub fn lpp_row(env: &Environment, iy: usize, from_line: usize, to_line: usize) -> Result<Vec<f64>> {
    if iy >= env.m {
        return invalid("start index off the grid");
    }
    let mut start = vec![f64::NEG_INFINITY; env.m];
    start[iy] = 0.0;
    lpp_sweep(env, &start, from_line, to_line)
}

/// Maximal total weight of `j` disjoint paths from `(0, n)` to `(x, 1)`.
///
/// Exact dynamic program over grid columns: the state is the strictly
/// increasing tuple of lines occupied by the paths on one grid interval, and
/// between intervals every path may only move up.
pub fn lpp_disjoint(env: &Environment, j: usize, x: f64) -> Result<f64> {
    let ix = env.index_of(x)?;
    lpp_disjoint_idx(env, j, ix)
}

pub fn lpp_disjoint_idx(env: &Environment, j: usize, ix: usize) -> Result<f64> {
    let n = env.n;
    if j == 0 {
        return Ok(0.0);
    }
    if j > n {
        return invalid(format!("j = {j} exceeds {n} lines"));
    }
    let count = (0..j).fold(1.0f64, |acc, i| acc * (n - i) as f64 / (i + 1) as f64);
    if count > 5000.0 || count * count * ix as f64 > 5e8 {
        return Err(KpzError::TooLarge(format!("{count} states over {ix} columns")));
    }
    let states = combinations(n, j);
    let ns = states.len();
    if ix == 0 {
        return Ok(0.0);
    }
    // allowed[a] = states b with b ≤ a componentwise
    let allowed: Vec<Vec<usize>> = states
        .iter()
        .map(|a| (0..ns).filter(|&b| states[b].iter().zip(a).all(|(x, y)| x <= y)).collect())
        .collect();
    let cell = |c: usize, s: &Vec<usize>| -> f64 { s.iter().map(|&k| env.line(k)[c] - env.line(k)[c - 1]).sum() };
    let mut best: Vec<f64> = states.iter().map(|s| cell(1, s)).collect();
    let mut next = vec![0.0; ns];
    for c in 2..=ix {
        for (b, sb) in states.iter().enumerate() {
            // predecessor a must satisfy b ≤ a, i.e. b ∈ allowed[a]
            let mut m = f64::NEG_INFINITY;
            for (a, al) in allowed.iter().enumerate() {
                if al.binary_search(&b).is_ok() && best[a] > m {
                    m = best[a];
                }
            }
            next[b] = m + cell(c, sb);
        }
        std::mem::swap(&mut best, &mut next);
    }
    Ok(best.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

fn combinations(n: usize, j: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (1..=j).collect();
    loop {
        out.push(cur.clone());
        let mut i = j;
        while i > 0 && cur[i - 1] == n - j + i {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        cur[i - 1] += 1;
        for k in i..j {
            cur[k] = cur[k - 1] + 1;
        }
    }
}

/// Two-line Pitman transform. Returns `(new_top, new_bottom)`.
pub fn pitman_pair(top: &[f64], bottom: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if top.len() != bottom.len() || top.is_empty() {
        return invalid("lines must share the grid");
    }
    let mut t = top.to_vec();
    let mut b = bottom.to_vec();
    pitman_in_place(&mut t, &mut b, 0.0);
    Ok((t, b))
}

/// Apply the transform in place; returns false (and leaves the pair untouched)
/// when the correction never exceeds `tol`.
fn pitman_in_place(top: &mut [f64], bottom: &mut [f64], tol: f64) -> bool {
    let mut r = 0.0f64;
    let mut changed = false;
    let mut corr = Vec::with_capacity(top.len());
    for i in 0..top.len() {
        r = r.max(bottom[i] - top[i]);
        if r > tol {
            changed = true;
        }
        corr.push(r);
    }
    if !changed {
        return false;
    }
    for i in 0..top.len() {
        top[i] += corr[i];
        bottom[i] -= corr[i];
    }
    true
}

/// Ordered ensemble `Wf` with its scaled view.
///
/// The curves live on a refinement of the input grid; `grid_index(i)` is the
/// position of input grid point `i` in it.
#[derive(Debug, Clone, PartialEq)]
pub struct MelonEnsemble {
    curves: Environment,
    grid: Vec<usize>,
}

impl MelonEnsemble {
    pub fn as_environment(&self) -> &Environment {
        &self.curves
    }

    pub fn into_environment(self) -> Environment {
        self.curves
    }

    pub fn n(&self) -> usize {
        self.curves.n
    }

    /// Number of input grid points.
    pub fn grid_len(&self) -> usize {
        self.grid.len()
    }

    pub fn grid_index(&self, i: usize) -> usize {
        self.grid[i]
    }

    /// Input grid coordinate of index `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.curves.x(self.grid[i])
    }

    /// Curve `j` (1-based) on the refined grid.
    pub fn curve(&self, j: usize) -> &[f64] {
        self.curves.line(j)
    }

    /// Curve `j` at the input grid points.
    pub fn curve_on_grid(&self, j: usize) -> Vec<f64> {
        let c = self.curves.line(j);
        self.grid.iter().map(|&k| c[k]).collect()
    }

    /// The ensemble restricted to the input grid.
    pub fn grid_environment(&self) -> Environment {
        let lines = (1..=self.n()).map(|j| self.curve_on_grid(j)).collect();
        let xs = self.grid.iter().map(|&k| self.curves.x(k)).collect();
        let mut e = Environment::from_lines_on(lines, xs, self.curves.dx).expect("melon grid is valid");
        e.provenance = Provenance::Deterministic;
        e
    }

    /// Scaled coordinate `x = (X - n)/(2 n^{2/3})` of input grid index `i`.
    pub fn scaled_x(&self, i: usize) -> f64 {
        let n = self.curves.n as f64;
        (self.x(i) - n) / (2.0 * n.powf(2.0 / 3.0))
    }

    /// `L_{n,j}` on every input grid point, paired with its scaled coordinate.
    pub fn scaled_curve(&self, j: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.curves.n as f64;
        let c = n.powf(-1.0 / 3.0);
        let line = self.curves.line(j);
        self.grid
            .iter()
            .enumerate()
            .map(|(i, &k)| (self.scaled_x(i), c * (line[k] - n - self.curves.x(k))))
            .unzip()
    }
}

/// Melon transform by adjacent Pitman transforms of the piecewise-linear lines.
///
/// Lines are first shifted to vanish at the origin. Each transform is applied
/// to the interpolants exactly: the running maximum can start to grow inside a
/// cell, and that point becomes a new knot of both lines. The insertion order
/// `(1)(2 1)(3 2 1)…` uses `n(n-1)/2` applications; a final sweep confirms that
/// no adjacent pair changes.
///
/// The number of knots grows with `n`; [`melon_grid`] is the cheap variant for
/// large ensembles.
pub fn melon(env: &Environment) -> Result<MelonEnsemble> {
    let n = env.n;
    let mut lines: Vec<Piecewise> = (1..=n)
        .map(|j| {
            let l = env.line(j);
            Piecewise { xs: env.xs.clone(), ys: l.iter().map(|v| v - l[0]).collect() }
        })
        .collect();
    let scale = env.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;
    for k in 2..=n {
        for i in (1..k).rev() {
            pitman_lines(&mut lines, i, 0.0);
        }
    }
    let mut settled = false;
    for _ in 0..=n {
        let mut changed = false;
        for i in 1..n {
            changed |= pitman_lines(&mut lines, i, tol);
        }
        if !changed {
            settled = true;
            break;
        }
    }
    if !settled {
        return Err(KpzError::Internal("melon sweeps did not settle".into()));
    }
    let knots = lines.iter().fold(Vec::new(), |acc: Vec<f64>, p| merge_knots(&acc, &p.xs));
    let grid: Vec<usize> = env.xs.iter().map(|&x| knots.partition_point(|&v| v < x)).collect();
    let values: Vec<f64> = lines.iter().flat_map(|p| p.resample(&knots)).collect();
    let m = knots.len();
    Ok(MelonEnsemble {
        curves: Environment { n, m, dx: env.dx, xs: knots, values, provenance: Provenance::Deterministic },
        grid,
    })
}

/// Grid-level melon: adjacent Pitman transforms of the grid values only.
///
/// Curves stay on the input grid, are ordered and conserve the pointwise sum,
/// and the top curve equals `lpp_row(env, 0, n, 1)` exactly. Lower curves
/// approximate the exact melon to grid resolution.
pub fn melon_grid(env: &Environment) -> Result<MelonEnsemble> {
    let n = env.n;
    let mut w = env.clone();
    w.provenance = Provenance::Deterministic;
    for j in 1..=n {
        let l = w.line_mut(j);
        let f0 = l[0];
        l.iter_mut().for_each(|v| *v -= f0);
    }
    let scale = w.values.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-12 * scale;
    // bottom-up passes: after pass k the top k curves are final
    for k in 1..n {
        for i in (k..n).rev() {
            apply_pair(&mut w, i, 0.0);
        }
    }
    for _ in 0..=n {
        let mut changed = false;
        for i in 1..n {
            changed |= apply_pair(&mut w, i, tol);
        }
        if !changed {
            let grid = (0..w.m).collect();
            return Ok(MelonEnsemble { curves: w, grid });
        }
    }
    Err(KpzError::Internal("melon sweeps did not settle".into()))
}

fn apply_pair(w: &mut Environment, i: usize, tol: f64) -> bool {
    let m = w.m;
    let (head, tail) = w.values.split_at_mut(i * m);
    let top = &mut head[(i - 1) * m..];
    let bottom = &mut tail[..m];
    pitman_in_place(top, bottom, tol)
}

/// Piecewise-linear function through `(xs[i], ys[i])`.
#[derive(Debug, Clone)]
struct Piecewise {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Piecewise {
    /// Values at `knots`, a sorted superset of `self.xs`.
    fn resample(&self, knots: &[f64]) -> Vec<f64> {
        if knots.len() == self.xs.len() {
            return self.ys.clone();
        }
        let mut k = 0;
        knots
            .iter()
            .map(|&x| {
                while k + 1 < self.xs.len() && self.xs[k + 1] <= x {
                    k += 1;
                }
                if self.xs[k] == x || k + 1 == self.xs.len() {
                    self.ys[k]
                } else {
                    let s = (x - self.xs[k]) / (self.xs[k + 1] - self.xs[k]);
                    self.ys[k] + s * (self.ys[k + 1] - self.ys[k])
                }
            })
            .collect()
    }
}

fn merge_knots(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let v = if j == b.len() || (i < a.len() && a[i] < b[j]) {
            i += 1;
            a[i - 1]
        } else {
            if i < a.len() && a[i] == b[j] {
                i += 1;
            }
            j += 1;
            b[j - 1]
        };
        out.push(v);
    }
    out
}

/// Exact Pitman transform of lines `i` and `i + 1`; false when the correction
/// never exceeds `tol`.
fn pitman_lines(lines: &mut [Piecewise], i: usize, tol: f64) -> bool {
    let (top, bot) = (&lines[i - 1], &lines[i]);
    let knots = if top.xs == bot.xs { top.xs.clone() } else { merge_knots(&top.xs, &bot.xs) };
    let t = top.resample(&knots);
    let b = bot.resample(&knots);
    let mut run = 0.0f64;
    let mut peak = 0.0f64;
    for (tv, bv) in t.iter().zip(&b) {
        peak = peak.max(bv - tv);
    }
    if peak <= tol {
        return false;
    }
    let cap = knots.len() + knots.len() / 4;
    let (mut xs, mut nt, mut nb) = (Vec::with_capacity(cap), Vec::with_capacity(cap), Vec::with_capacity(cap));
    for k in 0..knots.len() {
        let g = b[k] - t[k];
        if k > 0 {
            let g0 = b[k - 1] - t[k - 1];
            if g0 < run && g > run {
                let s = (run - g0) / (g - g0);
                let x = knots[k - 1] + s * (knots[k] - knots[k - 1]);
                if x > knots[k - 1] && x < knots[k] {
                    let tv = t[k - 1] + s * (t[k] - t[k - 1]);
                    let bv = b[k - 1] + s * (b[k] - b[k - 1]);
                    xs.push(x);
                    nt.push(tv + run);
                    nb.push(bv - run);
                }
            }
        }
        run = run.max(g);
        xs.push(knots[k]);
        nt.push(t[k] + run);
        nb.push(b[k] - run);
    }
    lines[i - 1] = Piecewise { xs: xs.clone(), ys: nt };
    lines[i] = Piecewise { xs, ys: nb };
    true
}

/// One row of the melon identity report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityRow {
    pub y: f64,
    pub x: f64,
    pub direct: f64,
    pub melon: f64,
    pub diff: f64,
}

/// Compare `lpp_value(env, y→x)` with the same passage value in the melon.
pub fn melon_identity_report(env: &Environment, samples: &[(f64, f64)]) -> Result<Vec<IdentityRow>> {
    let w = melon(env)?;
    melon_identity_report_with(env, &w, samples)
}

pub fn melon_identity_report_with(env: &Environment, w: &MelonEnsemble, samples: &[(f64, f64)]) -> Result<Vec<IdentityRow>> {
    let n = env.n;
    samples
        .iter()
        .map(|&(y, x)| {
            if y < 0.0 {
                return invalid("melon identity needs y >= 0");
            }
            let direct = lpp_value(env, y, x, n, 1)?;
            let melon = lpp_value(&w.curves, y, x, n, 1)?;
            let diff = if direct == melon { 0.0 } else { direct - melon };
            Ok(IdentityRow { y, x, direct, melon, diff })
        })
        .collect()
}

/// Exact sample of the passage value from `(0, n)` to `(t, 1)` in `n`
/// independent rate-one Brownian lines.
///
/// Uses the largest eigenvalue of the tridiagonal Hermite model of GUE
/// (diagonal `N(0,1)`, off-diagonal `√Gamma(k,1)`), scaled by `√t`, found by
/// Sturm-sequence bisection.
pub fn sample_corner_passage<R: Rng>(n: usize, t: f64, rng: &mut R) -> Result<f64> {
    if n == 0 || !(t > 0.0) {
        return invalid("need n >= 1 and t > 0");
    }
    let diag: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut off2 = Vec::with_capacity(n.saturating_sub(1));
    for k in (1..n).rev() {
        let g = Gamma::new(k as f64, 1.0).map_err(|e| KpzError::Internal(e.to_string()))?;
        off2.push(rng.sample(g));
    }
    Ok(t.sqrt() * tridiagonal_max_eig(&diag, &off2))
}

/// Exponential corner-growth passage times `G(n + k, n - k)` for
/// `k = -k_max..=k_max`, from i.i.d. rate-one weights on the lattice.
pub fn corner_growth_antidiagonal<R: Rng>(n: usize, k_max: usize, rng: &mut R) -> Result<Vec<f64>> {
    antidiagonal_with(n, k_max, |_, _| rng.sample(Exp1))
}

/// Mean ladder overshoot of the anti-diagonal increments of `G`.
///
/// Along an anti-diagonal the passage time moves locally by differences of two
/// independent exponentials of mean 2; the upward overshoot of such a walk is
/// exactly exponential with mean 2. Adding it to the lattice maximum removes the
/// leading `O(n^{-1/3})` discretisation bias of the scaled supremum.
pub const LADDER_OVERSHOOT: f64 = 2.0;

/// `sup_{|x| ≤ l} (G(n + x(2n)^{2/3}, n - x(2n)^{2/3}) - 4n) / (2^{4/3} n^{1/3})`,
/// corrected for the lattice maximum; converges to `sup (A2(x) - x²)` over `[-l, l]`.
pub fn corner_growth_window_sup<R: Rng>(n: usize, l: f64, rng: &mut R) -> Result<f64> {
    if !(l >= 0.0 && l.is_finite()) {
        return invalid(format!("window half-width must be nonnegative, got {l}"));
    }
    let nf = n as f64;
    let k_max = (l * (2.0 * nf).powf(2.0 / 3.0)).floor() as usize;
    let g = corner_growth_antidiagonal(n, k_max, rng)?;
    let top = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let correction = if k_max > 0 { LADDER_OVERSHOOT } else { 0.0 };
    Ok((top + correction - 4.0 * nf) / (2f64.powf(4.0 / 3.0) * nf.cbrt()))
}

fn antidiagonal_with(n: usize, k_max: usize, mut weight: impl FnMut(usize, usize) -> f64) -> Result<Vec<f64>> {
    if n == 0 || k_max >= n {
        return invalid(format!("need 0 <= k_max < n, got n = {n}, k_max = {k_max}"));
    }
    let width = n + k_max;
    // g[i - 1] = G(i, j) for the current row j
    let mut g = vec![0.0f64; width];
    let mut out = vec![0.0; 2 * k_max + 1];
    for j in 1..=width {
        let last = width.min(2 * n - j);
        let mut left = 0.0f64;
        for i in 1..=last {
            let v = weight(i, j) + left.max(g[i - 1]);
            g[i - 1] = v;
            left = v;
        }
        if j + k_max >= n && j <= n + k_max {
            out[n + k_max - j] = g[last - 1];
        }
    }
    Ok(out)
}

/// Largest eigenvalue of the symmetric tridiagonal matrix with diagonal `d`
/// and squared off-diagonal `e2`.
pub fn tridiagonal_max_eig(d: &[f64], e2: &[f64]) -> f64 {
    let n = d.len();
    let off = |i: usize| if i < e2.len() { e2[i].sqrt() } else { 0.0 };
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = off(i) + if i > 0 { off(i - 1) } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    // count of eigenvalues strictly below λ
    let below = |lam: f64| -> usize {
        let mut cnt = 0;
        let mut q = d[0] - lam;
        if q < 0.0 {
            cnt += 1;
        }
        for i in 1..n {
            let qq = if q == 0.0 { f64::EPSILON * (1.0 + lam.abs()) } else { q };
            q = d[i] - lam - e2[i - 1] / qq;
            if q < 0.0 {
                cnt += 1;
            }
        }
        cnt
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if below(mid) >= n {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};

    #[test]
    fn antidiagonal_matches_full_table() {
        let w = |i: usize, j: usize| ((i * 7 + j * 13) % 5) as f64 + 0.25 * i as f64;
        let (n, k) = (6, 4);
        let mut full = vec![vec![0.0f64; n + k + 1]; n + k + 1];
        for i in 1..=n + k {
            for j in 1..=n + k {
                full[i][j] = w(i, j) + full[i - 1][j].max(full[i][j - 1]);
            }
        }
        let got = antidiagonal_with(n, k, w).unwrap();
        for (idx, v) in got.iter().enumerate() {
            let kk = idx as i64 - k as i64;
            let (i, j) = ((n as i64 + kk) as usize, (n as i64 - kk) as usize);
            assert_eq!(*v, full[i][j]);
        }
        assert!(antidiagonal_with(3, 3, w).is_err());
    }

    #[test]
    fn corner_growth_single_cell_is_exponential() {
        let mut rng = stream_rng(5, 0);
        let xs: Vec<f64> = (0..4000).map(|_| corner_growth_antidiagonal(1, 0, &mut rng).unwrap()[0]).collect();
        assert!(crate::stats::ks_one_sample(&xs, |x| 1.0 - (-x).exp()) < 0.03);
    }

    #[test]
    fn overshoot_corrects_laplace_walk_maximum() {
        use statrs::distribution::{ContinuousCDF, Normal};
        // maximum of a Laplace(2) walk against the reflection-principle law of
        // Brownian motion, P(max_{[0,1]} B ≤ a) = 2Φ(a) - 1
        let (steps, reps, a) = (400usize, 20000usize, 1.0);
        let sigma = (8.0 * steps as f64).sqrt();
        let mut rng = stream_rng(3, 0);
        let mut hits = [0usize; 2];
        for _ in 0..reps {
            let (mut s, mut top) = (0.0f64, 0.0f64);
            for _ in 0..steps {
                let x: f64 = rng.sample(Exp1);
                let y: f64 = rng.sample(Exp1);
                s += 2.0 * (x - y);
                top = top.max(s);
            }
            hits[0] += (top <= a * sigma) as usize;
            hits[1] += (top + LADDER_OVERSHOOT <= a * sigma) as usize;
        }
        let target = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(a) - 1.0;
        let se = (target * (1.0 - target) / reps as f64).sqrt();
        let raw = hits[0] as f64 / reps as f64;
        let fixed = hits[1] as f64 / reps as f64;
        assert!((fixed - target).abs() < 3.0 * se, "{fixed} vs {target}");
        assert!((raw - target).abs() > (fixed - target).abs());
    }

    fn linear_env(dx: f64) -> Environment {
        let m = (1.0 / dx).round() as usize + 1;
        let top: Vec<f64> = (0..m).map(|i| i as f64 * dx).collect();
        Environment::from_lines(vec![top, vec![0.0; m]], dx).unwrap()
    }

    fn brute_force_two_lines(env: &Environment, iy: usize, ix: usize) -> f64 {
        let (f1, f2) = (env.line(1), env.line(2));
        (iy..=ix).map(|t| f2[t] - f2[iy] + f1[ix] - f1[t]).fold(f64::NEG_INFINITY, f64::max)
    }

    fn random_env(n: usize, m: usize, dx: f64, seed: u64) -> Environment {
        let mut rng = stream_rng(seed, 77);
        let lines = (0..n)
            .map(|_| {
                let mut acc = 0.0;
                (0..m)
                    .map(|i| {
                        if i > 0 {
                            acc += rng.gen_range(-3i32..=3) as f64;
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        Environment::from_lines(lines, dx).unwrap()
    }

    #[test]
    fn environment_moments_and_determinism() {
        let a = sample_environment(3, 0.25, 5.0, 1.0, 0.0, 9).unwrap();
        let b = sample_environment(3, 0.25, 5.0, 1.0, 0.0, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.m(), 21);
        let reps = 20_000;
        let i1 = 4;
        let draws = |drift: f64| -> Vec<f64> {
            (0..reps).map(|s| sample_environment(1, 0.25, 1.0, 1.0, drift, s).unwrap().line(1)[i1]).collect()
        };
        let v = draws(0.0);
        let mean = v.iter().sum::<f64>() / reps as f64;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        assert!((var - 1.0).abs() < 3.0 * (2.0 / reps as f64).sqrt());
        let v = draws(-1.0);
        let mean = v.iter().sum::<f64>() / reps as f64;
        assert!((mean + 1.0).abs() < 3.0 * (1.0 / reps as f64).sqrt());
    }

    #[test]
    fn memory_guard() {
        let e = sample_environment_with_budget(10, 0.1, 100.0, 1.0, 0.0, 1, 1000);
        assert!(matches!(e, Err(KpzError::MemoryBudget { .. })));
    }

    #[test]
    fn snapshot_round_trip() {
        let e = sample_environment(4, 0.5, 6.0, 1.0, -0.5, 3).unwrap();
        let mut buf = Vec::new();
        e.write_snapshot(&mut buf).unwrap();
        assert_eq!(buf.len(), 48 + 8 * 4 * 13);
        let back = Environment::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, e);
        assert!(Environment::read_snapshot(&buf[..40]).is_err());
    }

    #[test]
    fn single_line_passage() {
        let e = sample_environment(1, 0.1, 3.0, 1.0, 0.0, 4).unwrap();
        let v = lpp_value(&e, 0.5, 2.0, 1, 1).unwrap();
        assert!((v - (e.line(1)[20] - e.line(1)[5])).abs() < 1e-12);
        assert_eq!(lpp_value(&e, 2.0, 0.5, 1, 1).unwrap(), f64::NEG_INFINITY);
        assert!(lpp_value(&e, 0.55, 2.0, 1, 1).is_err());
    }

    #[test]
    fn linear_two_line_example() {
        let e = linear_env(0.02);
        let v = lpp_value(&e, 0.0, 1.0, 2, 1).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert!((v - brute_force_two_lines(&e, 0, 50)).abs() < 1e-12);
        assert!((lpp_disjoint(&e, 2, 1.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn two_line_dp_matches_enumeration() {
        let e = sample_environment(2, 0.1, 4.0, 1.0, 0.0, 8).unwrap();
        for (iy, ix) in [(0, 40), (3, 17), (10, 10), (25, 39)] {
            let v = lpp_value_idx(&e, iy, ix, 2, 1).unwrap();
            assert!((v - brute_force_two_lines(&e, iy, ix)).abs() < 1e-12);
        }
    }

    #[test]
    fn disjoint_edge_cases() {
        let e = random_env(4, 30, 0.5, 2);
        let x = e.x(29);
        let full: f64 = (1..=4).map(|j| e.line(j)[29] - e.line(j)[0]).sum();
        assert!((lpp_disjoint(&e, 4, x).unwrap() - full).abs() < 1e-9);
        let one = lpp_disjoint(&e, 1, x).unwrap();
        assert!((one - lpp_value(&e, 0.0, x, 4, 1).unwrap()).abs() < 1e-9);
        let big = random_env(40, 60, 0.5, 2);
        assert!(matches!(lpp_disjoint(&big, 20, 10.0), Err(KpzError::TooLarge(_))));
    }

    #[test]
    fn pitman_examples() {
        let (t, b) = pitman_pair(&[0.0; 5], &[0.0; 5]).unwrap();
        assert_eq!((t, b), (vec![0.0; 5], vec![0.0; 5]));
        let xs: Vec<f64> = (0..=50).map(|i| i as f64 * 0.02).collect();
        let (t, b) = pitman_pair(&vec![0.0; 51], &xs).unwrap();
        assert!((t[50] - 1.0).abs() < 1e-12 && b[50].abs() < 1e-12);
        // separated pair: sup attained at y = 0, nothing changes
        let top: Vec<f64> = xs.iter().map(|x| 5.0 * x).collect();
        let bot: Vec<f64> = xs.iter().map(|x| -x).collect();
        let (t, b) = pitman_pair(&top, &bot).unwrap();
        for i in 0..51 {
            assert!((t[i] - top[i]).abs() < 1e-12 && (b[i] - bot[i]).abs() < 1e-12);
        }
        assert!(pitman_pair(&[0.0; 3], &[0.0; 4]).is_err());
    }

    #[test]
    fn melon_linear_example() {
        let w = melon(&linear_env(0.02)).unwrap();
        assert_eq!(w.as_environment().m(), 51);
        assert!((w.curve_on_grid(1)[50] - 1.0).abs() < 1e-12);
        assert!(w.curve_on_grid(2)[50].abs() < 1e-12);
    }

    #[test]
    fn melon_matches_disjoint_paths() {
        for seed in 0..6 {
            let e = random_env(3, 40, 0.25, seed);
            let w = melon(&e).unwrap();
            for ix in [1, 7, 20, 39] {
                let mut prev = 0.0;
                for j in 1..=3 {
                    let d = lpp_disjoint_idx(&e, j, ix).unwrap();
                    assert!((w.curve_on_grid(j)[ix] - (d - prev)).abs() < 1e-9, "seed {seed} j {j} ix {ix}");
                    prev = d;
                }
            }
        }
    }

    #[test]
    fn melon_is_idempotent() {
        let e = sample_environment(8, 0.25, 10.0, 1.0, 0.0, 12).unwrap();
        let w = melon(&e).unwrap();
        let ww = melon(w.as_environment()).unwrap();
        for (a, b) in w.as_environment().values.iter().zip(&ww.as_environment().values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn melon_identity_small() {
        let e = linear_env(0.02);
        let rows = melon_identity_report(&e, &[(0.3, 1.0), (0.0, 0.5)]).unwrap();
        assert!(rows.iter().all(|r| r.diff == 0.0 || r.diff.abs() < 1e-12));
        let e = sample_environment(20, 0.25, 30.0, 1.0, 0.0, 5).unwrap();
        let rows = melon_identity_report(&e, &[(0.0, 30.0), (2.5, 17.0), (10.0, 29.75)]).unwrap();
        for r in rows {
            assert!(r.diff.abs() <= 1e-9 * (1.0 + r.direct.abs()), "{r:?}");
        }
    }

    #[test]
    fn grid_melon_top_curve_is_passage_row() {
        for seed in 0..5 {
            let e = sample_environment(12, 0.25, 15.0, 1.0, 0.0, seed).unwrap();
            let w = melon_grid(&e).unwrap();
            let row = lpp_row(&e, 0, 12, 1).unwrap();
            for i in 0..e.m() {
                assert!((w.curve(1)[i] - row[i]).abs() < 1e-10);
                let s: f64 = (1..=12).map(|j| w.curve(j)[i]).sum();
                let s0: f64 = (1..=12).map(|j| e.line(j)[i] - e.line(j)[0]).sum();
                assert!((s - s0).abs() < 1e-9);
                for j in 1..12 {
                    assert!(w.curve(j)[i] >= w.curve(j + 1)[i] - 1e-12);
                }
            }
        }
    }

    #[test]
    fn exact_melon_refines_the_grid() {
        let e = sample_environment(6, 0.25, 10.0, 1.0, 0.0, 4).unwrap();
        let w = melon(&e).unwrap();
        assert!(w.as_environment().m() > e.m());
        for i in 0..e.m() {
            assert_eq!(w.x(i), e.x(i));
        }
        // passage values from the origin agree at every input grid point
        let direct = lpp_row(&e, 0, 6, 1).unwrap();
        let top = w.curve_on_grid(1);
        for i in 0..e.m() {
            assert!((direct[i] - top[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn scaled_curve_matches_definition() {
        let e = sample_environment(27, 0.5, 40.0, 1.0, 0.0, 1).unwrap();
        let w = melon(&e).unwrap();
        let (xs, ls) = w.scaled_curve(1);
        // n = 27: X = 27 + 18 x
        let i = 60; // X = 30
        assert!((xs[i] - 3.0 / 18.0).abs() < 1e-12);
        assert!((ls[i] - (w.curve_on_grid(1)[i] - 54.0 - 2.0 * 9.0 * xs[i]) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tridiagonal_eigen_against_dense() {
        use nalgebra::DMatrix;
        let mut rng = stream_rng(3, 3);
        for n in [1usize, 2, 5, 30] {
            let d: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let e2: Vec<f64> = (1..n).map(|_| rng.gen::<f64>() * 2.0).collect();
            let mut a = DMatrix::<f64>::zeros(n, n);
            for i in 0..n {
                a[(i, i)] = d[i];
                if i + 1 < n {
                    a[(i, i + 1)] = e2[i].sqrt();
                    a[(i + 1, i)] = e2[i].sqrt();
                }
            }
            let eig = a.symmetric_eigenvalues();
            let top = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((tridiagonal_max_eig(&d, &e2) - top).abs() < 1e-10);
        }
    }

    #[test]
    fn corner_passage_matches_grid_dp_for_two_lines() {
        // n = 2: λ_max of 2×2 GUE; compare means against direct simulation on a fine grid
        let reps = 4000;
        let mut rng = stream_rng(5, 0);
        let exact: f64 = (0..reps).map(|_| sample_corner_passage(2, 1.0, &mut rng).unwrap()).sum::<f64>() / reps as f64;
        let grid: f64 = (0..reps)
            .map(|s| {
                let e = sample_environment(2, 1e-3, 1.0, 1.0, 0.0, 1000 + s).unwrap();
                lpp_value_idx(&e, 0, 1000, 2, 1).unwrap()
            })
            .sum::<f64>()
            / reps as f64;
        // E λ_max for 2×2 GUE with unit variance is 2/√π
        let want = 2.0 / std::f64::consts::PI.sqrt();
        assert!((exact - want).abs() < 0.05, "{exact}");
        assert!((grid - want).abs() < 0.08, "{grid}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn melon_ordered_and_conserves_sum(seed in 0u64..1000, n in 1usize..7) {
            let e = sample_environment(n, 0.25, 8.0, 1.0, 0.3, seed).unwrap();
            let w = melon(&e).unwrap();
            let we = w.as_environment();
            for i in 0..we.m() {
                for j in 1..n {
                    prop_assert!(w.curve(j)[i] >= w.curve(j + 1)[i] - 1e-12);
                }
            }
            let g = w.grid_environment();
            for i in 0..e.m() {
                prop_assert_eq!(g.x(i), e.x(i));
                let s: f64 = (1..=n).map(|j| g.line(j)[i]).sum();
                let s0: f64 = (1..=n).map(|j| e.line(j)[i] - e.line(j)[0]).sum();
                prop_assert!((s - s0).abs() <= 1e-9 * (1.0 + s0.abs()));
            }
            prop_assert!((1..=n).all(|j| w.curve(j)[0] == 0.0));
        }

        #[test]
        fn extra_start_line_never_lowers_passage(seed in 0u64..1000) {
            // a path may leave the extra line immediately
            let e = sample_environment(5, 0.5, 6.0, 1.0, 0.0, seed).unwrap();
            let a = lpp_value_idx(&e, 0, 12, 4, 1).unwrap();
            let b = lpp_value_idx(&e, 0, 12, 5, 1).unwrap();
            prop_assert!(b >= a - 1e-12);
        }
    }
}
