//! Rate-two Brownian bridge kernels with barriers.
//!
//! `Θ^{(a)}_{[ℓ1,ℓ2]}(u1,u2)` is the transition density of paths staying above
//! the constant level `a`; piecewise-constant barriers are handled by
//! composing `Θ` segments with Gauss–Legendre quadrature.

use crate::error::{invalid, KpzError, Result};
use crate::quad::{breaks_with_cuts, QuadratureRule};
use crate::rng::stream_rng;
use crate::specfun::{ddp, dp, p};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Time interval and endpoint values of a bridge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BridgeSpec {
    pub l1: f64,
    pub l2: f64,
    pub u1: f64,
    pub u2: f64,
}

impl BridgeSpec {
    pub fn new(l1: f64, l2: f64, u1: f64, u2: f64) -> Result<Self> {
        if !(l1.is_finite() && l2.is_finite() && u1.is_finite() && u2.is_finite()) {
            return invalid("bridge spec must be finite");
        }
        if l1 >= l2 {
            return invalid(format!("bridge interval [{l1}, {l2}] is empty"));
        }
        Ok(Self { l1, l2, u1, u2 })
    }

    pub fn duration(&self) -> f64 {
        self.l2 - self.l1
    }
}

/// A rectangle `[start, start + width)` raised `height` above the base level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub start: f64,
    pub width: f64,
    pub height: f64,
}

impl Bump {
    pub fn end(&self) -> f64 {
        self.start + self.width
    }
}

/// Piecewise-constant lower barrier: a base level plus disjoint bumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub base_level: f64,
    pub bumps: Vec<Bump>,
}

impl Barrier {
    pub fn constant(level: f64) -> Self {
        Self { base_level: level, bumps: Vec::new() }
    }

    pub fn new(base_level: f64, mut bumps: Vec<Bump>) -> Result<Self> {
        if !base_level.is_finite() {
            return invalid("barrier base level must be finite");
        }
        for b in &bumps {
            if !(b.width > 0.0 && b.height >= 0.0 && b.start.is_finite() && b.height.is_finite()) {
                return invalid(format!("bad bump {b:?}"));
            }
        }
        bumps.sort_by(|x, y| x.start.total_cmp(&y.start));
        if bumps.windows(2).any(|w| w[0].end() > w[1].start) {
            return invalid("bumps overlap");
        }
        Ok(Self { base_level, bumps })
    }

    /// Barrier level at time `s`.
    pub fn level_at(&self, s: f64) -> f64 {
        self.bumps
            .iter()
            .find(|b| s >= b.start && s < b.end())
            .map_or(self.base_level, |b| self.base_level + b.height)
    }

    /// Maximal constant pieces `(start, end, level)` covering `[l1, l2]`.
    pub fn segments(&self, l1: f64, l2: f64) -> Vec<(f64, f64, f64)> {
        let mut cuts = vec![l1];
        for b in &self.bumps {
            for c in [b.start, b.end()] {
                if c > l1 && c < l2 {
                    cuts.push(c);
                }
            }
        }
        cuts.push(l2);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();
        let mut out: Vec<(f64, f64, f64)> = Vec::new();
        for w in cuts.windows(2) {
            let lev = self.level_at(0.5 * (w[0] + w[1]));
            match out.last_mut() {
                Some(last) if last.2 == lev => last.1 = w[1],
                _ => out.push((w[0], w[1], lev)),
            }
        }
        out
    }

    fn prefix(&self, k: usize) -> Barrier {
        Barrier { base_level: self.base_level, bumps: self.bumps[..k].to_vec() }
    }
}

/// Unchecked `Θ^{(a)}` for duration `ell > 0`.
#[inline]
pub(crate) fn theta_raw(a: f64, ell: f64, u1: f64, u2: f64) -> f64 {
    if u1 <= a || u2 <= a {
        return 0.0;
    }
    (p(ell, u2 - u1) - p(ell, u1 + u2 - 2.0 * a)).max(0.0)
}

/// Reflection-principle density of a bridge staying above `a`.
pub fn theta(a: f64, spec: BridgeSpec) -> Result<f64> {
    let s = BridgeSpec::new(spec.l1, spec.l2, spec.u1, spec.u2)?;
    if !a.is_finite() {
        return invalid("barrier level must be finite");
    }
    Ok(theta_raw(a, s.duration(), s.u1, s.u2))
}

/// Partial derivatives of `Θ^{(a)}` in its endpoint values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaPartials {
    pub d_u1: f64,
    pub d_u2: f64,
    pub d_u1u2: f64,
}

/// Closed-form `∂₁Θ`, `∂₂Θ`, `∂₁∂₂Θ`; at the boundary the one-sided limits from above.
pub fn theta_partials(a: f64, spec: BridgeSpec) -> Result<ThetaPartials> {
    let s = BridgeSpec::new(spec.l1, spec.l2, spec.u1, spec.u2)?;
    if s.u1 < a || s.u2 < a {
        return invalid("theta partials need both endpoints at or above the barrier");
    }
    Ok(theta_partials_raw(a, s.duration(), s.u1, s.u2))
}

#[inline]
pub(crate) fn theta_partials_raw(a: f64, ell: f64, u1: f64, u2: f64) -> ThetaPartials {
    let d = u2 - u1;
    let r = u1 + u2 - 2.0 * a;
    ThetaPartials {
        d_u1: -dp(ell, d) - dp(ell, r),
        d_u2: dp(ell, d) - dp(ell, r),
        d_u1u2: -ddp(ell, d) - ddp(ell, r),
    }
}

/// First-passage density to level `a` at time `z` of a path at `v` at time `δ`,
/// `(v-a)/(δ-z)·p_{δ-z}(v-a)`.
pub fn hitting_density(a: f64, z: f64, delta: f64, v: f64) -> Result<f64> {
    if !(z < delta) {
        return invalid(format!("hitting density needs z < delta, got z={z}, delta={delta}"));
    }
    if v < a {
        return invalid("hitting density needs v >= a");
    }
    let s = delta - z;
    Ok((v - a) / s * p(s, v - a))
}

/// Nodes per boundary for the composition quadrature.
pub const NOHIT_NODES: usize = 64;

/// `P^{nohit}` for a piecewise-constant barrier, with a node-doubling check.
pub fn nohit_prob(b: &Barrier, spec: BridgeSpec) -> Result<f64> {
    let s = BridgeSpec::new(spec.l1, spec.l2, spec.u1, spec.u2)?;
    let segs = b.segments(s.l1, s.l2);
    if segs.len() == 1 {
        return Ok(theta_raw(segs[0].2, s.duration(), s.u1, s.u2));
    }
    let v1 = nohit_matrix(b, s.l1, s.l2, &[s.u1], &[s.u2], NOHIT_NODES)?[0];
    let v2 = nohit_matrix(b, s.l1, s.l2, &[s.u1], &[s.u2], 2 * NOHIT_NODES)?[0];
    if (v1 - v2).abs() > 1e-6 {
        return Err(KpzError::NumericFailure(format!(
            "no-hit quadrature disagrees under refinement: {v1} vs {v2}"
        )));
    }
    Ok(v2)
}

/// Quadrature rule for intermediate values at a segment boundary.
fn boundary_rule(lo: f64, hi: f64, short: f64, nodes: usize) -> Result<QuadratureRule> {
    let width = (2.0 * short).sqrt();
    let brk = breaks_with_cuts(lo, hi, width, &[]);
    let panels = brk.len() - 1;
    let q = nodes.div_ceil(panels).max(8);
    QuadratureRule::composite_on(q, &brk)
}

/// Matrix `P^{nohit}_{[l1,l2]}(left_i, right_j)`, row-major.
///
/// `nodes` is the minimum number of quadrature nodes per segment boundary.
pub fn nohit_matrix(
    b: &Barrier,
    l1: f64,
    l2: f64,
    left: &[f64],
    right: &[f64],
    nodes: usize,
) -> Result<Vec<f64>> {
    if !(l1 < l2) {
        return invalid(format!("bridge interval [{l1}, {l2}] is empty"));
    }
    let segs = b.segments(l1, l2);
    let (nl, nr) = (left.len(), right.len());
    if segs.len() == 1 {
        let (_, _, a) = segs[0];
        let ell = l2 - l1;
        let mut out = vec![0.0; nl * nr];
        for (i, &u) in left.iter().enumerate() {
            for (j, &v) in right.iter().enumerate() {
                out[i * nr + j] = theta_raw(a, ell, u, v);
            }
        }
        return Ok(out);
    }
    let top = segs
        .iter()
        .map(|s| s.2)
        .chain(left.iter().copied())
        .chain(right.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);
    let hi = top + 12.0 * (l2 - l1).sqrt();
    let rules: Vec<QuadratureRule> = segs
        .windows(2)
        .map(|w| {
            let lo = w[0].2.max(w[1].2);
            let short = (w[0].1 - w[0].0).min(w[1].1 - w[1].0);
            boundary_rule(lo, hi, short, nodes)
        })
        .collect::<Result<_>>()?;

    // current(i, k): density from left_i to node k of the latest boundary
    let (s0, e0, a0) = segs[0];
    let r0 = &rules[0];
    let mut cur = vec![0.0; nl * r0.len()];
    for (i, &u) in left.iter().enumerate() {
        for (k, &w) in r0.nodes.iter().enumerate() {
            cur[i * r0.len() + k] = theta_raw(a0, e0 - s0, u, w) * r0.weights[k];
        }
    }
    for j in 1..rules.len() {
        let (s, e, a) = segs[j];
        let (ra, rb) = (&rules[j - 1], &rules[j]);
        let mut step = vec![0.0; ra.len() * rb.len()];
        for (k, &w) in ra.nodes.iter().enumerate() {
            for (l, &w2) in rb.nodes.iter().enumerate() {
                step[k * rb.len() + l] = theta_raw(a, e - s, w, w2) * rb.weights[l];
            }
        }
        cur = matmul(&cur, &step, nl, ra.len(), rb.len());
    }
    let (s, e, a) = *segs.last().unwrap();
    let rl = rules.last().unwrap();
    let mut fin = vec![0.0; rl.len() * nr];
    for (k, &w) in rl.nodes.iter().enumerate() {
        for (j, &v) in right.iter().enumerate() {
            fin[k * nr + j] = theta_raw(a, e - s, w, v);
        }
    }
    Ok(matmul(&cur, &fin, nl, rl.len(), nr))
}

/// Matrix `P^{hit}_{[l1,l2]} = p - P^{nohit}` computed without forming the
/// difference: the constant-barrier hit kernel plus one correction per bump.
///
/// Each correction is `N_k · D_k · Θ`, where `N_k` is the no-hit kernel up to
/// the bump and `D_k = Θ^{(a)} - Θ^{(a+ε_k)}` across it, written so that the
/// free part `p(w'-w)` cancels analytically.
pub fn hit_matrix(
    b: &Barrier,
    l1: f64,
    l2: f64,
    left: &[f64],
    right: &[f64],
    panel_nodes: usize,
) -> Result<Vec<f64>> {
    if !(l1 < l2) {
        return invalid(format!("bridge interval [{l1}, {l2}] is empty"));
    }
    let a = b.base_level;
    let ell = l2 - l1;
    let (nl, nr) = (left.len(), right.len());
    let mut out = vec![0.0; nl * nr];
    for (i, &u) in left.iter().enumerate() {
        for (j, &v) in right.iter().enumerate() {
            out[i * nr + j] = if u <= a || v <= a { p(ell, v - u) } else { p(ell, u + v - 2.0 * a) };
        }
    }
    for (k, bump) in b.bumps.iter().enumerate() {
        let s = bump.start.max(l1);
        let e = bump.end().min(l2);
        let eps = bump.height;
        if e <= s || eps == 0.0 {
            continue;
        }
        let dl = e - s;
        let d_kernel = |w: f64, w2: f64| -> f64 {
            if w > a + eps && w2 > a + eps {
                p(dl, w + w2 - 2.0 * a - 2.0 * eps) - p(dl, w + w2 - 2.0 * a)
            } else {
                theta_raw(a, dl, w, w2)
            }
        };
        let reach = eps + 10.0 * (2.0 * dl).sqrt();
        let rule = QuadratureRule::composite_on(
            panel_nodes,
            &breaks_with_cuts(a, a + reach, 0.5 * (2.0 * dl).sqrt(), &[a + eps]),
        )?;
        let w = &rule.nodes;
        let nw = w.len();
        // left factor: (nl × nw) including weights, or D evaluated at `left` directly
        let lead: Vec<f64> = if s > l1 {
            let nk = nohit_matrix(&b.prefix(k), l1, s, left, w, NOHIT_NODES)?;
            let mut dm = vec![0.0; nw * nw];
            for (x, &wx) in w.iter().enumerate() {
                for (y, &wy) in w.iter().enumerate() {
                    dm[x * nw + y] = rule.weights[x] * d_kernel(wx, wy) * rule.weights[y];
                }
            }
            matmul(&nk, &dm, nl, nw, nw)
        } else {
            let mut dm = vec![0.0; nl * nw];
            for (x, &u) in left.iter().enumerate() {
                for (y, &wy) in w.iter().enumerate() {
                    dm[x * nw + y] = d_kernel(u, wy) * rule.weights[y];
                }
            }
            dm
        };
        let term = if e < l2 {
            let mut tail = vec![0.0; nw * nr];
            for (x, &wx) in w.iter().enumerate() {
                for (j, &v) in right.iter().enumerate() {
                    tail[x * nr + j] = theta_raw(a, l2 - e, wx, v);
                }
            }
            matmul(&lead, &tail, nl, nw, nr)
        } else if s > l1 {
            // bump reaches l2: the last factor is D itself evaluated at `right`
            let nk = nohit_matrix(&b.prefix(k), l1, s, left, w, NOHIT_NODES)?;
            let mut dm = vec![0.0; nw * nr];
            for (x, &wx) in w.iter().enumerate() {
                for (j, &v) in right.iter().enumerate() {
                    dm[x * nr + j] = rule.weights[x] * d_kernel(wx, v);
                }
            }
            matmul(&nk, &dm, nl, nw, nr)
        } else {
            let mut dm = vec![0.0; nl * nr];
            for (x, &u) in left.iter().enumerate() {
                for (j, &v) in right.iter().enumerate() {
                    dm[x * nr + j] = d_kernel(u, v);
                }
            }
            dm
        };
        for (o, t) in out.iter_mut().zip(term) {
            *o += t;
        }
    }
    Ok(out)
}

pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut c[i * m..(i + 1) * m];
        for l in 0..k {
            let x = a[i * k + l];
            if x == 0.0 {
                continue;
            }
            for (cj, bj) in row.iter_mut().zip(&b[l * m..(l + 1) * m]) {
                *cj += x * bj;
            }
        }
    }
    c
}

/// Exact-in-law rate-two bridge skeleton on `l1, l1 + h, …, l2`.
pub fn sample_bridge(spec: BridgeSpec, grid_step: f64, seed: u64) -> Result<Vec<f64>> {
    let s = BridgeSpec::new(spec.l1, spec.l2, spec.u1, spec.u2)?;
    if !(grid_step > 0.0) {
        return invalid("grid step must be positive");
    }
    let steps = s.duration() / grid_step;
    let k = steps.round();
    if (steps - k).abs() > 1e-9 * steps.max(1.0) || k < 1.0 {
        return invalid(format!("grid step {grid_step} does not divide the interval"));
    }
    let times: Vec<f64> = (0..=k as usize).map(|i| s.l1 + s.duration() * i as f64 / k).collect();
    let mut rng = stream_rng(seed, 0);
    Ok(sample_bridge_at(&times, s.u1, s.u2, &mut rng))
}

/// Bridge values at increasing `times`, pinned to `u1` and `u2` at the ends.
pub fn sample_bridge_at<R: Rng>(times: &[f64], u1: f64, u2: f64, rng: &mut R) -> Vec<f64> {
    let n = times.len();
    let mut out = Vec::with_capacity(n);
    out.push(u1);
    let end = times[n - 1];
    let mut x = u1;
    for i in 1..n {
        if i == n - 1 {
            out.push(u2);
            break;
        }
        let h = times[i] - times[i - 1];
        let rem = end - times[i - 1];
        let mean = x + (u2 - x) * h / rem;
        let var = 2.0 * h * (rem - h) / rem;
        let z: f64 = rng.sample(StandardNormal);
        x = mean + var.max(0.0).sqrt() * z;
        out.push(x);
    }
    out
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// Monte Carlo `P^{nohit}` from bridge skeletons.
///
/// Between skeleton points the path is a bridge, so the chance of staying above
/// the level is `1 - exp(-(x-c)(y-c)/h)` exactly; multiplying these factors
/// removes discrete-monitoring bias. Bump boundaries are skeleton points.
pub fn nohit_mc(b: &Barrier, spec: BridgeSpec, grid_step: f64, paths: usize, seed: u64) -> Result<McEstimate> {
    let s = BridgeSpec::new(spec.l1, spec.l2, spec.u1, spec.u2)?;
    if paths < 2 || !(grid_step > 0.0) {
        return invalid("need at least two paths and a positive grid step");
    }
    let segs = b.segments(s.l1, s.l2);
    let mut times = Vec::new();
    let mut levels = Vec::new();
    for &(a, e, lev) in &segs {
        let k = ((e - a) / grid_step).ceil().max(1.0) as usize;
        for i in 0..k {
            times.push(a + (e - a) * i as f64 / k as f64);
            levels.push(lev);
        }
    }
    times.push(s.l2);
    let mut rng = stream_rng(seed, 1);
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..paths {
        let path = sample_bridge_at(&times, s.u1, s.u2, &mut rng);
        let mut w = 1.0;
        for i in 0..levels.len() {
            let (x, y) = (path[i] - levels[i], path[i + 1] - levels[i]);
            if x <= 0.0 || y <= 0.0 {
                w = 0.0;
                break;
            }
            w *= 1.0 - (-(x * y) / (times[i + 1] - times[i])).exp();
        }
        sum += w;
        sum2 += w * w;
    }
    let n = paths as f64;
    let m = sum / n;
    let var = (sum2 / n - m * m).max(0.0) * n / (n - 1.0);
    let scale = p(s.duration(), s.u2 - s.u1);
    Ok(McEstimate { mean: m * scale, std_err: (var / n).sqrt() * scale, samples: paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};

    fn spec(l1: f64, l2: f64, u1: f64, u2: f64) -> BridgeSpec {
        BridgeSpec::new(l1, l2, u1, u2).unwrap()
    }

    #[test]
    fn theta_examples() {
        let v = theta(0.0, spec(0.0, 1.0, 1.0, 1.0)).unwrap();
        let want = p(1.0, 0.0) - p(1.0, 2.0);
        assert!((v - want).abs() < 1e-15);
        assert!((v - 0.17831792).abs() < 1e-8);
        assert_eq!(theta(0.0, spec(0.0, 1.0, -0.5, 1.0)).unwrap(), 0.0);
        let far = theta(0.0, spec(0.0, 1.0, 30.0, 30.5)).unwrap();
        assert!((far / p(1.0, 0.5) - 1.0).abs() < 1e-12);
        assert!(BridgeSpec::new(1.0, 1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn theta_monte_carlo() {
        let est = nohit_mc(&Barrier::constant(0.0), spec(0.0, 1.0, 1.0, 1.0), 0.02, 200_000, 11).unwrap();
        let v = theta(0.0, spec(0.0, 1.0, 1.0, 1.0)).unwrap();
        assert!((est.mean - v).abs() < 3.0 * est.std_err, "{est:?} vs {v}");
    }

    #[test]
    fn partials_closed_form() {
        let d = theta_partials(0.0, spec(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert!((d.d_u1u2 - 0.28209479177387814).abs() < 1e-14);
        let d = theta_partials(0.0, spec(2.0, 2.5, 0.0, 0.0)).unwrap();
        assert!((d.d_u1u2 - 0.28209479177387814 * 0.5f64.powf(-1.5)).abs() < 1e-12);
        assert!(theta_partials(0.0, spec(0.0, 1.0, -0.1, 1.0)).is_err());
        let d = theta_partials(0.0, spec(0.0, 1.0, 0.5, 60.0)).unwrap();
        assert!(d.d_u1.abs() < 1e-100 && d.d_u2.abs() < 1e-100 && d.d_u1u2.abs() < 1e-100);
    }

    #[test]
    fn partials_match_differences() {
        let h = 1e-5;
        let t = |u1: f64, u2: f64| theta_raw(0.2, 0.7, u1, u2);
        for &(u1, u2) in &[(0.5, 1.1), (1.3, 0.4), (0.2 + 1e-9, 0.9)] {
            let d = theta_partials_raw(0.2, 0.7, u1, u2);
            let f1 = if u1 - h > 0.2 { (t(u1 + h, u2) - t(u1 - h, u2)) / (2.0 * h) } else { (t(u1 + h, u2) - t(u1, u2)) / h };
            let f2 = (t(u1, u2 + h) - t(u1, u2 - h)) / (2.0 * h);
            assert!((f1 - d.d_u1).abs() < 1e-6, "{f1} {}", d.d_u1);
            assert!((f2 - d.d_u2).abs() < 1e-6);
        }
        // boundary value of the first partial
        let d = theta_partials_raw(0.0, 1.0, 0.0, 0.8);
        assert!((d.d_u1 - (-2.0 * dp(1.0, 0.8))).abs() < 1e-15);
    }

    #[test]
    fn nohit_reductions() {
        let sp = spec(0.0, 1.0, 0.7, 1.2);
        let flat = Barrier::constant(-0.3);
        assert_eq!(nohit_prob(&flat, sp).unwrap(), theta(-0.3, sp).unwrap());
        let zero = Barrier::new(-0.3, vec![Bump { start: 0.4, width: 0.2, height: 0.0 }]).unwrap();
        assert_eq!(nohit_prob(&zero, sp).unwrap(), theta(-0.3, sp).unwrap());
    }

    #[test]
    fn nohit_bump_against_monte_carlo() {
        let b = Barrier::new(0.0, vec![Bump { start: 0.4, width: 0.2, height: 0.3 }]).unwrap();
        let sp = spec(0.0, 1.0, 1.0, 1.0);
        let q = nohit_prob(&b, sp).unwrap();
        let t = theta(0.0, sp).unwrap();
        assert!(q > 0.0 && q < t);
        let est = nohit_mc(&b, sp, 0.01, 200_000, 5).unwrap();
        assert!((est.mean - q).abs() < 3.0 * est.std_err, "{est:?} vs {q}");
    }

    #[test]
    fn hit_matrix_matches_complement_of_nohit() {
        let b = Barrier::new(
            -0.2,
            vec![Bump { start: -0.5, width: 0.3, height: 0.4 }, Bump { start: 0.6, width: 0.1, height: 0.25 }],
        )
        .unwrap();
        let us = [-0.5, 0.1, 0.4, 1.5];
        let vs = [-1.0, 0.05, 0.7, 2.0];
        let hit = hit_matrix(&b, -1.0, 1.0, &us, &vs, 8).unwrap();
        let nohit = nohit_matrix(&b, -1.0, 1.0, &us, &vs, 128).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let free = p(2.0, vs[j] - us[i]);
                let d = hit[i * 4 + j] + nohit[i * 4 + j] - free;
                assert!(d.abs() < 1e-9, "{i} {j}: {d:e}");
            }
        }
    }

    #[test]
    fn hit_matrix_bump_at_edges() {
        let b = Barrier::new(0.0, vec![Bump { start: 0.0, width: 0.3, height: 0.4 }, Bump { start: 0.8, width: 0.2, height: 0.2 }]).unwrap();
        let us = [0.2, 0.9];
        let vs = [0.5, 1.3];
        let hit = hit_matrix(&b, 0.0, 1.0, &us, &vs, 8).unwrap();
        let nohit = nohit_matrix(&b, 0.0, 1.0, &us, &vs, 128).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let d = hit[i * 2 + j] + nohit[i * 2 + j] - p(1.0, vs[j] - us[i]);
                assert!(d.abs() < 1e-9, "{i} {j}: {d:e}");
            }
        }
    }

    #[test]
    fn hitting_density_examples() {
        assert_eq!(hitting_density(0.3, 0.0, 1.0, 0.3).unwrap(), 0.0);
        let v = hitting_density(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((v - p(1.0, 1.0)).abs() < 1e-15);
        assert!((v - 0.21969564).abs() < 1e-8);
        assert!(hitting_density(0.0, 1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn hitting_mass_identities() {
        // time integral of the first-passage density = 1 - ∫Θ
        let (a, v, horizon) = (0.0, 0.8, 1.5);
        let r = QuadratureRule::composite(16, 0.0, horizon, 64).unwrap();
        let hit_mass = r.integrate(|s| hitting_density(a, horizon - s, horizon, v).unwrap());
        let r2 = QuadratureRule::composite(16, a, a + 30.0, 60).unwrap();
        let theta_mass = r2.integrate(|u| theta_raw(a, horizon, v, u));
        assert!((hit_mass - (1.0 - theta_mass)).abs() < 1e-6, "{hit_mass} {theta_mass}");
        // level integral = 2 p_s(0) = derivative of the survival mass at a
        let s = 0.6;
        let m = r2.integrate(|u| hitting_density(a, 0.0, s, u).unwrap());
        assert!((m - 2.0 * p(s, 0.0)).abs() < 1e-8);
        let h = 1e-6;
        let surv = |u1: f64| r2.integrate(|u| theta_raw(a, s, u1, u));
        assert!(((surv(a + h) - surv(a)) / h - m).abs() < 1e-4);
    }

    #[test]
    fn hitting_histogram() {
        // free rate-two motion from v = 1; first passage to 0 near time 1
        let (v, step, w): (f64, f64, f64) = (1.0, 2e-3, 0.1);
        let paths = 60_000;
        let mut rng = stream_rng(99, 0);
        let mut hits = 0usize;
        let nsteps = ((1.0 + w) / step).ceil() as usize;
        for _ in 0..paths {
            let mut x = v;
            for i in 0..nsteps {
                let z: f64 = rng.sample(StandardNormal);
                let y = x + (2.0 * step).sqrt() * z;
                let crossed = y <= 0.0 || rng.gen::<f64>() < (-(x * y) / step).exp();
                if crossed {
                    let tau = (i as f64 + rng.gen::<f64>()) * step;
                    if (1.0 - w..1.0 + w).contains(&tau) {
                        hits += 1;
                    }
                    break;
                }
                x = y;
            }
        }
        let n = paths as f64;
        let ph = hits as f64 / n;
        let se = (ph * (1.0 - ph) / n).sqrt();
        let r = QuadratureRule::gauss_legendre(32, 1.0 - w, 1.0 + w).unwrap();
        let exact = r.integrate(|t| hitting_density(0.0, 0.0, t, v).unwrap());
        assert!((ph - exact).abs() < 3.0 * se + 2e-4, "{ph} vs {exact} (se {se})");
        let center = hitting_density(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!((exact / (2.0 * w) - center).abs() < 0.01);
    }

    #[test]
    fn bridge_sampler_moments_and_determinism() {
        let sp = spec(0.0, 1.0, 0.0, 0.0);
        assert_eq!(sample_bridge(sp, 0.1, 3).unwrap(), sample_bridge(sp, 0.1, 3).unwrap());
        let n = 20_000;
        let mids: Vec<f64> = (0..n).map(|s| sample_bridge(sp, 0.25, s as u64).unwrap()[2]).collect();
        let m = mids.iter().sum::<f64>() / n as f64;
        let var = mids.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64;
        assert!(m.abs() < 3.0 * (0.5 / n as f64).sqrt());
        // variance of the sample variance for a normal: 2σ⁴/(n-1)
        assert!((var - 0.5).abs() < 3.0 * (2.0 * 0.25 / n as f64).sqrt());
        let path = sample_bridge(spec(0.0, 2.0, 1.0, -1.0), 0.5, 1).unwrap();
        assert_eq!(path.len(), 5);
        assert_eq!((path[0], path[4]), (1.0, -1.0));
        assert!(sample_bridge(sp, 0.3, 1).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn chapman_kolmogorov(a in -1.0f64..1.0, s in 0.1f64..0.9, d1 in 0.01f64..2.0, d2 in 0.01f64..2.0) {
            let (u1, u2) = (a + d1, a + d2);
            let r = QuadratureRule::composite(16, a, a + 20.0, 80).unwrap();
            let lhs = r.integrate(|v| theta_raw(a, s, u1, v) * theta_raw(a, 1.0 - s, v, u2));
            prop_assert!((lhs - theta_raw(a, 1.0, u1, u2)).abs() < 1e-6);
        }

        #[test]
        fn domination(a in -1.0f64..1.0, u1 in -2.0f64..3.0, u2 in -2.0f64..3.0, h in 0.0f64..1.0) {
            let sp = BridgeSpec::new(0.0, 1.0, u1, u2).unwrap();
            let th = theta(a, sp).unwrap();
            prop_assert!(th >= 0.0 && th <= p(1.0, u2 - u1) + 1e-15);
            let b = Barrier::new(a, vec![Bump { start: 0.3, width: 0.25, height: h }]).unwrap();
            let q = nohit_prob(&b, sp).unwrap();
            prop_assert!(q >= -1e-12 && q <= th + 1e-9);
        }

        #[test]
        fn raising_bump_lowers_nohit(h1 in 0.0f64..0.8, dh in 0.0f64..0.8) {
            let sp = BridgeSpec::new(0.0, 1.0, 0.9, 1.1).unwrap();
            let lo = Barrier::new(0.0, vec![Bump { start: 0.3, width: 0.3, height: h1 }]).unwrap();
            let hi = Barrier::new(0.0, vec![Bump { start: 0.3, width: 0.3, height: h1 + dh }]).unwrap();
            prop_assert!(nohit_prob(&hi, sp).unwrap() <= nohit_prob(&lo, sp).unwrap() + 1e-9);
        }
    }
}
