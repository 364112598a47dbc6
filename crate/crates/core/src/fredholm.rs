//! Nyström discretisation of integral operators and Fredholm determinants.
//!
//! Besides the generic determinant this module evaluates the Tracy–Widom GUE
//! distribution, the narrow-wedge fixed-point probability
//! `P(h_t(x) ≤ g(x) on [-L, L])` for piecewise-constant ceilings `g`, the
//! four-determinant twin-peaks probability and the two-maximiser density.
//!
//! For the narrow wedge the hypograph kernel is `Γ S_{-t/2,0} χ_{≤0} S_{t/2,0} Γ`,
//! so after conjugation the determinant reduces to one over `L²[0, ∞)` with kernel
//! `S_{-t,l1} P^{hit(-g)}_{[l1,l2]} S_{t,-l2}`. Expanded naively this kernel
//! cancels quantities of size `e^{4L³/3}`; instead every free heat flow is
//! integrated in closed form (`e^{s∂²} S_{t,x} = S_{t,x+s}`), leaving only
//! integrals over values below the barrier and corrections localised at the
//! dips of `g`.

use crate::bridge::theta_raw;
use crate::error::{invalid, KpzError, Result};
use crate::kpz::{InitialData, Shape};
use crate::quad::{breaks, breaks_with_cuts, QuadratureRule};
use crate::specfun::{airy, dp, p, s_bound, s_kernel, s_kernel_dz, EvalPoint};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// `W^{1/2} K W^{1/2}` on the nodes of `rule`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedKernel {
    pub rule: QuadratureRule,
    pub matrix: Vec<f64>,
}

impl DiscretizedKernel {
    /// Discretise `k(x, y)`.
    pub fn from_fn(rule: QuadratureRule, k: impl Fn(f64, f64) -> f64) -> Result<Self> {
        let n = rule.len();
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = k(rule.nodes[i], rule.nodes[j]);
            }
        }
        Self::from_values(rule, values)
    }

    /// Weight a row-major table of kernel values `K(x_i, x_j)`.
    pub fn from_values(rule: QuadratureRule, mut values: Vec<f64>) -> Result<Self> {
        let n = rule.len();
        if values.len() != n * n {
            return invalid(format!("kernel table has {} entries, expected {}", values.len(), n * n));
        }
        let sw: Vec<f64> = rule.weights.iter().map(|w| w.sqrt()).collect();
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] *= sw[i] * sw[j];
            }
        }
        let k = Self { rule, matrix: values };
        k.check()?;
        Ok(k)
    }

    pub fn size(&self) -> usize {
        self.rule.len()
    }

    fn check(&self) -> Result<()> {
        if self.matrix.iter().any(|v| !v.is_finite()) {
            return invalid("kernel matrix has non-finite entries");
        }
        Ok(())
    }

    fn to_dmatrix(&self) -> DMatrix<f64> {
        let n = self.size();
        DMatrix::from_row_slice(n, n, &self.matrix)
    }

    /// `c·K`.
    pub fn scaled(&self, c: f64) -> Self {
        Self { rule: self.rule.clone(), matrix: self.matrix.iter().map(|v| c * v).collect() }
    }

    /// Trace norm of the discretised operator (sum of singular values).
    pub fn trace_norm(&self) -> f64 {
        self.to_dmatrix().singular_values().iter().sum()
    }

    /// Weighted rank-one kernel `φ(x)ψ(y)` from values at the nodes.
    pub fn rank_one(rule: QuadratureRule, phi: &[f64], psi: &[f64]) -> Result<Self> {
        let n = rule.len();
        if phi.len() != n || psi.len() != n {
            return invalid("rank-one factors must match the rule size");
        }
        let mut values = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                values[i * n + j] = phi[i] * psi[j];
            }
        }
        Self::from_values(rule, values)
    }

    /// Entrywise `self + other` on the same rule.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.rule != other.rule {
            return invalid("kernels live on different rules");
        }
        Ok(Self { rule: self.rule.clone(), matrix: self.matrix.iter().zip(&other.matrix).map(|(a, b)| a + b).collect() })
    }
}

/// `det(I + K)` via LU with partial pivoting.
pub fn fredholm_det(k: &DiscretizedKernel) -> Result<f64> {
    k.check()?;
    let n = k.size();
    let m = k.to_dmatrix() + DMatrix::identity(n, n);
    Ok(m.lu().determinant())
}

/// `(1 + tr[(I - A)^{-1} B]) · det(I - A)` for rank-one `B = φ⊗ψ`, computed by a
/// linear solve; equals `det(I - A + B)`.
pub fn rank_one_det(a: &DiscretizedKernel, phi: &[f64], psi: &[f64]) -> Result<f64> {
    a.check()?;
    let n = a.size();
    if phi.len() != n || psi.len() != n {
        return invalid("rank-one factors must match the rule size");
    }
    let x = DMatrix::identity(n, n) - a.to_dmatrix();
    let sw: Vec<f64> = a.rule.weights.iter().map(|w| w.sqrt()).collect();
    let f = DVector::from_iterator(n, phi.iter().zip(&sw).map(|(v, w)| v * w));
    let g = DVector::from_iterator(n, psi.iter().zip(&sw).map(|(v, w)| v * w));
    let lu = x.lu();
    let det = lu.determinant();
    let sol = lu
        .solve(&f)
        .ok_or_else(|| KpzError::NumericFailure("I - A is singular".into()))?;
    Ok((1.0 + g.dot(&sol)) * det)
}

/// A value with its quadrature refinement gap `|v_q - v_{2q}|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refined {
    pub value: f64,
    pub gap: f64,
}

/// Evaluate at `q` and `2q`, reporting the finer value.
pub fn refine(q: usize, eval: impl Fn(usize) -> Result<f64>) -> Result<Refined> {
    let coarse = eval(q)?;
    let fine = eval(2 * q)?;
    Ok(Refined { value: fine, gap: (coarse - fine).abs() })
}

// ---------------------------------------------------------------------------
// Tracy–Widom

const TW_MAP_SCALE: f64 = 3.0;

/// Nodes and weights on `(m, ∞)` through `x = m - c·ln(1 - v)`.
fn half_line_rule(m: f64, q: usize) -> Result<QuadratureRule> {
    let base = QuadratureRule::gauss_legendre(q, 0.0, 1.0)?;
    let nodes = base.nodes.iter().map(|v| m - TW_MAP_SCALE * (1.0 - v).ln()).collect();
    let weights = base.nodes.iter().zip(&base.weights).map(|(v, w)| w * TW_MAP_SCALE / (1.0 - v)).collect();
    Ok(QuadratureRule { a: m, b: f64::INFINITY, order: q, nodes, weights })
}

fn airy_kernel(x: f64, ax: (f64, f64), y: f64, ay: (f64, f64)) -> f64 {
    if (x - y).abs() < 1e-10 {
        ax.1 * ax.1 - x * ax.0 * ax.0
    } else {
        (ax.0 * ay.1 - ax.1 * ay.0) / (x - y)
    }
}

fn tw_gue_at(m: f64, q: usize) -> Result<f64> {
    let rule = half_line_rule(m, q)?;
    let ai: Vec<(f64, f64)> = rule
        .nodes
        .iter()
        .map(|&x| airy(x).map(|a| (a.ai, a.ai_prime)))
        .collect::<Result<_>>()?;
    let n = rule.len();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = -airy_kernel(rule.nodes[i], ai[i], rule.nodes[j], ai[j]);
        }
    }
    fredholm_det(&DiscretizedKernel::from_values(rule, v)?)
}

/// `F_GUE(m) = det(I - K_Ai)_{L²(m,∞)}` with its `q` vs `2q` gap.
pub fn tw_gue_cdf_refined(m: f64, q: usize) -> Result<Refined> {
    if !m.is_finite() {
        return invalid("argument must be finite");
    }
    if q < 20 {
        return invalid(format!("need at least 20 nodes, got {q}"));
    }
    let r = refine(q, |k| tw_gue_at(m, k))?;
    Ok(Refined { value: r.value.clamp(0.0, 1.0), gap: r.gap })
}

/// Tracy–Widom GUE distribution function at `q` nodes, checked against `2q`.
pub fn tw_gue_cdf(m: f64, q: usize) -> Result<f64> {
    let r = tw_gue_cdf_refined(m, q)?;
    if r.gap > 1e-6 {
        return Err(KpzError::NumericFailure(format!("Tracy-Widom refinement gap {:e} at m = {m}", r.gap)));
    }
    Ok(r.value)
}

fn tw_goe_at(s: f64, q: usize) -> Result<f64> {
    let rule = half_line_rule(0.0, q)?;
    let n = rule.len();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = -airy(rule.nodes[i] + rule.nodes[j] + s)?.ai;
        }
    }
    fredholm_det(&DiscretizedKernel::from_values(rule, v)?)
}

/// Tracy–Widom GOE distribution `det(I - Ai(x + y + s))_{L²(0,∞)}`.
pub fn tw_goe_cdf_refined(s: f64, q: usize) -> Result<Refined> {
    if !s.is_finite() {
        return invalid("argument must be finite");
    }
    if q < 20 {
        return invalid(format!("need at least 20 nodes, got {q}"));
    }
    let r = refine(q, |k| tw_goe_at(s, k))?;
    Ok(Refined { value: r.value.clamp(0.0, 1.0), gap: r.gap })
}

// ---------------------------------------------------------------------------
// Fixed-point operators

/// A dip of the ceiling: `g = level - depth` on `[start, start + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dip {
    pub start: f64,
    pub width: f64,
    pub depth: f64,
}

/// Upper barrier `g` on the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Ceiling {
    /// `g ≡ +∞`: no constraint.
    Unbounded,
    /// Constant `level` with disjoint dips strictly inside the window.
    Piecewise { level: f64, dips: Vec<Dip> },
}

impl Ceiling {
    pub fn constant(level: f64) -> Self {
        Ceiling::Piecewise { level, dips: Vec::new() }
    }
}

/// Numerical settings for the fixed-point kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorSettings {
    /// Time `t > 0`.
    pub t: f64,
    /// `Γ` exponent used in the truncation criterion.
    pub kappa: f64,
    /// Gauss–Legendre nodes per panel; refinement doubles it.
    pub panel_nodes: usize,
    /// `J_L = [-βL, βL]` for twin-peaks locations.
    pub beta: f64,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        Self { t: 1.0, kappa: 0.05, panel_nodes: 10, beta: 0.9 }
    }
}

/// Target size of the `Γ`-weighted kernel envelope at the truncation edge.
pub const TRUNCATION_TOL: f64 = 1e-12;
const TRUNCATION_CAP: f64 = 400.0;

#[inline]
fn s_t(t: f64, x: f64, z: f64) -> Result<f64> {
    s_kernel(EvalPoint { t, x, z })
}

#[inline]
fn s_t_dz(t: f64, x: f64, z: f64) -> Result<f64> {
    s_kernel_dz(EvalPoint { t, x, z })
}

/// Log of the envelope of `|S_{t,x}(z)|`, `t > 0`.
fn log_envelope(t: f64, x: f64, z: f64) -> f64 {
    let c = t.cbrt();
    -c.ln() + s_bound(x / (c * c), z / c) + 1.0
}

/// Reduced narrow-wedge operator on `L²[0, ∞)` for the window `[l1, l2]` and
/// base ceiling level `m`.
struct Reduced {
    t: f64,
    l1: f64,
    l2: f64,
    m: f64,
    q: usize,
    u: QuadratureRule,
    /// Values below the barrier, `a ≤ -m`.
    a: QuadratureRule,
    /// `S_{-t,l1}(u - a)`, `nu × na`.
    phl: Vec<f64>,
    /// `S_{t,-l2}(a - w)`, `nu × na`.
    phr: Vec<f64>,
}

impl Reduced {
    fn new(t: f64, l1: f64, l2: f64, m: f64, kappa: f64, q: usize, reach: f64) -> Result<Self> {
        let probe = probe_points(l1, l2);
        let c = t.cbrt();
        // truncation of the u-range: every kernel piece decays like an Airy
        // function of u; the Γ weight must not overturn that
        let gamma = |u: f64| kappa * (2.0 / t).sqrt() * u.powf(1.5);
        let tail = |u: f64| -> f64 {
            let mut best = log_envelope(2.0 * t, 0.0, -(u + 2.0 * m));
            for &x in &probe {
                let z = reach - (u + m);
                best = best.max(log_envelope(t, x, z)).max(log_envelope(t, -x, z));
            }
            best + gamma(u)
        };
        let lo = (-2.0 * m).max(-m).max(0.0) + 2.0 * c;
        let mut big_u = None;
        let mut u = lo;
        while u <= TRUNCATION_CAP {
            let v = tail(u);
            if v < TRUNCATION_TOL.ln() && tail(u + 1.0) < v {
                big_u = Some(u);
                break;
            }
            u += 0.25;
        }
        let big_u = big_u.ok_or(KpzError::KappaTooLarge { tail: tail(TRUNCATION_CAP).exp() })?;
        let u_rule = QuadratureRule::composite_on(q, &breaks_with_cuts(0.0, big_u, c, &[]))?;

        // values below the barrier: the left and right S factors decay super-exponentially
        let mut ext = 2.0 * c;
        loop {
            let z = -m - ext;
            let lf = log_envelope(t, l1, z) + log_envelope(t, -l1, z);
            let rf = log_envelope(t, -l2, z) + log_envelope(t, l2, z);
            if lf.max(rf) < (1e-16f64).ln() || ext > TRUNCATION_CAP {
                break;
            }
            ext += 0.5 * c;
        }
        let width = (0.5 * c).min(0.5 * (2.0 * (l2 - l1)).sqrt());
        let a_rule = QuadratureRule::composite_on(q, &breaks_with_cuts(-m - ext, -m, width, &[]))?;

        let (nu, na) = (u_rule.len(), a_rule.len());
        let mut phl = vec![0.0; nu * na];
        let mut phr = vec![0.0; nu * na];
        for (i, &ui) in u_rule.nodes.iter().enumerate() {
            for (k, &ak) in a_rule.nodes.iter().enumerate() {
                phl[i * na + k] = s_t(-t, l1, ui - ak)?;
                phr[i * na + k] = s_t(t, -l2, ak - ui)?;
            }
        }
        Ok(Self { t, l1, l2, m, q, u: u_rule, a: a_rule, phl, phr })
    }

    fn nu(&self) -> usize {
        self.u.len()
    }

    /// Kernel values of `S_{-t,l1} P^{hit}_{const} S_{t,-l2}` on the u-nodes.
    fn base(&self) -> Result<Vec<f64>> {
        let (t, l1, l2, m) = (self.t, self.l1, self.l2, self.m);
        let (nu, na) = (self.nu(), self.a.len());
        let un = &self.u.nodes;
        let an = &self.a.nodes;
        let aw = &self.a.weights;
        let mut out = vec![0.0; nu * nu];
        // reflected free part S_{-2t,0} ϱ_{-m}
        for i in 0..nu {
            for j in 0..nu {
                out[i * nu + j] = s_t(-2.0 * t, 0.0, un[i] + un[j] + 2.0 * m)?;
            }
        }
        // start below the barrier: the far side is a free heat flow
        let mut right = vec![0.0; na * nu];
        let mut left = vec![0.0; nu * na];
        for k in 0..na {
            for j in 0..nu {
                right[k * nu + j] =
                    aw[k] * (s_t(t, -l1, an[k] - un[j])? - s_t(t, -l1, -an[k] - 2.0 * m - un[j])?);
            }
        }
        for i in 0..nu {
            for k in 0..na {
                left[i * na + k] = (s_t(-t, l2, un[i] - an[k])? - s_t(-t, l2, un[i] + an[k] + 2.0 * m)?) * aw[k];
            }
        }
        let c1 = crate::bridge::matmul(&self.phl, &right, nu, na, nu);
        let c2 = crate::bridge::matmul(&left, &transpose(&self.phr, nu, na), nu, na, nu);
        // both ends below the barrier was counted twice
        let ell = l2 - l1;
        let mut mid = vec![0.0; na * na];
        for k in 0..na {
            for l in 0..na {
                mid[k * na + l] = aw[k] * (p(ell, an[l] - an[k]) - p(ell, an[k] + an[l] + 2.0 * m)) * aw[l];
            }
        }
        let c12 = crate::bridge::matmul(
            &crate::bridge::matmul(&self.phl, &mid, nu, na, na),
            &transpose(&self.phr, nu, na),
            nu,
            na,
            nu,
        );
        for idx in 0..nu * nu {
            out[idx] += c1[idx] + c2[idx] - c12[idx];
        }
        Ok(out)
    }

    fn check_time(&self, x: f64) -> Result<()> {
        if !(x > self.l1 && x < self.l2) {
            return invalid(format!("location {x} must lie strictly inside [{}, {}]", self.l1, self.l2));
        }
        Ok(())
    }

    /// `∫ S_{-t,l1}(u-a) P^{nohit}_{[l1,x]}(a, c) da` for `c > -m` (constant barrier).
    fn left_flow(&self, x: f64, cs: &[f64]) -> Result<Vec<f64>> {
        self.check_time(x)?;
        let (t, m, s) = (self.t, self.m, x - self.l1);
        let (nu, na, nc) = (self.nu(), self.a.len(), cs.len());
        let mut out = vec![0.0; nu * nc];
        let mut kern = vec![0.0; na * nc];
        for k in 0..na {
            let a = self.a.nodes[k];
            for (j, &c) in cs.iter().enumerate() {
                kern[k * nc + j] = self.a.weights[k] * (p(s, c - a) - p(s, a + c + 2.0 * m));
            }
        }
        let below = crate::bridge::matmul(&self.phl, &kern, nu, na, nc);
        for (i, &u) in self.u.nodes.iter().enumerate() {
            for (j, &c) in cs.iter().enumerate() {
                out[i * nc + j] = s_t(-t, x, u - c)? - s_t(-t, x, u + c + 2.0 * m)? - below[i * nc + j];
            }
        }
        Ok(out)
    }

    /// `∫ P^{nohit}_{[y,l2]}(c, b) S_{t,-l2}(b-w) db` for `c > -m`, laid out `nc × nu`.
    fn right_flow(&self, y: f64, cs: &[f64]) -> Result<Vec<f64>> {
        self.check_time(y)?;
        let (t, m, s) = (self.t, self.m, self.l2 - y);
        let (nu, na, nc) = (self.nu(), self.a.len(), cs.len());
        let mut kern = vec![0.0; nc * na];
        for (j, &c) in cs.iter().enumerate() {
            for k in 0..na {
                let b = self.a.nodes[k];
                kern[j * na + k] = (p(s, b - c) - p(s, b + c + 2.0 * m)) * self.a.weights[k];
            }
        }
        let below = crate::bridge::matmul(&kern, &transpose(&self.phr, nu, na), nc, na, nu);
        let mut out = vec![0.0; nc * nu];
        for (j, &c) in cs.iter().enumerate() {
            for (i, &w) in self.u.nodes.iter().enumerate() {
                out[j * nu + i] = s_t(t, -y, c - w)? - s_t(t, -y, -c - 2.0 * m - w)? - below[j * nu + i];
            }
        }
        Ok(out)
    }

    /// `∂_c` of [`Self::left_flow`] at the barrier.
    fn left_slope(&self, x: f64) -> Result<Vec<f64>> {
        self.check_time(x)?;
        let (t, m, s) = (self.t, self.m, x - self.l1);
        let na = self.a.len();
        let kern: Vec<f64> = (0..na).map(|k| self.a.weights[k] * dp(s, self.a.nodes[k] + m)).collect();
        let below = crate::bridge::matmul(&self.phl, &kern, self.nu(), na, 1);
        self.u
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &u)| Ok(-2.0 * s_t_dz(-t, x, u + m)? + 2.0 * below[i]))
            .collect()
    }

    /// `∂_c` of [`Self::right_flow`] at the barrier.
    fn right_slope(&self, y: f64) -> Result<Vec<f64>> {
        self.check_time(y)?;
        let (t, m, s) = (self.t, self.m, self.l2 - y);
        let (nu, na) = (self.nu(), self.a.len());
        let kern: Vec<f64> = (0..na).map(|k| self.a.weights[k] * dp(s, self.a.nodes[k] + m)).collect();
        let below = crate::bridge::matmul(&self.phr, &kern, nu, na, 1);
        self.u
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &w)| Ok(2.0 * s_t_dz(t, -y, -m - w)? + 2.0 * below[i]))
            .collect()
    }

    /// Kernel corrections from the dips, `Σ_k G_k D_k H_k` on the u-nodes.
    ///
    /// `G_k` is the left flow through all earlier dips, obtained recursively
    /// from the free constant-barrier flow minus the hits already accounted
    /// for; `D_k = Θ^{(a)} - Θ^{(a+ε)}` across dip `k` is supported next to the
    /// barrier, so every integral here is localised.
    fn dip_terms(&self, dips: &[Dip]) -> Result<Vec<f64>> {
        let nu = self.nu();
        let a0 = -self.m;
        let mut out = vec![0.0; nu * nu];
        // per dip: rule, G_k W D_k W (nu × nc)
        let mut done: Vec<(QuadratureRule, Vec<f64>, f64)> = Vec::new();
        for d in dips {
            let (x, e, eps) = (d.start, d.start + d.width, d.depth);
            self.check_time(x)?;
            self.check_time(e)?;
            let rule = QuadratureRule::composite_on(
                self.q,
                &breaks_with_cuts(a0, a0 + dip_reach(d), 0.5 * (2.0 * d.width).sqrt(), &[a0 + eps]),
            )?;
            let nc = rule.len();
            let mut g = self.left_flow(x, &rule.nodes)?;
            for (prev, gd, end) in &done {
                let np = prev.len();
                let mut th = vec![0.0; np * nc];
                for (k, &c2) in prev.nodes.iter().enumerate() {
                    for (j, &c) in rule.nodes.iter().enumerate() {
                        th[k * nc + j] = theta_raw(a0, x - end, c2, c);
                    }
                }
                let corr = crate::bridge::matmul(gd, &th, nu, np, nc);
                for (v, c) in g.iter_mut().zip(corr) {
                    *v -= c;
                }
            }
            let mut dm = vec![0.0; nc * nc];
            for (k, &c) in rule.nodes.iter().enumerate() {
                for (j, &c2) in rule.nodes.iter().enumerate() {
                    let v = if c > a0 + eps && c2 > a0 + eps {
                        p(d.width, c + c2 - 2.0 * a0 - 2.0 * eps) - p(d.width, c + c2 - 2.0 * a0)
                    } else {
                        theta_raw(a0, d.width, c, c2)
                    };
                    dm[k * nc + j] = rule.weights[k] * v * rule.weights[j];
                }
            }
            let gd = crate::bridge::matmul(&g, &dm, nu, nc, nc);
            let h = self.right_flow(e, &rule.nodes)?;
            let term = crate::bridge::matmul(&gd, &h, nu, nc, nu);
            for (o, v) in out.iter_mut().zip(term) {
                *o += v;
            }
            done.push((rule, gd, e));
        }
        Ok(out)
    }
}

/// Height above the barrier covered by the quadrature for a dip.
fn dip_reach(d: &Dip) -> f64 {
    d.depth + 10.0 * (2.0 * d.width).sqrt()
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Window `[l1, l2]` in the frame where the wedge sits at the origin.
fn wedge_frame(h0: &InitialData, l: f64) -> Result<(f64, f64, f64)> {
    match h0.shape {
        Shape::NarrowWedge { u } => {
            if !(l > 0.0 && l.is_finite()) {
                return invalid(format!("window half-width must be positive, got {l}"));
            }
            Ok((-l - u, l - u, u))
        }
        _ => Err(KpzError::InvalidArgument(
            "fixed-point kernels are implemented for narrow-wedge initial data".into(),
        )),
    }
}

fn validate_settings(s: &OperatorSettings) -> Result<()> {
    if !(s.t > 0.0 && s.t.is_finite()) {
        return invalid(format!("time must be positive, got {}", s.t));
    }
    if !(s.kappa > 0.0) {
        return invalid(format!("kappa must be positive, got {}", s.kappa));
    }
    if s.panel_nodes < 2 {
        return invalid("need at least two nodes per panel");
    }
    if !(s.beta > 0.0 && s.beta < 1.0) {
        return invalid(format!("beta must lie in (0, 1), got {}", s.beta));
    }
    Ok(())
}

fn shifted_dips(dips: &[Dip], shift: f64) -> Result<Vec<Dip>> {
    let mut out: Vec<Dip> = dips.iter().map(|d| Dip { start: d.start - shift, ..*d }).collect();
    for d in &out {
        if !(d.width > 0.0 && d.depth >= 0.0 && d.start.is_finite() && d.depth.is_finite()) {
            return invalid(format!("bad dip {d:?}"));
        }
    }
    out.sort_by(|a, b| a.start.total_cmp(&b.start));
    if out.windows(2).any(|w| w[0].start + w[0].width >= w[1].start) {
        return invalid("dips must be disjoint and separated");
    }
    Ok(out)
}

fn probe_points(l1: f64, l2: f64) -> Vec<f64> {
    breaks(l1, l2, 8)
}

/// Kernel `K` on `L²[0, ∞)` with `P(h_t ≤ g on [-L, L]) = det(I - K)` for
/// narrow-wedge `h0`.
///
/// The product `K^{hypo(h0)}_{t/2} K^{epi(g)}_{-t/2}` is conjugated by `Γ` and
/// `S_{t/2,0}`, which leaves the determinant unchanged; `Γ` enters only through
/// the truncation of the half-line, chosen where the `Γ`-weighted kernel
/// envelope drops below [`TRUNCATION_TOL`].
pub fn build_fixed_point_operators(
    h0: &InitialData,
    g: &Ceiling,
    l: f64,
    settings: &OperatorSettings,
) -> Result<DiscretizedKernel> {
    validate_settings(settings)?;
    let (l1, l2, shift) = wedge_frame(h0, l)?;
    let OperatorSettings { t, kappa, panel_nodes: q, .. } = *settings;
    match g {
        Ceiling::Unbounded => {
            let rule = QuadratureRule::gauss_legendre(q, 0.0, 1.0)?;
            DiscretizedKernel::from_values(rule, vec![0.0; q * q])
        }
        Ceiling::Piecewise { level, dips } => {
            if !level.is_finite() {
                return invalid("ceiling level must be finite");
            }
            let dips = shifted_dips(dips, shift)?;
            let reach = dips.iter().map(dip_reach).fold(0.0, f64::max);
            let red = Reduced::new(t, l1, l2, *level, kappa, q, reach)?;
            let mut k = red.base()?;
            if !dips.is_empty() {
                for (v, d) in k.iter_mut().zip(red.dip_terms(&dips)?) {
                    *v += d;
                }
            }
            DiscretizedKernel::from_values(red.u.clone(), k)
        }
    }
}

/// `P(h_t(x) ≤ g(x) for x ∈ [-L, L])` for narrow-wedge `h0`, with its refinement gap.
pub fn fixed_point_prob(h0: &InitialData, g: &Ceiling, l: f64, settings: &OperatorSettings) -> Result<Refined> {
    refine(settings.panel_nodes, |q| {
        let s = OperatorSettings { panel_nodes: q, ..*settings };
        let k = build_fixed_point_operators(h0, g, l, &s)?;
        fredholm_det(&k.scaled(-1.0))
    })
}

/// `(ε, δ)`: depth and width of a dip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    pub eps: f64,
    pub delta: f64,
}

impl Eta {
    pub const ZERO: Eta = Eta { eps: 0.0, delta: 0.0 };

    pub fn size(&self) -> f64 {
        self.eps * self.delta
    }
}

fn check_locations(x1: f64, x2: f64, l: f64, beta: f64) -> Result<()> {
    let j = beta * l;
    if !(x1 < x2) {
        return invalid(format!("need x1 < x2, got {x1} and {x2}"));
    }
    if x1 < -j || x2 > j {
        return invalid(format!("locations must lie in [-{j}, {j}]"));
    }
    Ok(())
}

/// Four-determinant inclusion–exclusion for the probability that the maximum on
/// `[-L, L]` is at most `m` while `h_t` exceeds `m - ε_i` somewhere in
/// `[x_i, x_i + δ_i)` for both `i`.
#[allow(clippy::too_many_arguments)]
pub fn twin_peaks_prob_det(
    eta1: Eta,
    eta2: Eta,
    x1: f64,
    x2: f64,
    m: f64,
    l: f64,
    h0: &InitialData,
    settings: &OperatorSettings,
) -> Result<Refined> {
    validate_settings(settings)?;
    check_locations(x1, x2, l, settings.beta)?;
    for e in [eta1, eta2] {
        if !(e.eps >= 0.0 && e.delta >= 0.0) {
            return invalid(format!("bad dip size {e:?}"));
        }
    }
    if eta1.delta >= x2 - x1 || x2 + eta2.delta >= l {
        return invalid("dips must be shorter than the separation and stay inside the window");
    }
    let dip = |x: f64, e: Eta| (e.eps > 0.0 && e.delta > 0.0).then_some(Dip { start: x, width: e.delta, depth: e.eps });
    let ceiling = |a: Option<Dip>, b: Option<Dip>| Ceiling::Piecewise { level: m, dips: a.into_iter().chain(b).collect() };
    let (d1, d2) = (dip(x1, eta1), dip(x2, eta2));
    let r = refine(settings.panel_nodes, |q| {
        let s = OperatorSettings { panel_nodes: q, ..*settings };
        let det = |c: &Ceiling| -> Result<f64> { fredholm_det(&build_fixed_point_operators(h0, c, l, &s)?.scaled(-1.0)) };
        let p00 = det(&ceiling(None, None))?;
        let p10 = if d1.is_some() { det(&ceiling(d1, None))? } else { p00 };
        let p01 = if d2.is_some() { det(&ceiling(None, d2))? } else { p00 };
        let p11 = match (d1, d2) {
            (Some(_), Some(_)) => det(&ceiling(d1, d2))?,
            (Some(_), None) => p10,
            _ => p01,
        };
        Ok(p00 - p10 - p01 + p11)
    })?;
    if r.value < -1e-8 {
        return Err(KpzError::NumericFailure(format!("inclusion-exclusion gave {:e}", r.value)));
    }
    Ok(r)
}

/// `(4π)^{-1/2} (x2 - x1)^{-3/2}`, the mixed slope of the no-hit density at the barrier.
pub fn separation_factor(x1: f64, x2: f64) -> f64 {
    (4.0 * std::f64::consts::PI).sqrt().recip() * (x2 - x1).powf(-1.5)
}

/// Two-maximiser density at `(x1, x2)` with maximum `m` on `[-L, L]`.
///
/// Each dip contributes, in the limit, a rank-one kernel built from the
/// barrier slopes of the left and right flows; the interaction of the two dips
/// adds a third one carrying [`separation_factor`]. The mixed derivative is
/// assembled from four determinants.
pub fn density_f(x1: f64, x2: f64, m: f64, l: f64, h0: &InitialData, settings: &OperatorSettings) -> Result<Refined> {
    validate_settings(settings)?;
    check_locations(x1, x2, l, settings.beta)?;
    let (l1, l2, shift) = wedge_frame(h0, l)?;
    let (y1, y2) = (x1 - shift, x2 - shift);
    let cf = separation_factor(x1, x2);
    let r = refine(settings.panel_nodes, |q| {
        let red = Reduced::new(settings.t, l1, l2, m, settings.kappa, q, 0.0)?;
        let base = DiscretizedKernel::from_values(red.u.clone(), red.base()?)?;
        let (g1, h1) = (red.left_slope(y1)?, red.right_slope(y1)?);
        let (g2, h2) = (red.left_slope(y2)?, red.right_slope(y2)?);
        let b1 = DiscretizedKernel::rank_one(red.u.clone(), &g1, &h1)?;
        let b2 = DiscretizedKernel::rank_one(red.u.clone(), &g2, &h2)?;
        let mixed: Vec<f64> = g2.iter().zip(&g1).map(|(a, b)| a + cf * b).collect();
        let b2x = DiscretizedKernel::rank_one(red.u.clone(), &mixed, &h2)?;
        let det = |k: &DiscretizedKernel| fredholm_det(&k.scaled(-1.0));
        Ok(det(&base.add(&b1)?.add(&b2)?)? - det(&base.add(&b1)?)? - det(&base.add(&b2x)?)? + det(&base)?)
    })?;
    if r.value < -1e-8 {
        return Err(KpzError::NumericFailure(format!("density came out negative: {:e}", r.value)));
    }
    Ok(r)
}

/// `(1/(εδ)) ⟨f, (Θ^{(a)}_δ - Θ^{(a+ε)}_δ) g⟩` for `f(c) = g(c) = c - a`, as a
/// function of `r = ε/√δ`. Tends to 1 as `r → 0`; it is the leading
/// finite-size factor of a single dip in the twin-peaks finite differences.
pub fn dip_shape_factor(r: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return invalid(format!("dip ratio must be positive, got {r}"));
    }
    let far = r + 24.0;
    let inner = QuadratureRule::composite_on(16, &breaks_with_cuts(0.0, r, 0.5, &[]))?;
    let outer = QuadratureRule::composite_on(16, &breaks_with_cuts(r, far, 0.5, &[]))?;
    // both values above the raised level: only the reflected term moves
    let mut above = 0.0;
    for (&y, &wy) in outer.nodes.iter().zip(&outer.weights) {
        for (&z, &wz) in outer.nodes.iter().zip(&outer.weights) {
            above += wy * wz * y * z * (p(1.0, y + z - 2.0 * r) - p(1.0, y + z));
        }
    }
    let free = |y: f64, z: f64| y * z * (p(1.0, z - y) - p(1.0, y + z));
    let mut below = 0.0;
    for (&y, &wy) in inner.nodes.iter().zip(&inner.weights) {
        for (&z, &wz) in inner.nodes.iter().zip(&inner.weights) {
            below += wy * wz * free(y, z);
        }
        for (&z, &wz) in outer.nodes.iter().zip(&outer.weights) {
            below += 2.0 * wy * wz * free(y, z);
        }
    }
    Ok((above + below) / r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::{hit_matrix, Barrier, Bump};
    use crate::rng::stream_rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn nw() -> InitialData {
        InitialData::narrow_wedge(0.0)
    }

    #[test]
    fn zero_and_rank_one_kernels() {
        let rule = QuadratureRule::gauss_legendre(30, 0.0, 1.0).unwrap();
        let z = DiscretizedKernel::from_fn(rule.clone(), |_, _| 0.0).unwrap();
        assert_eq!(fredholm_det(&z).unwrap(), 1.0);
        // φψ with ∫φψ = ∫ x·e^x dx over [0,1] = 1
        let k = DiscretizedKernel::from_fn(rule, |x, y| x * y.exp()).unwrap();
        assert!((fredholm_det(&k).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_kernel_is_rejected() {
        let rule = QuadratureRule::gauss_legendre(4, 0.0, 1.0).unwrap();
        assert!(DiscretizedKernel::from_fn(rule, |_, _| f64::NAN).is_err());
    }

    #[test]
    fn rank_one_identity_on_random_kernels() {
        let mut rng = stream_rng(11, 0);
        for _ in 0..20 {
            let rule = QuadratureRule::gauss_legendre(12, -1.0, 1.0).unwrap();
            let c: [f64; 4] = rng.gen();
            let a = DiscretizedKernel::from_fn(rule.clone(), |x, y| 0.3 * (c[0] * x * y + c[1] * (x - y).cos() - c[2])).unwrap();
            let phi: Vec<f64> = rule.nodes.iter().map(|x| (c[3] * x).sin() + 0.5).collect();
            let psi: Vec<f64> = rule.nodes.iter().map(|x| x * x - c[0]).collect();
            let b = DiscretizedKernel::rank_one(rule, &phi, &psi).unwrap();
            let lhs = fredholm_det(&a.scaled(-1.0).add(&b).unwrap()).unwrap();
            let rhs = rank_one_det(&a, &phi, &psi).unwrap();
            assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn determinant_continuity_bound() {
        let rule = QuadratureRule::gauss_legendre(16, 0.0, 2.0).unwrap();
        let a = DiscretizedKernel::from_fn(rule.clone(), |x, y| (-(x + y)).exp()).unwrap();
        let b = DiscretizedKernel::from_fn(rule, |x, y| (-(x + y)).exp() + 0.1 * (x * y).sin()).unwrap();
        let diff = b.add(&a.scaled(-1.0)).unwrap();
        let lhs = (fredholm_det(&a).unwrap() - fredholm_det(&b).unwrap()).abs();
        let rhs = diff.trace_norm() * (a.trace_norm() + b.trace_norm() + 1.0).exp();
        assert!(lhs <= rhs);
    }

    #[test]
    fn tracy_widom_refinement_and_values() {
        for m in [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0] {
            let r = tw_gue_cdf_refined(m, 40).unwrap();
            assert!(r.gap <= 1e-8, "gap {:e} at {m}", r.gap);
        }
        // reference values from an independent 96-node mpmath quadrature at 20 digits
        assert!((tw_gue_cdf(-2.0, 40).unwrap() - 0.413_224_142_505_122_6).abs() < 1e-9);
        assert!((tw_gue_cdf(0.0, 40).unwrap() - 0.969_372_828_355_262_7).abs() < 1e-9);
        assert!(tw_gue_cdf(8.0, 40).unwrap() >= 1.0 - 1e-6);
        assert!(tw_gue_cdf(0.0, 10).is_err());
    }

    #[test]
    fn unbounded_ceiling_gives_one_and_low_ceiling_gives_zero() {
        let s = OperatorSettings::default();
        assert_eq!(fixed_point_prob(&nw(), &Ceiling::Unbounded, 3.0, &s).unwrap().value, 1.0);
        let low = fixed_point_prob(&nw(), &Ceiling::constant(-8.0), 2.0, &s).unwrap().value;
        assert!((-1e-8..1e-6).contains(&low), "{low}");
    }

    #[test]
    fn wide_window_approaches_the_goe_maximum() {
        // sup_x (A2(x) - x²) has the GOE law at scale 4^{1/3}
        let s = OperatorSettings::default();
        for m in [-1.0, 0.0, 1.0] {
            let det = fixed_point_prob(&nw(), &Ceiling::constant(m), 4.0, &s).unwrap();
            let goe = tw_goe_cdf_refined(4f64.cbrt() * m, 40).unwrap();
            assert!(det.gap < 1e-9 && (det.value - goe.value).abs() < 1e-8, "{det:?} {goe:?}");
        }
    }

    #[test]
    fn probabilities_are_monotone() {
        let s = OperatorSettings::default();
        let pm: Vec<f64> = [-1.0, -0.5, 0.0]
            .iter()
            .map(|&m| fixed_point_prob(&nw(), &Ceiling::constant(m), 1.0, &s).unwrap().value)
            .collect();
        assert!(pm[0] < pm[1] && pm[1] < pm[2]);
        let pl: Vec<f64> = [0.25, 0.5, 1.0]
            .iter()
            .map(|&l| fixed_point_prob(&nw(), &Ceiling::constant(0.0), l, &s).unwrap().value)
            .collect();
        assert!(pl[0] > pl[1] && pl[1] > pl[2]);
        // a single point bounds every window from above
        assert!(pl[0] < tw_gue_cdf(0.0, 40).unwrap());
    }

    /// Direct quadrature of `S_{-t,-L} P^{hit} S_{t,-L}` on a short window, where
    /// the cancellation is still harmless.
    fn brute_force(m: f64, l: f64, dips: &[Dip]) -> f64 {
        brute_force_with(m, l, dips, 14.0, 12.0, 24)
    }

    fn brute_force_with(m: f64, l: f64, dips: &[Dip], ext: f64, top: f64, pn: usize) -> f64 {
        let t = 1.0;
        let u = QuadratureRule::composite_on(12, &breaks(0.0, 16.0, 32)).unwrap();
        let ab = QuadratureRule::composite_on(12, &breaks_with_cuts(-m - ext, top - m, 0.4, &[-m])).unwrap();
        let barrier =
            Barrier::new(-m, dips.iter().map(|d| Bump { start: d.start, width: d.width, height: d.depth }).collect())
                .unwrap();
        let hit = hit_matrix(&barrier, -l, l, &ab.nodes, &ab.nodes, pn).unwrap();
        let (nu, na) = (u.len(), ab.len());
        let mut left = vec![0.0; nu * na];
        let mut right = vec![0.0; na * nu];
        for i in 0..nu {
            for k in 0..na {
                left[i * na + k] = s_t(-t, -l, u.nodes[i] - ab.nodes[k]).unwrap() * ab.weights[k];
                right[k * nu + i] = ab.weights[k] * s_t(t, -l, ab.nodes[k] - u.nodes[i]).unwrap();
            }
        }
        let k = crate::bridge::matmul(&crate::bridge::matmul(&left, &hit, nu, na, na), &right, nu, na, nu);
        fredholm_det(&DiscretizedKernel::from_values(u, k).unwrap().scaled(-1.0)).unwrap()
    }

    #[test]
    fn reduced_kernel_matches_direct_quadrature() {
        let s = OperatorSettings::default();
        let l = 0.6;
        for m in [-0.5, 0.3] {
            let direct = brute_force(m, l, &[]);
            let fast = fixed_point_prob(&nw(), &Ceiling::constant(m), l, &s).unwrap().value;
            assert!((direct - fast).abs() < 1e-9, "m = {m}: {direct} vs {fast}");
        }
        let dips = [Dip { start: -0.3, width: 0.1, depth: 0.2 }, Dip { start: 0.1, width: 0.15, depth: 0.1 }];
        let direct = brute_force(0.3, l, &dips);
        let fast = fixed_point_prob(&nw(), &Ceiling::Piecewise { level: 0.3, dips: dips.to_vec() }, l, &s).unwrap().value;
        assert!((direct - fast).abs() < 1e-8, "{direct} vs {fast}");
    }

    #[test]
    fn twin_peaks_trivial_cases() {
        let s = OperatorSettings::default();
        let z = twin_peaks_prob_det(Eta::ZERO, Eta { eps: 0.1, delta: 0.1 }, -1.0, 1.0, 0.0, 2.0, &nw(), &s).unwrap();
        assert!(z.value.abs() < 1e-14);
        let e = Eta { eps: 0.1, delta: 0.1 };
        let a = twin_peaks_prob_det(e, e, -1.2, 0.4, 0.0, 2.0, &nw(), &s).unwrap().value;
        // mirror image: dips [-0.5, -0.4) and [1.1, 1.2) map onto [x, x + δ) with x = -0.5, 1.1
        let b = twin_peaks_prob_det(e, e, -0.5, 1.1, 0.0, 2.0, &nw(), &s).unwrap().value;
        assert!(a > 0.0 && (a - b).abs() < 1e-8, "{a} vs {b}");
        // bounded by the one-dip probabilities
        let p00 = fixed_point_prob(&nw(), &Ceiling::constant(0.0), 2.0, &s).unwrap().value;
        let p10 = fixed_point_prob(
            &nw(),
            &Ceiling::Piecewise { level: 0.0, dips: vec![Dip { start: -1.2, width: 0.1, depth: 0.1 }] },
            2.0,
            &s,
        )
        .unwrap()
        .value;
        assert!(a <= p00 - p10 + 1e-12);
    }

    #[test]
    fn density_scaling_identity() {
        let s1 = OperatorSettings::default();
        let t = 8.0;
        let st = OperatorSettings { t, ..s1 };
        let (x1, x2, m, l) = (-1.0, 1.0, 0.0, 2.0);
        let c = t.powf(-2.0 / 3.0);
        let at_t = density_f(x1, x2, m, l, &nw(), &st).unwrap().value;
        let at_1 = density_f(c * x1, c * x2, t.powf(-1.0 / 3.0) * m, c * l, &nw(), &s1).unwrap().value;
        assert!(((at_t - at_1 / (t * t)) / at_t).abs() < 1e-4, "{at_t} vs {}", at_1 / (t * t));
    }

    #[test]
    fn dip_shape_factor_values() {
        // 2-D adaptive mpmath quadrature at 15 digits
        assert!((dip_shape_factor(0.1).unwrap() - 1.116_171_250_042_88).abs() < 1e-9);
        assert!((dip_shape_factor(0.562_341_325_190_349).unwrap() - 1.739_943_491_480_62).abs() < 1e-9);
        assert!((dip_shape_factor(1e-3).unwrap() - 1.0).abs() < 2e-3);
    }

    #[test]
    fn density_separation_ratio() {
        // separations small next to t^{2/3}, so only the prefactor varies
        let s = OperatorSettings { t: 8.0, ..OperatorSettings::default() };
        let near = density_f(-0.25, 0.25, 0.0, 8.0, &nw(), &s).unwrap().value;
        let far = density_f(-0.5, 0.5, 0.0, 8.0, &nw(), &s).unwrap().value;
        let target = 2f64.powf(1.5);
        assert!(((near / far) / target - 1.0).abs() < 0.1, "ratio {}", near / far);
    }

    #[test]
    fn density_matches_twin_peaks_finite_differences() {
        let s = OperatorSettings::default();
        let (x1, x2, m, l) = (-1.0, 1.0, 0.0, 2.0);
        let f = density_f(x1, x2, m, l, &nw(), &s).unwrap().value;
        let seq: Vec<f64> = [0.2f64, 0.1, 0.05]
            .iter()
            .map(|&d| {
                let e = Eta { eps: d.powf(0.75), delta: d };
                let v = twin_peaks_prob_det(e, e, x1, x2, m, l, &nw(), &s).unwrap().value;
                v / (e.size() * e.size()) / dip_shape_factor(d.powf(0.25)).unwrap().powi(2)
            })
            .collect();
        let lim = crate::stats::aitken_limit(seq[0], seq[1], seq[2]).unwrap();
        assert!((lim / f - 1.0).abs() < 0.05, "{seq:?} -> {lim} vs {f}");
    }

    #[test]
    fn kappa_too_large_is_reported() {
        let s = OperatorSettings { kappa: 2.0, ..OperatorSettings::default() };
        let e = fixed_point_prob(&nw(), &Ceiling::constant(0.0), 1.0, &s).unwrap_err();
        assert!(matches!(e, KpzError::KappaTooLarge { .. }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn fixed_point_probabilities_are_in_range(m in -2.0f64..2.0, l in 0.2f64..2.5) {
            let v = fixed_point_prob(&nw(), &Ceiling::constant(m), l, &OperatorSettings::default()).unwrap().value;
            prop_assert!((-1e-8..=1.0 + 1e-8).contains(&v));
        }

        #[test]
        fn rank_one_identity(seed in 0u64..1000) {
            let mut rng = stream_rng(seed, 1);
            let rule = QuadratureRule::gauss_legendre(8, 0.0, 1.0).unwrap();
            let vals: Vec<f64> = (0..64).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let a = DiscretizedKernel::from_values(rule.clone(), vals).unwrap();
            let phi: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let psi: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = DiscretizedKernel::rank_one(rule, &phi, &psi).unwrap();
            let lhs = fredholm_det(&a.scaled(-1.0).add(&b).unwrap()).unwrap();
            prop_assert!((lhs - rank_one_det(&a, &phi, &psi).unwrap()).abs() < 1e-10);
        }
    }
}
