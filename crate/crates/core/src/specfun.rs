//! Airy function, rate-two heat kernel, the `S_{t,x}` kernel and the `Γ_t` weight.
//!
//! Airy values come from three regimes: a Maclaurin series near the origin,
//! large-argument asymptotic expansions, and Taylor stepping of `y'' = x y`
//! in between, started from the asymptotic values.

#![allow(clippy::excessive_precision)] // constants and reference values keep all their digits

use crate::error::{invalid, KpzError, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

const AI0: f64 = 0.355_028_053_887_817_24;
const AIP0: f64 = 0.258_819_403_792_806_8;

const ASYMPTOTIC_CUT: f64 = 10.0;
const SERIES_CUT_NEG: f64 = 4.5;
const SERIES_CUT_POS: f64 = 2.0;
const TAYLOR_STEP: f64 = 0.5;

/// Airy function and its derivative at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Airy {
    pub ai: f64,
    pub ai_prime: f64,
}

/// `Ai(x)` and `Ai'(x)`.
pub fn airy(x: f64) -> Result<Airy> {
    if !x.is_finite() {
        return invalid(format!("airy argument must be finite, got {x}"));
    }
    let (ai, aip) = airy_scaled_raw(x);
    if x > 0.0 {
        let s = (-zeta(x)).exp();
        Ok(Airy { ai: ai * s, ai_prime: aip * s })
    } else {
        Ok(Airy { ai, ai_prime: aip })
    }
}

/// `Ai(x)·e^{ζ}` and `Ai'(x)·e^{ζ}` with `ζ = (2/3)·max(x,0)^{3/2}`.
///
/// Stays representable for large positive `x` where `Ai` underflows.
pub fn airy_scaled(x: f64) -> Result<Airy> {
    if !x.is_finite() {
        return invalid(format!("airy argument must be finite, got {x}"));
    }
    let (ai, ai_prime) = airy_scaled_raw(x);
    Ok(Airy { ai, ai_prime })
}

fn zeta(x: f64) -> f64 {
    if x > 0.0 {
        2.0 / 3.0 * x * x.sqrt()
    } else {
        0.0
    }
}

fn airy_scaled_raw(x: f64) -> (f64, f64) {
    if x >= ASYMPTOTIC_CUT {
        asymptotic_pos_scaled(x)
    } else if x <= -ASYMPTOTIC_CUT {
        asymptotic_neg(-x)
    } else if (-SERIES_CUT_NEG..=SERIES_CUT_POS).contains(&x) {
        let (a, d) = maclaurin(x);
        let s = zeta(x).exp();
        (a * s, d * s)
    } else if x > 0.0 {
        // Integrate leftwards from the anchor: the recessive solution grows in
        // that direction, so errors in the dominant component shrink.
        let (a, d) = asymptotic_pos_scaled(ASYMPTOTIC_CUT);
        let (a, d) = taylor_walk(ASYMPTOTIC_CUT, a, d, x);
        let s = (zeta(x) - zeta(ASYMPTOTIC_CUT)).exp();
        (a * s, d * s)
    } else {
        let (a, d) = asymptotic_neg(ASYMPTOTIC_CUT);
        taylor_walk(-ASYMPTOTIC_CUT, a, d, x)
    }
}

fn maclaurin(x: f64) -> (f64, f64) {
    let x3 = x * x * x;
    let (mut f, mut g, mut fp, mut gp) = (0.0, 0.0, 0.0, 0.0);
    let mut a = 1.0;
    let mut b = x;
    let mut d = x * x / 2.0;
    let mut e = 1.0;
    for k in 0..200 {
        let kf = k as f64;
        f += a;
        g += b;
        fp += d;
        gp += e;
        a *= x3 / ((3.0 * kf + 2.0) * (3.0 * kf + 3.0));
        b *= x3 / ((3.0 * kf + 3.0) * (3.0 * kf + 4.0));
        d *= x3 / ((3.0 * kf + 3.0) * (3.0 * kf + 5.0));
        e *= x3 / ((3.0 * kf + 1.0) * (3.0 * kf + 3.0));
        let scale = f.abs() + g.abs() + fp.abs() + gp.abs();
        if a.abs() + b.abs() + d.abs() + e.abs() < 1e-18 * scale {
            break;
        }
    }
    (AI0 * f - AIP0 * g, AI0 * fp - AIP0 * gp)
}

/// Walk `y'' = x y` from `x0` to `x1` with local Taylor series.
fn taylor_walk(x0: f64, y0: f64, dy0: f64, x1: f64) -> (f64, f64) {
    let span = x1 - x0;
    let steps = (span.abs() / TAYLOR_STEP).ceil().max(1.0) as usize;
    let h = span / steps as f64;
    let (mut y, mut dy) = (y0, dy0);
    let mut xc = x0;
    let mut c = [0.0f64; 64];
    for _ in 0..steps {
        c[0] = y;
        c[1] = dy;
        c[2] = xc * y / 2.0;
        for k in 1..62 {
            c[k + 2] = (xc * c[k] + c[k - 1]) / (((k + 1) * (k + 2)) as f64);
        }
        let (mut ny, mut ndy) = (0.0, 0.0);
        let mut hp = 1.0;
        for k in 0..64 {
            ny += c[k] * hp;
            if k + 1 < 64 {
                ndy += (k + 1) as f64 * c[k + 1] * hp;
            }
            hp *= h;
        }
        y = ny;
        dy = ndy;
        xc += h;
    }
    (y, dy)
}

fn u_coeffs(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0f64; n];
    let mut v = vec![1.0f64; n];
    for k in 1..n {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

const N_ASYM: usize = 40;

fn asymptotic_pos_scaled(x: f64) -> (f64, f64) {
    let z = zeta(x);
    let (u, v) = u_coeffs(N_ASYM);
    let (mut su, mut sv) = (0.0, 0.0);
    let mut zp = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..N_ASYM {
        let tu = u[k] / zp;
        if tu.abs() > last || tu.abs() < 1e-18 {
            break;
        }
        last = tu.abs();
        let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
        su += sgn * tu;
        sv += sgn * v[k] / zp;
        zp *= z;
    }
    let q = x.powf(0.25);
    let pref = 1.0 / (2.0 * PI.sqrt());
    (pref / q * su, -pref * q * sv)
}

fn asymptotic_neg(x: f64) -> (f64, f64) {
    let z = zeta(x);
    let (u, v) = u_coeffs(N_ASYM);
    let (mut ue, mut uo, mut ve, mut vo) = (0.0, 0.0, 0.0, 0.0);
    let mut zp = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..N_ASYM {
        let tu = u[k] / zp;
        if tu.abs() > last || tu.abs() < 1e-18 {
            break;
        }
        last = tu.abs();
        let j = k / 2;
        let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            ue += sgn * tu;
            ve += sgn * v[k] / zp;
        } else {
            uo += sgn * tu;
            vo += sgn * v[k] / zp;
        }
        zp *= z;
    }
    let q = x.powf(0.25);
    let ph = z - PI / 4.0;
    let (s, c) = ph.sin_cos();
    let ai = (c * ue + s * uo) / (PI.sqrt() * q);
    let aip = q / PI.sqrt() * (s * ve - c * vo);
    (ai, aip)
}

/// Rate-two heat kernel `p_ℓ(u) = (4πℓ)^{-1/2} exp(-u²/4ℓ)`.
///
/// At `ℓ = 0` the kernel is a point mass and [`KpzError::DeltaKernel`] is returned.
pub fn heat_kernel(ell: f64, u: f64) -> Result<f64> {
    check_ell(ell, u)?;
    Ok(p(ell, u))
}

/// First derivative in `u` of the heat kernel.
pub fn heat_kernel_d1(ell: f64, u: f64) -> Result<f64> {
    check_ell(ell, u)?;
    Ok(dp(ell, u))
}

/// Second derivative in `u` of the heat kernel.
pub fn heat_kernel_d2(ell: f64, u: f64) -> Result<f64> {
    check_ell(ell, u)?;
    Ok(ddp(ell, u))
}

fn check_ell(ell: f64, u: f64) -> Result<()> {
    if !ell.is_finite() || !u.is_finite() {
        return invalid("heat kernel arguments must be finite");
    }
    if ell < 0.0 {
        return invalid(format!("heat kernel time must be nonnegative, got {ell}"));
    }
    if ell == 0.0 {
        return Err(KpzError::DeltaKernel { at: u });
    }
    Ok(())
}

// Unchecked versions for inner loops; callers guarantee ell > 0.
#[inline]
pub(crate) fn p(ell: f64, u: f64) -> f64 {
    (-u * u / (4.0 * ell)).exp() / (4.0 * PI * ell).sqrt()
}

#[inline]
pub(crate) fn dp(ell: f64, u: f64) -> f64 {
    -u / (2.0 * ell) * p(ell, u)
}

#[inline]
pub(crate) fn ddp(ell: f64, u: f64) -> f64 {
    (u * u / (4.0 * ell * ell) - 1.0 / (2.0 * ell)) * p(ell, u)
}

/// Arguments `(t, x, z)` of `S_{t,x}(z)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: f64,
    pub x: f64,
    pub z: f64,
}

impl EvalPoint {
    pub fn new(t: f64, x: f64, z: f64) -> Result<Self> {
        if !(t.is_finite() && x.is_finite() && z.is_finite()) {
            return invalid("S-kernel arguments must be finite");
        }
        if t == 0.0 && x < 0.0 {
            return invalid(format!("S-kernel undefined at t = 0 with x = {x} < 0"));
        }
        Ok(Self { t, x, z })
    }
}

/// `S_{t,x}(z)`.
///
/// For `t > 0` this is `t^{-1/3} e^{2x³/3t² - zx/t} Ai(-t^{-1/3} z + t^{-4/3} x²)`,
/// for `t < 0` it is `S_{-t,x}(-z)`, and at `t = 0, x > 0` the heat kernel `p_x(z)`.
/// At `t = 0, x = 0` the kernel is the identity and a delta signal is returned.
pub fn s_kernel(pt: EvalPoint) -> Result<f64> {
    let EvalPoint { t, x, z } = EvalPoint::new(pt.t, pt.x, pt.z)?;
    if t == 0.0 {
        return heat_kernel(x, z);
    }
    let (t, z) = if t < 0.0 { (-t, -z) } else { (t, z) };
    let c = t.cbrt();
    let w = -z / c + x * x / (c * c * c * c);
    let a = airy_scaled(w)?;
    let e = 2.0 * x * x * x / (3.0 * t * t) - z * x / t - zeta(w);
    Ok(a.ai * e.exp() / c)
}

/// `∂_z S_{t,x}(z)`.
pub fn s_kernel_dz(pt: EvalPoint) -> Result<f64> {
    let EvalPoint { t, x, z } = EvalPoint::new(pt.t, pt.x, pt.z)?;
    if t == 0.0 {
        return heat_kernel_d1(x, z);
    }
    let (tt, zz, sign) = if t < 0.0 { (-t, -z, -1.0) } else { (t, z, 1.0) };
    let c = tt.cbrt();
    let w = -zz / c + x * x / (c * c * c * c);
    let a = airy_scaled(w)?;
    let e = 2.0 * x * x * x / (3.0 * tt * tt) - zz * x / tt - zeta(w);
    Ok(sign * e.exp() / c * (-(x / tt) * a.ai - a.ai_prime / c))
}

/// Exponent of the envelope bounding `|S_{1,x}(z)|`:
/// `-x³/3 + x y - (2/3)·max(y,0)^{3/2}` with `y = x² - z`.
pub fn s_bound(x: f64, z: f64) -> f64 {
    let y = x * x - z;
    -x * x * x / 3.0 + x * y - 2.0 / 3.0 * y.max(0.0).powf(1.5)
}

/// `Γ`-weight `exp(t^{-1/2} κ sgn(u) |u|^{3/2})`.
pub fn gamma_weight(t: f64, kappa: f64, u: f64) -> Result<f64> {
    if !(t > 0.0) {
        return invalid(format!("gamma weight needs t > 0, got {t}"));
    }
    if !(kappa > 0.0) {
        return invalid(format!("gamma weight needs kappa > 0, got {kappa}"));
    }
    Ok((kappa / t.sqrt() * u.signum() * u.abs().powf(1.5)).exp())
}
