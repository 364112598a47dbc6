//! Gauss–Legendre rules, single and composite.

use crate::error::{invalid, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Nodes and weights on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub a: f64,
    pub b: f64,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// `q`-point Gauss–Legendre rule on `[a, b]`.
    pub fn gauss_legendre(q: usize, a: f64, b: f64) -> Result<Self> {
        if q == 0 {
            return invalid("quadrature order must be positive");
        }
        if !(a.is_finite() && b.is_finite() && a < b) {
            return invalid(format!("bad quadrature interval [{a}, {b}]"));
        }
        let (x, w) = legendre_unit(q);
        let (c, h) = ((a + b) / 2.0, (b - a) / 2.0);
        Ok(Self {
            a,
            b,
            order: q,
            nodes: x.iter().map(|t| c + h * t).collect(),
            weights: w.iter().map(|v| h * v).collect(),
        })
    }

    /// `panels` equal panels on `[a, b]`, each with a `q`-point rule.
    pub fn composite(q: usize, a: f64, b: f64, panels: usize) -> Result<Self> {
        Self::composite_on(q, &breaks(a, b, panels.max(1)))
    }

    /// Composite rule over consecutive break points (strictly increasing).
    pub fn composite_on(q: usize, brk: &[f64]) -> Result<Self> {
        if brk.len() < 2 {
            return invalid("composite rule needs at least two break points");
        }
        let mut nodes = Vec::with_capacity(q * (brk.len() - 1));
        let mut weights = Vec::with_capacity(q * (brk.len() - 1));
        for w in brk.windows(2) {
            let r = Self::gauss_legendre(q, w[0], w[1])?;
            nodes.extend(r.nodes);
            weights.extend(r.weights);
        }
        Ok(Self { a: brk[0], b: brk[brk.len() - 1], order: nodes.len(), nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Evenly spaced break points.
pub fn breaks(a: f64, b: f64, panels: usize) -> Vec<f64> {
    (0..=panels).map(|i| a + (b - a) * i as f64 / panels as f64).collect()
}

/// Break points on `[a, b]` with panels no wider than `width`, also splitting at `cuts`.
pub fn breaks_with_cuts(a: f64, b: f64, width: f64, cuts: &[f64]) -> Vec<f64> {
    let mut pts = vec![a];
    let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > a && c < b).collect();
    inner.sort_by(f64::total_cmp);
    inner.push(b);
    let mut left = a;
    for c in inner {
        if c - left <= 0.0 {
            continue;
        }
        let k = ((c - left) / width).ceil().max(1.0) as usize;
        for i in 1..=k {
            pts.push(left + (c - left) * i as f64 / k as f64);
        }
        left = c;
    }
    pts
}

fn legendre_unit(q: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; q];
    let mut w = vec![0.0; q];
    let n = q as f64;
    for i in 0..q.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=q {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[q - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[q - 1 - i] = wi;
    }
    (x, w)
}
