//! Gauss–Legendre quadrature: fixed rules, composite panels and an adaptive
//! bisection driver.

use crate::error::{Error, Result};
use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    /// Builds the `n`-point rule by Newton iteration on the Legendre
    /// polynomial, starting from the Chebyshev-like asymptotic guess.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&t, &w)| (mid + half * t, half * w))
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite rule over `panels` equal panels of `[a, b]`.
pub fn composite<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    panels: usize,
    mut f: F,
) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = a + h * p as f64;
        let hi = if p + 1 == panels { b } else { lo + h };
        total += rule.integrate(lo, hi, &mut f);
    }
    total
}

/// Adaptive Gauss–Legendre integration by recursive bisection. A panel is
/// accepted when the rule on the panel and the sum over its two halves agree
/// to `max(abs_tol, rel_tol * |value|)`.
pub fn adaptive<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    rel_tol: f64,
    abs_tol: f64,
    f: &mut F,
) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let whole = rule.integrate(a, b, &mut *f);
    let mut unresolved = 0.0;
    let mut budget = MAX_PANELS;
    let value = adaptive_step(rule, a, b, whole, rel_tol, abs_tol, f, 0, &mut unresolved, &mut budget)
        .map_err(|e| match e {
            Error::Quadrature(m) => Error::Quadrature(format!("on [{a:e}, {b:e}]: {m}")),
            e => e,
        })?;
    if unresolved > abs_tol.max(rel_tol * value.abs()) {
        return Err(Error::Quadrature(format!(
            "tolerance unreachable on [{a:e}, {b:e}] (unresolved error {unresolved:e})"
        )));
    }
    Ok(value)
}

const MAX_DEPTH: usize = 48;
/// Panel splits allowed per call; noisy integrands would otherwise split
/// every panel down to `MAX_DEPTH`.
const MAX_PANELS: usize = 1 << 16;

/// Panels that cannot be split further are accepted and their discrepancy
/// is added to `unresolved`, which the caller checks against the total.
#[allow(clippy::too_many_arguments)]
fn adaptive_step<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    whole: f64,
    rel_tol: f64,
    abs_tol: f64,
    f: &mut F,
    depth: usize,
    unresolved: &mut f64,
    budget: &mut usize,
) -> Result<f64> {
    let mid = 0.5 * (a + b);
    let left = rule.integrate(a, mid, &mut *f);
    let right = rule.integrate(mid, b, &mut *f);
    let refined = left + right;
    if !refined.is_finite() {
        return Err(Error::Quadrature(format!(
            "non-finite integrand on [{a:e}, {b:e}]"
        )));
    }
    let err = (refined - whole).abs();
    if err <= abs_tol.max(rel_tol * refined.abs()) {
        return Ok(refined);
    }
    if depth >= MAX_DEPTH || (mid - a).abs() <= f64::EPSILON * mid.abs() {
        *unresolved += err;
        return Ok(refined);
    }
    if *budget == 0 {
        return Err(Error::Quadrature(format!(
            "panel budget exhausted, tolerance not reached near [{a:e}, {b:e}]"
        )));
    }
    *budget -= 1;
    let l = adaptive_step(rule, a, mid, left, rel_tol, 0.5 * abs_tol, f, depth + 1, unresolved, budget)?;
    let r = adaptive_step(rule, mid, b, right, rel_tol, 0.5 * abs_tol, f, depth + 1, unresolved, budget)?;
    Ok(l + r)
}

/// Integral of `f` over `[a, b]` with `0 < a < b`, computed in the variable
/// `s = ln z` on panels of fixed logarithmic width. Suited to integrands with
/// power-law behaviour across many decades. A coarse pass over `|f|` sets an
/// absolute tolerance floor so sign-changing integrands terminate.
pub fn log_panels<F: FnMut(f64) -> f64>(
    rule: &GaussLegendre,
    a: f64,
    b: f64,
    panels_per_decade: usize,
    rel_tol: f64,
    mut f: F,
) -> Result<f64> {
    debug_assert!(a > 0.0 && b >= a);
    if a == b {
        return Ok(0.0);
    }
    let la = a.ln();
    let lb = b.ln();
    let decades = (lb - la) / std::f64::consts::LN_10;
    let panels = ((decades * panels_per_decade as f64).ceil() as usize).max(1);
    let h = (lb - la) / panels as f64;
    let mut g = |s: f64| {
        let z = s.exp();
        f(z) * z
    };
    let mut magnitude = 0.0;
    for p in 0..panels {
        let lo = la + h * p as f64;
        magnitude += rule.integrate(lo, lo + h, |s| g(s).abs());
    }
    let abs_tol = rel_tol * magnitude / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let lo = la + h * p as f64;
        let hi = if p + 1 == panels { lb } else { lo + h };
        total += adaptive(rule, lo, hi, rel_tol, abs_tol, &mut g)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_nodes_symmetric() {
        for n in [1, 2, 5, 8, 10, 16] {
            let r = GaussLegendre::new(n);
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "n={n} sum={s}");
            for i in 0..n {
                assert!((r.nodes[i] + r.nodes[n - 1 - i]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn exact_for_polynomials_up_to_degree_2n_minus_1() {
        let r = GaussLegendre::new(6);
        for deg in 0..12 {
            let got = r.integrate(0.0, 1.0, |x| x.powi(deg));
            let want = 1.0 / (deg as f64 + 1.0);
            assert!((got - want).abs() < 1e-14, "deg {deg}: {got} vs {want}");
        }
    }

    #[test]
    fn adaptive_handles_peaked_integrand() {
        let r = GaussLegendre::new(8);
        let mut f = |x: f64| 1.0 / (1e-4 + x * x);
        let got = adaptive(&r, -1.0, 1.0, 1e-12, 0.0, &mut f).unwrap();
        let want = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((got / want - 1.0).abs() < 1e-11);
    }

    #[test]
    fn adaptive_accepts_a_jump_discontinuity() {
        let rule = GaussLegendre::new(8);
        let mut step = |x: f64| if x < 1.0 / 3.0 { 1.0 } else { 2.0 };
        let v = adaptive(&rule, 0.0, 1.0, 1e-12, 0.0, &mut step).unwrap();
        assert!((v - 5.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn adaptive_gives_up_on_noise() {
        let rule = GaussLegendre::new(8);
        let mut noise = |x: f64| ((x * 12345.678).sin() * 43758.5453).fract() * 1e-20;
        assert!(adaptive(&rule, 0.0, 1.0, 1e-12, 0.0, &mut noise).is_err());
    }

    #[test]
    fn adaptive_rejects_a_non_integrable_singularity() {
        let rule = GaussLegendre::new(8);
        assert!(adaptive(&rule, 0.0, 1.0, 1e-10, 0.0, &mut |x: f64| 1.0 / x).is_err());
    }

    #[test]
    fn log_panels_power_law() {
        let r = GaussLegendre::new(8);
        let got = log_panels(&r, 1e-6, 1e6, 8, 1e-13, |z| z.powf(-2.5)).unwrap();
        let want = (1e-6f64.powf(-1.5) - 1e6f64.powf(-1.5)) / 1.5;
        assert!((got / want - 1.0).abs() < 1e-12);
    }
}
