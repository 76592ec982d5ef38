//! Scaling rates, limiting Lévy exponents and convergence diagnostics for the
//! rescaled process `δ(ε) X_{t/ε}`.

use crate::error::{Error, Result};
use crate::jump_kernel::{JumpKernel, LevyFamily, Regime, GL_ORDER, QUAD_TOL, Z_MIN};
use crate::quad::{composite, log_panels, GaussLegendre};
use crate::sde::Ensemble;
use crate::stats::{ecf_bootstrap_band, ecf_grid, linspace};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::{FRAC_PI_2, PI};

/// Scaling rate `δ(ε)`.
///
/// Stable: `ε^{1/α}`. Diffusive: `√ε`. Multi-stable: `δ^{α₁} = −ε ln δ`.
/// Log-modified (`h(z) = ln(1 + |z|)^β`): `δ^α h(1/δ) = ε`.
pub fn delta_rate(family: &LevyFamily, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter("eps must lie in (0, 1)".into()));
    }
    family.validate()?;
    let le = eps.ln();
    match *family {
        LevyFamily::AlphaStable { alpha, .. } => Ok(eps.powf(1.0 / alpha)),
        LevyFamily::None | LevyFamily::Tempered { .. } | LevyFamily::DiracPair { .. } => {
            Ok(eps.sqrt())
        }
        LevyFamily::MultiStable { alpha1, .. } => {
            let f = |y: f64| alpha1 * y - (-y).ln() - le;
            solve_log_scale(f, -1e-12)
        }
        LevyFamily::LogModified { alpha, beta, .. } => {
            let f = |y: f64| alpha * y + beta * (-y).exp().ln_1p().ln() - le;
            solve_log_scale(f, 0.0)
        }
    }
}

/// Bisection for the increasing function `f` of `y = ln δ` on `(−∞, hi]`.
fn solve_log_scale<F: Fn(f64) -> f64>(f: F, hi: f64) -> Result<f64> {
    let mut hi = hi;
    if !(f(hi) > 0.0) {
        return Err(Error::Bracketing("implicit rate has no root below 1".into()));
    }
    let mut lo = -1.0;
    while f(lo) >= 0.0 {
        lo *= 2.0;
        if lo < -1e6 {
            return Err(Error::Bracketing("implicit rate root not bracketed".into()));
        }
    }
    while hi - lo > 1e-14 * (1.0 + lo.abs()) {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if f(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Residual `|lhs/rhs − 1|` of the defining relation of `δ(ε)`.
pub fn delta_residual(family: &LevyFamily, eps: f64, delta: f64) -> f64 {
    match *family {
        LevyFamily::AlphaStable { alpha, .. } => (delta.powf(alpha) / eps - 1.0).abs(),
        LevyFamily::MultiStable { alpha1, .. } => {
            (delta.powf(alpha1) / (-eps * delta.ln()) - 1.0).abs()
        }
        LevyFamily::LogModified { alpha, beta, .. } => {
            (delta.powf(alpha) * (1.0 / delta).ln_1p().powf(beta) / eps - 1.0).abs()
        }
        _ => (delta * delta / eps - 1.0).abs(),
    }
}

/// Base measure `ℋ(dz) = scale · |z|^{-1-α} dz` of the pure-jump limit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct BaseMeasure {
    pub alpha: f64,
    pub scale: f64,
}

impl BaseMeasure {
    pub fn for_family(family: &LevyFamily) -> Result<Self> {
        match *family {
            LevyFamily::AlphaStable { alpha, scale } | LevyFamily::LogModified { alpha, scale, .. } => {
                Ok(Self { alpha, scale })
            }
            LevyFamily::MultiStable { alpha1, scale, .. } => Ok(Self {
                alpha: alpha1,
                scale,
            }),
            _ => Err(Error::Regime(format!(
                "{family:?} is not attracted to a stable limit"
            ))),
        }
    }

    pub fn density(&self, z: f64) -> f64 {
        self.scale * z.abs().powf(-1.0 - self.alpha)
    }

    /// `ℋ([a, b])` for `0 < a < b` or `a < b < 0`.
    pub fn mass(&self, a: f64, b: f64) -> f64 {
        let (lo, hi) = if a > 0.0 { (a, b) } else { (-b, -a) };
        self.scale * (lo.powf(-self.alpha) - hi.powf(-self.alpha)) / self.alpha
    }
}

/// `I(α) = ∫_0^∞ (1 − cos t) t^{-1-α} dt = −Γ(−α) cos(πα/2)` (`π/2` at α = 1).
pub fn stable_integral_closed_form(alpha: f64) -> f64 {
    if (alpha - 1.0).abs() < 1e-12 {
        FRAC_PI_2
    } else {
        -gamma(-alpha) * (FRAC_PI_2 * alpha).cos()
    }
}

/// Constant `C(α)` with `∫ (1 − cos uz) |z|^{-1-α} dz = C(α) |u|^α`.
pub fn stable_constant(alpha: f64) -> f64 {
    2.0 * stable_integral_closed_form(alpha)
}

const OSC_PERIODS: usize = 500;
const SERIES_CUT: f64 = 1e-3;

/// `∫_{t0}^{2π·K} f(t) t^{-1-α} dt` on log panels up to `2π`, then one
/// Gauss–Legendre panel per period.
fn oscillatory_body<F: Fn(f64) -> f64>(alpha: f64, f: F, kink: Option<f64>) -> Result<f64> {
    let rule = GaussLegendre::new(GL_ORDER);
    let g = |t: f64| f(t) * t.powf(-1.0 - alpha);
    let two_pi = 2.0 * PI;
    let mut total = 0.0;
    let mut a = SERIES_CUT;
    if let Some(k) = kink {
        total += log_panels(&rule, a, k, 8, 1e-13, g)?;
        a = k;
    }
    total += log_panels(&rule, a, two_pi, 8, 1e-13, g)?;
    let wide = GaussLegendre::new(24);
    let mut periods = vec![0.0; OSC_PERIODS - 1];
    for (k, p) in periods.iter_mut().enumerate() {
        let lo = two_pi * (k + 1) as f64;
        *p = wide.integrate(lo, lo + two_pi, g);
    }
    Ok(total + crate::stats::pairwise_sum(&periods))
}

/// `I(α)` by quadrature: series near 0, log panels, period panels and an
/// asymptotic tail.
pub fn stable_integral_quadrature(alpha: f64) -> Result<f64> {
    let t0 = SERIES_CUT;
    let head = t0.powf(2.0 - alpha) / (2.0 * (2.0 - alpha))
        - t0.powf(4.0 - alpha) / (24.0 * (4.0 - alpha));
    let body = oscillatory_body(alpha, |t| 2.0 * (0.5 * t).sin().powi(2), None)?;
    let big_t = 2.0 * PI * OSC_PERIODS as f64;
    let tail = big_t.powf(-alpha) / alpha - (1.0 + alpha) * big_t.powf(-2.0 - alpha);
    Ok(head + body + tail)
}

/// `J(α) = ∫_0^∞ (sin t − t 1_{t ≤ 1}) t^{-1-α} dt` by quadrature.
fn odd_integral_quadrature(alpha: f64) -> Result<f64> {
    let t0 = SERIES_CUT;
    let head = -t0.powf(3.0 - alpha) / (6.0 * (3.0 - alpha))
        + t0.powf(5.0 - alpha) / (120.0 * (5.0 - alpha));
    let body = oscillatory_body(
        alpha,
        |t| if t <= 1.0 { t.sin() - t } else { t.sin() },
        Some(1.0),
    )?;
    let big_t = 2.0 * PI * OSC_PERIODS as f64;
    let p = 1.0 + alpha;
    let tail = big_t.powf(-p) - p * (p + 1.0) * big_t.powf(-p - 2.0);
    Ok(head + body + tail)
}

/// Scaling description of one kernel.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalingSpec {
    pub regime: Regime,
    pub family: LevyFamily,
    /// Weights `(w₊, w₋)` of the limit measure `w(sign z) ℋ(dz)` (pure jump).
    pub weights: (f64, f64),
    pub base: Option<BaseMeasure>,
    /// Limit variance `A` (diffusive).
    pub diffusivity: Option<f64>,
    /// `I(α)` and `J(α)` by quadrature.
    integrals: Option<(f64, f64)>,
}

impl ScalingSpec {
    pub fn pure_jump(family: LevyFamily, weights: (f64, f64)) -> Result<Self> {
        let base = BaseMeasure::for_family(&family)?;
        let i = stable_integral_quadrature(base.alpha)?;
        let j = if weights.0 != weights.1 {
            odd_integral_quadrature(base.alpha)?
        } else {
            0.0
        };
        Ok(Self {
            regime: Regime::PureJump,
            family,
            weights,
            base: Some(base),
            diffusivity: None,
            integrals: Some((i, j)),
        })
    }

    pub fn diffusive(family: LevyFamily, diffusivity: f64) -> Self {
        Self {
            regime: Regime::Diffusive,
            family,
            weights: (0.0, 0.0),
            base: None,
            diffusivity: Some(diffusivity),
            integrals: None,
        }
    }

    /// Pure-jump spec of `kernel` with weights from [`theta_limit_estimate`].
    pub fn from_kernel(kernel: &JumpKernel) -> Result<Self> {
        let th = theta_limit_estimate(kernel)?;
        Self::pure_jump(kernel.family.clone(), th.weights)
    }

    pub fn delta(&self, eps: f64) -> Result<f64> {
        delta_rate(&self.family, eps)
    }

    /// Characteristic function `E e^{iuL_t}` of the limit at time `t`.
    pub fn limit_cf(&self, t: f64, u: f64) -> Result<Complex64> {
        match self.regime {
            Regime::Diffusive => {
                let a = self.diffusivity.unwrap_or(0.0);
                Ok(Complex64::new((-0.5 * t * a * u * u).exp(), 0.0))
            }
            Regime::PureJump => Ok((t * limit_levy_exponent(self, u)?).exp()),
        }
    }
}

/// `φ(u) = ∫ (e^{iuz} − 1 − iuz 1_{|z| ≤ 1}) w(sign z) ℋ(dz)`.
///
/// With `t = |u| z` this is `s |u|^α [−(w₊ + w₋) I(α) + i sgn(u) (w₊ − w₋)
/// (J(α) − L(|u|))]`, where `L(v) = ∫_1^v t^{-α} dt`.
pub fn limit_levy_exponent(spec: &ScalingSpec, u: f64) -> Result<Complex64> {
    let base = spec
        .base
        .ok_or_else(|| Error::Regime("Lévy exponent needs a pure-jump spec".into()))?;
    if u == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let (i, j) = match spec.integrals {
        Some(v) => v,
        None => (stable_integral_quadrature(base.alpha)?, odd_integral_quadrature(base.alpha)?),
    };
    let (wp, wm) = spec.weights;
    let v = u.abs();
    let a = base.alpha;
    let pre = base.scale * v.powf(a);
    let re = -(wp + wm) * i * pre;
    let im = if wp == wm {
        0.0
    } else {
        let l = if (a - 1.0).abs() < 1e-12 {
            v.ln()
        } else {
            (v.powf(1.0 - a) - 1.0) / (1.0 - a)
        };
        u.signum() * (wp - wm) * (j - l) * pre
    };
    Ok(Complex64::new(re, im))
}

/// Large-jump averages of the kernel.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ThetaEstimate {
    /// `𝕄[θ(·, +1)]` and `𝕄[θ(·, −1)]`.
    pub theta: (f64, f64),
    /// Symmetrized `Θ(±) = 𝕄[θ(±1)] + 𝕄[θ(∓1)]`.
    pub symmetrized: (f64, f64),
    /// Limit-measure weights `½ Θ(±)`.
    pub weights: (f64, f64),
    /// Jump sizes and `𝕄[|c(·, ±Z) − θ(·, ±1)|]` along the growing grid.
    pub grid: Vec<f64>,
    pub residual_plus: Vec<f64>,
    pub residual_minus: Vec<f64>,
}

const THETA_TOL: f64 = 1e-10;

fn cell_average<F: FnMut(f64) -> f64>(kernel: &JumpKernel, f: F, panels: usize) -> f64 {
    let l = kernel.sample.period;
    let rule = GaussLegendre::new(5);
    composite(&rule, 0.0, l, panels, f) / l
}

/// Pointwise limit `θ(x, ±1) = lim_{z→±∞} c(x, z)` where it exists.
fn theta_at(kernel: &JumpKernel, x: f64) -> f64 {
    (-2.0 * kernel.sample.eval_v(x)).exp() * kernel.rate_far(x)
}

/// Medium averages of `c(·, ±Z)` on `Z = 2^k`, stopped by a Cauchy criterion
/// on `𝕄[|c(·, ±Z) − θ(·, ±1)|]`.
pub fn theta_limit_estimate(kernel: &JumpKernel) -> Result<ThetaEstimate> {
    if kernel.regime() != Regime::PureJump || !kernel.family.has_density() {
        return Err(Error::Regime(
            "large-jump limits are defined for pure-jump density kernels".into(),
        ));
    }
    let panels = kernel.sample.model.panels;
    let mut est = ThetaEstimate {
        theta: (0.0, 0.0),
        symmetrized: (0.0, 0.0),
        weights: (0.0, 0.0),
        grid: vec![],
        residual_plus: vec![],
        residual_minus: vec![],
    };
    let mut converged = false;
    for k in 0..=40 {
        let z = 2f64.powi(k);
        let rp = cell_average(kernel, |x| (kernel.c(x, z) - theta_at(kernel, x)).abs(), panels);
        let rm = cell_average(kernel, |x| (kernel.c(x, -z) - theta_at(kernel, x)).abs(), panels);
        est.grid.push(z);
        est.residual_plus.push(rp);
        est.residual_minus.push(rm);
        if rp.max(rm) < THETA_TOL && k >= 2 {
            converged = true;
            est.theta = (
                cell_average(kernel, |x| kernel.c(x, z), panels),
                cell_average(kernel, |x| kernel.c(x, -z), panels),
            );
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence(format!(
            "large-jump kernel averages did not settle (last residual {:e})",
            est.residual_plus.last().unwrap().max(*est.residual_minus.last().unwrap())
        )));
    }
    let s = est.theta.0 + est.theta.1;
    est.symmetrized = (s, s);
    est.weights = (0.5 * s, 0.5 * s);
    Ok(est)
}

/// One row of the jump-measure convergence diagnostic.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CrRow {
    pub eps: f64,
    pub delta: f64,
    pub interval: (f64, f64),
    pub deviation: f64,
}

/// `𝕄[|ε⁻¹ ∫ 1_{[a,b]}(δz) c(·, z) χ(dz) − θ(·, sign) ℋ([a, b])|]` per ε and
/// interval, with `decreasing` true when every interval's deviations decrease
/// along the ε list (ties within quadrature tolerance allowed).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CrReport {
    pub rows: Vec<CrRow>,
    pub decreasing: bool,
}

pub fn verify_condition_cr(
    kernel: &JumpKernel,
    eps_list: &[f64],
    intervals: &[(f64, f64)],
) -> Result<CrReport> {
    let base = BaseMeasure::for_family(&kernel.family)?;
    let rule = GaussLegendre::new(GL_ORDER);
    let panels = if kernel.sample.is_homogeneous() { 1 } else { 128 };
    let mut rows = Vec::new();
    let mut decreasing = true;
    for &(a, b) in intervals {
        if !(a < b) || (a <= 0.0 && b >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "interval [{a}, {b}] must not contain 0"
            )));
        }
        let side = a.signum();
        let (lo, hi) = if a > 0.0 { (a, b) } else { (-b, -a) };
        let limit = base.mass(a, b);
        let mut prev: Option<f64> = None;
        for &eps in eps_list {
            let delta = delta_rate(&kernel.family, eps)?;
            let mut err = None;
            let dev = cell_average(
                kernel,
                |x| {
                    let inner = log_panels(&rule, lo / delta, hi / delta, 8, QUAD_TOL, |y| {
                        kernel.c(x, side * y) * kernel.family.chi(y)
                    });
                    match inner {
                        Ok(v) => (v / eps - theta_at(kernel, x) * limit).abs(),
                        Err(e) => {
                            err.get_or_insert(e);
                            0.0
                        }
                    }
                },
                panels,
            );
            if let Some(e) = err {
                return Err(e);
            }
            if let Some(p) = prev {
                if dev > p + 1e-9 * (1.0 + limit) {
                    decreasing = false;
                }
            }
            prev = Some(dev);
            rows.push(CrRow {
                eps,
                delta,
                interval: (a, b),
                deviation: dev,
            });
        }
    }
    Ok(CrReport { rows, decreasing })
}

/// `ε⁻¹ δ(ε)² ∫_{δ|z| ≤ α₀} z² χ(dz)` on an `(α₀, ε)` grid.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct UniformityReport {
    pub eps: Vec<f64>,
    pub alpha0: Vec<f64>,
    /// `values[i][j]` at `alpha0[i]`, `eps[j]`.
    pub values: Vec<Vec<f64>>,
    pub max_over_eps: Vec<f64>,
    /// `max_over_eps` decreases as `α₀` decreases.
    pub monotone: bool,
}

pub fn small_jump_uniformity(
    family: &LevyFamily,
    eps_list: &[f64],
    alpha0: &[f64],
) -> Result<UniformityReport> {
    let rule = GaussLegendre::new(GL_ORDER);
    let mut a0 = alpha0.to_vec();
    a0.sort_by(|a, b| b.total_cmp(a));
    let mut values = Vec::with_capacity(a0.len());
    let mut maxes = Vec::with_capacity(a0.len());
    for &a in &a0 {
        let mut row = Vec::with_capacity(eps_list.len());
        for &eps in eps_list {
            let delta = delta_rate(family, eps)?;
            let y = a / delta;
            let moment = family.small_second_moment(Z_MIN.min(y))
                + if y > Z_MIN {
                    log_panels(&rule, Z_MIN, y, 8, QUAD_TOL, |z| z * z * family.chi(z))?
                } else {
                    0.0
                };
            row.push(2.0 * delta * delta * moment / eps);
        }
        maxes.push(row.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        values.push(row);
    }
    let monotone = maxes.windows(2).all(|w| w[1] < w[0]);
    Ok(UniformityReport {
        eps: eps_list.to_vec(),
        alpha0: a0,
        values,
        max_over_eps: maxes,
        monotone,
    })
}

/// ECF comparison of rescaled increments with the limit law.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScalingReport {
    pub regime: Regime,
    pub eps: f64,
    pub delta: f64,
    pub t: f64,
    pub samples: usize,
    pub grid: Vec<f64>,
    pub ecf_re: Vec<f64>,
    pub ecf_im: Vec<f64>,
    pub theory_re: Vec<f64>,
    pub theory_im: Vec<f64>,
    pub sup_distance: f64,
    /// 95% bootstrap band for the sup distance.
    pub band: f64,
    /// `max_u |Im ECF(u)|`.
    pub max_imag: f64,
    /// Sup distance within the bootstrap band.
    pub within_band: bool,
}

impl ScalingReport {
    pub fn csv(&self) -> String {
        let mut s = String::from("u,ecf_re,ecf_im,theory_re,theory_im\n");
        for k in 0..self.grid.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                self.grid[k], self.ecf_re[k], self.ecf_im[k], self.theory_re[k], self.theory_im[k]
            ));
        }
        s
    }
}

/// Default frequency grid: 101 points on `[−5, 5]`.
pub fn default_grid() -> Vec<f64> {
    linspace(-5.0, 5.0, 101)
}

pub const BOOTSTRAP_RESAMPLES: usize = 200;
pub const BOOTSTRAP_SUBSAMPLE: usize = 5000;

/// Compares the ECF of `increments` (already rescaled) with the limit
/// characteristic function at time `t`.
pub fn convergence_test(
    increments: &[f64],
    spec: &ScalingSpec,
    eps: f64,
    t: f64,
    grid: &[f64],
    seed: u64,
) -> Result<ScalingReport> {
    let e = ecf_grid(increments, grid);
    let mut theory = Vec::with_capacity(grid.len());
    for &u in grid {
        theory.push(spec.limit_cf(t, u)?);
    }
    let sup = e
        .iter()
        .zip(&theory)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let band = ecf_bootstrap_band(
        increments,
        grid,
        BOOTSTRAP_RESAMPLES,
        BOOTSTRAP_SUBSAMPLE,
        0.95,
        seed,
    );
    Ok(ScalingReport {
        regime: spec.regime,
        eps,
        delta: spec.delta(eps)?,
        t,
        samples: increments.len(),
        grid: grid.to_vec(),
        ecf_re: e.iter().map(|c| c.re).collect(),
        ecf_im: e.iter().map(|c| c.im).collect(),
        theory_re: theory.iter().map(|c| c.re).collect(),
        theory_im: theory.iter().map(|c| c.im).collect(),
        sup_distance: sup,
        band,
        max_imag: e.iter().map(|c| c.im.abs()).fold(0.0, f64::max),
        within_band: sup <= band,
    })
}

/// Rescaled increments `δ (X_{t/ε} − x₀)` from observation `k` of an ensemble.
pub fn rescaled_increments(ensemble: &Ensemble, k: usize, delta: f64) -> Vec<f64> {
    ensemble.positions[k]
        .iter()
        .map(|x| delta * (x - ensemble.x0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{draw_sample, EnvironmentModel, Family, Harmonic, Harmonics, KernelField, Profile};

    fn stable(alpha: f64) -> LevyFamily {
        LevyFamily::AlphaStable { alpha, scale: 1.0 }
    }

    #[test]
    fn stable_and_diffusive_rates() {
        let d = delta_rate(&stable(1.5), 1e-3).unwrap();
        assert!((d - 1e-2).abs() < 1e-15);
        let d = delta_rate(&LevyFamily::None, 1e-4).unwrap();
        assert!((d - 1e-2).abs() < 1e-16);
    }

    #[test]
    fn implicit_rates_satisfy_their_relations() {
        let fams = [
            LevyFamily::LogModified {
                alpha: 1.5,
                beta: 1.0,
                scale: 1.0,
            },
            LevyFamily::MultiStable {
                alpha1: 1.2,
                alpha2: 1.6,
                scale: 1.0,
            },
        ];
        for f in &fams {
            for eps in [1e-1, 1e-2, 1e-4, 1e-8] {
                let d = delta_rate(f, eps).unwrap();
                assert!(d > 0.0 && d < 1.0);
                assert!(delta_residual(f, eps, d) < 1e-9, "{f:?} {eps}");
            }
        }
    }

    #[test]
    fn stable_constant_quadrature_matches_closed_form() {
        for a in [0.5, 0.7, 1.0, 1.3, 1.5, 1.9] {
            let q = stable_integral_quadrature(a).unwrap();
            let c = stable_integral_closed_form(a);
            assert!((q - c).abs() < 1e-8 * c, "alpha {a}: {q} vs {c}");
        }
    }

    #[test]
    fn odd_integral_matches_closed_form() {
        // J(α) for α ≠ 1: Γ(−α) sin(−πα/2)... expressed through
        // ∫_0^∞ (sin t − t) t^{-1-α} dt = −Γ(−α) sin(πα/2) for 1 < α < 2
        let a = 1.5;
        let full = -gamma(-a) * (FRAC_PI_2 * a).sin();
        // J = full + ∫_1^∞ t^{-α} dt
        let expected = full + 1.0 / (a - 1.0);
        let j = odd_integral_quadrature(a).unwrap();
        assert!((j - expected).abs() < 1e-8, "{j} vs {expected}");
    }

    #[test]
    fn exponent_properties() {
        let spec = ScalingSpec::pure_jump(stable(1.5), (1.0, 0.6)).unwrap();
        assert_eq!(limit_levy_exponent(&spec, 0.0).unwrap(), Complex64::new(0.0, 0.0));
        for u in [0.1, 0.7, 2.0, 4.5] {
            let p = limit_levy_exponent(&spec, u).unwrap();
            let m = limit_levy_exponent(&spec, -u).unwrap();
            assert!(p.re <= 0.0);
            assert!((p - m.conj()).norm() < 1e-14);
        }
        let sym = ScalingSpec::pure_jump(stable(1.5), (1.0, 1.0)).unwrap();
        let p = limit_levy_exponent(&sym, 2.0).unwrap();
        let exact = -stable_constant(1.5) * 2f64.powf(1.5);
        assert!((p.re - exact).abs() < 1e-8 * exact.abs() && p.im == 0.0);
    }

    #[test]
    fn theta_of_constant_kernel() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 0).unwrap();
        let k = JumpKernel::new(s, stable(1.5)).unwrap();
        let t = theta_limit_estimate(&k).unwrap();
        assert!((t.symmetrized.0 - 2.0).abs() < 1e-14);
        assert!((t.weights.0 - 1.0).abs() < 1e-14);
    }

    fn modulated() -> JumpKernel {
        let model = EnvironmentModel {
            family: Family::PeriodicRandomPhase {
                period: 1.0,
                a: Harmonics {
                    mean: 1.0,
                    terms: vec![],
                },
                v: Harmonics {
                    mean: 0.0,
                    terms: vec![],
                },
                g: Harmonics {
                    mean: 0.0,
                    terms: vec![Harmonic {
                        k: 1,
                        cos: 0.0,
                        sin: 1.0,
                    }],
                },
                phase: Some(0.0),
            },
            ellipticity: 10.0,
            kernel: KernelField {
                base: 1.0,
                amplitude: 0.5,
                profile: Profile::Exponential { length: 1.0 },
            },
            panels: 256,
        };
        JumpKernel::new(draw_sample(&model, 0).unwrap(), stable(1.5)).unwrap()
    }

    #[test]
    fn theta_of_decaying_perturbation() {
        let k = modulated();
        let t = theta_limit_estimate(&k).unwrap();
        assert!((t.theta.0 - 1.0).abs() < 1e-9 && (t.theta.1 - 1.0).abs() < 1e-9);
        let i20 = 20.0f64;
        let r = cell_average(&k, |x| (k.c(x, i20) - 1.0).abs(), 256);
        assert!(r < 1e-4);
        for z in [0.3, 1.7, 5.0] {
            let p = cell_average(&k, |x| k.c(x, z), 256);
            let m = cell_average(&k, |x| k.c(x, -z), 256);
            assert!((p - m).abs() < 1e-8);
        }
    }

    #[test]
    fn cr_deviation_vanishes_for_constant_stable_kernel() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 0).unwrap();
        let k = JumpKernel::new(s, stable(1.5)).unwrap();
        let r = verify_condition_cr(&k, &[1e-1, 1e-2, 1e-3], &[(0.5, 2.0), (-3.0, -1.0)]).unwrap();
        for row in &r.rows {
            assert!(row.deviation < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn cr_deviation_decreases_for_log_modified_kernel() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 0).unwrap();
        let f = LevyFamily::LogModified {
            alpha: 1.5,
            beta: 1.0,
            scale: 1.0,
        };
        let k = JumpKernel::new(s, f).unwrap();
        let r = verify_condition_cr(&k, &[1e-1, 1e-2, 1e-3, 1e-4], &[(0.5, 2.0)]).unwrap();
        assert!(r.decreasing, "{:?}", r.rows);
    }

    #[test]
    fn uniformity_for_stable_matches_closed_form() {
        let f = stable(1.5);
        let r = small_jump_uniformity(&f, &[1e-1, 1e-2], &[1.0, 0.1, 0.01]).unwrap();
        assert!(r.monotone);
        for (i, a0) in r.alpha0.iter().enumerate() {
            let exact = 2.0 * a0.powf(0.5) / 0.5;
            for v in &r.values[i] {
                assert!((v - exact).abs() < 1e-9 * exact);
            }
        }
    }
}
