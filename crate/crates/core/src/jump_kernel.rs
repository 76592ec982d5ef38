//! Jump kernels: Lévy measure families, tail functions and the construction
//! of the jump coefficient `γ` from a prescribed rate.
//!
//! The prescribed jump rate seen from a particle at `x` is
//! `r(x, z) χ(z) dz` with `r(x, z) = e^{2V(x)} c(x, z)`. The driving measure
//! is `ν = M χ` with `M = sup r`, and `γ(x, ·)` is the monotone map with
//! `ν ∘ γ(x, ·)⁻¹ = r(x, ·) χ`, obtained by matching one-sided tails:
//!
//! ```text
//! h(x, z) = ∫_z^∞ r(x, y) χ(y) dy,   F(z) = M ∫_z^∞ χ(y) dy,   h(x, γ(x, z)) = F(z)
//! ```
//!
//! (mirrored for `z < 0`). Because `r ≤ M`, `|γ(x, z)| ≤ |z|`.
//!
//! The random walk among random conductances uses a separate two-atom
//! construction, see [`JumpKernel::rwrc`].

use crate::environment::{EnvironmentSample, Field, Profile};
use crate::error::{Error, Result};
use crate::quad::{adaptive, log_panels, GaussLegendre};
use crate::roots::bracketed;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;
use std::f64::consts::LN_10;

/// Lower end of the tabulated jump-size range.
pub const Z_MIN: f64 = 1e-8;
/// Upper end of the tabulated jump-size range.
pub const Z_MAX: f64 = 1e8;
/// Log-grid resolution of all jump-size tables.
pub const PER_DECADE: usize = 64;
pub const GL_ORDER: usize = 8;
/// Relative tolerance of adaptive tail and moment quadratures.
pub const QUAD_TOL: f64 = 1e-11;
/// Relative tolerance of the γ inversion.
pub const INVERSION_TOL: f64 = 1e-13;

fn grid_step() -> f64 {
    LN_10 / PER_DECADE as f64
}

fn grid_len() -> usize {
    ((Z_MAX / Z_MIN).log10() as usize) * PER_DECADE + 1
}

fn grid_z(k: usize) -> f64 {
    (Z_MIN.ln() + k as f64 * grid_step()).exp()
}

/// Scaling regime selected by the second moment of `χ`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    PureJump,
    Diffusive,
}

/// Symmetric Lévy measure `χ`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LevyFamily {
    /// No jumps at all.
    None,
    /// `scale · |z|^{-1-α}`.
    AlphaStable { alpha: f64, scale: f64 },
    /// `scale · |z|^{-1-α} · ln(1 + |z|)^β`, attracted to the α-stable law.
    LogModified { alpha: f64, beta: f64, scale: f64 },
    /// `scale · e^{-rate |z|} · |z|^{-1-α}`.
    Tempered { alpha: f64, scale: f64, rate: f64 },
    /// `scale · ∫_{α₁}^{α₂} |z|^{-1-a} da`.
    MultiStable { alpha1: f64, alpha2: f64, scale: f64 },
    /// `mass · (δ₁ + δ₋₁)`; only available through the conductance
    /// construction.
    DiracPair { mass: f64 },
}

fn in_open(v: f64, lo: f64, hi: f64) -> bool {
    v > lo && v < hi
}

impl LevyFamily {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        match *self {
            LevyFamily::None => Ok(()),
            LevyFamily::AlphaStable { alpha, scale } => {
                if !in_open(alpha, 0.0, 2.0) || !(scale > 0.0) {
                    return bad("alpha-stable needs 0 < alpha < 2 and scale > 0");
                }
                Ok(())
            }
            LevyFamily::LogModified { alpha, beta, scale } => {
                if !in_open(alpha, 0.0, 2.0) || !(scale > 0.0) {
                    return bad("log-modified needs 0 < alpha < 2 and scale > 0");
                }
                // near 0 the density behaves like |z|^{-1-(α-β)}
                if !in_open(alpha - beta, 0.0, 2.0) {
                    return bad("log-modified needs alpha - 2 < beta < alpha");
                }
                Ok(())
            }
            LevyFamily::Tempered { alpha, scale, rate } => {
                if !in_open(alpha, 0.0, 2.0) || !(scale > 0.0) || !(rate > 0.0) {
                    return bad("tempered needs 0 < alpha < 2, scale > 0, rate > 0");
                }
                Ok(())
            }
            LevyFamily::MultiStable {
                alpha1,
                alpha2,
                scale,
            } => {
                if !in_open(alpha1, 0.0, 2.0) || !in_open(alpha2, 0.0, 2.0) || alpha1 >= alpha2 {
                    return bad("multi-stable needs 0 < alpha1 < alpha2 < 2");
                }
                if !(scale > 0.0) {
                    return bad("multi-stable needs scale > 0");
                }
                Ok(())
            }
            LevyFamily::DiracPair { mass } => {
                if !(mass > 0.0) || !mass.is_finite() {
                    return bad("dirac-pair mass must be positive");
                }
                Ok(())
            }
        }
    }

    pub fn regime(&self) -> Regime {
        match self {
            LevyFamily::AlphaStable { .. }
            | LevyFamily::LogModified { .. }
            | LevyFamily::MultiStable { .. } => Regime::PureJump,
            _ => Regime::Diffusive,
        }
    }

    pub fn has_density(&self) -> bool {
        !matches!(self, LevyFamily::None | LevyFamily::DiracPair { .. })
    }

    /// Blumenthal–Getoor-type index governing the small-jump activity.
    pub fn index(&self) -> Option<f64> {
        match *self {
            LevyFamily::AlphaStable { alpha, .. } | LevyFamily::Tempered { alpha, .. } => {
                Some(alpha)
            }
            LevyFamily::LogModified { alpha, beta, .. } => Some(alpha - beta),
            LevyFamily::MultiStable { alpha2, .. } => Some(alpha2),
            _ => None,
        }
    }

    /// Density `χ(z)` for `z ≠ 0` (zero for atomic and empty families).
    pub fn chi(&self, z: f64) -> f64 {
        let r = z.abs();
        match *self {
            LevyFamily::AlphaStable { alpha, scale } => scale * r.powf(-1.0 - alpha),
            LevyFamily::LogModified { alpha, beta, scale } => {
                scale * r.powf(-1.0 - alpha) * r.ln_1p().powf(beta)
            }
            LevyFamily::Tempered { alpha, scale, rate } => {
                scale * (-rate * r).exp() * r.powf(-1.0 - alpha)
            }
            LevyFamily::MultiStable {
                alpha1,
                alpha2,
                scale,
            } => {
                let l = r.ln();
                let d = alpha2 - alpha1;
                // ∫_{α₁}^{α₂} e^{-aL} da = e^{-α₁L} (1 - e^{-ΔL}) / L, = Δ at L = 0
                let ratio = if l == 0.0 { d } else { -(-d * l).exp_m1() / l };
                scale / r * (-alpha1 * l).exp() * ratio
            }
            LevyFamily::None | LevyFamily::DiracPair { .. } => 0.0,
        }
    }

    /// `∫_ℝ z² χ(dz)`, or `None` in the pure-jump regime.
    pub fn second_moment(&self) -> Option<f64> {
        match *self {
            LevyFamily::None => Some(0.0),
            LevyFamily::DiracPair { mass } => Some(2.0 * mass),
            LevyFamily::Tempered { alpha, scale, rate } => {
                Some(2.0 * scale * gamma(2.0 - alpha) * rate.powf(alpha - 2.0))
            }
            _ => None,
        }
    }

    /// `∫_ℝ z² e^{-extra |z|} χ(dz)` in the diffusive regime.
    pub fn second_moment_damped(&self, extra: f64) -> Result<f64> {
        match *self {
            LevyFamily::None => Ok(0.0),
            LevyFamily::DiracPair { mass } => Ok(2.0 * mass * (-extra).exp()),
            LevyFamily::Tempered { alpha, scale, rate } => {
                Ok(2.0 * scale * gamma(2.0 - alpha) * (rate + extra).powf(alpha - 2.0))
            }
            _ => Err(Error::Regime(
                "second moment is infinite for pure-jump families".into(),
            )),
        }
    }

    /// One-sided `∫_0^{y0} y² χ(y) dy` for small `y0`, from the behaviour of
    /// `χ` at the origin.
    pub fn small_second_moment(&self, y0: f64) -> f64 {
        match *self {
            LevyFamily::AlphaStable { alpha, scale } => {
                scale * y0.powf(2.0 - alpha) / (2.0 - alpha)
            }
            LevyFamily::Tempered { alpha, scale, rate } => {
                // first-order correction in rate · y0
                scale * y0.powf(2.0 - alpha)
                    * (1.0 / (2.0 - alpha) - rate * y0 / (3.0 - alpha))
            }
            LevyFamily::LogModified { alpha, beta, scale } => {
                let p = 2.0 - alpha + beta;
                scale * y0.powf(p) * (1.0 / p - 0.5 * beta * y0 / (p + 1.0))
            }
            LevyFamily::MultiStable {
                alpha1,
                alpha2,
                scale,
            } => {
                let rule = GaussLegendre::new(GL_ORDER);
                let mut f = |a: f64| y0.powf(2.0 - a) / (2.0 - a);
                scale * adaptive(&rule, alpha1, alpha2, 1e-13, 0.0, &mut f).unwrap_or(f64::NAN)
            }
            LevyFamily::None | LevyFamily::DiracPair { .. } => 0.0,
        }
    }

    /// `Ψ(ω) = ∫_ℝ (1 − cos ωz) e^{-extra |z|} χ(dz)` and its derivative
    /// `Ψ'(ω) = ∫_ℝ z sin(ωz) e^{-extra |z|} χ(dz)`, in closed form.
    pub fn psi(&self, omega: f64, extra: f64) -> Result<(f64, f64)> {
        match *self {
            LevyFamily::None => Ok((0.0, 0.0)),
            LevyFamily::DiracPair { mass } => {
                let w = 2.0 * mass * (-extra).exp();
                Ok((w * (1.0 - omega.cos()), w * omega.sin()))
            }
            LevyFamily::Tempered { alpha, scale, rate } => {
                Ok(tempered_psi(alpha, rate + extra, omega, scale))
            }
            LevyFamily::AlphaStable { alpha, scale } if extra > 0.0 => {
                Ok(tempered_psi(alpha, extra, omega, scale))
            }
            _ => Err(Error::Unsupported(
                "closed-form Ψ is available for tempered, dirac-pair and damped stable measures"
                    .into(),
            )),
        }
    }
}

/// `Ψ` and `Ψ'` for `scale · e^{-λ|z|} |z|^{-1-α}` (both sides).
fn tempered_psi(alpha: f64, lambda: f64, omega: f64, scale: f64) -> (f64, f64) {
    let w = omega.abs();
    let sgn = if omega < 0.0 { -1.0 } else { 1.0 };
    if w < 0.1 * lambda {
        // Σ_j 2 (-1)^{j+1} ω^{2j} m_{2j} / (2j)!,  m_p = Γ(p - α) λ^{α - p}
        let mut psi = 0.0;
        let mut dpsi = 0.0;
        let mut fact = 1.0;
        for j in 1..40 {
            let p = 2 * j;
            fact *= ((p - 1) * p) as f64;
            let m = gamma(p as f64 - alpha) * lambda.powf(alpha - p as f64);
            let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
            let t = 2.0 * sign * w.powi(p as i32) * m / fact;
            psi += t;
            dpsi += 2.0 * sign * p as f64 * w.powi(p as i32 - 1) * m / fact;
            if t.abs() < 1e-18 * psi.abs() {
                break;
            }
        }
        return (scale * psi, sgn * scale * dpsi);
    }
    let p = Complex64::new(lambda, -w);
    if (alpha - 1.0).abs() < 1e-9 {
        let plp = p * p.ln();
        let psi = -2.0 * (plp.re - lambda * lambda.ln());
        let dpsi = -2.0 * p.arg();
        return (scale * psi, sgn * scale * dpsi);
    }
    let g = gamma(-alpha);
    let psi = -2.0 * g * (p.powf(alpha).re - lambda.powf(alpha));
    let dpsi = -2.0 * alpha * g * p.powf(alpha - 1.0).im;
    (scale * psi, sgn * scale * dpsi)
}

/// One-sided tail `X(z) = ∫_z^∞ χ(y) dy` of a density family, tabulated on
/// the log grid and inverted by bracketing.
#[derive(Clone, Debug)]
pub struct ChiTail {
    family: LevyFamily,
    /// `cum[k] = X(z_k)`.
    cum: Vec<f64>,
    rule: GaussLegendre,
}

impl ChiTail {
    pub fn new(family: &LevyFamily) -> Result<Self> {
        if !family.has_density() {
            return Err(Error::Unsupported(
                "tail tables need a density family".into(),
            ));
        }
        let rule = GaussLegendre::new(GL_ORDER);
        let n = grid_len();
        let mut cum = vec![0.0; n];
        cum[n - 1] = upper_tail(family, Z_MAX, &rule)?;
        let ds = grid_step();
        let s0 = Z_MIN.ln();
        for k in (0..n - 1).rev() {
            let a = s0 + ds * k as f64;
            let piece = rule.integrate(a, a + ds, |s| {
                let z = s.exp();
                family.chi(z) * z
            });
            cum[k] = cum[k + 1] + piece;
        }
        Ok(Self {
            family: family.clone(),
            cum,
            rule,
        })
    }

    pub fn family(&self) -> &LevyFamily {
        &self.family
    }

    fn partial(&self, a: f64, b: f64) -> f64 {
        // ∫_a^b χ over a sub-panel, a < b within one grid panel
        self.rule.integrate(a.ln(), b.ln(), |s| {
            let z = s.exp();
            self.family.chi(z) * z
        })
    }

    /// `X(z)` for `z > 0`.
    pub fn tail(&self, z: f64) -> f64 {
        debug_assert!(z > 0.0);
        if let LevyFamily::AlphaStable { alpha, scale } = self.family {
            return scale * z.powf(-alpha) / alpha;
        }
        if z >= Z_MAX {
            return upper_tail(&self.family, z, &self.rule).unwrap_or(0.0);
        }
        if z < Z_MIN {
            let ds = grid_step();
            let span = Z_MIN.ln() - z.ln();
            let panels = (span / ds).ceil().max(1.0) as usize;
            let h = span / panels as f64;
            let mut extra = 0.0;
            for p in 0..panels {
                let a = z.ln() + h * p as f64;
                extra += self.rule.integrate(a, a + h, |s| {
                    let y = s.exp();
                    self.family.chi(y) * y
                });
            }
            return self.cum[0] + extra;
        }
        let (k, zk1) = panel_of(z);
        if zk1 == z {
            return self.cum[k + 1];
        }
        self.cum[k + 1] + self.partial(z, zk1)
    }

    /// Solves `X(z) = t` for `z > 0`.
    pub fn inverse(&self, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "tail inverse needs a positive finite level, got {t}"
            )));
        }
        if let LevyFamily::AlphaStable { alpha, scale } = self.family {
            return Ok((scale / (alpha * t)).powf(1.0 / alpha));
        }
        let n = self.cum.len();
        if t > self.cum[0] || t < self.cum[n - 1] {
            // outside the table: bracket on a logarithmic scale
            let (mut lo, mut hi) = if t > self.cum[0] {
                (Z_MIN * 0.1, Z_MIN)
            } else {
                (Z_MAX, Z_MAX * 10.0)
            };
            let mut guard = 0;
            while self.tail(lo) < t {
                lo *= 0.1;
                guard += 1;
                if guard > 300 || lo == 0.0 {
                    return Err(Error::Bracketing(format!("tail level {t:e} below range")));
                }
            }
            while self.tail(hi) > t {
                hi *= 10.0;
                guard += 1;
                if guard > 300 || !hi.is_finite() {
                    return Err(Error::Bracketing(format!("tail level {t:e} above range")));
                }
            }
            let r = bracketed(|s: f64| self.tail(s.exp()) / t - 1.0, lo.ln(), hi.ln(), 1e-15)?;
            return Ok(r.exp());
        }
        // cum is decreasing: find k with cum[k] >= t >= cum[k+1]
        let k = self.cum.partition_point(|&c| c >= t).saturating_sub(1).min(n - 2);
        let zk = grid_z(k);
        let zk1 = grid_z(k + 1);
        bracketed(
            |z| self.cum[k + 1] + self.partial(z, zk1) - t,
            zk,
            zk1,
            INVERSION_TOL,
        )
    }

    /// Fast approximate inverse by cubic Hermite interpolation of `ln z`
    /// against `ln X` on the grid; relative accuracy ~1e-9, used for sampling.
    pub fn inverse_fast(&self, t: f64) -> f64 {
        if let LevyFamily::AlphaStable { alpha, scale } = self.family {
            return (scale / (alpha * t)).powf(1.0 / alpha);
        }
        let n = self.cum.len();
        if t > self.cum[0] || t < self.cum[n - 1] {
            return self.inverse(t).unwrap_or(f64::NAN);
        }
        let k = self.cum.partition_point(|&c| c >= t).saturating_sub(1).min(n - 2);
        let (u0, u1) = (self.cum[k].ln(), self.cum[k + 1].ln());
        let (z0, z1) = (grid_z(k), grid_z(k + 1));
        let (s0, s1) = (z0.ln(), z1.ln());
        // ds/du = -X / (z χ)
        let d0 = -self.cum[k] / (z0 * self.family.chi(z0));
        let d1 = -self.cum[k + 1] / (z1 * self.family.chi(z1));
        let h = u1 - u0;
        if h == 0.0 {
            return z0;
        }
        let tau = (t.ln() - u0) / h;
        let (t2, t3) = (tau * tau, tau * tau * tau);
        let s = (2.0 * t3 - 3.0 * t2 + 1.0) * s0
            + (t3 - 2.0 * t2 + tau) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * s1
            + (t3 - t2) * h * d1;
        s.exp()
    }

    /// Largest ratio `X(z) / (z χ(z))` over grid points in `(0, 1]`.
    pub fn tail_ratio_constant(&self) -> f64 {
        let mut m: f64 = 0.0;
        for k in 0..self.cum.len() {
            let z = grid_z(k);
            if z > 1.0 {
                break;
            }
            m = m.max(self.tail(z) / (z * self.family.chi(z)));
        }
        m
    }
}

/// Grid panel `[z_k, z_{k+1}]` containing `z`, returned as `(k, z_{k+1})`.
fn panel_of(z: f64) -> (usize, f64) {
    let n = grid_len();
    let k = (((z.ln() - Z_MIN.ln()) / grid_step()).floor().max(0.0) as usize).min(n - 2);
    let mut k = k;
    // guard against rounding at panel boundaries
    while k + 1 < n - 1 && grid_z(k + 1) < z {
        k += 1;
    }
    while k > 0 && grid_z(k) > z {
        k -= 1;
    }
    (k, grid_z(k + 1))
}

/// `X(z)` for `z ≥ Z_MAX`, beyond the table.
fn upper_tail(family: &LevyFamily, z: f64, rule: &GaussLegendre) -> Result<f64> {
    match *family {
        LevyFamily::AlphaStable { alpha, scale } => Ok(scale * z.powf(-alpha) / alpha),
        LevyFamily::Tempered { rate, .. } => {
            if rate * z > 740.0 {
                return Ok(0.0);
            }
            log_panels(rule, z, z + 80.0 / rate, 8, QUAD_TOL, |y| family.chi(y))
        }
        LevyFamily::LogModified { alpha, .. } => {
            // y = z e^s; panels of unit width until the integrand is negligible
            let mut f = |s: f64| {
                let y = z * s.exp();
                family.chi(y) * y
            };
            let mut total = 0.0;
            let mut s = 0.0;
            while s < 1e4 {
                let piece = adaptive(rule, s, s + 1.0, 1e-13, 0.0, &mut f)?;
                total += piece;
                s += 1.0;
                if piece < 1e-18 * total && s * alpha > 40.0 {
                    break;
                }
            }
            Ok(total)
        }
        LevyFamily::MultiStable {
            alpha1,
            alpha2,
            scale,
        } => {
            let mut f = |a: f64| z.powf(-a) / a;
            Ok(scale * adaptive(rule, alpha1, alpha2, 1e-13, 0.0, &mut f)?)
        }
        LevyFamily::None | LevyFamily::DiracPair { .. } => Ok(0.0),
    }
}

/// Value of a principal-value integral with its truncation-error estimate.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct PvValue {
    pub value: f64,
    pub error: f64,
}

/// Cauchy-criterion tolerance for principal values.
pub const PV_TOL: f64 = 1e-8;

#[derive(Clone, Debug)]
enum Construction {
    NoJumps,
    Generic,
    /// Conductances `W` (the sample's `g` channel) with `𝕄[W(·-½)+W(·+½)]`.
    Rwrc { w: Field, mean_sum: f64 },
}

/// A jump kernel attached to one environment sample.
#[derive(Clone, Debug)]
pub struct JumpKernel {
    pub sample: EnvironmentSample,
    pub family: LevyFamily,
    construction: Construction,
    tail: Option<ChiTail>,
    rate_min: f64,
    rate_max: f64,
    /// Jump size beyond which `r(x, ±y)` no longer depends on `y`.
    horizon: f64,
    g_mean: f64,
}

impl JumpKernel {
    /// Kernel `r(x, z) χ(z)` with `r = e^{2V} c` from the sample's kernel field.
    pub fn new(sample: EnvironmentSample, family: LevyFamily) -> Result<Self> {
        family.validate()?;
        if let LevyFamily::DiracPair { .. } = family {
            return Err(Error::Unsupported(
                "dirac-pair kernels are built with the conductance construction".into(),
            ));
        }
        let (clo, chi) = sample.c_bounds();
        let (vlo, vhi) = sample.v_bounds();
        let rate_min = (2.0 * vlo).exp() * clo;
        let rate_max = (2.0 * vhi).exp() * chi;
        let g_mean = sample
            .g
            .exact_mean()
            .unwrap_or_else(|| sample.medium_average(|x| sample.eval_g(x)).value);
        let kf = &sample.model.kernel;
        let (glo, ghi) = sample.g.bounds();
        let gmax = glo.abs().max(ghi.abs());
        let tail = if family.has_density() {
            Some(ChiTail::new(&family)?)
        } else {
            None
        };
        let variation = kf.amplitude.abs() * gmax;
        let horizon = if variation == 0.0 || sample.g.is_constant() && kf.profile == Profile::Flat
        {
            0.0
        } else {
            match kf.profile.settling_length(variation / kf.base.abs().max(1e-300)) {
                Some(l) => l,
                None => match family {
                    LevyFamily::Tempered { .. } => {
                        // oscillating tail: stop where the remaining mass is negligible
                        let t = tail.as_ref().expect("tempered has a density");
                        t.inverse(1e-15 * t.tail(1.0))?
                    }
                    LevyFamily::None => 0.0,
                    _ => {
                        return Err(Error::Unsupported(
                            "a flat kernel profile with spatial modulation needs a tempered \
                             measure; use an exponential profile for heavy tails"
                                .into(),
                        ))
                    }
                },
            }
        };
        if horizon > 1e6 {
            return Err(Error::Unsupported(format!(
                "kernel modulation settles only at |z| = {horizon:e}"
            )));
        }
        let construction = if matches!(family, LevyFamily::None) {
            Construction::NoJumps
        } else {
            Construction::Generic
        };
        Ok(Self {
            sample,
            family,
            construction,
            tail,
            rate_min,
            rate_max,
            horizon,
            g_mean,
        })
    }

    /// Random walk among random conductances: the sample's `g` channel is the
    /// conductance field `W`, `χ = δ₁ + δ₋₁`, `c(x, ±1) = W(x ± ½) / 𝕄[S]`
    /// and `V = -½ ln S` (then normalized) with `S = W(x - ½) + W(x + ½)`.
    /// The jump probabilities `e^{2V} c(x, ±1)` are `W(x ± ½) / S(x)`.
    pub fn rwrc(sample: &EnvironmentSample) -> Result<Self> {
        let w = sample.g.clone();
        let (lo, hi) = w.bounds();
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "conductances must lie in [a, b] with a > 0, got [{lo}, {hi}]"
            )));
        }
        let v = Field::PairLogSum {
            inner: Box::new(w.clone()),
        };
        let sample = sample.with_potential(v)?;
        let mean_sum = sample
            .medium_average(|x| w.eval(x - 0.5) + w.eval(x + 0.5))
            .value;
        let (vlo, vhi) = sample.v_bounds();
        Ok(Self {
            family: LevyFamily::DiracPair { mass: 1.0 },
            construction: Construction::Rwrc { w, mean_sum },
            tail: None,
            rate_min: (2.0 * vlo).exp() * lo / mean_sum,
            rate_max: (2.0 * vhi).exp() * hi / mean_sum,
            horizon: 0.0,
            g_mean: 0.0,
            sample,
        })
    }

    pub fn is_rwrc(&self) -> bool {
        matches!(self.construction, Construction::Rwrc { .. })
    }

    pub fn has_jumps(&self) -> bool {
        !matches!(self.construction, Construction::NoJumps)
    }

    pub fn regime(&self) -> Regime {
        self.family.regime()
    }

    pub fn tail_table(&self) -> Option<&ChiTail> {
        self.tail.as_ref()
    }

    /// `(m, M)` with `m ≤ e^{2V} c ≤ M`.
    pub fn rate_bounds(&self) -> (f64, f64) {
        (self.rate_min, self.rate_max)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// True when `r(x, ·)` depends on neither `x` nor `z`, so `γ(x, z) = z`.
    pub fn is_identity(&self) -> bool {
        matches!(self.construction, Construction::Generic)
            && self.horizon == 0.0
            && self.rate_min == self.rate_max
    }

    /// Symmetrized kernel `c(x, z)`.
    pub fn c(&self, x: f64, z: f64) -> f64 {
        match &self.construction {
            Construction::Rwrc { w, mean_sum } => {
                if z == 1.0 {
                    w.eval(x + 0.5) / mean_sum
                } else if z == -1.0 {
                    w.eval(x - 0.5) / mean_sum
                } else {
                    0.0
                }
            }
            _ => self.sample.eval_c(x, z),
        }
    }

    /// Jump rate `r(x, z) = e^{2V(x)} c(x, z)`.
    pub fn rate(&self, x: f64, z: f64) -> f64 {
        (2.0 * self.sample.eval_v(x)).exp() * self.c(x, z)
    }

    /// `r(x, y) − r(x, −y)` evaluated without cancellation.
    pub fn rate_odd(&self, x: f64, y: f64) -> f64 {
        match &self.construction {
            Construction::Rwrc { .. } => self.rate(x, y) - self.rate(x, -y),
            _ => {
                let kf = &self.sample.model.kernel;
                if kf.amplitude == 0.0 {
                    return 0.0;
                }
                (2.0 * self.sample.eval_v(x)).exp()
                    * kf.amplitude
                    * kf.profile.eval(y)
                    * 0.5
                    * self.sample.g.odd_difference(x, y)
            }
        }
    }

    /// `r(x, y)` for `|y|` beyond the horizon.
    pub fn rate_far(&self, x: f64) -> f64 {
        let kf = &self.sample.model.kernel;
        let e2v = (2.0 * self.sample.eval_v(x)).exp();
        if kf.amplitude == 0.0 {
            return e2v * kf.base;
        }
        if self.horizon == 0.0 {
            // constant g
            return e2v * (kf.base + kf.amplitude * kf.profile.at_infinity() * self.sample.eval_g(x));
        }
        e2v * (kf.base
            + kf.amplitude * kf.profile.at_infinity() * 0.5 * (self.sample.eval_g(x) + self.g_mean))
    }

    fn density_tail(&self) -> Result<&ChiTail> {
        self.tail.as_ref().ok_or_else(|| {
            Error::Unsupported(format!(
                "operation needs a density family, kernel uses {:?}",
                self.family
            ))
        })
    }

    /// `ν` density `M χ(z)`; the conductance construction drives with the
    /// uniform law on `[0, 1]`.
    pub fn nu_density(&self, z: f64) -> f64 {
        match self.construction {
            Construction::Rwrc { .. } => {
                if (0.0..=1.0).contains(&z) {
                    1.0
                } else {
                    0.0
                }
            }
            _ => self.rate_max * self.family.chi(z),
        }
    }

    /// `F(z) = M ∫_z^∞ χ` for `z > 0` (mirrored with a sign for `z < 0`).
    pub fn tail_f(&self, z: f64) -> Result<f64> {
        let t = self.density_tail()?;
        if z == 0.0 {
            return Err(Error::InvalidParameter("tail at z = 0".into()));
        }
        Ok(z.signum() * self.rate_max * t.tail(z.abs()))
    }

    /// `h(x, z) = ∫_z^∞ r(x, y) χ(y) dy` for `z > 0` and
    /// `−∫_{-∞}^z r(x, y) χ(y) dy` for `z < 0`, by adaptive quadrature.
    pub fn tail_h(&self, x: f64, z: f64) -> Result<f64> {
        let t = self.density_tail()?;
        if z == 0.0 {
            return Err(Error::InvalidParameter("tail at z = 0".into()));
        }
        let side = z.signum();
        let y0 = z.abs();
        let rule = GaussLegendre::new(GL_ORDER);
        let near = if y0 < self.horizon {
            log_panels(&rule, y0, self.horizon, 8, QUAD_TOL, |y| {
                self.rate(x, side * y) * self.family.chi(y)
            })?
        } else {
            0.0
        };
        let far = self.rate_far(x) * t.tail(y0.max(self.horizon));
        Ok(side * (near + far))
    }

    /// Builds the tail tables of `h(x, ·)` and the inversion machinery at `x`.
    pub fn gamma_map(&self, x: f64) -> Result<GammaMap<'_>> {
        let tail = self.density_tail()?;
        let rule = GaussLegendre::new(GL_ORDER);
        let n = grid_len();
        let ds = grid_step();
        let s0 = Z_MIN.ln();
        let k_star = if self.horizon <= Z_MIN {
            0
        } else {
            ((((self.horizon.ln() - s0) / ds).ceil()) as usize).min(n - 1)
        };
        let r_far = self.rate_far(x);
        let e2v = (2.0 * self.sample.eval_v(x)).exp();
        let gx = self.sample.eval_g(x);
        let kf = self.sample.model.kernel.clone();
        let rate = move |y: f64, g_shift: f64| -> f64 {
            if kf.amplitude == 0.0 {
                e2v * kf.base
            } else {
                e2v * (kf.base + kf.amplitude * kf.profile.eval(y) * 0.5 * (gx + g_shift))
            }
        };
        let mut sides = Vec::with_capacity(2);
        for side in [1.0, -1.0] {
            let mut h = vec![0.0; k_star + 1];
            h[k_star] = r_far * tail.tail(grid_z(k_star));
            for k in (0..k_star).rev() {
                let a = s0 + ds * k as f64;
                h[k] = h[k + 1]
                    + rule.integrate(a, a + ds, |s| {
                        let y = s.exp();
                        let gs = self.sample.eval_g(x + side * y);
                        rate(y, gs) * self.family.chi(y) * y
                    });
            }
            let r0 = rate(Z_MIN, self.sample.eval_g(x + side * Z_MIN));
            sides.push(SideTable { h, r0 });
        }
        let neg = sides.pop().expect("two sides");
        let pos = sides.pop().expect("two sides");
        Ok(GammaMap {
            kernel: self,
            x,
            r_far,
            k_star,
            pos,
            neg,
            rule,
            identity: self.is_identity(),
        })
    }

    /// `γ(x, z)` by a one-off inversion.
    pub fn gamma(&self, x: f64, z: f64) -> Result<f64> {
        if let Construction::Rwrc { .. } = self.construction {
            return Ok(self.rwrc_gamma(x, z));
        }
        if self.is_identity() {
            return Ok(z);
        }
        self.gamma_map(x)?.gamma(z)
    }

    /// Jump probabilities `(p₋, p₊)` of the conductance walk at `x`.
    pub fn rwrc_probabilities(&self, x: f64) -> Result<(f64, f64)> {
        match &self.construction {
            Construction::Rwrc { w, .. } => {
                let wm = w.eval(x - 0.5);
                let wp = w.eval(x + 0.5);
                Ok((wm / (wm + wp), wp / (wm + wp)))
            }
            _ => Err(Error::Unsupported(
                "jump probabilities exist only for the conductance construction".into(),
            )),
        }
    }

    /// Threshold rule: `γ = 1` if `z ≤ p₊(x)`, else `−1`, for `z ∈ [0, 1]`.
    pub fn rwrc_gamma(&self, x: f64, z: f64) -> f64 {
        let (_, pp) = self.rwrc_probabilities(x).expect("conductance kernel");
        if z <= pp {
            1.0
        } else {
            -1.0
        }
    }

    /// Total rate `ν(|z| > κ) = 2 M X(κ)` of the jumps simulated exactly.
    pub fn large_jump_rate(&self, kappa: f64) -> Result<f64> {
        match self.construction {
            Construction::NoJumps => Ok(0.0),
            Construction::Rwrc { .. } => Ok(1.0),
            Construction::Generic => Ok(2.0 * self.rate_max * self.density_tail()?.tail(kappa)),
        }
    }

    /// Draws `z` from `ν` restricted to `|z| > κ` by tail inversion.
    pub fn sample_large_z<R: Rng>(&self, rng: &mut R, kappa: f64) -> f64 {
        match self.construction {
            Construction::Rwrc { .. } => rng.random::<f64>(),
            _ => {
                let t = self.tail.as_ref().expect("density family");
                let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
                let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                let x_kappa = t.tail(kappa);
                sign * t.inverse_fast(u * x_kappa).max(kappa)
            }
        }
    }

    /// `∫ min(1, z²) ν(dz)` with the change under panel doubling as error.
    pub fn levy_integral(&self) -> Result<PvValue> {
        let m = self.rate_max;
        match self.construction {
            Construction::NoJumps => Ok(PvValue {
                value: 0.0,
                error: 0.0,
            }),
            Construction::Rwrc { .. } => Ok(PvValue {
                value: 1.0,
                error: 0.0,
            }),
            Construction::Generic => {
                let t = self.density_tail()?;
                let rule = GaussLegendre::new(GL_ORDER);
                let chi = |y: f64| y * y * self.family.chi(y);
                let eval = |per: usize| -> Result<f64> {
                    let inner = log_panels(&rule, Z_MIN, 1.0, per, QUAD_TOL, chi)?
                        + self.family.small_second_moment(Z_MIN);
                    Ok(2.0 * m * (inner + t.tail(1.0)))
                };
                let a = eval(4)?;
                let b = eval(8)?;
                Ok(PvValue {
                    value: b,
                    error: (a - b).abs(),
                })
            }
        }
    }

    /// Constant `M'` of the tail condition `∫_z^∞ χ ≤ M' χ(z) z` on `(0, 1]`.
    pub fn tail_ratio_constant(&self) -> Result<f64> {
        Ok(self.density_tail()?.tail_ratio_constant())
    }

    /// `PV ∫_{-gm}^{gp} y^p r(x, y) χ(y) dy` for `p ∈ {1, 2}` where `gp, gm > 0`.
    fn image_moment(&self, x: f64, gp: f64, gm: f64, p: i32) -> Result<PvValue> {
        let rule = GaussLegendre::new(GL_ORDER);
        let chi = |y: f64| self.family.chi(y);
        let m = gp.min(gm);
        if p == 2 {
            let even = |y: f64| y * y * (self.rate(x, y) + self.rate(x, -y)) * chi(y);
            let closure = (self.rate(x, Z_MIN) + self.rate(x, -Z_MIN))
                * self.family.small_second_moment(Z_MIN.min(m));
            let core = if m > Z_MIN {
                log_panels(&rule, Z_MIN, m, 8, QUAD_TOL, even)?
            } else {
                0.0
            };
            let extra = if gp > gm {
                log_panels(&rule, gm, gp, 8, QUAD_TOL, |y| y * y * self.rate(x, y) * chi(y))?
            } else {
                log_panels(&rule, gp, gm, 8, QUAD_TOL, |y| y * y * self.rate(x, -y) * chi(y))?
            };
            return Ok(PvValue {
                value: closure + core + extra,
                error: 0.0,
            });
        }
        // first moment: pair ±y, integrate the odd part of the rate
        let odd_slope = {
            let kf = &self.sample.model.kernel;
            (2.0 * self.sample.eval_v(x)).exp()
                * kf.amplitude
                * kf.profile.eval(0.0)
                * self
                    .sample
                    .g
                    .derivative(1, x)
                    .unwrap_or(0.0)
        };
        let paired = |y_lo: f64| -> Result<f64> {
            let closure = odd_slope * self.family.small_second_moment(y_lo);
            let core = if m > y_lo {
                log_panels(&rule, y_lo, m, 8, QUAD_TOL, |y| {
                    y * self.rate_odd(x, y) * chi(y)
                })?
            } else {
                0.0
            };
            Ok(closure + core)
        };
        let lo = Z_MIN.min(1e-3 * m);
        let v1 = paired(lo)?;
        let v2 = paired(100.0 * lo)?;
        let err = (v1 - v2).abs();
        if err > PV_TOL * (1.0 + v1.abs()) {
            return Err(Error::NonConvergence(format!(
                "principal value at x = {x}: partial integrals differ by {err:e}"
            )));
        }
        let extra = if gp > gm {
            log_panels(&rule, gm, gp, 8, QUAD_TOL, |y| y * self.rate(x, y) * chi(y))?
        } else if gm > gp {
            -log_panels(&rule, gp, gm, 8, QUAD_TOL, |y| y * self.rate(x, -y) * chi(y))?
        } else {
            0.0
        };
        Ok(PvValue {
            value: v1 + extra,
            error: err,
        })
    }

    /// Principal value `e(x) = lim_{α→0} ∫_{α ≤ |γ|} γ 1_{|z| ≤ 1} dν`, computed in
    /// image space as `PV ∫_{γ(x,-1)}^{γ(x,1)} y r(x, y) χ(y) dy`.
    pub fn drift_e(&self, x: f64) -> Result<PvValue> {
        self.small_jump_drift(x, 1.0)
    }

    /// `PV ∫_{|z| ≤ κ} γ(x, z) ν(dz)`: the drift carried by jumps with `|z| ≤ κ`.
    pub fn small_jump_drift(&self, x: f64, kappa: f64) -> Result<PvValue> {
        match self.construction {
            Construction::NoJumps => Ok(PvValue {
                value: 0.0,
                error: 0.0,
            }),
            Construction::Rwrc { .. } => {
                // ν = U[0, 1]: every driving jump has |z| ≤ 1
                let (pm, pp) = self.rwrc_probabilities(x)?;
                let value = if kappa >= 1.0 {
                    pp - pm
                } else if kappa <= pp {
                    kappa
                } else {
                    pp - (kappa - pp)
                };
                Ok(PvValue { value, error: 0.0 })
            }
            Construction::Generic => {
                if self.is_identity() {
                    return Ok(PvValue {
                        value: 0.0,
                        error: 0.0,
                    });
                }
                let map = self.gamma_map(x)?;
                let gp = map.gamma(kappa)?;
                let gm = -map.gamma(-kappa)?;
                self.image_moment(x, gp, gm, 1)
            }
        }
    }

    /// `∫_{|z| ≤ κ} γ(x, z)² ν(dz)`.
    pub fn small_jump_variance(&self, x: f64, kappa: f64) -> Result<f64> {
        match self.construction {
            Construction::NoJumps => Ok(0.0),
            Construction::Rwrc { .. } => Ok(kappa.min(1.0)),
            Construction::Generic => {
                let (gp, gm) = if self.is_identity() {
                    (kappa, kappa)
                } else {
                    let map = self.gamma_map(x)?;
                    (map.gamma(kappa)?, -map.gamma(-kappa)?)
                };
                Ok(self.image_moment(x, gp, gm, 2)?.value)
            }
        }
    }

    /// `h_ε(x) = ε⁻¹ PV ∫ h(zδ) c(x, z) e^{2V(x)} χ(dz)` with the truncation
    /// `h(u) = u` for `|u| ≤ 1` and `sign(u)` beyond.
    pub fn compensator_h_eps(&self, x: f64, eps: f64, delta: f64) -> Result<f64> {
        if !(eps > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidParameter("eps and delta must be positive".into()));
        }
        match self.construction {
            Construction::NoJumps => Ok(0.0),
            Construction::Rwrc { .. } => {
                let trunc = delta.min(1.0);
                Ok(trunc * (self.rate(x, 1.0) - self.rate(x, -1.0)) / eps)
            }
            Construction::Generic => {
                let rule = GaussLegendre::new(GL_ORDER);
                let top = if self.horizon > 0.0 {
                    self.horizon
                } else {
                    return Ok(0.0);
                };
                let knee = 1.0 / delta;
                let chi = |y: f64| self.family.chi(y);
                let mut total = 0.0;
                let lo = Z_MIN;
                let slope = self.rate_odd(x, lo) / lo;
                total += slope * delta * self.family.small_second_moment(lo);
                let a = knee.min(top);
                if a > lo {
                    total += delta
                        * log_panels(&rule, lo, a, 8, QUAD_TOL, |y| {
                            y * self.rate_odd(x, y) * chi(y)
                        })?;
                }
                if top > knee {
                    total += log_panels(&rule, knee.max(lo), top, 8, QUAD_TOL, |y| {
                        self.rate_odd(x, y) * chi(y)
                    })?;
                }
                Ok(total / eps)
            }
        }
    }

    /// `h(x) = PV ∫ z c(x, z) e^{2V(x)} χ(dz)` in the diffusive regime.
    pub fn compensator_h(&self, x: f64) -> Result<f64> {
        if self.regime() == Regime::PureJump {
            return Err(Error::Regime(
                "the compensator field h needs a finite second moment".into(),
            ));
        }
        match self.construction {
            Construction::NoJumps => Ok(0.0),
            Construction::Rwrc { .. } => Ok(self.rate(x, 1.0) - self.rate(x, -1.0)),
            Construction::Generic => {
                if self.horizon == 0.0 {
                    return Ok(0.0);
                }
                let rule = GaussLegendre::new(GL_ORDER);
                let lo = Z_MIN;
                let slope = self.rate_odd(x, lo) / lo;
                Ok(slope * self.family.small_second_moment(lo)
                    + log_panels(&rule, lo, self.horizon, 8, QUAD_TOL, |y| {
                        y * self.rate_odd(x, y) * self.family.chi(y)
                    })?)
            }
        }
    }
}

#[derive(Clone, Debug)]
struct SideTable {
    /// `h[k] = |h(x, ±z_k)|` for `k ≤ k_star`.
    h: Vec<f64>,
    /// Rate at the origin on this side.
    r0: f64,
}

/// Inversion tables of `h(x, ·)` at a fixed position `x`.
#[derive(Clone, Debug)]
pub struct GammaMap<'a> {
    kernel: &'a JumpKernel,
    pub x: f64,
    r_far: f64,
    k_star: usize,
    pos: SideTable,
    neg: SideTable,
    rule: GaussLegendre,
    identity: bool,
}

impl GammaMap<'_> {
    fn chi_tail(&self) -> &ChiTail {
        self.kernel.tail.as_ref().expect("density family")
    }

    fn side(&self, sign: f64) -> &SideTable {
        if sign > 0.0 {
            &self.pos
        } else {
            &self.neg
        }
    }

    fn partial(&self, sign: f64, a: f64, b: f64) -> f64 {
        self.rule.integrate(a.ln(), b.ln(), |s| {
            let y = s.exp();
            self.kernel.rate(self.x, sign * y) * self.kernel.family.chi(y) * y
        })
    }

    /// `|h(x, z)|` on the side of `sign`, from the tables.
    fn h_abs(&self, sign: f64, y: f64) -> f64 {
        let t = self.chi_tail();
        let side = self.side(sign);
        let z_star = grid_z(self.k_star);
        if y >= z_star {
            return self.r_far * t.tail(y);
        }
        if y < Z_MIN {
            return side.h[0] + side.r0 * (t.tail(y) - t.tail(Z_MIN));
        }
        let (k, zk1) = panel_of(y);
        if y == zk1 {
            return side.h[k + 1];
        }
        side.h[k + 1] + self.partial(sign, y, zk1)
    }

    /// Table evaluation of `h(x, z)` (signed).
    pub fn tail_h(&self, z: f64) -> f64 {
        z.signum() * self.h_abs(z.signum(), z.abs())
    }

    /// `γ(x, z)`, the solution of `h(x, γ) = F(z)` on the side of `z`.
    pub fn gamma(&self, z: f64) -> Result<f64> {
        if z == 0.0 {
            return Ok(0.0);
        }
        if self.identity {
            return Ok(z);
        }
        let sign = z.signum();
        let t = self.chi_tail();
        let target = self.kernel.rate_max * t.tail(z.abs());
        let side = self.side(sign);
        let z_star = grid_z(self.k_star);
        let h_star = self.r_far * t.tail(z_star);
        let y = if target <= h_star {
            t.inverse(target / self.r_far)?
        } else if target > side.h[0] {
            let level = t.tail(Z_MIN) + (target - side.h[0]) / side.r0;
            t.inverse(level)?
        } else {
            // h[k] ≥ target > h[k+1]
            let h = &side.h;
            let k = h.partition_point(|&v| v >= target).saturating_sub(1).min(self.k_star - 1);
            let zk = grid_z(k);
            let zk1 = grid_z(k + 1);
            bracketed(
                |y| h[k + 1] + self.partial(sign, y, zk1) - target,
                zk,
                zk1,
                INVERSION_TOL,
            )
            .map_err(|e| {
                Error::Bracketing(format!("inversion at (x = {}, z = {z}): {e}", self.x))
            })?
        };
        Ok(sign * y.min(z.abs()))
    }

    /// Relative inversion residual `|h(x, γ(x, z)) − F(z)| / |F(z)|`.
    pub fn residual(&self, z: f64) -> Result<f64> {
        let g = self.gamma(z)?;
        let f = self.kernel.tail_f(z)?;
        Ok((self.tail_h(g) - f).abs() / f.abs())
    }
}
