//! Samplable one-dimensional random media.
//!
//! Every family is realized on a period cell `[0, L)`, and stationarity
//! comes from a uniformly distributed origin (or phase). The medium
//! expectation of a stationary field is then the cell average, which
//! [`EnvironmentSample::medium_average`] computes by composite Gauss–Legendre
//! quadrature. Long-period families (`lattice-iid-smoothed` with many cells,
//! `random-fourier` with a large period) stand in for genuinely ergodic
//! media.
//!
//! Each sample carries three scalar channels: the diffusivity `a = σ²`, the
//! potential `V` (shifted at draw time so that the cell average of `e^{-2V}`
//! is one) and a modulation `g` entering the jump kernel
//!
//! ```text
//! c_ref(x, z) = base + amplitude · profile(z) · g(x)
//! c(x, z)     = ½ (c_ref(x + z, -z) + c_ref(x, z))
//! ```
//!
//! The symmetrized `c` satisfies `c(x + z, -z) = c(x, z)`.

use crate::error::{Error, Result};
use crate::quad::{composite, GaussLegendre};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

/// Maximum derivative order for Fourier and lattice channels.
pub const MAX_DERIVATIVE_ORDER: usize = 8;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentModel {
    pub family: Family,
    /// Ellipticity constant `M_a ≥ 1`: every sample satisfies
    /// `1/M_a ≤ a ≤ M_a`.
    #[serde(default = "default_ellipticity")]
    pub ellipticity: f64,
    #[serde(default)]
    pub kernel: KernelField,
    /// Panels of the composite Gauss–Legendre rule on the period cell.
    #[serde(default = "default_panels")]
    pub panels: usize,
}

fn default_ellipticity() -> f64 {
    10.0
}

fn default_panels() -> usize {
    1 << 10
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Family {
    Constant {
        a: f64,
        #[serde(default)]
        v: f64,
    },
    /// Finite Fourier series on a torus of length `period`, all channels
    /// shifted by one uniform phase `U ∈ [0, period)`. A fixed `phase`
    /// replaces the random draw.
    PeriodicRandomPhase {
        period: f64,
        a: Harmonics,
        #[serde(default)]
        v: Harmonics,
        #[serde(default)]
        g: Harmonics,
        #[serde(default)]
        phase: Option<f64>,
    },
    /// I.i.d. uniform cell values on `cells` cells of length `spacing`,
    /// smoothed by a Gaussian mollifier of standard deviation `width` and
    /// wrapped periodically.
    LatticeIidSmoothed {
        spacing: f64,
        cells: usize,
        width: f64,
        a: Interval,
        #[serde(default)]
        v: Interval,
        #[serde(default)]
        g: Interval,
    },
    /// Random Fourier series: mode `k` (1-based) has amplitude
    /// `weights[k-1] · R_k` with `R_k ~ U[0, 1]` and a uniform phase.
    RandomFourier {
        period: f64,
        a: Spectrum,
        #[serde(default)]
        v: Spectrum,
        #[serde(default)]
        g: Spectrum,
    },
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Harmonics {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub terms: Vec<Harmonic>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Harmonic {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Spectrum {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub weights: Vec<f64>,
}

/// Parameters of the reference jump kernel `base + amplitude · profile(z) · g(x)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelField {
    #[serde(default = "one")]
    pub base: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub profile: Profile,
}

fn one() -> f64 {
    1.0
}

impl Default for KernelField {
    fn default() -> Self {
        Self {
            base: 1.0,
            amplitude: 0.0,
            profile: Profile::Flat,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Profile {
    #[default]
    Flat,
    Exponential {
        length: f64,
    },
}

impl Profile {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Profile::Flat => 1.0,
            Profile::Exponential { length } => (-z.abs() / length).exp(),
        }
    }

    pub fn at_infinity(&self) -> f64 {
        match self {
            Profile::Flat => 1.0,
            Profile::Exponential { .. } => 0.0,
        }
    }

    /// Jump size beyond which `|profile(z) - profile(∞)| · scale` drops below
    /// `1e-16`, or `None` when the profile never settles.
    pub fn settling_length(&self, scale: f64) -> Option<f64> {
        match *self {
            Profile::Flat => {
                if scale == 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            }
            Profile::Exponential { length } => {
                Some(length * (scale.max(1e-300) * 1e16).ln().max(0.0))
            }
        }
    }
}

/// Which channel [`EnvironmentSample::eval_derivative`] differentiates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FieldKind {
    A,
    V,
    /// The symmetrized kernel `c(·, z)` at a fixed jump size.
    CAtZ(f64),
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub k: u32,
    pub cos: f64,
    pub sin: f64,
}

/// A realized smooth periodic scalar channel.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Field {
    Constant {
        value: f64,
    },
    Fourier {
        mean: f64,
        period: f64,
        terms: Vec<FourierTerm>,
    },
    Lattice {
        spacing: f64,
        width: f64,
        shift: f64,
        values: Vec<f64>,
    },
    /// `-½ ln(W(x - ½) + W(x + ½))`, the potential of the random walk among
    /// random conductances `W`.
    PairLogSum {
        inner: Box<Field>,
    },
}

/// Mollifier half-width in units of its standard deviation.
const GAUSS_REACH: f64 = 12.0;

fn std_normal_cdf(t: f64) -> f64 {
    0.5 * erfc(-t * FRAC_1_SQRT_2)
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Probabilists' Hermite polynomial `He_m(t)`.
fn hermite(m: usize, t: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, t);
    if m == 0 {
        return 1.0;
    }
    for j in 1..m {
        let h2 = t * h1 - j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

impl Field {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Field::Constant { value } => *value,
            Field::Fourier { mean, period, terms } => {
                let w0 = 2.0 * PI / period;
                let mut s = *mean;
                for t in terms {
                    let (sn, cs) = (w0 * t.k as f64 * x).sin_cos();
                    s += t.cos * cs + t.sin * sn;
                }
                s
            }
            Field::Lattice { .. } => self.lattice_eval(0, x),
            Field::PairLogSum { inner } => {
                -0.5 * (inner.eval(x - 0.5) + inner.eval(x + 0.5)).ln()
            }
        }
    }

    /// `f(x + y) − f(x − y)`, in closed form for Fourier fields so that the
    /// result is smooth in `y` even where the two values nearly cancel.
    pub fn odd_difference(&self, x: f64, y: f64) -> f64 {
        match self {
            Field::Constant { .. } => 0.0,
            Field::Fourier { period, terms, .. } => {
                let w0 = 2.0 * PI / period;
                let mut s = 0.0;
                for t in terms {
                    let w = w0 * t.k as f64;
                    let (sx, cx) = (w * x).sin_cos();
                    s += 2.0 * (w * y).sin() * (t.sin * cx - t.cos * sx);
                }
                s
            }
            _ => self.eval(x + y) - self.eval(x - y),
        }
    }

    pub fn max_order(&self) -> usize {
        match self {
            Field::PairLogSum { .. } => 2,
            _ => MAX_DERIVATIVE_ORDER,
        }
    }

    /// `k`-th derivative at `x`; `k = 0` is the value.
    pub fn derivative(&self, k: usize, x: f64) -> Result<f64> {
        if k > self.max_order() {
            return Err(Error::UnsupportedOrder {
                order: k,
                max: self.max_order(),
            });
        }
        if k == 0 {
            return Ok(self.eval(x));
        }
        Ok(match self {
            Field::Constant { .. } => 0.0,
            Field::Fourier { period, terms, .. } => {
                let w0 = 2.0 * PI / period;
                let mut s = 0.0;
                for t in terms {
                    let w = w0 * t.k as f64;
                    let (sn, cs) = (w * x).sin_cos();
                    // d^k/dx^k of (cos, sin) cycles through (cos, sin) · (±1)
                    let (dc, ds) = match k % 4 {
                        0 => (cs, sn),
                        1 => (-sn, cs),
                        2 => (-cs, -sn),
                        _ => (sn, -cs),
                    };
                    s += w.powi(k as i32) * (t.cos * dc + t.sin * ds);
                }
                s
            }
            Field::Lattice { .. } => self.lattice_eval(k, x),
            Field::PairLogSum { inner } => {
                let s0 = inner.eval(x - 0.5) + inner.eval(x + 0.5);
                let s1 = inner.derivative(1, x - 0.5)? + inner.derivative(1, x + 0.5)?;
                if k == 1 {
                    -0.5 * s1 / s0
                } else {
                    let s2 = inner.derivative(2, x - 0.5)? + inner.derivative(2, x + 0.5)?;
                    -0.5 * (s2 / s0 - (s1 / s0).powi(2))
                }
            }
        })
    }

    fn lattice_eval(&self, k: usize, x: f64) -> f64 {
        let Field::Lattice {
            spacing,
            width,
            shift,
            values,
        } = self
        else {
            unreachable!()
        };
        let n = values.len() as i64;
        let period = spacing * n as f64;
        let xr = (x - shift).rem_euclid(period);
        let j0 = (xr / spacing).floor() as i64;
        let reach = (GAUSS_REACH * width / spacing).ceil() as i64 + 1;
        let mut s = 0.0;
        for j in (j0 - reach)..=(j0 + reach) {
            let v = values[j.rem_euclid(n) as usize];
            let t0 = (xr - j as f64 * spacing) / width;
            let t1 = (xr - (j + 1) as f64 * spacing) / width;
            let piece = if k == 0 {
                std_normal_cdf(t0) - std_normal_cdf(t1)
            } else {
                let m = k - 1;
                let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
                sign * (hermite(m, t0) * std_normal_pdf(t0) - hermite(m, t1) * std_normal_pdf(t1))
                    / width.powi(k as i32)
            };
            s += v * piece;
        }
        s
    }

    /// Rigorous lower and upper bounds of the field.
    pub fn bounds(&self) -> (f64, f64) {
        match self {
            Field::Constant { value } => (*value, *value),
            Field::Fourier { mean, terms, .. } => {
                let r: f64 = terms.iter().map(|t| t.cos.hypot(t.sin)).sum();
                (mean - r, mean + r)
            }
            Field::Lattice { values, .. } => {
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                (lo, hi)
            }
            Field::PairLogSum { inner } => {
                let (lo, hi) = inner.bounds();
                (-0.5 * (2.0 * hi).ln(), -0.5 * (2.0 * lo).ln())
            }
        }
    }

    pub fn period(&self) -> Option<f64> {
        match self {
            Field::Constant { .. } => None,
            Field::Fourier { period, .. } => Some(*period),
            Field::Lattice {
                spacing, values, ..
            } => Some(spacing * values.len() as f64),
            Field::PairLogSum { inner } => inner.period(),
        }
    }

    /// Exact cell average where one is available in closed form.
    pub fn exact_mean(&self) -> Option<f64> {
        match self {
            Field::Constant { value } => Some(*value),
            Field::Fourier { mean, .. } => Some(*mean),
            Field::Lattice { values, .. } => {
                Some(values.iter().sum::<f64>() / values.len() as f64)
            }
            Field::PairLogSum { .. } => None,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Field::Constant { .. } => true,
            Field::Fourier { terms, .. } => terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0),
            Field::Lattice { values, .. } => values.iter().all(|&v| v == values[0]),
            Field::PairLogSum { inner } => inner.is_constant(),
        }
    }
}

/// Result of a cell average.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct MediumAverage {
    pub value: f64,
    /// Length of the averaging window (the period cell).
    pub window: f64,
    /// Difference between the averages at `panels` and `2 · panels`.
    pub error: f64,
    pub converged: bool,
}

/// Relative tolerance of the panel-doubling check in `medium_average`.
pub const AVERAGE_TOL: f64 = 1e-8;

/// One realization of a medium.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnvironmentSample {
    pub model: EnvironmentModel,
    pub seed: u64,
    pub a: Field,
    pub v: Field,
    pub g: Field,
    /// Constant added to the raw potential so that `𝕄[e^{-2V}] = 1`.
    pub normalization: f64,
    pub period: f64,
}

fn fourier_from_harmonics(h: &Harmonics, period: f64, phase: f64) -> Field {
    let w0 = 2.0 * PI / period;
    let terms = h
        .terms
        .iter()
        .map(|t| {
            let (s, c) = (w0 * t.k as f64 * phase).sin_cos();
            FourierTerm {
                k: t.k,
                cos: t.cos * c + t.sin * s,
                sin: t.sin * c - t.cos * s,
            }
        })
        .collect();
    Field::Fourier {
        mean: h.mean,
        period,
        terms,
    }
}

fn random_fourier(s: &Spectrum, period: f64, rng: &mut ChaCha8Rng) -> Field {
    let terms = s
        .weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let amp = w * rng.random::<f64>();
            let theta = 2.0 * PI * rng.random::<f64>();
            FourierTerm {
                k: i as u32 + 1,
                cos: amp * theta.cos(),
                sin: -amp * theta.sin(),
            }
        })
        .collect();
    Field::Fourier {
        mean: s.mean,
        period,
        terms,
    }
}

fn lattice(iv: &Interval, spacing: f64, cells: usize, width: f64, rng: &mut ChaCha8Rng) -> Field {
    let shift = spacing * rng.random::<f64>();
    let values = (0..cells)
        .map(|_| iv.lo + (iv.hi - iv.lo) * rng.random::<f64>())
        .collect();
    Field::Lattice {
        spacing,
        width,
        shift,
        values,
    }
}

fn check_finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be finite")))
    }
}

impl EnvironmentModel {
    pub fn constant(a: f64, v: f64) -> Self {
        Self {
            family: Family::Constant { a, v },
            ellipticity: default_ellipticity(),
            kernel: KernelField::default(),
            panels: default_panels(),
        }
    }

    pub fn with_kernel(mut self, kernel: KernelField) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn with_ellipticity(mut self, m: f64) -> Self {
        self.ellipticity = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.ellipticity >= 1.0) || !self.ellipticity.is_finite() {
            return Err(Error::InvalidParameter(
                "ellipticity must be a finite number >= 1".into(),
            ));
        }
        if self.panels == 0 {
            return Err(Error::InvalidParameter("panels must be positive".into()));
        }
        check_finite("kernel.base", self.kernel.base)?;
        check_finite("kernel.amplitude", self.kernel.amplitude)?;
        if let Profile::Exponential { length } = self.kernel.profile {
            if !(length > 0.0) {
                return Err(Error::InvalidParameter(
                    "kernel.profile.length must be positive".into(),
                ));
            }
        }
        match &self.family {
            Family::Constant { a, v } => {
                check_finite("a", *a)?;
                check_finite("v", *v)?;
            }
            Family::PeriodicRandomPhase {
                period,
                a,
                v,
                g,
                phase,
            } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(Error::InvalidParameter("period must be positive".into()));
                }
                for (name, h) in [("a", a), ("v", v), ("g", g)] {
                    check_finite(name, h.mean)?;
                    for t in &h.terms {
                        check_finite(name, t.cos)?;
                        check_finite(name, t.sin)?;
                    }
                }
                if let Some(p) = phase {
                    check_finite("phase", *p)?;
                }
            }
            Family::LatticeIidSmoothed {
                spacing,
                cells,
                width,
                a,
                v,
                g,
            } => {
                if !(*spacing > 0.0) || *cells == 0 {
                    return Err(Error::InvalidParameter(
                        "lattice spacing and cell count must be positive".into(),
                    ));
                }
                // Uniform derivative bounds need a width bounded away from 0.
                if !(*width >= 0.05 * spacing) {
                    return Err(Error::InvalidParameter(format!(
                        "smoothing width must be at least 0.05 · spacing = {}",
                        0.05 * spacing
                    )));
                }
                for (name, iv) in [("a", a), ("v", v), ("g", g)] {
                    check_finite(name, iv.lo)?;
                    check_finite(name, iv.hi)?;
                    if iv.lo > iv.hi {
                        return Err(Error::InvalidParameter(format!(
                            "{name}: lo must not exceed hi"
                        )));
                    }
                }
            }
            Family::RandomFourier { period, a, v, g } => {
                if !(*period > 0.0) || !period.is_finite() {
                    return Err(Error::InvalidParameter("period must be positive".into()));
                }
                for (name, s) in [("a", a), ("v", v), ("g", g)] {
                    check_finite(name, s.mean)?;
                    if s.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                        return Err(Error::InvalidParameter(format!(
                            "{name}: spectral weights must be finite and nonnegative"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Period of the realized cell (1 for spatially constant media).
    pub fn period(&self) -> f64 {
        match &self.family {
            Family::Constant { .. } => 1.0,
            Family::PeriodicRandomPhase { period, .. } | Family::RandomFourier { period, .. } => {
                *period
            }
            Family::LatticeIidSmoothed { spacing, cells, .. } => spacing * *cells as f64,
        }
    }
}

/// Draws the realization of `model` determined by `seed`.
pub fn draw_sample(model: &EnvironmentModel, seed: u64) -> Result<EnvironmentSample> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = model.period();
    let (a, v, g) = match &model.family {
        Family::Constant { a, v } => (
            Field::Constant { value: *a },
            Field::Constant { value: *v },
            Field::Constant { value: 0.0 },
        ),
        Family::PeriodicRandomPhase {
            a, v, g, phase, ..
        } => {
            let u = match phase {
                Some(p) => *p,
                None => period * rng.random::<f64>(),
            };
            (
                fourier_from_harmonics(a, period, u),
                fourier_from_harmonics(v, period, u),
                fourier_from_harmonics(g, period, u),
            )
        }
        Family::LatticeIidSmoothed {
            spacing,
            cells,
            width,
            a,
            v,
            g,
        } => (
            lattice(a, *spacing, *cells, *width, &mut rng),
            lattice(v, *spacing, *cells, *width, &mut rng),
            lattice(g, *spacing, *cells, *width, &mut rng),
        ),
        Family::RandomFourier { a, v, g, .. } => (
            random_fourier(a, period, &mut rng),
            random_fourier(v, period, &mut rng),
            random_fourier(g, period, &mut rng),
        ),
    };
    EnvironmentSample::assemble(model.clone(), seed, a, v, g, period)
}

impl EnvironmentSample {
    /// Builds a sample from realized channels, checks the bounds and
    /// normalizes the potential.
    pub fn assemble(
        model: EnvironmentModel,
        seed: u64,
        a: Field,
        v: Field,
        g: Field,
        period: f64,
    ) -> Result<Self> {
        let (alo, ahi) = a.bounds();
        let m = model.ellipticity;
        // A spatially constant a = 0 is allowed: it switches the Brownian part off.
        let degenerate = matches!(a, Field::Constant { value } if value == 0.0);
        if !degenerate && (alo < 1.0 / m || ahi > m) {
            return Err(Error::InvalidParameter(format!(
                "diffusivity range [{alo}, {ahi}] violates ellipticity bounds [{}, {m}]",
                1.0 / m
            )));
        }
        let (vlo, vhi) = v.bounds();
        if !vlo.is_finite() || !vhi.is_finite() {
            return Err(Error::InvalidParameter("potential must be bounded".into()));
        }
        let mut sample = Self {
            model,
            seed,
            a,
            v,
            g,
            normalization: 0.0,
            period,
        };
        let (clo, _) = sample.c_bounds();
        if !(clo > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "jump kernel lower bound {clo} is not positive"
            )));
        }
        let raw = sample.medium_average(|x| (-2.0 * sample.v.eval(x)).exp());
        sample.normalization = 0.5 * raw.value.ln();
        Ok(sample)
    }

    /// Same medium with the potential channel replaced (and renormalized).
    pub fn with_potential(&self, v: Field) -> Result<Self> {
        Self::assemble(
            self.model.clone(),
            self.seed,
            self.a.clone(),
            v,
            self.g.clone(),
            self.period,
        )
    }

    pub fn eval_a(&self, x: f64) -> f64 {
        self.a.eval(x)
    }

    /// Normalized potential.
    pub fn eval_v(&self, x: f64) -> f64 {
        self.v.eval(x) + self.normalization
    }

    pub fn eval_g(&self, x: f64) -> f64 {
        self.g.eval(x)
    }

    /// `e^{-2V(x)}`, the density of π with respect to the medium measure.
    pub fn pi_weight(&self, x: f64) -> f64 {
        (-2.0 * self.eval_v(x)).exp()
    }

    /// Reference kernel `c_ref(x, z)` before symmetrization.
    pub fn eval_c_ref(&self, x: f64, z: f64) -> f64 {
        let k = &self.model.kernel;
        if k.amplitude == 0.0 {
            return k.base;
        }
        k.base + k.amplitude * k.profile.eval(z) * self.g.eval(x)
    }

    /// Symmetrized kernel `c(x, z) = ½ (c_ref(x + z, -z) + c_ref(x, z))`.
    pub fn eval_c(&self, x: f64, z: f64) -> f64 {
        let k = &self.model.kernel;
        if k.amplitude == 0.0 {
            return k.base;
        }
        k.base + k.amplitude * k.profile.eval(z) * 0.5 * (self.g.eval(x) + self.g.eval(x + z))
    }

    /// Bounds `[m, M]` of the symmetrized kernel over all `(x, z)`.
    pub fn c_bounds(&self) -> (f64, f64) {
        let k = &self.model.kernel;
        let (glo, ghi) = self.g.bounds();
        let ends = [0.0, k.amplitude * glo, k.amplitude * ghi];
        let lo = ends.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ends.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (k.base + lo, k.base + hi)
    }

    /// Bounds of the normalized potential.
    pub fn v_bounds(&self) -> (f64, f64) {
        let (lo, hi) = self.v.bounds();
        (lo + self.normalization, hi + self.normalization)
    }

    pub fn eval_derivative(&self, field: FieldKind, k: usize, x: f64) -> Result<f64> {
        match field {
            FieldKind::A => self.a.derivative(k, x),
            FieldKind::V => {
                let d = self.v.derivative(k, x)?;
                Ok(if k == 0 { d + self.normalization } else { d })
            }
            FieldKind::CAtZ(z) => {
                if k == 0 {
                    return Ok(self.eval_c(x, z));
                }
                let kf = &self.model.kernel;
                if kf.amplitude == 0.0 {
                    // still validate the order against the channel
                    self.g.derivative(k, x)?;
                    return Ok(0.0);
                }
                let gd = self.g.derivative(k, x)? + self.g.derivative(k, x + z)?;
                Ok(kf.amplitude * kf.profile.eval(z) * 0.5 * gd)
            }
        }
    }

    /// Drift `b = ½ a' − a V'`.
    pub fn drift_b(&self, x: f64) -> f64 {
        let da = self.a.derivative(1, x).expect("first derivative is always supported");
        let dv = self.v.derivative(1, x).expect("first derivative is always supported");
        0.5 * da - self.a.eval(x) * dv
    }

    /// Cell average of `f` by composite Gauss–Legendre quadrature, with a
    /// panel-doubling error estimate.
    pub fn medium_average<F: Fn(f64) -> f64>(&self, f: F) -> MediumAverage {
        let rule = GaussLegendre::new(5);
        let panels = self.model.panels;
        let l = self.period;
        let coarse = composite(&rule, 0.0, l, panels, &f) / l;
        let fine = composite(&rule, 0.0, l, 2 * panels, &f) / l;
        let error = (fine - coarse).abs();
        let converged = error <= AVERAGE_TOL * fine.abs().max(1e-300) || error < 1e-14;
        if !converged {
            log::warn!(
                "medium average not converged: window {l}, panels {panels}, change {error:e}"
            );
        }
        MediumAverage {
            value: fine,
            window: l,
            error,
            converged,
        }
    }

    /// π-average `𝕄[f e^{-2V}]`.
    pub fn pi_average<F: Fn(f64) -> f64>(&self, f: F) -> MediumAverage {
        self.medium_average(|x| f(x) * self.pi_weight(x))
    }

    /// True when every channel entering the dynamics is spatially constant.
    pub fn is_homogeneous(&self) -> bool {
        self.a.is_constant()
            && self.v.is_constant()
            && (self.model.kernel.amplitude == 0.0 || self.g.is_constant())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinusoidal(phase: Option<f64>) -> EnvironmentModel {
        EnvironmentModel {
            family: Family::PeriodicRandomPhase {
                period: 1.0,
                a: Harmonics {
                    mean: 2.0,
                    terms: vec![Harmonic {
                        k: 1,
                        cos: 0.0,
                        sin: 1.0,
                    }],
                },
                v: Harmonics::default(),
                g: Harmonics::default(),
                phase,
            },
            ellipticity: 4.0,
            kernel: KernelField::default(),
            panels: 1024,
        }
    }

    #[test]
    fn constant_family_is_constant() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 99).unwrap();
        for x in [-3.0, 0.0, 0.4, 17.0] {
            assert_eq!(s.eval_a(x), 1.0);
            assert_eq!(s.eval_v(x), 0.0);
            assert_eq!(s.eval_c(x, 0.3), 1.0);
            assert_eq!(s.drift_b(x), 0.0);
            for k in 1..4 {
                assert_eq!(s.eval_derivative(FieldKind::A, k, x).unwrap(), 0.0);
            }
        }
    }

    #[test]
    fn constant_potential_is_normalized_away() {
        let s = draw_sample(&EnvironmentModel::constant(3.0, 1.7), 1).unwrap();
        assert!(s.eval_v(0.2).abs() < 1e-13);
        assert!((s.medium_average(|x| s.eval_a(x)).value - 3.0).abs() < 1e-14);
    }

    #[test]
    fn periodic_phase_range_and_periodicity() {
        let s = draw_sample(&sinusoidal(None), 7).unwrap();
        for i in 0..200 {
            let x = -3.0 + 0.037 * i as f64;
            let a = s.eval_a(x);
            assert!((1.0..=3.0).contains(&a));
            assert!((s.eval_a(x + 1.0) - a).abs() < 1e-12);
        }
        let avg = s.medium_average(|x| s.eval_a(x));
        assert!((avg.value - 2.0).abs() < 1e-8 && avg.converged);
    }

    #[test]
    fn drift_of_sinusoid_without_potential() {
        let s = draw_sample(&sinusoidal(Some(0.0)), 0).unwrap();
        for i in 0..50 {
            let x = 0.02 * i as f64;
            let want = PI * (2.0 * PI * x).cos();
            assert!((s.drift_b(x) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn seed_determinism() {
        let m = EnvironmentModel {
            family: Family::LatticeIidSmoothed {
                spacing: 1.0,
                cells: 16,
                width: 0.3,
                a: Interval { lo: 1.0, hi: 2.0 },
                v: Interval { lo: -0.2, hi: 0.2 },
                g: Interval { lo: -1.0, hi: 1.0 },
            },
            ellipticity: 3.0,
            kernel: KernelField {
                base: 1.0,
                amplitude: 0.3,
                profile: Profile::Flat,
            },
            panels: 1024,
        };
        let s1 = draw_sample(&m, 5).unwrap();
        let s2 = draw_sample(&m, 5).unwrap();
        let s3 = draw_sample(&m, 6).unwrap();
        for x in [0.1, 3.3, 11.7] {
            assert_eq!(s1.eval_a(x).to_bits(), s2.eval_a(x).to_bits());
            assert_eq!(s1.eval_v(x).to_bits(), s2.eval_v(x).to_bits());
            assert_eq!(s1.eval_c(x, 0.7).to_bits(), s2.eval_c(x, 0.7).to_bits());
        }
        assert_ne!(s1.eval_a(3.3), s3.eval_a(3.3));
    }

    #[test]
    fn ellipticity_violation_is_rejected() {
        let m = sinusoidal(None).with_ellipticity(1.5);
        assert!(matches!(
            draw_sample(&m, 0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn unsupported_order() {
        let s = draw_sample(&sinusoidal(None), 3).unwrap();
        assert!(matches!(
            s.eval_derivative(FieldKind::A, MAX_DERIVATIVE_ORDER + 1, 0.0),
            Err(Error::UnsupportedOrder { .. })
        ));
    }

    #[test]
    fn kernel_symmetry() {
        let mut m = sinusoidal(None);
        m.kernel = KernelField {
            base: 1.0,
            amplitude: 0.5,
            profile: Profile::Exponential { length: 1.0 },
        };
        if let Family::PeriodicRandomPhase { g, .. } = &mut m.family {
            g.terms.push(Harmonic {
                k: 1,
                cos: 0.0,
                sin: 1.0,
            });
        }
        let s = draw_sample(&m, 11).unwrap();
        for i in 0..100 {
            let x = -1.0 + 0.031 * i as f64;
            let z = -2.0 + 0.047 * i as f64;
            assert!((s.eval_c(x + z, -z) - s.eval_c(x, z)).abs() < 1e-14);
        }
    }
}
