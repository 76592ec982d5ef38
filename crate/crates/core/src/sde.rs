//! Euler simulation of the jump-diffusion
//!
//! ```text
//! dX = (b + e)(X) dt + σ(X) dB + ∫ γ(X⁻, z) N̂(dt, dz)
//! ```
//!
//! with frozen coefficients over each step. Jumps with `|z| > κ` are drawn
//! exactly (Poisson count, inverse-tail sizes); jumps with `|z| ≤ κ` enter
//! through their mean drift and, under the Gaussian scheme, a variance-matched
//! normal increment.

use crate::environment::EnvironmentSample;
use crate::error::{Error, Result};
use crate::jump_kernel::{JumpKernel, Regime};
use crate::stats::pairwise_sum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SmallJumpScheme {
    /// Small jumps contribute only their mean drift.
    DriftCompensation,
    /// Small jumps are replaced by a normal increment with matched variance.
    GaussianMomentMatch,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub horizon: f64,
    pub dt: f64,
    /// Driving jumps with `|z| ≤ κ` are treated by the small-jump scheme.
    /// It expands `f(x + γ)` to second order, so `γ(x, κ)` should stay well
    /// below the length scale of the medium.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub scheme: Option<SmallJumpScheme>,
    #[serde(default)]
    pub x0: f64,
    #[serde(default = "one_path")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Paths leaving `[-envelope, envelope]` abort the run.
    #[serde(default = "default_envelope")]
    pub envelope: f64,
    /// Times at which ensemble positions are recorded (default: the horizon).
    #[serde(default)]
    pub observe: Vec<f64>,
    /// Resolution of the tabulated jump coefficients, points per unit length.
    #[serde(default = "default_resolution")]
    pub points_per_unit: usize,
}

fn default_kappa() -> f64 {
    0.1
}

fn one_path() -> usize {
    1
}

fn default_envelope() -> f64 {
    1e12
}

fn default_resolution() -> usize {
    128
}

impl SimConfig {
    pub fn new(horizon: f64, dt: f64, paths: usize, seed: u64) -> Self {
        Self {
            horizon,
            dt,
            kappa: default_kappa(),
            scheme: None,
            x0: 0.0,
            paths,
            seed,
            envelope: default_envelope(),
            observe: Vec::new(),
            points_per_unit: default_resolution(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad("dt must be positive");
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return bad("horizon must be positive");
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad("kappa must lie in (0, 1]");
        }
        if self.paths == 0 {
            return bad("at least one path is needed");
        }
        if !(self.envelope > 0.0) {
            return bad("envelope must be positive");
        }
        if self.points_per_unit == 0 {
            return bad("points_per_unit must be positive");
        }
        for &t in &self.observe {
            if !(t > 0.0 && t <= self.horizon * (1.0 + 1e-12)) {
                return bad("observation times must lie in (0, horizon]");
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round().max(1.0) as usize
    }

    fn observation_steps(&self) -> Vec<usize> {
        if self.observe.is_empty() {
            return vec![self.steps()];
        }
        self.observe
            .iter()
            .map(|t| ((t / self.dt).round() as usize).clamp(1, self.steps()))
            .collect()
    }
}

/// Jump coefficients tabulated over one period for fast stepping.
#[derive(Clone, Debug)]
pub struct JumpField {
    kind: FieldKind,
    period: f64,
    nx: usize,
    /// Mean drift of the jumps with `|z| ≤ κ`.
    drift: Vec<f64>,
    /// Variance rate of the jumps with `|z| ≤ κ`.
    var: Vec<f64>,
    s_lo: f64,
    ds: f64,
    nz: usize,
    /// `ln(γ/z)` on the `(x, ln z)` grid, positive and negative sides.
    pos: Vec<f64>,
    neg: Vec<f64>,
    /// `r_far(x) / M`.
    far: Vec<f64>,
    pub jump_rate: f64,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum FieldKind {
    NoJumps,
    Rwrc,
    Identity,
    Table,
}

impl JumpField {
    pub fn build(kernel: &JumpKernel, kappa: f64, points_per_unit: usize) -> Result<Self> {
        let period = kernel.sample.period;
        let empty = |kind| JumpField {
            kind,
            period,
            nx: 1,
            drift: vec![0.0],
            var: vec![0.0],
            s_lo: 0.0,
            ds: 1.0,
            nz: 0,
            pos: vec![],
            neg: vec![],
            far: vec![1.0],
            jump_rate: 0.0,
            kappa,
        };
        if !kernel.has_jumps() {
            return Ok(empty(FieldKind::NoJumps));
        }
        if kernel.is_rwrc() {
            let mut f = empty(FieldKind::Rwrc);
            f.jump_rate = 1.0;
            return Ok(f);
        }
        let jump_rate = kernel.large_jump_rate(kappa)?;
        if kernel.is_identity() {
            let mut f = empty(FieldKind::Identity);
            f.var = vec![kernel.small_jump_variance(0.0, kappa)?];
            f.jump_rate = jump_rate;
            return Ok(f);
        }
        let homogeneous = kernel.sample.is_homogeneous();
        let nx = if homogeneous {
            1
        } else {
            ((period * points_per_unit as f64).ceil() as usize).max(16)
        };
        let (_, m) = kernel.rate_bounds();
        let ds = std::f64::consts::LN_10 / crate::jump_kernel::PER_DECADE as f64;
        let s_lo = kappa.ln();
        let top = kernel.horizon().max(kappa);
        let nz = if top > kappa {
            ((top.ln() - s_lo) / ds).ceil() as usize + 1
        } else {
            0
        };
        let rows: Vec<Result<(f64, f64, f64, Vec<f64>, Vec<f64>)>> = (0..nx)
            .into_par_iter()
            .map(|i| {
                let x = period * i as f64 / nx as f64;
                let map = kernel.gamma_map(x)?;
                let mut pos = Vec::with_capacity(nz);
                let mut neg = Vec::with_capacity(nz);
                for j in 0..nz {
                    let z = (s_lo + ds * j as f64).exp();
                    pos.push((map.gamma(z)? / z).ln());
                    neg.push((-map.gamma(-z)? / z).ln());
                }
                let drift = kernel.small_jump_drift(x, kappa)?.value;
                let var = kernel.small_jump_variance(x, kappa)?;
                Ok((drift, var, kernel.rate_far(x) / m, pos, neg))
            })
            .collect();
        let mut f = JumpField {
            kind: FieldKind::Table,
            period,
            nx,
            drift: Vec::with_capacity(nx),
            var: Vec::with_capacity(nx),
            s_lo,
            ds,
            nz,
            pos: Vec::with_capacity(nx * nz),
            neg: Vec::with_capacity(nx * nz),
            far: Vec::with_capacity(nx),
            jump_rate,
            kappa,
        };
        for row in rows {
            let (d, v, far, pos, neg) = row?;
            f.drift.push(d);
            f.var.push(v);
            f.far.push(far);
            f.pos.extend(pos);
            f.neg.extend(neg);
        }
        Ok(f)
    }

    fn locate(&self, x: f64) -> (usize, usize, f64) {
        if self.nx == 1 {
            return (0, 0, 0.0);
        }
        let u = (x / self.period).rem_euclid(1.0) * self.nx as f64;
        let i = (u.floor() as usize).min(self.nx - 1);
        (i, (i + 1) % self.nx, u - i as f64)
    }

    fn lerp(v: &[f64], (i, i1, f): (usize, usize, f64)) -> f64 {
        v[i] + f * (v[i1] - v[i])
    }

    pub fn small_drift(&self, x: f64) -> f64 {
        Self::lerp(&self.drift, self.locate(x))
    }

    pub fn small_variance(&self, x: f64) -> f64 {
        Self::lerp(&self.var, self.locate(x))
    }

    /// Interpolated `γ(x, z)` for `|z| > κ`.
    pub fn gamma(&self, kernel: &JumpKernel, x: f64, z: f64) -> f64 {
        match self.kind {
            FieldKind::NoJumps => 0.0,
            FieldKind::Identity => z,
            FieldKind::Rwrc => kernel.rwrc_gamma(x, z),
            FieldKind::Table => {
                let loc = self.locate(x);
                let y = z.abs();
                let s = y.ln();
                let t = (s - self.s_lo) / self.ds;
                if self.nz >= 2 && t <= (self.nz - 1) as f64 {
                    let j = (t.max(0.0).floor() as usize).min(self.nz - 2);
                    let fz = t - j as f64;
                    let tab = if z > 0.0 { &self.pos } else { &self.neg };
                    let at = |i: usize| {
                        let row = &tab[i * self.nz..(i + 1) * self.nz];
                        row[j] + fz * (row[j + 1] - row[j])
                    };
                    let (i, i1, fx) = loc;
                    let lg = at(i) + fx * (at(i1) - at(i));
                    return z.signum() * y * lg.exp().min(1.0);
                }
                // beyond the modulation horizon: X(γ) = X(z) · M / r_far(x)
                let far = Self::lerp(&self.far, loc);
                let tail = kernel.tail_table().expect("density family");
                let g = tail.inverse_fast(tail.tail(y) / far);
                z.signum() * g.min(y)
            }
        }
    }
}

/// Diffusivity `a` and drift `b` tabulated over one period with their
/// derivatives, evaluated by cubic Hermite interpolation.
#[derive(Clone, Debug)]
pub struct CoefficientTable {
    period: f64,
    n: usize,
    a: Vec<[f64; 2]>,
    b: Vec<[f64; 2]>,
}

/// Table points per unit length.
const COEFFICIENT_RESOLUTION: f64 = 1024.0;

impl CoefficientTable {
    pub fn build(sample: &EnvironmentSample) -> Result<Self> {
        use crate::environment::FieldKind;
        let period = sample.period;
        let constant = sample.a.is_constant() && sample.v.is_constant();
        let n = if constant {
            1
        } else {
            ((period * COEFFICIENT_RESOLUTION).ceil() as usize).max(64)
        };
        let h = period / n as f64;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for i in 0..n {
            let x = h * i as f64;
            let d = |f: FieldKind, k: usize| sample.eval_derivative(f, k, x);
            let (a0, a1, a2) = (d(FieldKind::A, 0)?, d(FieldKind::A, 1)?, d(FieldKind::A, 2)?);
            let (v1, v2) = (d(FieldKind::V, 1)?, d(FieldKind::V, 2)?);
            a.push([a0, a1]);
            // b = ½a' − aV'
            b.push([0.5 * a1 - a0 * v1, 0.5 * a2 - a1 * v1 - a0 * v2]);
        }
        Ok(Self { period, n, a, b })
    }

    #[inline]
    fn hermite(t: &[[f64; 2]], i: usize, i1: usize, s: f64, h: f64) -> f64 {
        let [p0, m0] = t[i];
        let [p1, m1] = t[i1];
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * p0
            + (s3 - 2.0 * s2 + s) * h * m0
            + (-2.0 * s3 + 3.0 * s2) * p1
            + (s3 - s2) * h * m1
    }

    /// `(a(x), b(x))`.
    #[inline]
    pub fn eval(&self, x: f64) -> (f64, f64) {
        if self.n == 1 {
            return (self.a[0][0], self.b[0][0]);
        }
        let u = (x / self.period).rem_euclid(1.0) * self.n as f64;
        let i = (u.floor() as usize).min(self.n - 1);
        let i1 = if i + 1 == self.n { 0 } else { i + 1 };
        let s = u - i as f64;
        let h = self.period / self.n as f64;
        (
            Self::hermite(&self.a, i, i1, s, h),
            Self::hermite(&self.b, i, i1, s, h),
        )
    }
}

/// One logged jump.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct JumpEvent {
    /// Index of the step during which the jump occurred.
    pub step: usize,
    /// Time at which the displacement is applied (end of the step).
    pub time: f64,
    pub z: f64,
    pub gamma: f64,
}

/// One simulated trajectory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PathRecord {
    pub index: usize,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    pub jumps: Vec<JumpEvent>,
    /// Continuous part of each step's increment (drift and Gaussian terms).
    pub continuous: Vec<f64>,
    /// SHA-256 of the standard normal draws, little-endian.
    pub brownian_digest: String,
    pub config_hash: String,
}

impl PathRecord {
    /// Rebuilds the positions from the start point, the continuous increments
    /// and the jump log.
    pub fn replay(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.positions.len());
        let mut x = self.positions[0];
        out.push(x);
        let mut j = 0;
        for (n, c) in self.continuous.iter().enumerate() {
            x += c;
            while j < self.jumps.len() && self.jumps[j].step == n {
                x += self.jumps[j].gamma;
                j += 1;
            }
            out.push(x);
        }
        out
    }
}

/// Positions of all paths at the observation times.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Ensemble {
    pub x0: f64,
    pub times: Vec<f64>,
    /// `positions[k][p]`: path `p` at `times[k]`.
    pub positions: Vec<Vec<f64>>,
}

/// Per-time aggregates of an ensemble.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    /// Mean squared displacement from the start point.
    pub msd: Vec<f64>,
    /// Standard error of the mean displacement.
    pub mean_stderr: Vec<f64>,
    pub count: usize,
}

impl Ensemble {
    /// Displacements `X_t − x₀` at observation index `k`.
    pub fn increments(&self, k: usize) -> Vec<f64> {
        self.positions[k].iter().map(|x| x - self.x0).collect()
    }

    pub fn stats(&self) -> EnsembleStats {
        let n = self.positions.first().map_or(0, |p| p.len());
        let mut s = EnsembleStats {
            times: self.times.clone(),
            mean: vec![],
            variance: vec![],
            msd: vec![],
            mean_stderr: vec![],
            count: n,
        };
        for k in 0..self.times.len() {
            let inc = self.increments(k);
            let m = crate::stats::mean(&inc);
            let v = crate::stats::variance(&inc);
            let sq: Vec<f64> = inc.iter().map(|d| d * d).collect();
            s.mean.push(m);
            s.variance.push(v);
            s.msd.push(pairwise_sum(&sq) / n as f64);
            s.mean_stderr.push((v / n as f64).sqrt());
        }
        s
    }
}

/// Time average along one path, with a batch-means error bar.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TimeAverage {
    pub value: f64,
    pub stderr: f64,
    pub horizon: f64,
    /// Running estimates at the end of each batch.
    pub running: Vec<f64>,
}

/// Simulation driver bound to one kernel and configuration.
pub struct Simulator<'a> {
    pub kernel: &'a JumpKernel,
    pub config: SimConfig,
    pub field: JumpField,
    pub coefficients: CoefficientTable,
    pub scheme: SmallJumpScheme,
    poisson: Option<Poisson<f64>>,
    config_hash: String,
}

impl<'a> Simulator<'a> {
    pub fn new(kernel: &'a JumpKernel, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let field = JumpField::build(kernel, config.kappa, config.points_per_unit)?;
        Self::with_field(kernel, config, field)
    }

    /// Reuses a previously built jump field (same kernel and κ).
    pub fn with_field(kernel: &'a JumpKernel, config: SimConfig, field: JumpField) -> Result<Self> {
        config.validate()?;
        if field.kappa != config.kappa {
            return Err(Error::InvalidParameter(
                "jump field was built for a different kappa".into(),
            ));
        }
        let scheme = config.scheme.unwrap_or(match kernel.family.index() {
            Some(a) if a < 1.0 => SmallJumpScheme::DriftCompensation,
            _ => SmallJumpScheme::GaussianMomentMatch,
        });
        let mean = field.jump_rate * config.dt;
        let poisson = if mean > 0.0 {
            Some(Poisson::new(mean).map_err(|e| Error::InvalidParameter(e.to_string()))?)
        } else {
            None
        };
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&config)?);
        h.update(serde_json::to_vec(&kernel.family)?);
        h.update(serde_json::to_vec(&kernel.sample.model)?);
        h.update(kernel.sample.seed.to_le_bytes());
        let config_hash = hex::encode(h.finalize());
        Ok(Self {
            coefficients: CoefficientTable::build(&kernel.sample)?,
            kernel,
            config,
            field,
            scheme,
            poisson,
            config_hash,
        })
    }

    pub fn sample(&self) -> &EnvironmentSample {
        &self.kernel.sample
    }

    fn rng(&self, index: usize) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.config.seed);
        r.set_stream(index as u64);
        r
    }

    /// One Euler step from `x`; returns the new position, the continuous
    /// increment and the normal draw. Jumps are reported through `on_jump`.
    #[inline]
    fn step<F: FnMut(f64, f64)>(&self, rng: &mut ChaCha8Rng, x: f64, mut on_jump: F) -> (f64, f64, f64) {
        let dt = self.config.dt;
        let (a, mut drift) = self.coefficients.eval(x);
        let mut var = a.max(0.0);
        if self.field.kind == FieldKind::Table || self.field.kind == FieldKind::Identity {
            drift += self.field.small_drift(x);
            if self.scheme == SmallJumpScheme::GaussianMomentMatch {
                var += self.field.small_variance(x);
            }
        }
        let xi: f64 = StandardNormal.sample(rng);
        let cont = drift * dt + (var * dt).sqrt() * xi;
        let mut out = x + cont;
        if let Some(p) = &self.poisson {
            let n = p.sample(rng) as usize;
            for _ in 0..n {
                let z = self.kernel.sample_large_z(rng, self.config.kappa);
                let g = self.field.gamma(self.kernel, x, z);
                on_jump(z, g);
                out += g;
            }
        }
        (out, cont, xi)
    }

    fn check_envelope(&self, x: f64, n: usize) -> Result<()> {
        if !(x.abs() <= self.config.envelope) {
            return Err(Error::BlowUp {
                envelope: self.config.envelope,
                time: (n + 1) as f64 * self.config.dt,
            });
        }
        Ok(())
    }

    /// Full trajectory with jump log and provenance.
    pub fn simulate_path(&self, index: usize) -> Result<PathRecord> {
        let steps = self.config.steps();
        let dt = self.config.dt;
        let mut rng = self.rng(index);
        let mut rec = PathRecord {
            index,
            times: Vec::with_capacity(steps + 1),
            positions: Vec::with_capacity(steps + 1),
            jumps: Vec::new(),
            continuous: Vec::with_capacity(steps),
            brownian_digest: String::new(),
            config_hash: self.config_hash.clone(),
        };
        let mut hasher = Sha256::new();
        let mut x = self.config.x0;
        rec.times.push(0.0);
        rec.positions.push(x);
        for n in 0..steps {
            let t = (n + 1) as f64 * dt;
            let jumps = &mut rec.jumps;
            let (xn, cont, xi) = self.step(&mut rng, x, |z, g| {
                jumps.push(JumpEvent {
                    step: n,
                    time: t,
                    z,
                    gamma: g,
                })
            });
            hasher.update(xi.to_le_bytes());
            self.check_envelope(xn, n)?;
            x = xn;
            rec.continuous.push(cont);
            rec.times.push(t);
            rec.positions.push(x);
        }
        rec.brownian_digest = hex::encode(hasher.finalize());
        Ok(rec)
    }

    /// Positions at the observation steps of one path.
    fn observe_path(&self, index: usize, obs: &[usize]) -> Result<Vec<f64>> {
        let mut rng = self.rng(index);
        let mut x = self.config.x0;
        let mut out = Vec::with_capacity(obs.len());
        let last = obs.iter().copied().max().unwrap_or(0);
        let mut k = 0;
        let mut order: Vec<usize> = (0..obs.len()).collect();
        order.sort_by_key(|&i| obs[i]);
        let mut vals = vec![0.0; obs.len()];
        for n in 0..last {
            let (xn, _, _) = self.step(&mut rng, x, |_, _| {});
            self.check_envelope(xn, n)?;
            x = xn;
            while k < order.len() && obs[order[k]] == n + 1 {
                vals[order[k]] = x;
                k += 1;
            }
        }
        out.extend(vals);
        Ok(out)
    }

    /// Runs all paths; the result is independent of the thread count.
    pub fn ensemble(&self) -> Result<Ensemble> {
        let obs = self.config.observation_steps();
        let per_path: Vec<Result<Vec<f64>>> = (0..self.config.paths)
            .into_par_iter()
            .map(|p| self.observe_path(p, &obs))
            .collect();
        let mut positions = vec![Vec::with_capacity(self.config.paths); obs.len()];
        for r in per_path {
            let v = r?;
            for (k, x) in v.into_iter().enumerate() {
                positions[k].push(x);
            }
        }
        Ok(Ensemble {
            x0: self.config.x0,
            times: obs.iter().map(|&n| n as f64 * self.config.dt).collect(),
            positions,
        })
    }

    /// `t⁻¹ ∫_0^t f(X_r) dr` along path `index` (left-point rule).
    pub fn time_average<F: Fn(f64) -> f64>(&self, f: F, index: usize) -> Result<TimeAverage> {
        let steps = self.config.steps();
        let batches = 20.min(steps);
        let per = steps / batches;
        let mut rng = self.rng(index);
        let mut x = self.config.x0;
        let mut batch_means = Vec::with_capacity(batches);
        let mut running = Vec::with_capacity(batches);
        let mut acc = Vec::with_capacity(per);
        let mut all = Vec::with_capacity(batches);
        for n in 0..per * batches {
            acc.push(f(x));
            let (xn, _, _) = self.step(&mut rng, x, |_, _| {});
            self.check_envelope(xn, n)?;
            x = xn;
            if acc.len() == per {
                let m = pairwise_sum(&acc) / per as f64;
                batch_means.push(m);
                all.push(m);
                running.push(pairwise_sum(&all) / all.len() as f64);
                acc.clear();
            }
        }
        let value = crate::stats::mean(&batch_means);
        let stderr = (crate::stats::variance(&batch_means) / batches as f64).sqrt();
        Ok(TimeAverage {
            value,
            stderr,
            horizon: (per * batches) as f64 * self.config.dt,
            running,
        })
    }
}

/// The rescaled path `t ↦ δ X_{t/ε}` on `[0, t_max]`.
pub fn rescale_path(path: &PathRecord, eps: f64, delta: f64, t_max: f64) -> Result<PathRecord> {
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(Error::InvalidParameter("eps and delta must be positive".into()));
    }
    let available = *path.times.last().unwrap_or(&0.0);
    let needed = t_max / eps;
    if needed > available * (1.0 + 1e-12) {
        return Err(Error::InsufficientHorizon { needed, available });
    }
    let keep = path
        .times
        .iter()
        .take_while(|&&t| t <= needed * (1.0 + 1e-12))
        .count();
    Ok(PathRecord {
        index: path.index,
        times: path.times[..keep].iter().map(|t| t * eps).collect(),
        positions: path.positions[..keep].iter().map(|x| x * delta).collect(),
        jumps: path
            .jumps
            .iter()
            .filter(|j| j.step + 1 < keep)
            .map(|j| JumpEvent {
                step: j.step,
                time: j.time * eps,
                z: j.z,
                gamma: j.gamma * delta,
            })
            .collect(),
        continuous: path.continuous[..keep.saturating_sub(1)]
            .iter()
            .map(|c| c * delta)
            .collect(),
        brownian_digest: path.brownian_digest.clone(),
        config_hash: path.config_hash.clone(),
    })
}

/// Rejects a diffusive-only computation on a pure-jump kernel.
pub fn require_diffusive(kernel: &JumpKernel) -> Result<()> {
    if kernel.regime() == Regime::PureJump {
        return Err(Error::Regime(
            "this computation needs the diffusive regime (finite second moment)".into(),
        ));
    }
    Ok(())
}

/// Draw from a uniform on `(0, 1]`, exposed for samplers built on the
/// simulator's streams.
pub fn open_uniform<R: Rng>(rng: &mut R) -> f64 {
    1.0 - rng.random::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{draw_sample, EnvironmentModel};
    use crate::jump_kernel::LevyFamily;

    fn brownian(a: f64) -> JumpKernel {
        JumpKernel::new(
            draw_sample(&EnvironmentModel::constant(a, 0.0), 0).unwrap(),
            LevyFamily::None,
        )
        .unwrap()
    }

    #[test]
    fn coefficient_table_matches_direct_evaluation() {
        use crate::environment::{Family, Harmonic, Harmonics, Interval};
        let sin = |m: f64, amp: f64| Harmonics {
            mean: m,
            terms: vec![Harmonic {
                k: 1,
                cos: 0.0,
                sin: amp,
            }],
        };
        let periodic = EnvironmentModel {
            family: Family::PeriodicRandomPhase {
                period: 1.0,
                a: sin(2.0, 1.0),
                v: sin(0.0, 0.4),
                g: sin(0.0, 0.0),
                phase: None,
            },
            ..EnvironmentModel::constant(1.0, 0.0)
        };
        let lattice = EnvironmentModel {
            family: Family::LatticeIidSmoothed {
                spacing: 1.0,
                cells: 8,
                width: 0.1,
                a: Interval { lo: 1.0, hi: 2.0 },
                v: Interval { lo: -0.3, hi: 0.3 },
                g: Interval { lo: 0.0, hi: 0.0 },
            },
            ..EnvironmentModel::constant(1.0, 0.0)
        };
        for m in [periodic, lattice] {
            let s = draw_sample(&m, 4).unwrap();
            let t = CoefficientTable::build(&s).unwrap();
            for i in 0..997 {
                let x = -3.0 + 0.01237 * i as f64;
                let (a, b) = t.eval(x);
                assert!((a - s.eval_a(x)).abs() < 1e-9, "a at {x}");
                assert!((b - s.drift_b(x)).abs() < 1e-8, "b at {x}: {b} vs {}", s.drift_b(x));
            }
        }
    }

    #[test]
    fn zero_coefficients_stay_put() {
        let k = brownian(0.0);
        let sim = Simulator::new(&k, SimConfig::new(1.0, 0.01, 1, 3)).unwrap();
        let p = sim.simulate_path(0).unwrap();
        assert!(p.positions.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn replay_reproduces_path() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 0).unwrap();
        let k = JumpKernel::new(
            s,
            LevyFamily::AlphaStable {
                alpha: 1.5,
                scale: 1.5,
            },
        )
        .unwrap();
        let sim = Simulator::new(&k, SimConfig::new(5.0, 0.01, 1, 11)).unwrap();
        let p = sim.simulate_path(0).unwrap();
        assert!(!p.jumps.is_empty());
        let r = p.replay();
        for (a, b) in r.iter().zip(&p.positions) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rescale_identity_and_horizon_check() {
        let k = brownian(1.0);
        let sim = Simulator::new(&k, SimConfig::new(1.0, 0.1, 1, 1)).unwrap();
        let p = sim.simulate_path(0).unwrap();
        let q = rescale_path(&p, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(p.positions, q.positions);
        assert!(matches!(
            rescale_path(&p, 0.1, 1.0, 1.0),
            Err(Error::InsufficientHorizon { .. })
        ));
    }

    #[test]
    fn ensemble_is_deterministic() {
        let k = brownian(1.0);
        let mut c = SimConfig::new(1.0, 0.05, 64, 5);
        c.observe = vec![0.5, 1.0];
        let sim = Simulator::new(&k, c).unwrap();
        let a = sim.ensemble().unwrap();
        let b = sim.ensemble().unwrap();
        assert_eq!(a, b);
        let single = sim.simulate_path(7).unwrap();
        assert_eq!(a.positions[1][7], *single.positions.last().unwrap());
        assert_eq!(a.positions[0][7], single.positions[10]);
    }

    #[test]
    fn time_average_of_one_is_one() {
        let k = brownian(1.0);
        let sim = Simulator::new(&k, SimConfig::new(10.0, 0.01, 1, 2)).unwrap();
        let t = sim.time_average(|_| 1.0, 0).unwrap();
        assert_eq!(t.value, 1.0);
    }

    #[test]
    fn blow_up_is_reported() {
        let k = brownian(1.0);
        let mut c = SimConfig::new(1.0, 0.01, 1, 2);
        c.envelope = 1e-3;
        let sim = Simulator::new(&k, c).unwrap();
        assert!(matches!(sim.simulate_path(0), Err(Error::BlowUp { .. })));
    }
}
