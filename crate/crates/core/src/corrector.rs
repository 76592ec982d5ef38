//! Corrector problem and effective diffusivity in the diffusive regime.
//!
//! The resolvent equation
//!
//! ```text
//! λ(u, ψ)_π + ½(a Du, Dψ)_π + ½ 𝕄∫(T_z u − u)(T_z ψ − ψ) c χ(dz) = (b + h, ψ)_π
//! ```
//!
//! is discretized by Fourier–Galerkin on the period cell. For kernels
//! `c = base + amp · p(z) · ½(g(x) + g(x + z))` the `z`-integrals reduce to
//! `Ψ_ρ(ω) = ∫(1 − cos ωz) ρ(dz)` with `ρ = p χ`, so shifts of every mode are
//! integrated exactly. Two-atom kernels are summed directly.
//!
//! With `J(φ) = 𝕄[a(1 + Dφ)² e^{-2V} + ∫(z + T_zφ − φ)² c χ(dz)]` one has
//! `J(φ) = J₀ − 4 Re (f, φ)_π + 2 B(φ, φ)`, which gives both the direct
//! value `A = lim J(u_λ)` and the variational bounds.

use crate::error::{Error, Result};
use crate::jump_kernel::{JumpKernel, LevyFamily};
use crate::sde::{require_diffusive, SimConfig, Simulator};
use crate::stats::{linear_fit, linspace, pairwise_sum};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    /// Grid size; modes `|k| ≤ n/2 − 1` are kept. Must be a power of two.
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    /// Trial-space sizes (highest mode) for the variational bounds.
    #[serde(default = "default_trials")]
    pub trial_sizes: Vec<usize>,
}

fn default_n() -> usize {
    256
}

fn default_lambdas() -> Vec<f64> {
    vec![1e-2, 1e-3, 1e-4, 1e-5, 1e-6]
}

fn default_trials() -> Vec<usize> {
    vec![0, 1, 2, 4, 8, 16, 32]
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n: default_n(),
            lambdas: default_lambdas(),
            trial_sizes: default_trials(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(Error::InvalidParameter(
                "solver grid size must be a power of two >= 4".into(),
            ));
        }
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::InvalidParameter(
                "lambda schedule must be non-empty and positive".into(),
            ));
        }
        if self.lambdas.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidParameter(
                "lambda schedule must be strictly decreasing".into(),
            ));
        }
        Ok(())
    }
}

/// Galerkin matrices of the resolvent problem, independent of `λ`.
#[derive(Clone, Debug)]
pub struct DiscreteForm {
    pub n: usize,
    pub period: f64,
    /// Highest retained mode `K`; unknowns are indexed by `k + K`.
    pub kmax: usize,
    pub mass: DMatrix<C64>,
    pub diffusion: DMatrix<C64>,
    pub jump: DMatrix<C64>,
    pub rhs_diffusion: DVector<C64>,
    pub rhs_jump: DVector<C64>,
    /// `𝕄[a e^{-2V}]` and `𝕄∫ z² c χ(dz)`.
    pub j0_diffusion: f64,
    pub j0_jump: f64,
    /// Fine periodic grid and `a e^{-2V}` on it.
    grid: Vec<f64>,
    aw: Vec<f64>,
}

const OVERSAMPLE: usize = 16;

struct Spectra {
    nf: usize,
    fft: std::sync::Arc<dyn rustfft::Fft<f64>>,
}

impl Spectra {
    fn new(nf: usize) -> Self {
        Self {
            nf,
            fft: FftPlanner::new().plan_fft_forward(nf),
        }
    }

    /// `𝕄[f e^{-iκ_m x}]` for all `m` (negative `m` at `nf + m`). Constant
    /// inputs give exact zeros off the mean.
    fn coefficients(&self, values: &[f64], constant: bool) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.nf];
        if constant {
            out[0] = C64::new(values[0], 0.0);
            return out;
        }
        for (o, v) in out.iter_mut().zip(values) {
            *o = C64::new(*v, 0.0);
        }
        self.fft.process(&mut out);
        let s = 1.0 / self.nf as f64;
        for o in out.iter_mut() {
            *o *= s;
        }
        out
    }

    fn at(&self, c: &[C64], m: i64) -> C64 {
        c[m.rem_euclid(self.nf as i64) as usize]
    }
}

fn wave(kappa: f64, z: f64) -> C64 {
    C64::from_polar(1.0, kappa * z)
}

/// Assembles the Galerkin form for `kernel` with `n` grid points.
pub fn assemble_form(kernel: &JumpKernel, n: usize) -> Result<DiscreteForm> {
    require_diffusive(kernel)?;
    if !n.is_power_of_two() || n < 4 {
        return Err(Error::InvalidParameter(
            "solver grid size must be a power of two >= 4".into(),
        ));
    }
    let s = &kernel.sample;
    let l = s.period;
    let kmax = n / 2 - 1;
    let dim = 2 * kmax + 1;
    let nf = (OVERSAMPLE * n).max(1024);
    let sp = Spectra::new(nf);
    let grid: Vec<f64> = (0..nf).map(|j| l * j as f64 / nf as f64).collect();
    let kappa = |k: i64| 2.0 * PI * k as f64 / l;
    let homogeneous_aw = s.a.is_constant() && s.v.is_constant();
    let w: Vec<f64> = grid.iter().map(|&x| s.pi_weight(x)).collect();
    let aw: Vec<f64> = grid.iter().zip(&w).map(|(&x, w)| s.eval_a(x) * w).collect();
    let w_hat = sp.coefficients(&w, s.v.is_constant());
    let aw_hat = sp.coefficients(&aw, homogeneous_aw);

    let mut mass = DMatrix::<C64>::zeros(dim, dim);
    let mut diffusion = DMatrix::<C64>::zeros(dim, dim);
    let mut jump = DMatrix::<C64>::zeros(dim, dim);
    let mut rhs_diffusion = DVector::<C64>::zeros(dim);
    let mut rhs_jump = DVector::<C64>::zeros(dim);
    let idx = |k: i64| (k + kmax as i64) as usize;
    let modes: Vec<i64> = (-(kmax as i64)..=kmax as i64).collect();

    for &lm in &modes {
        for &k in &modes {
            if k > lm {
                continue;
            }
            let m = lm - k;
            mass[(idx(lm), idx(k))] = sp.at(&w_hat, m);
            diffusion[(idx(lm), idx(k))] = 0.5 * kappa(k) * kappa(lm) * sp.at(&aw_hat, m);
        }
        rhs_diffusion[idx(lm)] = if lm == 0 {
            C64::new(0.0, 0.0)
        } else {
            0.5 * C64::i() * kappa(lm) * sp.at(&aw_hat, lm)
        };
    }

    let mut j0_jump = 0.0;
    if kernel.is_rwrc() {
        let atoms = [1.0f64, -1.0];
        let constant = s.g.is_constant();
        for &z in &atoms {
            let cz: Vec<f64> = grid.iter().map(|&x| kernel.c(x, z)).collect();
            let c_hat = sp.coefficients(&cz, constant);
            j0_jump += z * z * c_hat[0].re;
            for &lm in &modes {
                let el = wave(-kappa(lm), z) - 1.0;
                for &k in &modes {
                    if k > lm {
                        continue;
                    }
                    let ek = wave(kappa(k), z) - 1.0;
                    jump[(idx(lm), idx(k))] += 0.5 * ek * el * sp.at(&c_hat, lm - k);
                }
                rhs_jump[idx(lm)] -= 0.5 * z * el * sp.at(&c_hat, lm);
            }
        }
    } else if kernel.has_jumps() {
        let kf = &s.model.kernel;
        let family = &kernel.family;
        let extra = match kf.profile {
            crate::environment::Profile::Flat => 0.0,
            crate::environment::Profile::Exponential { length } => 1.0 / length,
        };
        let modulated = kf.amplitude != 0.0;
        let g: Vec<f64> = grid.iter().map(|&x| s.eval_g(x)).collect();
        let g_hat = sp.coefficients(&g, s.g.is_constant());
        let psi_chi: Vec<f64> = (0..=kmax as i64)
            .map(|k| family.psi(kappa(k), 0.0).map(|p| p.0))
            .collect::<Result<_>>()?;
        let psi_rho: Vec<(f64, f64)> = if modulated {
            (0..=2 * kmax as i64)
                .map(|k| family.psi(kappa(k), extra))
                .collect::<Result<_>>()?
        } else {
            vec![(0.0, 0.0); 2 * kmax + 1]
        };
        let pr = |k: i64| psi_rho[k.unsigned_abs() as usize].0;
        j0_jump += kf.base * family.second_moment_damped(0.0)?;
        if modulated {
            j0_jump += kf.amplitude * g_hat[0].re * family.second_moment_damped(extra)?;
        }
        for &lm in &modes {
            for &k in &modes {
                if k > lm {
                    continue;
                }
                let m = lm - k;
                let mut v = C64::new(0.0, 0.0);
                if m == 0 {
                    v += kf.base * psi_chi[k.unsigned_abs() as usize];
                }
                if modulated {
                    v += 0.5 * kf.amplitude * sp.at(&g_hat, m) * (pr(k) + pr(lm) - pr(m));
                }
                jump[(idx(lm), idx(k))] = v;
            }
            if modulated && lm != 0 {
                let dpsi = lm.signum() as f64 * psi_rho[lm.unsigned_abs() as usize].1;
                rhs_jump[idx(lm)] = 0.5 * C64::i() * kf.amplitude * sp.at(&g_hat, lm) * dpsi;
            }
        }
    }

    for mtx in [&mut mass, &mut diffusion, &mut jump] {
        for i in 0..dim {
            mtx[(i, i)] = C64::new(mtx[(i, i)].re, 0.0);
            for j in 0..i {
                mtx[(j, i)] = mtx[(i, j)].conj();
            }
        }
    }

    Ok(DiscreteForm {
        n,
        period: l,
        kmax,
        mass,
        diffusion,
        jump,
        rhs_diffusion,
        rhs_jump,
        j0_diffusion: aw_hat[0].re,
        j0_jump,
        grid,
        aw,
    })
}

impl DiscreteForm {
    pub fn stiffness(&self) -> DMatrix<C64> {
        &self.diffusion + &self.jump
    }

    pub fn rhs(&self) -> DVector<C64> {
        &self.rhs_diffusion + &self.rhs_jump
    }

    pub fn j0(&self) -> f64 {
        self.j0_diffusion + self.j0_jump
    }

    fn kappa(&self, k: i64) -> f64 {
        2.0 * PI * k as f64 / self.period
    }

    /// `J(φ)` for the coefficient vector `u`.
    pub fn functional(&self, u: &DVector<C64>) -> f64 {
        let b = self.stiffness();
        self.j0() - 4.0 * self.rhs().dotc(u).re + 2.0 * quad_form(&b, u)
    }

    /// Values of `Σ c_k e^{iκ_k x}` on the fine grid.
    fn synthesize(&self, coeffs: &[(i64, C64)]) -> Vec<f64> {
        let nf = self.grid.len();
        let mut buf = vec![C64::new(0.0, 0.0); nf];
        for &(k, c) in coeffs {
            buf[k.rem_euclid(nf as i64) as usize] += c;
        }
        FftPlanner::new().plan_fft_inverse(nf).process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    fn coeff_pairs(&self, u: &DVector<C64>, derivative: bool) -> Vec<(i64, C64)> {
        (0..u.len())
            .map(|i| {
                let k = i as i64 - self.kmax as i64;
                let c = if derivative {
                    C64::i() * self.kappa(k) * u[i]
                } else {
                    u[i]
                };
                (k, c)
            })
            .collect()
    }
}

fn quad_form(m: &DMatrix<C64>, u: &DVector<C64>) -> f64 {
    u.dotc(&(m * u)).re
}

/// One solve of the resolvent problem.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CorrectorSolution {
    pub lambda: f64,
    /// Fourier coefficients `û_k`, `k = −K..K`, as `(re, im)`.
    pub coefficients: Vec<(f64, f64)>,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    /// `ξ = Du_λ` on the grid.
    pub xi: Vec<f64>,
    /// `λ|u_λ|²_π`.
    pub mass_energy: f64,
    /// `B^d(u_λ, u_λ)` and `B^j(u_λ, u_λ)`.
    pub diffusion_energy: f64,
    pub jump_energy: f64,
    /// `|u_λ|_π`.
    pub norm: f64,
    /// `𝕄[a(1 + ξ)² e^{-2V}]` by grid quadrature.
    pub a_diffusion: f64,
    /// `𝕄∫(z + ζ)² c χ(dz)`.
    pub a_jump: f64,
    pub a_estimate: f64,
    /// `J(u_λ)` from the matrix form; agrees with `a_estimate` up to
    /// grid quadrature error.
    pub a_form: f64,
    pub backward_error: f64,
    /// Relative imbalance of `λ|u|²_π + B(u, u) = (f, u)_π`.
    pub energy_residual: f64,
}

/// Solves `(λ M + B) u = f` by Hermitian Cholesky.
pub fn solve_resolvent(form: &DiscreteForm, lambda: f64) -> Result<CorrectorSolution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter("lambda must be positive".into()));
    }
    let b = form.stiffness();
    let sys = &form.mass * C64::new(lambda, 0.0) + &b;
    let f = form.rhs();
    let chol = sys.clone().cholesky().ok_or_else(|| {
        Error::Assembly(format!(
            "resolvent matrix at lambda = {lambda:e} is not positive definite"
        ))
    })?;
    let u = chol.solve(&f);
    let r = &sys * &u - &f;
    let backward_error = if f.norm() == 0.0 {
        0.0
    } else {
        r.norm() / (sys.norm() * u.norm() + f.norm())
    };
    if !(backward_error < 1e-12) {
        return Err(Error::SolverBreakdown(format!(
            "backward error {backward_error:e} at lambda = {lambda:e}; try a larger lambda"
        )));
    }
    let mass_energy = lambda * quad_form(&form.mass, &u);
    let diffusion_energy = quad_form(&form.diffusion, &u);
    let jump_energy = quad_form(&form.jump, &u);
    let fu = f.dotc(&u).re;
    let lhs = mass_energy + diffusion_energy + jump_energy;
    let energy_residual = if fu == 0.0 && lhs == 0.0 {
        0.0
    } else {
        (lhs - fu).abs() / lhs.abs().max(fu.abs())
    };

    let uu = form.synthesize(&form.coeff_pairs(&u, false));
    let xi = form.synthesize(&form.coeff_pairs(&u, true));
    let terms: Vec<f64> = form
        .aw
        .iter()
        .zip(&xi)
        .map(|(aw, x)| aw * (1.0 + x) * (1.0 + x))
        .collect();
    let a_diffusion = pairwise_sum(&terms) / terms.len() as f64;
    let a_jump =
        form.j0_jump - 4.0 * form.rhs_jump.dotc(&u).re + 2.0 * quad_form(&form.jump, &u);
    Ok(CorrectorSolution {
        lambda,
        coefficients: u.iter().map(|c| (c.re, c.im)).collect(),
        grid: form.grid.clone(),
        u: uu,
        xi,
        mass_energy,
        diffusion_energy,
        jump_energy,
        norm: quad_form(&form.mass, &u).max(0.0).sqrt(),
        a_diffusion,
        a_jump,
        a_estimate: a_diffusion + a_jump,
        a_form: form.functional(&u),
        backward_error,
        energy_residual,
    })
}

/// Direct diffusivity over a λ schedule with linear Richardson extrapolation.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DirectEstimate {
    pub lambdas: Vec<f64>,
    pub a_lambda: Vec<f64>,
    pub value: f64,
    pub error: f64,
    /// `λ|u|²_π` decreasing and `B(u, u)` non-decreasing along the schedule.
    pub schedule_monotone: bool,
    /// `𝕄[a e^{-2V}]⁻¹`-free lower bound `(𝕄[(a e^{-2V})⁻¹])⁻¹ > 0`.
    pub lower_bound: f64,
}

pub fn effective_diffusivity_direct(solutions: &[CorrectorSolution], form: &DiscreteForm) -> Result<DirectEstimate> {
    if solutions.is_empty() {
        return Err(Error::InvalidParameter("empty lambda schedule".into()));
    }
    let lambdas: Vec<f64> = solutions.iter().map(|s| s.lambda).collect();
    let a: Vec<f64> = solutions.iter().map(|s| s.a_estimate).collect();
    let rich = |i: usize| {
        let (l0, l1) = (lambdas[i - 1], lambdas[i]);
        (l0 * a[i] - l1 * a[i - 1]) / (l0 - l1)
    };
    let n = a.len();
    let (value, error) = match n {
        1 => (a[0], f64::NAN),
        2 => {
            let r = rich(1);
            (r, (r - a[1]).abs())
        }
        _ => {
            let r = rich(n - 1);
            (r, (r - rich(n - 2)).abs())
        }
    };
    if n >= 2 && error > 1e-2 * value.abs() {
        return Err(Error::NonConvergence(format!(
            "A(lambda) not settling: extrapolations differ by {error:e}"
        )));
    }
    let mut schedule_monotone = true;
    for w in solutions.windows(2) {
        let e0 = w[0].diffusion_energy + w[0].jump_energy;
        let e1 = w[1].diffusion_energy + w[1].jump_energy;
        if w[1].mass_energy > w[0].mass_energy * (1.0 + 1e-9) + 1e-300
            || e1 < e0 * (1.0 - 1e-9)
        {
            schedule_monotone = false;
        }
    }
    if !schedule_monotone {
        log::warn!("corrector energies are not monotone along the lambda schedule");
    }
    let inv: Vec<f64> = form.aw.iter().map(|v| 1.0 / v).collect();
    let lower_bound = if form.aw.iter().all(|v| *v > 0.0) {
        1.0 / (pairwise_sum(&inv) / inv.len() as f64)
    } else {
        0.0
    };
    Ok(DirectEstimate {
        lambdas,
        a_lambda: a,
        value,
        error,
        schedule_monotone,
        lower_bound,
    })
}

/// Variational bounds `J_k = min_{φ ∈ span(e_{±1..±k})} J(φ)`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct VariationalBounds {
    pub sizes: Vec<usize>,
    pub bounds: Vec<f64>,
    /// Bounds non-increasing in the trial size.
    pub nested: bool,
}

pub fn effective_diffusivity_variational(form: &DiscreteForm, sizes: &[usize]) -> Result<VariationalBounds> {
    let b = form.stiffness();
    let f = form.rhs();
    let j0 = form.j0();
    let mut bounds = Vec::with_capacity(sizes.len());
    for &kt in sizes {
        if kt > form.kmax {
            return Err(Error::InvalidParameter(format!(
                "trial size {kt} exceeds the {} retained modes",
                form.kmax
            )));
        }
        if kt == 0 {
            bounds.push(j0);
            continue;
        }
        let idx: Vec<usize> = (1..=kt as i64)
            .flat_map(|k| [-k, k])
            .map(|k| (k + form.kmax as i64) as usize)
            .collect();
        let d = idx.len();
        let bs = DMatrix::from_fn(d, d, |i, j| b[(idx[i], idx[j])]);
        let fs = DVector::from_fn(d, |i, _| f[idx[i]]);
        let chol = bs.cholesky().ok_or_else(|| {
            Error::Assembly(format!("trial stiffness with {kt} modes is not positive definite"))
        })?;
        let x = chol.solve(&fs);
        bounds.push(j0 - 2.0 * fs.dotc(&x).re);
    }
    let nested = bounds.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs());
    Ok(VariationalBounds {
        sizes: sizes.to_vec(),
        bounds,
        nested,
    })
}

/// Everything the corrector route produces for one kernel.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DiffusivityReport {
    pub direct: DirectEstimate,
    pub variational: VariationalBounds,
    /// Final solution (smallest λ) for export.
    pub solution: CorrectorSolution,
}

pub fn corrector_diffusivity(kernel: &JumpKernel, cfg: &SolverConfig) -> Result<DiffusivityReport> {
    cfg.validate()?;
    let form = assemble_form(kernel, cfg.n)?;
    let solutions: Vec<CorrectorSolution> = cfg
        .lambdas
        .iter()
        .map(|&l| solve_resolvent(&form, l))
        .collect::<Result<_>>()?;
    let direct = effective_diffusivity_direct(&solutions, &form)?;
    let sizes: Vec<usize> = cfg.trial_sizes.iter().map(|&k| k.min(form.kmax)).collect();
    let variational = effective_diffusivity_variational(&form, &sizes)?;
    Ok(DiffusivityReport {
        direct,
        variational,
        solution: solutions.into_iter().last().expect("non-empty schedule"),
    })
}

/// Conductance-walk diffusivity by the variational and direct routes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RwrcDiffusivity {
    /// Functional at `φ = 0`.
    pub trivial_bound: f64,
    pub trial_size: usize,
    pub variational: f64,
    pub direct: f64,
    pub direct_error: f64,
}

pub fn rwrc_diffusivity(kernel: &JumpKernel, cfg: &SolverConfig, trial_size: usize) -> Result<RwrcDiffusivity> {
    if !kernel.is_rwrc() {
        return Err(Error::InvalidParameter("kernel is not a conductance walk".into()));
    }
    let r = corrector_diffusivity(
        kernel,
        &SolverConfig {
            trial_sizes: vec![0, trial_size],
            ..cfg.clone()
        },
    )?;
    Ok(RwrcDiffusivity {
        trivial_bound: r.variational.bounds[0],
        trial_size: r.variational.sizes[1],
        variational: r.variational.bounds[1],
        direct: r.direct.value,
        direct_error: r.direct.error,
    })
}

/// Monte Carlo diffusivity from the slope of the mean squared displacement.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct McDiffusivity {
    pub value: f64,
    /// Standard error from batch means over the paths.
    pub stderr: f64,
    pub times: Vec<f64>,
    pub msd: Vec<f64>,
    /// RMS residual of the linear fit, relative to the MSD at the horizon.
    pub fit_residual: f64,
    pub nonlinear: bool,
}

const MC_BATCHES: usize = 20;
const MC_FIT_POINTS: usize = 11;
const NONLINEAR_TOL: f64 = 0.05;

pub fn effective_diffusivity_mc(kernel: &JumpKernel, cfg: &SimConfig) -> Result<McDiffusivity> {
    require_diffusive(kernel)?;
    let mut c = cfg.clone();
    c.observe = linspace(0.5 * cfg.horizon, cfg.horizon, MC_FIT_POINTS);
    let sim = Simulator::new(kernel, c)?;
    let ens = sim.ensemble()?;
    let msd_of = |lo: usize, hi: usize| -> Vec<f64> {
        (0..ens.times.len())
            .map(|k| {
                let sq: Vec<f64> = ens.positions[k][lo..hi]
                    .iter()
                    .map(|x| (x - ens.x0).powi(2))
                    .collect();
                pairwise_sum(&sq) / sq.len() as f64
            })
            .collect()
    };
    let n = ens.positions[0].len();
    let msd = msd_of(0, n);
    let (_, slope, rms) = linear_fit(&ens.times, &msd);
    let batches = MC_BATCHES.min(n);
    let per = n / batches;
    let slopes: Vec<f64> = (0..batches)
        .map(|b| linear_fit(&ens.times, &msd_of(b * per, (b + 1) * per)).1)
        .collect();
    let stderr = (crate::stats::variance(&slopes) / batches as f64).sqrt();
    let fit_residual = rms / msd.last().copied().unwrap_or(1.0).abs().max(1e-300);
    let nonlinear = fit_residual > NONLINEAR_TOL;
    if nonlinear {
        log::warn!("mean squared displacement is not linear on [T/2, T]: relative rms {fit_residual:e}");
    }
    Ok(McDiffusivity {
        value: slope,
        stderr,
        times: ens.times,
        msd,
        fit_residual,
        nonlinear,
    })
}

/// `a + ∫ z² c χ(dz)`, the diffusivity of a spatially constant medium.
pub fn constant_medium_diffusivity(a: f64, c: f64, family: &LevyFamily) -> Result<f64> {
    Ok(a + c * family.second_moment_damped(0.0)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{draw_sample, EnvironmentModel, Family, Harmonic, Harmonics};

    fn sinusoidal_a() -> JumpKernel {
        let model = EnvironmentModel {
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
                v: Harmonics {
                    mean: 0.0,
                    terms: vec![],
                },
                g: Harmonics {
                    mean: 0.0,
                    terms: vec![],
                },
                phase: Some(0.0),
            },
            ..EnvironmentModel::constant(1.0, 0.0)
        };
        JumpKernel::new(draw_sample(&model, 0).unwrap(), LevyFamily::None).unwrap()
    }

    #[test]
    fn constant_medium_has_zero_corrector() {
        let s = draw_sample(&EnvironmentModel::constant(1.5, 0.3), 0).unwrap();
        let fam = LevyFamily::Tempered {
            alpha: 1.2,
            scale: 1.0,
            rate: 2.0,
        };
        let k = JumpKernel::new(s, fam.clone()).unwrap();
        let form = assemble_form(&k, 64).unwrap();
        let sol = solve_resolvent(&form, 1e-6).unwrap();
        assert!(sol.norm < 1e-12);
        let exact = constant_medium_diffusivity(1.5, 1.0, &fam).unwrap();
        assert!((sol.a_estimate - exact).abs() < 1e-8 * exact);
    }

    #[test]
    fn constant_medium_diffusion_spectrum() {
        let s = draw_sample(&EnvironmentModel::constant(3.0, 0.0), 0).unwrap();
        let k = JumpKernel::new(s, LevyFamily::None).unwrap();
        let form = assemble_form(&k, 16).unwrap();
        for i in 0..form.diffusion.nrows() {
            let kk = i as f64 - form.kmax as f64;
            let expect = 0.5 * 3.0 * (2.0 * PI * kk).powi(2);
            assert!((form.diffusion[(i, i)].re - expect).abs() < 1e-9 * (1.0 + expect));
        }
        assert_eq!(form.diffusion[(form.kmax, form.kmax)].norm(), 0.0);
    }

    #[test]
    fn sinusoidal_cell_problem() {
        let k = sinusoidal_a();
        let form = assemble_form(&k, 1024).unwrap();
        let sol = solve_resolvent(&form, 1e-6).unwrap();
        let inv_mean = 1.0 / 3f64.sqrt(); // 𝕄[1/a]
        let c0 = 1.0 / inv_mean;
        let mut err: f64 = 0.0;
        for (x, xi) in sol.grid.iter().zip(&sol.xi) {
            let a = 2.0 + (2.0 * PI * x).sin();
            err = err.max((xi - (c0 / a - 1.0)).abs());
        }
        assert!(err < 1e-3, "{err}");
        assert!(sol.energy_residual < 1e-8);
        assert!((sol.a_estimate - 3f64.sqrt()).abs() < 1e-3 * 3f64.sqrt());
    }

    #[test]
    fn sinusoidal_direct_and_variational_agree() {
        let k = sinusoidal_a();
        let r = corrector_diffusivity(&k, &SolverConfig::default()).unwrap();
        let exact = 3f64.sqrt();
        assert!((r.direct.value - exact).abs() < 1e-6, "{:?}", r.direct);
        let v = &r.variational;
        assert!(v.nested);
        assert!((v.bounds.last().unwrap() - exact).abs() < 1e-4);
        assert!((v.bounds[0] - 2.0).abs() < 1e-12);
        for b in &v.bounds {
            assert!(*b >= r.direct.value - 1e-6);
        }
        assert!(r.direct.schedule_monotone);
    }

    fn rwrc_kernel(amp: f64) -> JumpKernel {
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
                    mean: 3.0,
                    terms: vec![Harmonic {
                        k: 1,
                        cos: 0.0,
                        sin: amp,
                    }],
                },
                phase: Some(0.0),
            },
            ..EnvironmentModel::constant(1.0, 0.0)
        };
        JumpKernel::rwrc(&draw_sample(&model, 0).unwrap()).unwrap()
    }

    #[test]
    fn rwrc_constant_conductance() {
        let k = rwrc_kernel(0.0);
        let r = rwrc_diffusivity(&k, &SolverConfig::default(), 16).unwrap();
        assert!((r.trivial_bound - 2.0).abs() < 1e-12);
        assert!((r.direct - 2.0).abs() < 1e-12);
    }

    #[test]
    fn rwrc_periodic_conductance_oracle() {
        let k = rwrc_kernel(2.0);
        let r = rwrc_diffusivity(&k, &SolverConfig::default(), 32).unwrap();
        // S = 6 − 4 sin(2πx): 𝕄[S] = 6, 𝕄[1/S] = 1/√20
        let exact = 20f64.sqrt() / 6.0 + 1.0;
        assert!((r.direct - exact).abs() < 1e-6, "{r:?}");
        assert!((r.variational - exact).abs() < 1e-6);
        assert!(r.trivial_bound >= r.variational && r.variational >= r.direct - 1e-9);
    }

    #[test]
    fn pure_jump_kernel_is_rejected() {
        let s = draw_sample(&EnvironmentModel::constant(1.0, 0.0), 0).unwrap();
        let k = JumpKernel::new(s, LevyFamily::AlphaStable { alpha: 1.5, scale: 1.0 }).unwrap();
        assert!(matches!(assemble_form(&k, 16), Err(Error::Regime(_))));
    }
}
