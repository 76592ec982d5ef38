//! Configuration-driven experiments: one TOML file describes a run fully; every
//! run writes its resolved configuration, result files and a manifest with
//! content hashes into its output directory.

use crate::corrector::{
    corrector_diffusivity, effective_diffusivity_mc, rwrc_diffusivity, SolverConfig,
};
use crate::environment::{draw_sample, EnvironmentModel, EnvironmentSample};
use crate::error::{Error, Result};
use crate::jump_kernel::{JumpKernel, LevyFamily, Regime};
use crate::scaling::{
    convergence_test, delta_rate, rescaled_increments, small_jump_uniformity,
    verify_condition_cr, ScalingSpec,
};
use crate::sde::{SimConfig, Simulator};
use crate::stats::{ks_sorted, linspace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub environment: EnvironmentConfig,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub regime: Option<RegimeConfig>,
    #[serde(default)]
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub gamma: GammaConfig,
    pub output: OutputConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Grid points per cell for the tabulated fields.
    #[serde(default = "default_table_points")]
    pub table_points: usize,
    pub model: EnvironmentModel,
}

fn default_table_points() -> usize {
    256
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Construction {
    /// Rates `e^{2V} c χ` realized by the generic coefficient construction.
    #[default]
    Generic,
    /// Random walk among the conductances given by the `g` channel.
    Rwrc,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    #[serde(default)]
    pub construction: Construction,
    #[serde(default)]
    pub levy: Option<LevyFamily>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RegimeConfig {
    /// Expected regime; a mismatch with the kernel is a configuration error.
    #[serde(default)]
    pub expect: Option<Regime>,
    pub eps: Vec<f64>,
    /// Explicit `δ(ε)` values overriding the rate function.
    #[serde(default)]
    pub delta: Option<Vec<f64>>,
    /// Rescaled time at which increments are compared.
    #[serde(default = "one")]
    pub time: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_u_points")]
    pub u_points: usize,
    /// Intervals `[a, b]` for the jump-measure diagnostic.
    #[serde(default = "default_intervals")]
    pub intervals: Vec<(f64, f64)>,
    /// Cut-offs `α₀` for the small-jump uniformity diagnostic.
    #[serde(default = "default_alpha0")]
    pub alpha0: Vec<f64>,
}

fn one() -> f64 {
    1.0
}

fn default_u_max() -> f64 {
    5.0
}

fn default_u_points() -> usize {
    101
}

fn default_intervals() -> Vec<(f64, f64)> {
    vec![(0.5, 2.0), (-2.0, -0.5)]
}

fn default_alpha0() -> Vec<f64> {
    vec![1.0, 0.1, 0.01, 0.001]
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    #[serde(default = "default_x_points")]
    pub x_points: usize,
    #[serde(default = "default_z_min")]
    pub z_min: f64,
    #[serde(default = "default_z_max")]
    pub z_max: f64,
    /// Points per side on the logarithmic `z` grid.
    #[serde(default = "default_z_points")]
    pub z_points: usize,
    #[serde(default = "default_ks_samples")]
    pub ks_samples: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_x_points() -> usize {
    16
}

fn default_z_min() -> f64 {
    1e-3
}

fn default_z_max() -> f64 {
    1e3
}

fn default_z_points() -> usize {
    61
}

fn default_ks_samples() -> usize {
    100_000
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            x_points: default_x_points(),
            z_min: default_z_min(),
            z_max: default_z_max(),
            z_points: default_z_points(),
            ks_samples: default_ks_samples(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<String>,
    /// Number of full trajectories exported by `simulate`.
    #[serde(default = "one_usize")]
    pub paths: usize,
}

fn default_formats() -> Vec<String> {
    vec!["csv".into(), "json".into()]
}

fn one_usize() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    EnvSample,
    BuildGamma,
    Simulate,
    ScalingVerify,
    Diffusivity,
    RwrcDemo,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::EnvSample => "env-sample",
            Command::BuildGamma => "build-gamma",
            Command::Simulate => "simulate",
            Command::ScalingVerify => "scaling-verify",
            Command::Diffusivity => "diffusivity",
            Command::RwrcDemo => "rwrc-demo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Corrector,
    Variational,
    Mc,
    All,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved configuration.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    fn wants(&self, format: &str) -> bool {
        self.output.formats.iter().any(|f| f == format)
    }

    /// Cheap checks for `command`, run before any heavy computation.
    pub fn validate_for(&self, command: Command, method: Option<Method>) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        for f in &self.output.formats {
            if f != "csv" && f != "json" {
                return cfg_err(format!("output.formats: unknown format `{f}`"));
            }
        }
        self.environment
            .model
            .validate()
            .map_err(|e| Error::Config(format!("environment.model: {e}")))?;
        if self.environment.table_points == 0 {
            return cfg_err("environment.table_points must be positive".into());
        }
        if let Some(l) = &self.kernel.levy {
            l.validate()
                .map_err(|e| Error::Config(format!("kernel.levy: {e}")))?;
        }
        if self.kernel.construction == Construction::Rwrc && self.kernel.levy.is_some() {
            return cfg_err("kernel.levy must be omitted for the rwrc construction".into());
        }
        let regime = self.kernel_regime();
        if let Some(r) = &self.regime {
            if let Some(expect) = r.expect {
                if expect != regime {
                    return Err(Error::Regime(format!(
                        "regime.expect is {expect:?} but the kernel is {regime:?}"
                    )));
                }
            }
        }
        let sim = |name: &str| -> Result<&SimConfig> {
            let s = self.simulation.as_ref().ok_or_else(|| {
                Error::Config(format!("{name} needs a [simulation] block"))
            })?;
            s.validate()
                .map_err(|e| Error::Config(format!("simulation: {e}")))?;
            Ok(s)
        };
        let solver = || -> Result<()> {
            self.solver
                .clone()
                .unwrap_or_default()
                .validate()
                .map_err(|e| Error::Config(format!("solver: {e}")))
        };
        match command {
            Command::EnvSample => {}
            Command::BuildGamma => {
                let g = &self.gamma;
                if !(g.z_min > 0.0 && g.z_max > g.z_min) || g.z_points < 2 || g.x_points == 0 {
                    return cfg_err("gamma: need 0 < z_min < z_max, z_points >= 2".into());
                }
                match &self.kernel.levy {
                    Some(l) if l.has_density() && self.kernel.construction == Construction::Generic => {}
                    _ => {
                        return cfg_err(
                            "build-gamma needs a generic kernel with a Lévy density".into(),
                        )
                    }
                }
            }
            Command::Simulate => {
                sim("simulate")?;
            }
            Command::ScalingVerify => {
                let s = sim("scaling-verify")?;
                let r = self
                    .regime
                    .as_ref()
                    .ok_or_else(|| Error::Config("scaling-verify needs a [regime] block".into()))?;
                if r.eps.is_empty() || r.eps.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                    return cfg_err("regime.eps must be a non-empty list in (0, 1)".into());
                }
                if let Some(d) = &r.delta {
                    if d.len() != r.eps.len() || d.iter().any(|v| !(*v > 0.0)) {
                        return cfg_err("regime.delta must match regime.eps and be positive".into());
                    }
                }
                if !(r.time > 0.0) || r.u_points < 2 || !(r.u_max > 0.0) {
                    return cfg_err("regime: time, u_max must be positive, u_points >= 2".into());
                }
                let need = r.time / r.eps.iter().cloned().fold(f64::INFINITY, f64::min);
                if s.horizon < need * (1.0 - 1e-12) {
                    return Err(Error::Config(format!(
                        "simulation.horizon {} is shorter than time / min eps = {need}",
                        s.horizon
                    )));
                }
                if regime == Regime::Diffusive {
                    solver()?;
                }
            }
            Command::Diffusivity => {
                if regime != Regime::Diffusive {
                    return Err(Error::Regime(
                        "effective diffusivity needs the diffusive regime".into(),
                    ));
                }
                match method.unwrap_or(Method::All) {
                    Method::Mc => {
                        sim("diffusivity mc")?;
                    }
                    Method::All => {
                        sim("diffusivity all")?;
                        solver()?;
                    }
                    _ => solver()?,
                }
            }
            Command::RwrcDemo => {
                if self.kernel.construction != Construction::Rwrc {
                    return cfg_err("rwrc-demo needs kernel.construction = \"rwrc\"".into());
                }
                sim("rwrc-demo")?;
                solver()?;
            }
        }
        Ok(())
    }

    fn kernel_regime(&self) -> Regime {
        match (&self.kernel.construction, &self.kernel.levy) {
            (Construction::Rwrc, _) => Regime::Diffusive,
            (_, Some(l)) => l.regime(),
            (_, None) => Regime::Diffusive,
        }
    }

    pub fn sample(&self) -> Result<EnvironmentSample> {
        draw_sample(&self.environment.model, self.environment.seed)
    }

    pub fn kernel(&self) -> Result<JumpKernel> {
        let s = self.sample()?;
        match self.kernel.construction {
            Construction::Rwrc => JumpKernel::rwrc(&s),
            Construction::Generic => {
                JumpKernel::new(s, self.kernel.levy.clone().unwrap_or(LevyFamily::None))
            }
        }
    }
}

/// One file written by a run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct FileEntry {
    pub name: String,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Timing {
    pub operation: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub code_version: String,
    pub timings: Vec<Timing>,
    pub files: Vec<FileEntry>,
    /// Diagnostics that missed their thresholds.
    pub breaches: Vec<String>,
}

/// Collects the outputs of one run.
pub struct Run {
    dir: PathBuf,
    files: Vec<FileEntry>,
    timings: Vec<Timing>,
    breaches: Vec<String>,
    csv: bool,
    json: bool,
}

impl Run {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(&cfg.output.directory)?;
        Ok(Self {
            dir: cfg.output.directory.clone(),
            files: vec![],
            timings: vec![],
            breaches: vec![],
            csv: cfg.wants("csv"),
            json: cfg.wants("json"),
        })
    }

    fn write(&mut self, name: &str, content: &[u8]) -> Result<()> {
        std::fs::write(self.dir.join(name), content)?;
        self.files.push(FileEntry {
            name: name.to_string(),
            bytes: content.len(),
            sha256: hex::encode(Sha256::digest(content)),
        });
        Ok(())
    }

    fn csv(&mut self, name: &str, content: String) -> Result<()> {
        if self.csv {
            self.write(name, content.as_bytes())?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.json {
            let mut s = serde_json::to_string_pretty(value)?;
            s.push('\n');
            self.write(name, s.as_bytes())?;
        }
        Ok(())
    }

    fn timed<T>(&mut self, op: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let v = f()?;
        self.timings.push(Timing {
            operation: op.to_string(),
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(v)
    }

    fn check(&mut self, ok: bool, what: String) {
        if !ok {
            log::warn!("diagnostic threshold missed: {what}");
            self.breaches.push(what);
        }
    }
}

/// Runs `command`; returns the manifest (also written as `manifest.json`).
pub fn run(cfg: &ExperimentConfig, command: Command, method: Option<Method>) -> Result<RunManifest> {
    cfg.validate_for(command, method)?;
    let mut run = Run::new(cfg)?;
    run.write("config.toml", cfg.to_toml()?.as_bytes())?;
    match command {
        Command::EnvSample => cmd_env_sample(cfg, &mut run)?,
        Command::BuildGamma => cmd_build_gamma(cfg, &mut run)?,
        Command::Simulate => cmd_simulate(cfg, &mut run)?,
        Command::ScalingVerify => cmd_scaling_verify(cfg, &mut run)?,
        Command::Diffusivity => cmd_diffusivity(cfg, method.unwrap_or(Method::All), &mut run)?,
        Command::RwrcDemo => cmd_rwrc_demo(cfg, &mut run)?,
    }
    let manifest = RunManifest {
        command: command.name().to_string(),
        config_hash: cfg.hash()?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        timings: run.timings,
        files: run.files,
        breaches: run.breaches,
    };
    let mut s = serde_json::to_string_pretty(&manifest)?;
    s.push('\n');
    std::fs::write(run.dir.join("manifest.json"), s)?;
    Ok(manifest)
}

#[derive(Serialize)]
struct EnvSummary<'a> {
    sample: &'a EnvironmentSample,
    a_bounds: (f64, f64),
    v_bounds: (f64, f64),
    c_bounds: (f64, f64),
    normalization: f64,
    mean_pi_weight: f64,
    pi_average_a: f64,
}

fn cmd_env_sample(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let s = run.timed("sample", || cfg.sample())?;
    let n = cfg.environment.table_points;
    let mut csv = String::from("x,a,v,g,pi_weight,drift_b\n");
    for i in 0..n {
        let x = s.period * i as f64 / n as f64;
        writeln!(
            csv,
            "{x},{},{},{},{},{}",
            s.eval_a(x),
            s.eval_v(x),
            s.eval_g(x),
            s.pi_weight(x),
            s.drift_b(x)
        )
        .expect("string write");
    }
    run.csv("environment.csv", csv)?;
    let summary = EnvSummary {
        sample: &s,
        a_bounds: s.a.bounds(),
        v_bounds: s.v_bounds(),
        c_bounds: s.c_bounds(),
        normalization: s.normalization,
        mean_pi_weight: s.medium_average(|x| s.pi_weight(x)).value,
        pi_average_a: s.pi_average(|x| s.eval_a(x)).value,
    };
    run.json("environment.json", &summary)
}

/// Pushforward check of `γ(x, ·)` under `ν` restricted to `|z| > z0`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PushforwardCheck {
    pub x: f64,
    pub samples: usize,
    pub ks: f64,
}

/// Draws `γ(x, Z)` for `Z ~ ν(· ∩ {|z| > z0})` and compares with the law
/// proportional to `r(x, y) χ(y) dy` on `{|y| > ...}` given by the tails of `h`.
pub fn pushforward_check(kernel: &JumpKernel, x: f64, z0: f64, n: usize, seed: u64) -> Result<PushforwardCheck> {
    let map = kernel.gamma_map(x)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let z = kernel.sample_large_z(&mut rng, z0);
        ys.push(map.gamma(z)?);
    }
    ys.sort_by(f64::total_cmp);
    let total = 2.0 * kernel.tail_f(z0)?;
    let cdf: Vec<f64> = ys
        .iter()
        .map(|&y| {
            let h = map.tail_h(y).abs();
            if y < 0.0 {
                h / total
            } else {
                1.0 - h / total
            }
        })
        .collect();
    Ok(PushforwardCheck {
        x,
        samples: n,
        ks: ks_sorted(&ys, &cdf),
    })
}

#[derive(Serialize)]
struct GammaSummary {
    max_ratio: f64,
    bound_violations: usize,
    max_residual: f64,
    pushforward: Vec<PushforwardCheck>,
}

fn cmd_build_gamma(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let kernel = run.timed("kernel", || cfg.kernel())?;
    let g = &cfg.gamma;
    let period = kernel.sample.period;
    let zs: Vec<f64> = linspace(g.z_min.ln(), g.z_max.ln(), g.z_points)
        .into_iter()
        .map(f64::exp)
        .collect();
    let mut csv = String::from("x,z,gamma,ratio,residual\n");
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    let mut max_residual: f64 = 0.0;
    run.timed("table", || {
        for i in 0..g.x_points {
            let x = period * i as f64 / g.x_points as f64;
            let map = kernel.gamma_map(x)?;
            for &z in zs.iter().rev().map(|z| -z).collect::<Vec<_>>().iter().chain(&zs) {
                let y = map.gamma(z).map_err(|e| {
                    Error::Bracketing(format!("inversion failed at (x = {x}, z = {z}): {e}"))
                })?;
                let ratio = y.abs() / z.abs();
                let res = map.residual(z)?;
                if y.abs() > z.abs() {
                    violations += 1;
                }
                max_ratio = max_ratio.max(ratio);
                max_residual = max_residual.max(res);
                writeln!(csv, "{x},{z},{y},{ratio},{res}").expect("string write");
            }
        }
        Ok(())
    })?;
    let pushforward = run.timed("pushforward", || {
        [0.0, 1.0 / 3.0, 2.0 / 3.0]
            .iter()
            .enumerate()
            .map(|(i, f)| pushforward_check(&kernel, f * period, g.z_min, g.ks_samples, g.seed + i as u64))
            .collect::<Result<Vec<_>>>()
    })?;
    run.check(violations == 0, format!("{violations} points with |gamma| > |z|"));
    run.check(max_residual < 1e-9, format!("inversion residual {max_residual:e} >= 1e-9"));
    for p in &pushforward {
        run.check(p.ks < 0.02, format!("pushforward KS {} >= 0.02 at x = {}", p.ks, p.x));
    }
    run.csv("gamma.csv", csv)?;
    run.json(
        "gamma.json",
        &GammaSummary {
            max_ratio,
            bound_violations: violations,
            max_residual,
            pushforward,
        },
    )
}

fn cmd_simulate(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let kernel = run.timed("kernel", || cfg.kernel())?;
    let sim_cfg = cfg.simulation.clone().expect("validated");
    let sim = run.timed("jump field", || Simulator::new(&kernel, sim_cfg))?;
    let ens = run.timed("ensemble", || sim.ensemble())?;
    let stats = ens.stats();
    let mut csv = String::from("t,mean,variance,msd,mean_stderr\n");
    for k in 0..stats.times.len() {
        writeln!(
            csv,
            "{},{},{},{},{}",
            stats.times[k], stats.mean[k], stats.variance[k], stats.msd[k], stats.mean_stderr[k]
        )
        .expect("string write");
    }
    run.csv("ensemble.csv", csv)?;
    run.json("ensemble.json", &stats)?;
    for p in 0..cfg.output.paths.min(sim.config.paths) {
        let rec = run.timed("path", || sim.simulate_path(p))?;
        let mut csv = String::from("t,x\n");
        for (t, x) in rec.times.iter().zip(&rec.positions) {
            writeln!(csv, "{t},{x}").expect("string write");
        }
        run.csv(&format!("path_{p}.csv"), csv)?;
        let mut jumps = String::from("step,t,z,gamma\n");
        for j in &rec.jumps {
            writeln!(jumps, "{},{},{},{}", j.step, j.time, j.z, j.gamma).expect("string write");
        }
        run.csv(&format!("jumps_{p}.csv"), jumps)?;
        #[derive(Serialize)]
        struct PathMeta<'a> {
            index: usize,
            steps: usize,
            jumps: usize,
            brownian_digest: &'a str,
            config_hash: &'a str,
        }
        run.json(
            &format!("path_{p}.json"),
            &PathMeta {
                index: p,
                steps: rec.continuous.len(),
                jumps: rec.jumps.len(),
                brownian_digest: &rec.brownian_digest,
                config_hash: &rec.config_hash,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ScalingSummary {
    spec: ScalingSpec,
    reports: Vec<ReportSummary>,
    cr: Option<crate::scaling::CrReport>,
    uniformity: Option<crate::scaling::UniformityReport>,
}

#[derive(Serialize)]
struct ReportSummary {
    eps: f64,
    delta: f64,
    t: f64,
    samples: usize,
    sup_distance: f64,
    band: f64,
    max_imag: f64,
    within_band: bool,
}

fn cmd_scaling_verify(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let kernel = run.timed("kernel", || cfg.kernel())?;
    let reg = cfg.regime.clone().expect("validated");
    let spec = run.timed("limit", || match kernel.regime() {
        Regime::PureJump => ScalingSpec::from_kernel(&kernel),
        Regime::Diffusive => {
            let solver = cfg.solver.clone().unwrap_or_default();
            let a = corrector_diffusivity(&kernel, &solver)?.direct.value;
            Ok(ScalingSpec::diffusive(kernel.family.clone(), a))
        }
    })?;
    let deltas: Vec<f64> = match &reg.delta {
        Some(d) => d.clone(),
        None => reg
            .eps
            .iter()
            .map(|&e| delta_rate(&kernel.family, e))
            .collect::<Result<_>>()?,
    };
    let mut sim_cfg = cfg.simulation.clone().expect("validated");
    sim_cfg.observe = reg.eps.iter().map(|e| reg.time / e).collect();
    let sim = run.timed("jump field", || Simulator::new(&kernel, sim_cfg.clone()))?;
    let ens = run.timed("ensemble", || sim.ensemble())?;
    let grid = linspace(-reg.u_max, reg.u_max, reg.u_points);
    let mut reports = Vec::new();
    for (k, (&eps, &delta)) in reg.eps.iter().zip(&deltas).enumerate() {
        let inc = rescaled_increments(&ens, k, delta);
        let mut r = run.timed("ecf", || {
            convergence_test(&inc, &spec, eps, reg.time, &grid, sim_cfg.seed ^ k as u64)
        })?;
        r.delta = delta;
        run.csv(&format!("ecf_{k}.csv"), r.csv())?;
        reports.push(ReportSummary {
            eps,
            delta,
            t: r.t,
            samples: r.samples,
            sup_distance: r.sup_distance,
            band: r.band,
            max_imag: r.max_imag,
            within_band: r.within_band,
        });
    }
    let (cr, uniformity) = if kernel.regime() == Regime::PureJump {
        let cr = run.timed("cr", || verify_condition_cr(&kernel, &reg.eps, &reg.intervals))?;
        let u = run.timed("uniformity", || {
            small_jump_uniformity(&kernel.family, &reg.eps, &reg.alpha0)
        })?;
        run.check(cr.decreasing, "jump-measure deviations do not decrease in eps".into());
        run.check(u.monotone, "small-jump uniformity is not monotone in alpha0".into());
        (Some(cr), Some(u))
    } else {
        (None, None)
    };
    for r in &reports {
        run.check(
            r.within_band,
            format!("ECF distance {} outside bootstrap band {} at eps = {}", r.sup_distance, r.band, r.eps),
        );
    }
    let mut table = String::from("eps,delta,sup_distance,band\n");
    for r in &reports {
        writeln!(table, "{},{},{},{}", r.eps, r.delta, r.sup_distance, r.band).expect("string write");
    }
    run.csv("distances.csv", table)?;
    run.json(
        "scaling.json",
        &ScalingSummary {
            spec,
            reports,
            cr,
            uniformity,
        },
    )
}

#[derive(Serialize, Default)]
struct DiffusivitySummary {
    corrector: Option<crate::corrector::DirectEstimate>,
    variational: Option<crate::corrector::VariationalBounds>,
    mc: Option<crate::corrector::McDiffusivity>,
}

fn cmd_diffusivity(cfg: &ExperimentConfig, method: Method, run: &mut Run) -> Result<()> {
    let kernel = run.timed("kernel", || cfg.kernel())?;
    let mut summary = DiffusivitySummary::default();
    let mut table = String::from("method,value,error\n");
    if method != Method::Mc {
        let solver = cfg.solver.clone().unwrap_or_default();
        let r = run.timed("corrector", || corrector_diffusivity(&kernel, &solver))?;
        if matches!(method, Method::Corrector | Method::All) {
            writeln!(table, "corrector,{},{}", r.direct.value, r.direct.error).expect("string write");
            let mut csv = String::from("lambda,a\n");
            for (l, a) in r.direct.lambdas.iter().zip(&r.direct.a_lambda) {
                writeln!(csv, "{l},{a}").expect("string write");
            }
            run.csv("a_lambda.csv", csv)?;
            let mut csv = String::from("x,u,xi\n");
            let s = &r.solution;
            for i in 0..s.grid.len() {
                writeln!(csv, "{},{},{}", s.grid[i], s.u[i], s.xi[i]).expect("string write");
            }
            run.csv("corrector.csv", csv)?;
            summary.corrector = Some(r.direct.clone());
        }
        if matches!(method, Method::Variational | Method::All) {
            let v = &r.variational;
            writeln!(table, "variational,{},", v.bounds.last().copied().unwrap_or(f64::NAN))
                .expect("string write");
            let mut csv = String::from("trial_size,bound\n");
            for (k, b) in v.sizes.iter().zip(&v.bounds) {
                writeln!(csv, "{k},{b}").expect("string write");
            }
            run.csv("variational.csv", csv)?;
            run.check(v.nested, "variational bounds are not nested".into());
            summary.variational = Some(v.clone());
        }
    }
    if matches!(method, Method::Mc | Method::All) {
        let sim = cfg.simulation.clone().expect("validated");
        let mc = run.timed("mc", || effective_diffusivity_mc(&kernel, &sim))?;
        writeln!(table, "mc,{},{}", mc.value, mc.stderr).expect("string write");
        run.check(!mc.nonlinear, "mean squared displacement is not linear".into());
        summary.mc = Some(mc);
    }
    if let (Some(c), Some(v), Some(m)) = (&summary.corrector, &summary.variational, &summary.mc) {
        let vb = *v.bounds.last().expect("bounds");
        run.check(
            (c.value - vb).abs() <= 1e-3 * c.value.abs(),
            format!("corrector {} and variational {vb} differ by more than 1e-3", c.value),
        );
        run.check(
            (m.value - c.value).abs() <= 0.05 * c.value.abs(),
            format!("mc {} and corrector {} differ by more than 5%", m.value, c.value),
        );
    }
    run.csv("diffusivity.csv", table)?;
    run.json("diffusivity.json", &summary)
}

/// Observed jump directions of the conductance walk against the threshold
/// probabilities at the pre-jump positions.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JumpFrequency {
    pub jumps: usize,
    pub observed_plus: usize,
    pub expected_plus: f64,
    pub sigma: f64,
    /// `|observed − expected| / σ`.
    pub z_score: f64,
}

pub fn rwrc_jump_frequency(sim: &Simulator<'_>, index: usize) -> Result<JumpFrequency> {
    let rec = sim.simulate_path(index)?;
    let mut plus = 0;
    let mut expected = 0.0;
    let mut var = 0.0;
    for j in &rec.jumps {
        let x = rec.positions[j.step];
        let (_, pp) = sim.kernel.rwrc_probabilities(x)?;
        expected += pp;
        var += pp * (1.0 - pp);
        if j.gamma > 0.0 {
            plus += 1;
        }
    }
    let sigma = var.sqrt();
    Ok(JumpFrequency {
        jumps: rec.jumps.len(),
        observed_plus: plus,
        expected_plus: expected,
        sigma,
        z_score: (plus as f64 - expected).abs() / sigma.max(1e-300),
    })
}

#[derive(Serialize)]
struct RwrcSummary {
    variational: crate::corrector::RwrcDiffusivity,
    mc: crate::corrector::McDiffusivity,
    frequency: JumpFrequency,
}

fn cmd_rwrc_demo(cfg: &ExperimentConfig, run: &mut Run) -> Result<()> {
    let kernel = run.timed("kernel", || cfg.kernel())?;
    let solver = cfg.solver.clone().unwrap_or_default();
    let trial = solver.trial_sizes.iter().copied().max().unwrap_or(16);
    let v = run.timed("corrector", || rwrc_diffusivity(&kernel, &solver, trial))?;
    let sim_cfg = cfg.simulation.clone().expect("validated");
    let mc = run.timed("mc", || effective_diffusivity_mc(&kernel, &sim_cfg))?;
    let mut one_path = sim_cfg.clone();
    one_path.paths = 1;
    let sim = Simulator::new(&kernel, one_path)?;
    let freq = run.timed("frequency", || rwrc_jump_frequency(&sim, 0))?;
    run.check(freq.z_score <= 2.0, format!("jump frequency off by {} sigma", freq.z_score));
    run.check(
        (v.variational - v.direct).abs() <= 0.05 * v.direct && (mc.value - v.direct).abs() <= 0.05 * v.direct,
        format!("diffusivities disagree: direct {}, variational {}, mc {}", v.direct, v.variational, mc.value),
    );
    let mut table = String::from("method,value,error\n");
    writeln!(table, "trivial,{},", v.trivial_bound).expect("string write");
    writeln!(table, "corrector,{},{}", v.direct, v.direct_error).expect("string write");
    writeln!(table, "variational,{},", v.variational).expect("string write");
    writeln!(table, "mc,{},{}", mc.value, mc.stderr).expect("string write");
    run.csv("rwrc.csv", table)?;
    run.json(
        "rwrc.json",
        &RwrcSummary {
            variational: v,
            mc,
            frequency: freq,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1

[environment]
seed = 1

[environment.model.family]
kind = "constant"
a = 1.0
v = 0.0

[output]
directory = "out"
"#;

    #[test]
    fn minimal_config_parses() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.environment.seed, 1);
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, back);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let bad = MINIMAL.replace("seed = 1", "seed = 1\ncolour = 3");
        let e = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("colour")), "{e}");
    }

    #[test]
    fn unknown_family_names_the_field() {
        let bad = MINIMAL.replace("\"constant\"", "\"spherical\"");
        let e = ExperimentConfig::from_toml(&bad).unwrap_err();
        assert!(matches!(e, Error::Config(ref m) if m.contains("spherical")), "{e}");
    }

    #[test]
    fn wrong_version_is_rejected() {
        let bad = MINIMAL.replace("version = 1", "version = 7");
        assert!(matches!(ExperimentConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn regime_mismatch_is_caught_before_compute() {
        let mut c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        c.kernel.levy = Some(LevyFamily::AlphaStable {
            alpha: 1.5,
            scale: 1.0,
        });
        let e = c.validate_for(Command::Diffusivity, Some(Method::Corrector)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}
