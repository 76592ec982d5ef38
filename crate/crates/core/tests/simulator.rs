use levyhom::environment::{draw_sample, EnvironmentModel, Family, Harmonic, Harmonics, KernelField, Profile};
use levyhom::jump_kernel::{JumpKernel, LevyFamily};
use levyhom::sde::{rescale_path, SimConfig, Simulator};

fn constant(a: f64, family: LevyFamily) -> JumpKernel {
    JumpKernel::new(draw_sample(&EnvironmentModel::constant(a, 0.0), 0).unwrap(), family).unwrap()
}

fn periodic_with_jumps() -> JumpKernel {
    let h = |mean: f64, cos: f64, sin: f64| Harmonics {
        mean,
        terms: vec![Harmonic { k: 1, cos, sin }],
    };
    let model = EnvironmentModel {
        family: Family::PeriodicRandomPhase {
            period: 1.0,
            a: h(2.0, 1.0, 0.0),
            v: h(0.0, 0.3, 0.0),
            g: h(0.0, 0.0, 1.0),
            phase: None,
        },
        ..EnvironmentModel::constant(1.0, 0.0)
    }
    .with_kernel(KernelField {
        base: 1.0,
        amplitude: 0.5,
        profile: Profile::Exponential { length: 1.0 },
    });
    JumpKernel::new(draw_sample(&model, 3).unwrap(), LevyFamily::AlphaStable { alpha: 1.5, scale: 0.5 }).unwrap()
}

fn msd_and_stderr(xs: &[f64], x0: f64) -> (f64, f64) {
    let sq: Vec<f64> = xs.iter().map(|x| (x - x0).powi(2)).collect();
    let n = sq.len() as f64;
    let m = sq.iter().sum::<f64>() / n;
    let v = sq.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn brownian_rescaling_preserves_the_msd_slope() {
    let k = constant(1.0, LevyFamily::None);
    let eps = 0.01;
    let sim = Simulator::new(&k, SimConfig::new(1.0 / eps, 0.1, 4000, 1)).unwrap();
    let ens = sim.ensemble().unwrap();
    let delta = eps.sqrt();
    let rescaled: Vec<f64> = ens.positions[0].iter().map(|x| delta * x).collect();
    let (msd, se) = msd_and_stderr(&rescaled, 0.0);
    assert!((msd - 1.0).abs() < 4.0 * se, "rescaled MSD {msd} ± {se}");

    let path = sim.simulate_path(0).unwrap();
    let same = rescale_path(&path, 1.0, 1.0, 100.0).unwrap();
    assert_eq!(same.positions, path.positions);
}

#[test]
fn constant_medium_time_average_of_a() {
    let k = constant(2.5, LevyFamily::Tempered { alpha: 0.5, scale: 1.0, rate: 1.0 });
    let sim = Simulator::new(&k, SimConfig::new(50.0, 0.01, 1, 4)).unwrap();
    let t = sim.time_average(|x| k.sample.eval_a(x), 0).unwrap();
    assert!((t.value - 2.5).abs() < 1e-12);
}

#[test]
fn single_path_ensemble_matches_the_path() {
    let k = periodic_with_jumps();
    let sim = Simulator::new(&k, SimConfig::new(5.0, 0.01, 1, 9)).unwrap();
    let stats = sim.ensemble().unwrap().stats();
    let path = sim.simulate_path(0).unwrap();
    assert_eq!(stats.count, 1);
    assert_eq!(stats.mean[0], *path.positions.last().unwrap());
}

#[test]
fn standard_error_follows_the_monte_carlo_rate() {
    let k = constant(1.0, LevyFamily::Tempered { alpha: 1.2, scale: 1.0, rate: 1.0 });
    let se = |paths: usize| {
        let sim = Simulator::new(&k, SimConfig::new(2.0, 0.01, paths, 12)).unwrap();
        sim.ensemble().unwrap().stats().mean_stderr[0]
    };
    let ratio = se(4000) / se(8000);
    let r = ratio / 2f64.sqrt();
    assert!((0.8..=1.2).contains(&r), "ratio {ratio}");
}

#[test]
fn constant_coefficients_give_the_exact_second_moment() {
    // the Euler scheme is exact in law here, so every dt must match a T
    let (a, t) = (1.5, 1.0);
    let k = constant(a, LevyFamily::None);
    for (i, dt) in [1e-2, 1e-3, 1e-4].into_iter().enumerate() {
        let sim = Simulator::new(&k, SimConfig::new(t, dt, 10_000, 30 + i as u64)).unwrap();
        let ens = sim.ensemble().unwrap();
        let (m, se) = msd_and_stderr(&ens.positions[0], 0.0);
        assert!((m - a * t).abs() < 4.0 * se, "dt {dt}: {m} ± {se}");
    }
}

#[test]
fn symmetric_jumps_are_centered() {
    let k = constant(0.0, LevyFamily::Tempered { alpha: 1.2, scale: 1.0, rate: 1.0 });
    let mut cfg = SimConfig::new(5.0, 0.01, 20_000, 5);
    cfg.x0 = 0.3;
    let stats = Simulator::new(&k, cfg).unwrap().ensemble().unwrap().stats();
    assert!(stats.mean[0].abs() < 3.0 * stats.mean_stderr[0], "{} ± {}", stats.mean[0], stats.mean_stderr[0]);
}

#[test]
fn halving_kappa_keeps_the_msd() {
    let k = periodic_with_jumps();
    let run = |kappa: f64, seed: u64| {
        let mut cfg = SimConfig::new(10.0, 0.005, 4000, seed);
        cfg.kappa = kappa;
        let ens = Simulator::new(&k, cfg).unwrap().ensemble().unwrap();
        msd_and_stderr(&ens.positions[0], 0.0)
    };
    let (m1, s1) = run(0.2, 1);
    let (m2, s2) = run(0.1, 2);
    let sd = (s1 * s1 + s2 * s2).sqrt();
    assert!((m1 - m2).abs() < 3.0 * sd, "{m1} ± {s1} vs {m2} ± {s2}");
}
