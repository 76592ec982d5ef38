//! The Galerkin functional against brute-force quadrature of
//! `J(φ) = 𝕄[a(1 + φ')² e^{-2V}] + 𝕄∫(z + φ(x + z) − φ(x))² c(x, z) χ(dz)`.

use levyhom::corrector::{assemble_form, effective_diffusivity_variational, DiscreteForm};
use levyhom::environment::{draw_sample, EnvironmentModel, Family, Harmonic, Harmonics, KernelField, Profile};
use levyhom::jump_kernel::{JumpKernel, LevyFamily};
use nalgebra::DVector;
use num_complex::Complex64 as C64;
use proptest::prelude::*;
use std::f64::consts::PI;

const ALPHA: f64 = 0.8;
const RATE: f64 = 1.0;

fn kernel() -> JumpKernel {
    let h = |mean: f64, cos: f64, sin: f64| Harmonics {
        mean,
        terms: vec![Harmonic { k: 1, cos, sin }],
    };
    let model = EnvironmentModel {
        family: Family::PeriodicRandomPhase {
            period: 1.0,
            a: h(2.0, 0.3, 0.8),
            v: h(0.0, 0.25, 0.0),
            g: h(0.0, 0.0, 1.0),
            phase: Some(0.0),
        },
        ..EnvironmentModel::constant(1.0, 0.0)
    }
    .with_kernel(KernelField {
        base: 1.0,
        amplitude: 0.6,
        profile: Profile::Exponential { length: 0.7 },
    });
    JumpKernel::new(
        draw_sample(&model, 0).unwrap(),
        LevyFamily::Tempered { alpha: ALPHA, scale: 1.0, rate: RATE },
    )
    .unwrap()
}

fn chi(z: f64) -> f64 {
    (-RATE * z).exp() * z.powf(-1.0 - ALPHA)
}

/// Simpson weights on `n` (even) intervals of `[a, b]`.
fn simpson(a: f64, b: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (b - a) / n as f64;
    (0..=n)
        .map(|i| {
            let w = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (a + h * i as f64, w * h / 3.0)
        })
        .collect()
}

fn brute_force(k: &JumpKernel, modes: &[(i64, C64)]) -> f64 {
    let phi = |x: f64| {
        modes
            .iter()
            .map(|&(m, c)| (c * C64::from_polar(1.0, 2.0 * PI * m as f64 * x)).re)
            .sum::<f64>()
    };
    let dphi = |x: f64| {
        modes
            .iter()
            .map(|&(m, c)| (c * C64::new(0.0, 2.0 * PI * m as f64) * C64::from_polar(1.0, 2.0 * PI * m as f64 * x)).re)
            .sum::<f64>()
    };
    // z in (0, 1] by Simpson in ln z, z in [1, 60] by Simpson in z
    let mut nodes: Vec<(f64, f64)> = simpson((1e-9f64).ln(), 0.0, 4000)
        .into_iter()
        .map(|(s, w)| (s.exp(), w * s.exp()))
        .collect();
    nodes.extend(simpson(1.0, 60.0, 40_000));
    let nodes: Vec<(f64, f64)> = nodes.into_iter().map(|(z, w)| (z, w * chi(z))).collect();
    let nx = 128;
    let s = &k.sample;
    let mut total = 0.0;
    for i in 0..nx {
        let x = i as f64 / nx as f64;
        let p0 = phi(x);
        let mut jump = 0.0;
        for &(z, w) in &nodes {
            let up = z + phi(x + z) - p0;
            let down = -z + phi(x - z) - p0;
            jump += w * (up * up * s.eval_c(x, z) + down * down * s.eval_c(x, -z));
        }
        let d = 1.0 + dphi(x);
        total += s.eval_a(x) * d * d * (-2.0 * s.eval_v(x)).exp() + jump;
    }
    total / nx as f64
}

fn vector(form: &DiscreteForm, modes: &[(i64, C64)]) -> DVector<C64> {
    let mut u = DVector::from_element(2 * form.kmax + 1, C64::new(0.0, 0.0));
    for &(m, c) in modes {
        u[(m + form.kmax as i64) as usize] += c;
    }
    u
}

fn real_modes(coeffs: &[(f64, f64)]) -> Vec<(i64, C64)> {
    let mut out = Vec::new();
    for (j, &(re, im)) in coeffs.iter().enumerate() {
        let m = j as i64 + 1;
        out.push((m, C64::new(re, im)));
        out.push((-m, C64::new(re, -im)));
    }
    out
}

#[test]
fn functional_matches_brute_force_quadrature() {
    let k = kernel();
    let form = assemble_form(&k, 64).unwrap();
    for coeffs in [vec![], vec![(0.05, -0.02)], vec![(0.03, 0.01), (-0.01, 0.02), (0.004, 0.0)]] {
        let modes = real_modes(&coeffs);
        let exact = brute_force(&k, &modes);
        let got = form.functional(&vector(&form, &modes));
        assert!(
            (got - exact).abs() < 1e-6 * exact,
            "J = {got} vs brute force {exact} for {coeffs:?}"
        );
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 48, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn variational_bound_lies_below_every_trial(
        coeffs in prop::collection::vec((-0.2f64..0.2, -0.2f64..0.2), 1..=4)
    ) {
        let k = kernel();
        let form = assemble_form(&k, 32).unwrap();
        let size = coeffs.len();
        let bound = effective_diffusivity_variational(&form, &[size]).unwrap().bounds[0];
        let j = form.functional(&vector(&form, &real_modes(&coeffs)));
        prop_assert!(bound <= j + 1e-12 * j.abs());
    }
}
