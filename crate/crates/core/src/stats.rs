//! Statistics helpers: order-independent sums, Kolmogorov–Smirnov distances,
//! empirical characteristic functions with bootstrap bands, least squares.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pairwise summation. The result depends only on the order of `xs`, never on
/// how the values were produced, which keeps parallel reductions
/// reproducible.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    pairwise_sum(&sq) / (xs.len() - 1) as f64
}

/// One-sample KS distance `sup |F_n − F|`.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// One-sample KS distance against a CDF given at the sorted sample points.
pub fn ks_sorted(sorted: &[f64], cdf_at_points: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &f) in cdf_at_points.iter().enumerate() {
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Two-sample KS distance.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Empirical characteristic function `n⁻¹ Σ e^{iu x_j}`.
pub fn ecf(samples: &[f64], u: f64) -> Complex64 {
    let re: Vec<f64> = samples.iter().map(|x| (u * x).cos()).collect();
    let im: Vec<f64> = samples.iter().map(|x| (u * x).sin()).collect();
    let n = samples.len() as f64;
    Complex64::new(pairwise_sum(&re) / n, pairwise_sum(&im) / n)
}

pub fn ecf_grid(samples: &[f64], grid: &[f64]) -> Vec<Complex64> {
    grid.iter().map(|&u| ecf(samples, u)).collect()
}

/// `n` equally spaced points on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Bootstrap band for `sup_u |ECF(u) − E e^{iuX}|`: the `level` quantile of
/// `sup_u |ECF*(u) − ECF(u)|` over `resamples` resamples of a subsample of
/// size `m ≤ n`, rescaled by `√(m / n)`.
pub fn ecf_bootstrap_band(
    samples: &[f64],
    grid: &[f64],
    resamples: usize,
    max_subsample: usize,
    level: f64,
    seed: u64,
) -> f64 {
    let n = samples.len();
    if n == 0 || resamples == 0 {
        return 0.0;
    }
    let m = n.min(max_subsample);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sub: Vec<f64> = if m == n {
        samples.to_vec()
    } else {
        (0..m).map(|_| samples[rng.random_range(0..n)]).collect()
    };
    let base = ecf_grid(&sub, grid);
    let mut sups = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; m];
    for _ in 0..resamples {
        for b in buf.iter_mut() {
            *b = sub[rng.random_range(0..m)];
        }
        let mut s: f64 = 0.0;
        for (k, &u) in grid.iter().enumerate() {
            s = s.max((ecf(&buf, u) - base[k]).norm());
        }
        sups.push(s);
    }
    sups.sort_by(f64::total_cmp);
    let idx = ((level * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    sups[idx] * (m as f64 / n as f64).sqrt()
}

/// Ordinary least squares `y ≈ a + b x`, returning `(a, b, residual rms)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(xv, yv)| (yv - a - b * xv).powi(2))
        .sum();
    (a, b, (rss / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ks_two_sample_identical_is_zero() {
        let a = vec![0.3, -1.0, 2.0, 0.5];
        assert_eq!(ks_two_sample(&a, &a), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 1.0], &[2.0, 3.0]), 1.0);
    }

    #[test]
    fn ks_of_normal_sample_is_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<f64> = (0..20000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let d = ks_one_sample(&xs, |x| {
            0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
        });
        assert!(d < 0.015, "{d}");
    }

    #[test]
    fn ecf_at_zero_is_one() {
        let xs = [1.0, -2.0, 3.5];
        let e = ecf(&xs, 0.0);
        assert_eq!(e, Complex64::new(1.0, 0.0));
    }

    #[test]
    fn linear_fit_exact_line() {
        let x = linspace(0.0, 1.0, 11);
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 3.0 * v).collect();
        let (a, b, r) = linear_fit(&x, &y);
        assert!((a - 2.0).abs() < 1e-12 && (b + 3.0).abs() < 1e-12 && r < 1e-12);
    }

    proptest! {
        #[test]
        fn pairwise_sum_close_to_naive(xs in prop::collection::vec(-1e3f64..1e3, 0..200)) {
            let naive: f64 = xs.iter().sum();
            prop_assert!((pairwise_sum(&xs) - naive).abs() <= 1e-9 * (1.0 + naive.abs()));
        }

        #[test]
        fn ks_distance_in_unit_interval(
            a in prop::collection::vec(-10f64..10.0, 1..60),
            b in prop::collection::vec(-10f64..10.0, 1..60),
        ) {
            let d = ks_two_sample(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert!((d - ks_two_sample(&b, &a)).abs() < 1e-15);
        }
    }
}
