//! KS distances, exponential fits, histograms and sample cumulants.

use rand::Rng;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::polymodel::cumulants_from_moments;
use crate::seed;

/// `2√(π/3)`, the limiting rate of `n m_n`.
pub fn target_lambda() -> f64 {
    2.0 * (std::f64::consts::PI / 3.0).sqrt()
}

/// What a sample is compared against in [`ks_distance`].
pub enum Reference<'a> {
    Samples(&'a [f64]),
    Cdf(&'a dyn Fn(f64) -> f64),
}

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Sup-distance between empirical CDFs, or between one empirical CDF and `F`.
pub fn ks_distance(samples: &[f64], reference: Reference<'_>) -> Result<f64> {
    ensure!(!samples.is_empty(), "KS distance needs a nonempty sample");
    ensure!(samples.iter().all(|v| !v.is_nan()), "samples contain NaN");
    let a = sorted(samples);
    let na = a.len() as f64;
    match reference {
        Reference::Cdf(f) => Ok(a
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let fx = f(x);
                (fx - i as f64 / na).abs().max(((i + 1) as f64 / na - fx).abs())
            })
            .fold(0.0, f64::max)),
        Reference::Samples(b) => {
            ensure!(!b.is_empty(), "KS distance needs a nonempty reference sample");
            ensure!(b.iter().all(|v| !v.is_nan()), "reference contains NaN");
            let b = sorted(b);
            let nb = b.len() as f64;
            let (mut i, mut j, mut d) = (0, 0, 0.0f64);
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
            Ok(d)
        }
    }
}

/// Asymptotic Kolmogorov critical value `c(α)/√m` for the one-sample test.
pub fn ks_critical(alpha: f64, m: usize) -> f64 {
    (-0.5 * (alpha / 2.0).ln()).sqrt() / (m as f64).sqrt()
}

pub fn exp_cdf(lambda: f64) -> impl Fn(f64) -> f64 {
    move |x| if x <= 0.0 { 0.0 } else { 1.0 - (-lambda * x).exp() }
}

/// Exponential-law summary of a sample of `n m_n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FitReport {
    pub samples: usize,
    /// `1/mean`.
    pub lambda_mle: f64,
    /// Slope of `-ln Ŝ(τ)` against `τ` (through the origin) over grid points with `Ŝ ≥ 0.05`.
    pub lambda_tail: f64,
    pub ks_vs_fit: f64,
    pub ks_vs_target: f64,
    pub ci_mle: (f64, f64),
    pub ci_tail: (f64, f64),
    pub tau_used: Vec<f64>,
}

const BOOTSTRAP_REPS: usize = 200;
const BOOTSTRAP_SEED: u64 = 0x5eed_b007;
const MIN_SURVIVAL: f64 = 0.05;

/// Default τ grid: 20 equally spaced points up to the 95% sample quantile.
pub fn default_tau_grid(samples: &[f64]) -> Vec<f64> {
    let s = sorted(samples);
    let top = s[((s.len() as f64 * 0.95) as usize).min(s.len() - 1)];
    (1..=20).map(|i| top * i as f64 / 20.0).collect()
}

fn tail_slope(sorted_samples: &[f64], tau: &[f64]) -> (f64, Vec<f64>) {
    let m = sorted_samples.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    let mut used = Vec::new();
    for &t in tau {
        if t <= 0.0 {
            continue;
        }
        let above = sorted_samples.len() - sorted_samples.partition_point(|&x| x <= t);
        let surv = above as f64 / m;
        if surv < MIN_SURVIVAL {
            continue;
        }
        num += t * -surv.ln();
        den += t * t;
        used.push(t);
    }
    (if den > 0.0 { num / den } else { f64::NAN }, used)
}

fn percentile_interval(mut v: Vec<f64>) -> (f64, f64) {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    v.sort_by(f64::total_cmp);
    let q = |p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    (q(0.025), q(0.975))
}

pub fn fit_exponential(samples: &[f64], tau_grid: &[f64]) -> Result<FitReport> {
    ensure!(samples.len() >= 100, "exponential fit needs at least 100 samples, got {}", samples.len());
    ensure!(
        samples.iter().all(|v| v.is_finite() && *v >= 0.0),
        "samples must be finite and non-negative"
    );
    let s = sorted(samples);
    ensure!(s[0] < s[s.len() - 1], "all samples are equal");
    let grid = if tau_grid.is_empty() {
        default_tau_grid(samples)
    } else {
        tau_grid.to_vec()
    };
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let lambda_mle = 1.0 / mean;
    let (lambda_tail, tau_used) = tail_slope(&s, &grid);
    ensure!(
        tau_used.len() >= 2,
        "fewer than two τ grid points have empirical survival ≥ {MIN_SURVIVAL}"
    );
    let ks_vs_fit = ks_distance(&s, Reference::Cdf(&exp_cdf(lambda_mle)))?;
    let ks_vs_target = ks_distance(&s, Reference::Cdf(&exp_cdf(target_lambda())))?;
    let mut rng = seed::rng(BOOTSTRAP_SEED);
    let mut mle = Vec::with_capacity(BOOTSTRAP_REPS);
    let mut tail = Vec::with_capacity(BOOTSTRAP_REPS);
    let mut buf = vec![0.0; s.len()];
    for _ in 0..BOOTSTRAP_REPS {
        for b in buf.iter_mut() {
            *b = s[rng.random_range(0..s.len())];
        }
        mle.push(buf.len() as f64 / buf.iter().sum::<f64>());
        buf.sort_by(f64::total_cmp);
        tail.push(tail_slope(&buf, &tau_used).0);
    }
    Ok(FitReport {
        samples: s.len(),
        lambda_mle,
        lambda_tail,
        ks_vs_fit,
        ks_vs_target,
        ci_mle: percentile_interval(mle),
        ci_tail: percentile_interval(tail),
        tau_used,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HistBin {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
    pub density: f64,
}

/// Equal-width histogram on `[lo, hi]`; the last bin is closed.
/// Densities are normalised by the total sample count.
pub fn histogram(samples: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Vec<HistBin>> {
    ensure!(bins >= 1, "histogram needs at least one bin");
    ensure!(lo.is_finite() && hi.is_finite() && hi > lo, "histogram range must satisfy lo < hi");
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x < lo || x > hi || x.is_nan() {
            continue;
        }
        let i = (((x - lo) / w) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let total = samples.len().max(1) as f64;
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| HistBin {
            bin_left: lo + i as f64 * w,
            bin_right: lo + (i + 1) as f64 * w,
            count: c,
            density: c as f64 / (total * w),
        })
        .collect())
}

/// Sample cumulants `κ_1..κ_order` (plug-in, from central moments).
pub fn sample_cumulants(samples: &[f64], order: usize) -> Result<Vec<f64>> {
    ensure!(!samples.is_empty(), "sample cumulants need data");
    let m = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / m;
    let mut central = vec![0.0; order];
    for &x in samples {
        let d = x - mean;
        let mut p = 1.0;
        for c in central.iter_mut() {
            p *= d;
            *c += p;
        }
    }
    central.iter_mut().for_each(|c| *c /= m);
    let mut k = cumulants_from_moments(&central);
    if order >= 1 {
        k[0] = mean;
    }
    Ok(k)
}

/// Ordinary least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Exp};

    fn exp_samples(lambda: f64, m: usize, s: u64) -> Vec<f64> {
        let mut rng = seed::rng(s);
        let d = Exp::new(lambda).unwrap();
        (0..m).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn ks_basics() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, Reference::Samples(&a)).unwrap(), 0.0);
        assert_eq!(ks_distance(&a, Reference::Samples(&[10.0, 11.0])).unwrap(), 1.0);
        assert!(ks_distance(&[], Reference::Samples(&a)).is_err());
        let x = exp_samples(2.0, 100_000, 1);
        let d = ks_distance(&x, Reference::Cdf(&exp_cdf(2.0))).unwrap();
        assert!(d <= 0.006, "{d}");
        assert!(d <= ks_critical(0.01, x.len()));
    }

    #[test]
    fn ks_two_sample_brute_force() {
        let a = exp_samples(1.0, 300, 2);
        let b = exp_samples(1.3, 200, 3);
        let fast = ks_distance(&a, Reference::Samples(&b)).unwrap();
        let mut slow = 0.0f64;
        for &x in a.iter().chain(&b) {
            let fa = a.iter().filter(|&&v| v <= x).count() as f64 / 300.0;
            let fb = b.iter().filter(|&&v| v <= x).count() as f64 / 200.0;
            slow = slow.max((fa - fb).abs());
        }
        assert!((fast - slow).abs() < 1e-15);
    }

    #[test]
    fn exponential_fit_recovers_rate() {
        let lam = target_lambda();
        assert!((lam - 2.0466).abs() < 1e-4);
        let x = exp_samples(lam, 100_000, 4);
        let f = fit_exponential(&x, &[]).unwrap();
        assert!((2.03..=2.07).contains(&f.lambda_mle), "{}", f.lambda_mle);
        assert!(f.ks_vs_fit <= 0.005);
        assert!(f.ci_mle.0 <= f.lambda_mle && f.lambda_mle <= f.ci_mle.1);
        assert!((f.lambda_tail - lam).abs() < 0.05);
        let scaled: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let g = fit_exponential(&scaled, &[]).unwrap();
        assert!((g.lambda_mle * 3.0 - f.lambda_mle).abs() < 1e-9);
        assert!(fit_exponential(&[1.0; 200], &[]).is_err());
        assert!(fit_exponential(&x[..50], &[]).is_err());
    }

    #[test]
    fn histogram_cases() {
        let h = histogram(&[0.5], 1, 0.0, 1.0).unwrap();
        assert_eq!(h[0].count, 1);
        let h = histogram(&[5.0, 6.0], 4, 0.0, 1.0).unwrap();
        assert!(h.iter().all(|b| b.count == 0));
        let mut rng = seed::rng(5);
        let u: Vec<f64> = (0..100_000).map(|_| rng.random::<f64>()).collect();
        let h = histogram(&u, 20, 0.0, 1.0).unwrap();
        assert_eq!(h.iter().map(|b| b.count).sum::<u64>(), 100_000);
        let expected: f64 = 5000.0;
        for b in &h {
            assert!((b.density - 1.0).abs() <= 5.0 * expected.sqrt() / 100_000.0 * 20.0);
        }
        assert!(histogram(&u, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cumulants_of_known_laws() {
        let x = exp_samples(1.0, 400_000, 6);
        let k = sample_cumulants(&x, 4).unwrap();
        // Exp(1): κ_k = (k-1)!.
        for (i, e) in [1.0, 1.0, 2.0, 6.0].iter().enumerate() {
            assert!((k[i] - e).abs() < 0.1 * e, "{i} {}", k[i]);
        }
    }

    proptest! {
        #[test]
        fn ks_in_unit_interval(a in prop::collection::vec(-5.0..5.0f64, 1..40), b in prop::collection::vec(-5.0..5.0f64, 1..40)) {
            let d = ks_distance(&a, Reference::Samples(&b)).unwrap();
            prop_assert!((0.0..=1.0).contains(&d));
            let e = ks_distance(&b, Reference::Samples(&a)).unwrap();
            prop_assert!((d - e).abs() < 1e-12);
        }
    }
}
