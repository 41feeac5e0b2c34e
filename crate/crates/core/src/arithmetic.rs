//! Diophantine classification of phases: smoothness, spreadness and dilations.
//!
//! `‖x‖` is the distance from `x` to the nearest integer.  Arguments are reduced
//! modulo one before any multiplication to limit cancellation for large phases.

use serde::Serialize;

use rand::Rng;

use crate::error::{ensure, Error, Result};
use crate::minima::MeshConfig;
use crate::scalar::{from_usize, Scalar};

/// `‖x‖_{R/Z}`.
pub fn torus_norm<T: Scalar>(x: T) -> T {
    let f = x - x.floor();
    f.min(T::one() - f)
}

fn frac<T: Scalar>(x: T) -> T {
    x - x.floor()
}

/// `t` is `K`-smooth iff `‖p₀ t/(πn)‖ > K/n` for every integer `0 < |p₀| ≤ K + 1`.
pub fn is_smooth<T: Scalar>(t: T, k: T, n: usize) -> Result<bool> {
    ensure!(k > T::zero() && k.is_finite(), "smoothness parameter must be positive");
    ensure!(n >= 1, "n must be positive");
    let nf = from_usize::<T>(n);
    let y = frac(t / (T::PI() * nf));
    let thr = k / nf;
    let top = (k + T::one()).floor().to_usize().unwrap_or(usize::MAX);
    for p0 in 1..=top {
        if torus_norm(frac(from_usize::<T>(p0) * y)) <= thr {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Whether mesh site `α` lies in a bad arc, i.e. `n x_α` is not `n^κ`-smooth.
///
/// Uses the exact rational form `n x_α /(πn) = 2α/N`.
pub fn site_is_bad(mesh: &MeshConfig, alpha: usize, kappa: f64) -> Result<bool> {
    ensure!(kappa > 0.0 && kappa < 1.0, "κ must lie in (0, 1), got {kappa}");
    let n = mesh.n as f64;
    let k = n.powf(kappa);
    let big = mesh.n_effective as u128;
    let thr = k / n;
    for p0 in 1..=(k + 1.0).floor() as u128 {
        let r = (2 * p0 * alpha as u128) % big;
        let d = r.min(big - r) as f64 / big as f64;
        if d <= thr {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Bad-arc flags for `α = 1..=N` (entry `α - 1`).
pub fn classify_bad_arcs(mesh: &MeshConfig, kappa: f64) -> Result<Vec<bool>> {
    (1..=mesh.n_effective)
        .map(|a| site_is_bad(mesh, a, kappa))
        .collect()
}

/// Phases `t_1..t_m` at degree `n`; the rescaled points are `t_r / n`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseTuple<T> {
    pub n: usize,
    pub t: Vec<T>,
}

impl<T: Scalar> PhaseTuple<T> {
    pub fn new(n: usize, t: Vec<T>) -> Result<Self> {
        ensure!(n >= 1, "n must be positive");
        ensure!(!t.is_empty(), "phase tuple must be non-empty");
        ensure!(t.iter().all(|x| x.is_finite()), "phases must be finite");
        Ok(Self { n, t })
    }

    pub fn m(&self) -> usize {
        self.t.len()
    }

    /// Reduced combinations `(t_r ± t_r')/(2πn) mod 1`, or `t/(2πn)` for `m = 1`.
    fn combinations(&self, plus: bool) -> Vec<T> {
        let s = T::TAU() * from_usize::<T>(self.n);
        if self.m() == 1 {
            return vec![frac(self.t[0] / s)];
        }
        let mut out = Vec::new();
        for r in 0..self.m() {
            for q in r + 1..self.m() {
                out.push(frac((self.t[r] - self.t[q]) / s));
                if plus {
                    out.push(frac((self.t[r] + self.t[q]) / s));
                }
            }
        }
        out
    }

    /// `n · min ‖(t_r ± t_r')/(2πn)‖`: the largest `λ` for which the tuple is `λ`-spread.
    pub fn spread_margin(&self) -> T {
        margin(&self.combinations(true), self.n)
    }

    pub fn weak_spread_margin(&self) -> T {
        margin(&self.combinations(false), self.n)
    }
}

fn margin<T: Scalar>(c: &[T], n: usize) -> T {
    from_usize::<T>(n) * c.iter().map(|&y| torus_norm(y)).fold(T::infinity(), T::min)
}

fn min_norm<T: Scalar>(c: &[T]) -> T {
    c.iter().map(|&y| torus_norm(y)).fold(T::infinity(), T::min)
}

/// `‖(t_r ± t_r')/(2πn)‖ ≥ λ/n` for all pairs and both signs (`‖t/(2πn)‖ ≥ λ/n` when `m = 1`).
pub fn is_spread<T: Scalar>(tuple: &PhaseTuple<T>, lambda: T) -> bool {
    min_norm(&tuple.combinations(true)) >= lambda / from_usize::<T>(tuple.n)
}

/// As [`is_spread`] with the minus sign only.
pub fn is_weakly_spread<T: Scalar>(tuple: &PhaseTuple<T>, lambda: T) -> bool {
    min_norm(&tuple.combinations(false)) >= lambda / from_usize::<T>(tuple.n)
}

/// Arithmetic summary of a tuple.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArithMeta<T> {
    /// Largest tested `K` for which every phase is `K`-smooth.
    pub smooth_k: Option<T>,
    pub spread_lambda: T,
    pub weak_spread_lambda: T,
}

pub fn arith_meta<T: Scalar>(tuple: &PhaseTuple<T>, k_grid: &[T]) -> Result<ArithMeta<T>> {
    let mut smooth_k: Option<T> = None;
    for &k in k_grid {
        let mut all = true;
        for &t in &tuple.t {
            all &= is_smooth(t, k, tuple.n)?;
        }
        if all && smooth_k.map_or(true, |s| k > s) {
            smooth_k = Some(k);
        }
    }
    Ok(ArithMeta {
        smooth_k,
        spread_lambda: tuple.spread_margin(),
        weak_spread_lambda: tuple.weak_spread_margin(),
    })
}

/// Best dilation factor found by [`find_dilation`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Dilation<T> {
    pub l: u64,
    /// `min ‖L (t_r ± t_r')/(2πn)‖` at the chosen `L`.
    pub achieved: T,
    /// Whether the input tuple was `λ`-spread.
    pub precondition_met: bool,
}

/// Scans `L ∈ [n/(2K), n/K]` for the dilation maximising the spread of `L·t`.
/// Ties go to the smallest `L`.
pub fn find_dilation<T: Scalar>(tuple: &PhaseTuple<T>, lambda: T, k: T) -> Result<Dilation<T>> {
    ensure!(k > T::zero(), "K must be positive");
    let nf = from_usize::<T>(tuple.n);
    let lo = (nf / (k + k)).ceil().max(T::one());
    let hi = (nf / k).floor();
    ensure!(lo <= hi, "dilation range [n/(2K), n/K] contains no integer");
    let (lo, hi) = (lo.to_u64().unwrap_or(1), hi.to_u64().unwrap_or(0));
    let c = tuple.combinations(true);
    let mut best = Dilation {
        l: lo,
        achieved: -T::one(),
        precondition_met: is_spread(tuple, lambda),
    };
    for l in lo..=hi {
        let lf = T::from_u64(l).expect("dilation fits scalar");
        let v = c
            .iter()
            .map(|&y| torus_norm(frac(lf * y)))
            .fold(T::infinity(), T::min);
        if v > best.achieved {
            best.l = l;
            best.achieved = v;
        }
    }
    Ok(best)
}

/// Simultaneous Diophantine approximation by scanning `q ∈ [1, q_max]`:
/// minimises `Σ_r ‖q t_r/(2πn)‖²`.  Returns `q₀` and the signed residuals
/// `s_r = q₀ t_r/(2πn) - round(q₀ t_r/(2πn))`.
pub fn pigeonhole_q0<T: Scalar>(tuple: &PhaseTuple<T>, q_max: u64) -> Result<(u64, Vec<T>)> {
    ensure!(q_max >= 1, "q_max must be at least 1");
    let s = T::TAU() * from_usize::<T>(tuple.n);
    let y: Vec<T> = tuple.t.iter().map(|&t| frac(t / s)).collect();
    let resid = |q: u64| -> Vec<T> {
        let qf = T::from_u64(q).expect("q fits scalar");
        y.iter()
            .map(|&v| {
                let w = frac(qf * v);
                if w > T::from_f64(0.5).unwrap() {
                    w - T::one()
                } else {
                    w
                }
            })
            .collect()
    };
    let mut best = (1, T::infinity());
    for q in 1..=q_max {
        let e = resid(q).iter().fold(T::zero(), |a, &r| a + r * r);
        if e < best.1 {
            best = (q, e);
        }
    }
    Ok((best.0, resid(best.0)))
}

/// Draws phases uniformly from `[0, 2πn)` until every phase is `K`-smooth
/// and the tuple is `λ`-spread.
pub fn random_tuple<R: Rng + ?Sized>(
    n: usize,
    m: usize,
    lambda: f64,
    k: f64,
    rng: &mut R,
) -> Result<PhaseTuple<f64>> {
    ensure!(m >= 1, "m must be at least 1");
    const TRIES: usize = 10_000;
    let top = std::f64::consts::TAU * n as f64;
    for _ in 0..TRIES {
        let t: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..top)).collect();
        let tuple = PhaseTuple::new(n, t)?;
        if is_spread(&tuple, lambda) && tuple.t.iter().all(|&x| is_smooth(x, k, n).unwrap_or(false)) {
            return Ok(tuple);
        }
    }
    Err(Error::Precondition(format!(
        "no {k}-smooth {lambda}-spread {m}-tuple found at n = {n} in {TRIES} draws"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn smoothness_examples() {
        let n = 100;
        let t = 0.5 * PI * n as f64;
        assert!(!is_smooth(t, 1.0, n).unwrap());
        assert!(!is_smooth(0.0, 1.0, n).unwrap());
        assert!(!is_smooth(0.0, 0.01, n).unwrap());
        assert!(is_smooth(0.1 * PI * n as f64, 1.0, n).unwrap());
        assert!(is_smooth(0.0, 0.0, n).is_err());
        let gamma = (5f64.sqrt() - 1.0) / 2.0;
        assert!(is_smooth(PI * 1000.0 * gamma, 10.0, 1000).unwrap());
    }

    #[test]
    fn golden_ratio_by_enumeration() {
        let (n, k) = (1000.0f64, 10.0);
        let gamma = (5f64.sqrt() - 1.0) / 2.0;
        let worst = (1..=11)
            .map(|p| {
                let v = p as f64 * gamma;
                (v - v.round()).abs()
            })
            .fold(f64::INFINITY, f64::min);
        assert!(worst > k / n);
    }

    #[test]
    fn origin_and_pi_are_bad() {
        let mesh = MeshConfig::with_defaults(256).unwrap();
        let big = mesh.n_effective;
        assert!(site_is_bad(&mesh, big, 0.1).unwrap());
        if big % 2 == 0 {
            assert!(site_is_bad(&mesh, big / 2, 0.1).unwrap());
        }
        assert!(site_is_bad(&mesh, 1, 1.5).is_err());
    }

    proptest! {
        #[test]
        fn spread_is_monotone(a in 0.0..1e4f64, b in 0.0..1e4f64, l in 0.0..5.0f64, f in 0.0..1.0f64) {
            let tuple = PhaseTuple::new(700, vec![a, b]).unwrap();
            if is_spread(&tuple, l) {
                prop_assert!(is_spread(&tuple, l * f));
            }
            prop_assert!(tuple.weak_spread_margin() >= tuple.spread_margin());
        }
    }

    proptest! {
        #[test]
        fn smooth_window(n in 1_000_000usize..1_000_000_000, u in 0.0..1.0f64, sign in prop::bool::ANY) {
            let kappa = 0.1;
            let nf = n as f64;
            let lo = nf.powf(-1.0 + kappa);
            let hi = nf.powf(-2.0 * kappa);
            let y = lo * (1.0 + 1e-9) + u * (hi - lo) * (1.0 - 2e-9);
            let y = if sign { y } else { 2.0 - y };
            let t = y * PI * nf;
            prop_assert!(is_smooth(t, nf.powf(kappa), n).unwrap());
        }

        #[test]
        fn torus_norm_range(x in -1e6..1e6f64) {
            let v = torus_norm(x);
            prop_assert!((0.0..=0.5).contains(&v));
            prop_assert!((torus_norm(-x) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn bad_arcs_are_rare() {
        let mesh = MeshConfig::with_defaults(256).unwrap();
        let bad = classify_bad_arcs(&mesh, 0.1).unwrap();
        let frac_bad = bad.iter().filter(|&&b| b).count() as f64 / bad.len() as f64;
        assert!(frac_bad <= 0.05, "{frac_bad}");
        // Exact rational path agrees with the floating-point definition.
        let k = 256f64.powf(0.1);
        let mut mismatches = 0;
        for (i, &b) in bad.iter().enumerate() {
            let x: f64 = mesh.x(i + 1);
            let smooth = is_smooth(256.0 * x, k, 256).unwrap();
            if smooth != b {
                continue;
            }
            mismatches += 1;
        }
        assert!(mismatches <= 2, "{mismatches}");
    }

    #[test]
    fn spread_examples() {
        let n = 1000;
        let t = 0.3 * 2.0 * PI * n as f64;
        let pair = PhaseTuple::new(n, vec![t, -t]).unwrap();
        assert!(!is_spread(&pair, 0.5));
        assert!(is_weakly_spread(&pair, 0.5));
        let single = PhaseTuple::new(n, vec![t]).unwrap();
        assert!(is_spread(&single, 0.3 * n as f64 - 1e-6));
        assert!(!is_spread(&single, 0.3 * n as f64 + 1e-6));
        assert!((single.spread_margin() - 0.3 * n as f64).abs() < 1e-6);
        let dup = PhaseTuple::new(n, vec![t, t]).unwrap();
        assert!(!is_spread(&dup, 1e-9));
        let half = PhaseTuple::new(10, vec![PI * 10.0]).unwrap();
        assert!(is_spread(&half, 1.0));
    }

    #[test]
    fn dilation_of_duplicate_flags_precondition() {
        let tuple = PhaseTuple::new(1000, vec![123.0, 123.0]).unwrap();
        let d = find_dilation(&tuple, 1.0, 10.0).unwrap();
        assert_eq!(d.achieved, 0.0);
        assert!(!d.precondition_met);
    }

    #[test]
    fn random_tuples_meet_conditions() {
        let mut rng = crate::seed::rng(8);
        let t = random_tuple(4096, 3, 1.0, 20.0, &mut rng).unwrap();
        assert_eq!(t.m(), 3);
        assert!(is_spread(&t, 1.0));
        assert!(t.t.iter().all(|&x| is_smooth(x, 20.0, 4096).unwrap()));
        assert!(random_tuple(10, 2, 100.0, 1.0, &mut rng).is_err());
    }

    #[test]
    fn dilation_single_third() {
        let n = 999;
        let tuple = PhaseTuple::new(n, vec![2.0 * PI * n as f64 / 3.0]).unwrap();
        let d = find_dilation(&tuple, 1.0, 10.0).unwrap();
        assert!((d.achieved - 1.0 / 3.0).abs() < 1e-9);
        assert!(d.l >= 50 && d.l <= 99);
        assert!(find_dilation(&tuple, 1.0, 2000.0).is_err());
    }

    #[test]
    fn dilation_matches_exhaustive_scan() {
        let n = 4096;
        let k = 64.0;
        let tuple = PhaseTuple::new(n, vec![1234.567, -2890.123]).unwrap();
        let d = find_dilation(&tuple, 1.0, k).unwrap();
        let s = 2.0 * PI * n as f64;
        let combos = [
            (tuple.t[0] - tuple.t[1]) / s,
            (tuple.t[0] + tuple.t[1]) / s,
        ];
        let mut best = (0u64, -1.0);
        for l in 32..=64u64 {
            let v = combos
                .iter()
                .map(|c| {
                    let w = (l as f64 * c).rem_euclid(1.0);
                    w.min(1.0 - w)
                })
                .fold(f64::INFINITY, f64::min);
            if v > best.1 {
                best = (l, v);
            }
        }
        assert_eq!(d.l, best.0);
        assert!((d.achieved - best.1).abs() < 1e-12);
        assert!(d.achieved >= 1.0 / (8.0 * k));
    }

    #[test]
    fn pigeonhole() {
        let n = 500;
        let tuple = PhaseTuple::new(n, vec![2.0 * PI * n as f64 * 0.25, 2.0 * PI * n as f64 * 0.5]).unwrap();
        let (q, r) = pigeonhole_q0(&tuple, 10).unwrap();
        assert_eq!(q, 4);
        assert!(r.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn meta() {
        let n = 1000;
        let tuple = PhaseTuple::new(n, vec![0.37 * PI * n as f64]).unwrap();
        let m = arith_meta(&tuple, &[1.0, 2.0, 4.0, 400.0]).unwrap();
        assert_eq!(m.smooth_k, Some(4.0));
    }
}
