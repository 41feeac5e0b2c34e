//! The phase-space random walk `S_n(t) = Σ_j ξ_j w_j(t)`.
//!
//! `w_j = (a_j, (j/n) b_j, b_j, -(j/n) a_j) ∈ R^{4m}` with `a_j = (sin(j t_r/n))_r`
//! and `b_j = (cos(j t_r/n))_r`: the imaginary and real parts of `P̃_n` and
//! `P̃_n'` at the `m` phases.  The complex-coefficient variant uses
//! `u_j = (a_j, (j/n) b_j)` and `v_j = (b_j, -(j/n) a_j)` in `R^{2m}`.

use std::ops::Sub;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::arithmetic::{torus_norm, PhaseTuple};
use crate::error::{ensure, Error, Result};
use crate::polymodel::{binomial, CoefficientDist};
use crate::scalar::{from_i64, from_usize, lit, to_f64, Scalar};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum WalkVariant {
    /// Real coefficients, steps `w_j ∈ R^{4m}`.
    Full4m,
    /// Complex coefficients `(ξ^{(1)} + iξ^{(2)})`: steps `u_j` and `v_j` in `R^{2m}`.
    Complex2m,
}

impl WalkVariant {
    pub fn dim(self, m: usize) -> usize {
        match self {
            WalkVariant::Full4m => 4 * m,
            WalkVariant::Complex2m => 2 * m,
        }
    }

    /// Default index range: `[-n, n]` for the real walk, `[1, n]` for the complex one.
    pub fn default_range(self, n: usize) -> (i64, i64) {
        match self {
            WalkVariant::Full4m => (-(n as i64), n as i64),
            WalkVariant::Complex2m => (1, n as i64),
        }
    }
}

/// `w_j` for one index.
pub fn step_vector<T: Scalar>(tuple: &PhaseTuple<T>, j: i64) -> Vec<T> {
    let m = tuple.m();
    let n = from_usize::<T>(tuple.n);
    let jn = from_i64::<T>(j) / n;
    let mut w = vec![T::zero(); 4 * m];
    for (r, &t) in tuple.t.iter().enumerate() {
        let (a, b) = (from_i64::<T>(j) * t / n).sin_cos();
        w[r] = a;
        w[m + r] = jn * b;
        w[2 * m + r] = b;
        w[3 * m + r] = -jn * a;
    }
    w
}

/// Steps of the walk over an index range.
#[derive(Clone, Debug, PartialEq)]
pub struct StepMatrix<T> {
    pub tuple: PhaseTuple<T>,
    pub j_lo: i64,
    pub j_hi: i64,
    pub variant: WalkVariant,
    pub dim: usize,
    /// Row-major.  `Full4m`: one row `w_j` per `j`.  `Complex2m`: the rows
    /// `u_j` for every `j`, followed by the rows `v_j`.
    pub rows: Vec<T>,
}

impl<T: Scalar> StepMatrix<T> {
    pub fn row_count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.rows[i * self.dim..(i + 1) * self.dim]
    }

    pub fn index_count(&self) -> usize {
        (self.j_hi - self.j_lo + 1) as usize
    }
}

pub fn step_matrix<T: Scalar>(
    tuple: &PhaseTuple<T>,
    j_lo: i64,
    j_hi: i64,
    variant: WalkVariant,
) -> Result<StepMatrix<T>> {
    let n = tuple.n as i64;
    ensure!(
        -n <= j_lo && j_lo <= j_hi && j_hi <= n,
        "index range [{j_lo}, {j_hi}] must lie inside [-{n}, {n}]"
    );
    let m = tuple.m();
    let dim = variant.dim(m);
    let mut rows = Vec::with_capacity((j_hi - j_lo + 1) as usize * 4 * m);
    match variant {
        WalkVariant::Full4m => {
            for j in j_lo..=j_hi {
                rows.extend(step_vector(tuple, j));
            }
        }
        WalkVariant::Complex2m => {
            for half in [0, 1] {
                for j in j_lo..=j_hi {
                    let w = step_vector(tuple, j);
                    rows.extend_from_slice(&w[2 * m * half..2 * m * (half + 1)]);
                }
            }
        }
    }
    Ok(StepMatrix {
        tuple: tuple.clone(),
        j_lo,
        j_hi,
        variant,
        dim,
        rows,
    })
}

/// Covariance `V = |J|^{-1} Σ_j w_j w_jᵀ` and its smallest eigenvalue.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    pub v: DMatrix<f64>,
    pub sigma_min: f64,
}

pub fn covariance<T: Scalar>(
    tuple: &PhaseTuple<T>,
    j_lo: i64,
    j_hi: i64,
    variant: WalkVariant,
) -> Result<Covariance> {
    let sm = step_matrix(tuple, j_lo, j_hi, variant)?;
    let count = sm.index_count();
    ensure!(
        count >= sm.dim,
        "covariance needs at least {} indices, got {count}",
        sm.dim
    );
    let v = gram(&sm) / count as f64;
    let sigma_min = smallest_eigenvalue(&v);
    Ok(Covariance { v, sigma_min })
}

/// `StepMatrixᵀ · StepMatrix`.
pub fn gram<T: Scalar>(sm: &StepMatrix<T>) -> DMatrix<f64> {
    let d = sm.dim;
    let mut g = DMatrix::<f64>::zeros(d, d);
    for i in 0..sm.row_count() {
        let r: Vec<f64> = sm.row(i).iter().map(|&x| to_f64(x)).collect();
        for a in 0..d {
            for b in a..d {
                g[(a, b)] += r[a] * r[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            g[(a, b)] = g[(b, a)];
        }
    }
    g
}

pub fn smallest_eigenvalue(v: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(v.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Precomputed steps for fast repeated sampling of the normalised walk.
#[derive(Clone, Debug)]
pub struct WalkSampler {
    pub dim: usize,
    rows: Vec<f64>,
    scale: f64,
}

impl WalkSampler {
    /// Walk over the variant's default range, normalised by `|J|^{-1/2}`.
    pub fn new<T: Scalar>(tuple: &PhaseTuple<T>, variant: WalkVariant) -> Result<Self> {
        let (lo, hi) = variant.default_range(tuple.n);
        let sm = step_matrix(tuple, lo, hi, variant)?;
        Ok(Self {
            dim: sm.dim,
            rows: sm.rows.iter().map(|&x| to_f64(x)).collect(),
            scale: 1.0 / (sm.index_count() as f64).sqrt(),
        })
    }

    pub fn steps(&self) -> usize {
        self.rows.len() / self.dim
    }

    /// One normalised walk value written into `out`.
    pub fn sample_into<R: RngCore>(&self, dist: &CoefficientDist, rng: &mut R, out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        match dist {
            CoefficientDist::Rademacher => {
                let mut bits = 0u64;
                for (i, row) in self.rows.chunks_exact(d).enumerate() {
                    if i % 64 == 0 {
                        bits = rng.next_u64();
                    }
                    if bits & 1 == 0 {
                        out.iter_mut().zip(row).for_each(|(o, &w)| *o += w);
                    } else {
                        out.iter_mut().zip(row).for_each(|(o, &w)| *o -= w);
                    }
                    bits >>= 1;
                }
            }
            CoefficientDist::PointMass => {}
            _ => {
                for row in self.rows.chunks_exact(d) {
                    let xi = dist.draw_real(rng);
                    out.iter_mut().zip(row).for_each(|(o, &w)| *o += xi * w);
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= self.scale);
    }
}

/// One draw of the normalised walk.
#[derive(Clone, Debug)]
pub struct WalkSample {
    pub value: Vec<f64>,
    pub seed: u64,
    pub dist: CoefficientDist,
}

pub fn sample_walk<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    seed: u64,
    variant: WalkVariant,
) -> Result<WalkSample> {
    let s = WalkSampler::new(tuple, variant)?;
    let mut value = vec![0.0; s.dim];
    s.sample_into(dist, &mut seed::rng(seed), &mut value);
    Ok(WalkSample {
        value,
        seed,
        dist: dist.clone(),
    })
}

const BLOCK: usize = 4096;

/// Runs `samples` draws in fixed blocks; block `b` uses stream `b` of `seed`.
/// Per-block results come back in block order whatever the thread count.
pub(crate) fn mc_blocks<A, F>(samples: usize, seed: u64, f: F) -> Vec<A>
where
    A: Send,
    F: Fn(&mut ChaCha8Rng, usize) -> A + Sync,
{
    let blocks = samples.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(|b| {
            let count = BLOCK.min(samples - b * BLOCK);
            f(&mut seed::stream(seed, b as u64), count)
        })
        .collect()
}

/// Result of a characteristic-function evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CharFnValue {
    /// `ln |E e(⟨S_n(t), x⟩)|` for the unnormalised walk.
    pub log_modulus: f64,
    /// Some factor vanished to rounding precision; `log_modulus` holds the sentinel.
    pub saturated: bool,
    /// Monte Carlo standard error (0 for closed forms).
    pub stderr: f64,
}

/// Sentinel standing in for `ln 0`.
pub const LOG_ZERO: f64 = -1e9;

#[derive(Clone, Copy, Debug)]
pub struct CharFnOptions {
    pub variant: WalkVariant,
    /// Draws of `ξ` for laws without a closed form.
    pub samples: usize,
    pub seed: u64,
    /// Refuse Monte Carlo results with a larger standard error.
    pub max_stderr: Option<f64>,
}

impl Default for CharFnOptions {
    fn default() -> Self {
        Self {
            variant: WalkVariant::Full4m,
            samples: 100_000,
            seed: 0,
            max_stderr: None,
        }
    }
}

/// `ln |E e^{i⟨S_n(t), x⟩}|` with `S_n` unnormalised over the variant's range.
pub fn charfn_log_modulus<T: Scalar>(
    tuple: &PhaseTuple<T>,
    x: &[f64],
    dist: &CoefficientDist,
    opts: &CharFnOptions,
) -> Result<CharFnValue> {
    let (lo, hi) = opts.variant.default_range(tuple.n);
    let sm = step_matrix(tuple, lo, hi, opts.variant)?;
    ensure!(
        x.len() == sm.dim,
        "probe has dimension {}, walk has dimension {}",
        x.len(),
        sm.dim
    );
    ensure!(x.iter().all(|v| v.is_finite()), "probe must be finite");
    let proj: Vec<f64> = (0..sm.row_count())
        .map(|i| sm.row(i).iter().zip(x).map(|(&w, &xv)| to_f64(w) * xv).sum())
        .collect();
    let exact = |f: &dyn Fn(f64) -> f64| {
        let mut s = 0.0;
        for &a in &proj {
            let v = f(a);
            if v.abs() <= f64::EPSILON {
                return CharFnValue {
                    log_modulus: LOG_ZERO,
                    saturated: true,
                    stderr: 0.0,
                };
            }
            s += v.abs().ln();
        }
        CharFnValue {
            log_modulus: s,
            saturated: false,
            stderr: 0.0,
        }
    };
    let sqrt3 = 3f64.sqrt();
    Ok(match dist {
        CoefficientDist::Rademacher => exact(&|a: f64| a.cos()),
        CoefficientDist::UniformSymmetric => exact(&|a: f64| {
            let u = sqrt3 * a;
            if u == 0.0 {
                1.0
            } else {
                u.sin() / u
            }
        }),
        CoefficientDist::GaussianReal | CoefficientDist::GaussianComplexSplit => CharFnValue {
            log_modulus: -0.5 * proj.iter().map(|a| a * a).sum::<f64>(),
            saturated: false,
            stderr: 0.0,
        },
        CoefficientDist::PointMass => CharFnValue {
            log_modulus: 0.0,
            saturated: false,
            stderr: 0.0,
        },
        CoefficientDist::Custom(_) => charfn_monte_carlo(&proj, dist, opts)?,
    })
}

fn charfn_monte_carlo(proj: &[f64], dist: &CoefficientDist, opts: &CharFnOptions) -> Result<CharFnValue> {
    let s = opts.samples;
    ensure!(s >= 1000, "Monte Carlo characteristic function needs at least 1000 draws");
    let mut rng = seed::rng(opts.seed);
    let xi: Vec<f64> = (0..s).map(|_| dist.draw_real(&mut rng)).collect();
    if let Some(v) = xi.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite { value: *v, index: 0 });
    }
    let (mut total, mut se2) = (0.0, 0.0);
    for &a in proj {
        let (mut c, mut sn) = (0.0, 0.0);
        for &v in &xi {
            let (si, co) = (a * v).sin_cos();
            c += co;
            sn += si;
        }
        let phi = (c * c + sn * sn).sqrt() / s as f64;
        let se = ((1.0 - phi * phi).max(0.0) / s as f64).sqrt();
        if phi <= 3.0 * se {
            return Err(Error::Precision {
                requested: opts.max_stderr.unwrap_or(f64::NAN),
                samples: s,
            });
        }
        total += phi.ln();
        se2 += (se / phi).powi(2);
    }
    let stderr = se2.sqrt();
    if let Some(max) = opts.max_stderr {
        if stderr > max {
            return Err(Error::Precision {
                requested: max,
                samples: s,
            });
        }
    }
    Ok(CharFnValue {
        log_modulus: total,
        saturated: false,
        stderr,
    })
}

/// `‖w‖_ξ = (E ‖w(ξ - ξ')‖²)^{1/2}`.  Closed form for Rademacher and the
/// point mass, Monte Carlo (`samples` pairs) otherwise.
pub fn xi_norm(w: f64, dist: &CoefficientDist, samples: usize, seed: u64) -> Result<f64> {
    xi_norm_estimate(w, dist, samples, seed).map(|(v, _)| v)
}

/// As [`xi_norm`], with the standard error of the estimate.
pub fn xi_norm_estimate(w: f64, dist: &CoefficientDist, samples: usize, seed: u64) -> Result<(f64, f64)> {
    match dist {
        CoefficientDist::Rademacher => {
            let d = torus_norm(2.0 * w);
            Ok(((d * d / 2.0).sqrt(), 0.0))
        }
        CoefficientDist::PointMass => Ok((0.0, 0.0)),
        _ => {
            ensure!(samples >= 1000, "ξ-norm Monte Carlo needs at least 1000 samples");
            let parts = mc_blocks(samples, seed, |rng, count| {
                let (mut s1, mut s2) = (0.0, 0.0);
                for _ in 0..count {
                    let d = torus_norm(w * (dist.draw_real(rng) - dist.draw_real(rng)));
                    s1 += d * d;
                    s2 += d * d * d * d;
                }
                (s1, s2)
            });
            let (s1, s2) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
            let nf = samples as f64;
            let mean = s1 / nf;
            let var = (s2 / nf - mean * mean).max(0.0);
            let v = mean.sqrt();
            let se = if v > 0.0 { (var / nf).sqrt() / (2.0 * v) } else { 0.0 };
            Ok((v, se))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PsiVariant {
    /// `ψ(j) = Σ_r y_r cos(j t_r/n) - y'_r (j/n) sin(j t_r/n)`.
    Psi,
    /// `ψ'(j) = Σ_r y_r sin(j t_r/n) + y'_r (j/n) cos(j t_r/n)`.
    PsiPrime,
}

/// Values of `ψ` (or `ψ'`) on `j_lo..=j_hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct PsiSequence<T> {
    pub tuple: PhaseTuple<T>,
    pub y: Vec<T>,
    pub y_prime: Vec<T>,
    pub j_lo: i64,
    pub values: Vec<T>,
    pub variant: PsiVariant,
}

impl<T: Scalar> PsiSequence<T> {
    pub fn at(&self, j: i64) -> Option<T> {
        let i = j - self.j_lo;
        (i >= 0).then(|| self.values.get(i as usize).copied()).flatten()
    }
}

pub fn psi_value<T: Scalar>(tuple: &PhaseTuple<T>, y: &[T], yp: &[T], j: i64, variant: PsiVariant) -> T {
    let n = from_usize::<T>(tuple.n);
    let jt = from_i64::<T>(j);
    let mut s = T::zero();
    for (r, &t) in tuple.t.iter().enumerate() {
        let (sn, cs) = (jt * t / n).sin_cos();
        s = s + match variant {
            PsiVariant::Psi => y[r] * cs - yp[r] * (jt / n) * sn,
            PsiVariant::PsiPrime => y[r] * sn + yp[r] * (jt / n) * cs,
        };
    }
    s
}

pub fn psi_sequence<T: Scalar>(
    tuple: &PhaseTuple<T>,
    y: &[T],
    yp: &[T],
    j_lo: i64,
    j_hi: i64,
    variant: PsiVariant,
) -> Result<PsiSequence<T>> {
    ensure!(
        y.len() == tuple.m() && yp.len() == tuple.m(),
        "y and y' must have length m = {}",
        tuple.m()
    );
    ensure!(j_lo <= j_hi, "empty index range");
    let values = (j_lo..=j_hi).map(|j| psi_value(tuple, y, yp, j, variant)).collect();
    Ok(PsiSequence {
        tuple: tuple.clone(),
        y: y.to_vec(),
        y_prime: yp.to_vec(),
        j_lo,
        values,
        variant,
    })
}

/// `(Δ^k_q g)(j) = Σ_i C(k,i) (-1)^i g(j + iq)`, computed as `k` first
/// differences of step `q`.  The output is `k q` entries shorter.
pub fn finite_difference<F>(seq: &[F], k: usize, q: usize) -> Result<Vec<F>>
where
    F: Copy + Sub<Output = F>,
{
    ensure!(k >= 1 && q >= 1, "finite differences need k ≥ 1 and q ≥ 1");
    let mut cur = seq.to_vec();
    for _ in 0..k {
        if cur.len() <= q {
            return Ok(Vec::new());
        }
        cur = (0..cur.len() - q).map(|j| cur[j] - cur[j + q]).collect();
    }
    Ok(cur)
}

/// `e_n(θ) = e^{iθ/n}`.
pub fn e_n<T: Scalar>(theta: T, n: usize) -> Complex<T> {
    let (s, c) = (theta / from_usize::<T>(n)).sin_cos();
    Complex::new(c, s)
}

/// `(D_{t0} f)(j) = Σ_{a=0}^{2} C(2,a) (-1)^a e_n(-a L t0) f(j + aL)`.
pub fn twisted_difference<T: Scalar>(seq: &[Complex<T>], t0: T, l: usize, n: usize) -> Result<Vec<Complex<T>>> {
    ensure!(l >= 1 && n >= 1, "twisted difference needs L ≥ 1 and n ≥ 1");
    if seq.len() <= 2 * l {
        return Ok(Vec::new());
    }
    let lt = from_usize::<T>(l) * t0;
    let w1 = e_n(-lt, n) * lit::<T>(2.0);
    let w2 = e_n(-(lt + lt), n);
    Ok((0..seq.len() - 2 * l)
        .map(|j| seq[j] - w1 * seq[j + l] + w2 * seq[j + 2 * l])
        .collect())
}

/// `f_t(j) = (1 - e_n(p t))^k e_n(j t)` (with `p = ℓ q₀`).
pub fn f_t<T: Scalar>(t: T, n: usize, j: i64, p: usize, k: usize) -> Complex<T> {
    let one = Complex::new(T::one(), T::zero());
    (one - e_n(from_usize::<T>(p) * t, n)).powi(k as i32) * e_n(from_i64::<T>(j) * t, n)
}

/// `∂_t f_t(j)`, written without division so it is valid where `e_n(pt) = 1`.
pub fn partial_f_t<T: Scalar>(t: T, n: usize, j: i64, p: usize, k: usize) -> Complex<T> {
    let one = Complex::new(T::one(), T::zero());
    let i = Complex::new(T::zero(), T::one());
    let nf = from_usize::<T>(n);
    let pf = from_usize::<T>(p);
    let e = e_n(pf * t, n);
    let ej = e_n(from_i64::<T>(j) * t, n);
    let base = one - e;
    let term1 = i * (from_i64::<T>(j) / nf) * base.powi(k as i32);
    let term2 = if k == 0 {
        Complex::new(T::zero(), T::zero())
    } else {
        i * (pf / nf) * e * base.powi(k as i32 - 1) * from_usize::<T>(k)
    };
    (term1 - term2) * ej
}

/// `β_L(s) = -2i (L/n) e_n(Ls) / (1 - e_n(Ls))`.
pub fn beta_l<T: Scalar>(s: T, l: usize, n: usize) -> Complex<T> {
    let one = Complex::new(T::one(), T::zero());
    let e = e_n(from_usize::<T>(l) * s, n);
    let c = Complex::new(T::zero(), -lit::<T>(2.0) * from_usize::<T>(l) / from_usize::<T>(n));
    c * e / (one - e)
}

/// Closed form of `Δ^k_q ψ(j)`:
/// `Re Σ_r [y_r (1 - e_n(q t_r))^k e_n(j t_r) + y'_r ∂_t((1 - e_n(q t))^k e_n(j t))|_{t_r}]`.
pub fn dpsi_closed_form<T: Scalar>(tuple: &PhaseTuple<T>, y: &[T], yp: &[T], k: usize, q: usize, j: i64) -> T {
    let mut s = Complex::new(T::zero(), T::zero());
    for (r, &t) in tuple.t.iter().enumerate() {
        s = s + f_t(t, tuple.n, j, q, k) * y[r] + partial_f_t(t, tuple.n, j, q, k) * yp[r];
    }
    s.re
}

/// `k = ⌊4 m K* / κ⌋ + 1`.
pub fn default_difference_order(m: usize, k_star: f64, kappa: f64) -> usize {
    (4.0 * m as f64 * k_star / kappa).floor() as usize + 1
}

/// Both sides of the shift inequality, for inspection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ShiftBound<T> {
    pub lhs: T,
    pub rhs: T,
}

/// Parameters of [`shift_bound_sides`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftParams {
    pub j: i64,
    pub l: usize,
    pub l_prime: usize,
    pub ell: usize,
    pub q0: usize,
    pub k: usize,
}

/// `lhs = (L'/n) |y'_1 (1-e_n(2L't_1))² (1-e_n(ℓq₀t_1))^k Π_{r≥2} (1-e_n(L(t_1-t_r)))² (1-e_n(L(t_1+t_r)))²|`,
/// `rhs = Σ_{i=1}^{k} Σ_{a=0}^{4(m-1)} Σ_{b=0}^{3} ‖ψ(j + iℓq₀ + aL + bL')‖`.
pub fn shift_bound_sides<T: Scalar>(tuple: &PhaseTuple<T>, y: &[T], yp: &[T], p: ShiftParams) -> Result<ShiftBound<T>> {
    let m = tuple.m();
    ensure!(y.len() == m && yp.len() == m, "y and y' must have length m = {m}");
    ensure!(p.k >= 1 && p.l >= 1 && p.l_prime >= 1 && p.ell >= 1 && p.q0 >= 1, "shift parameters must be positive");
    let n = tuple.n as i64;
    let reach = (p.k * p.ell * p.q0 + 4 * (m - 1) * p.l + 3 * p.l_prime) as i64;
    ensure!(
        p.j >= -n && p.j + reach <= n,
        "shifted indices [{}, {}] leave [-{n}, {n}]",
        p.j,
        p.j + reach
    );
    let one = Complex::new(T::one(), T::zero());
    let nn = tuple.n;
    let t1 = tuple.t[0];
    let lf = from_usize::<T>(p.l);
    let lpf = from_usize::<T>(p.l_prime);
    let mut prod = (one - e_n(lit::<T>(2.0) * lpf * t1, nn)).powi(2)
        * (one - e_n(from_usize::<T>(p.ell * p.q0) * t1, nn)).powi(p.k as i32)
        * yp[0];
    for &tr in &tuple.t[1..] {
        prod = prod * (one - e_n(lf * (t1 - tr), nn)).powi(2) * (one - e_n(lf * (t1 + tr), nn)).powi(2);
    }
    let lhs = lpf / from_usize::<T>(nn) * prod.norm();
    let mut rhs = T::zero();
    for i in 1..=p.k {
        for a in 0..=4 * (m - 1) {
            for b in 0..=3 {
                let jj = p.j + (i * p.ell * p.q0 + a * p.l + b * p.l_prime) as i64;
                rhs = rhs + torus_norm(psi_value(tuple, y, yp, jj, PsiVariant::Psi));
            }
        }
    }
    Ok(ShiftBound { lhs, rhs })
}

/// Monte Carlo estimate with binomial standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Proportion {
    pub p: f64,
    pub stderr: f64,
}

impl Proportion {
    pub fn from_counts(hits: u64, total: u64) -> Self {
        let p = hits as f64 / total as f64;
        Self {
            p,
            stderr: (p * (1.0 - p) / total as f64).sqrt(),
        }
    }
}

/// `P(|S̃ - w| ≤ δ)` for each radius, from one shared set of walk draws
/// (normalised walk, Euclidean ball).
pub fn small_ball_curve<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    center: &[f64],
    deltas: &[f64],
    samples: usize,
    seed: u64,
) -> Result<Vec<Proportion>> {
    ensure!(samples >= 10_000, "small-ball estimates need at least 10⁴ samples");
    ensure!(deltas.iter().all(|&d| d >= 0.0), "radii must be non-negative");
    let sampler = WalkSampler::new(tuple, WalkVariant::Full4m)?;
    ensure!(center.len() == sampler.dim, "center must have dimension {}", sampler.dim);
    let counts = mc_blocks(samples, seed, |rng, count| {
        let mut out = vec![0.0; sampler.dim];
        let mut hits = vec![0u64; deltas.len()];
        for _ in 0..count {
            sampler.sample_into(dist, rng, &mut out);
            let r2: f64 = out.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            for (h, &d) in hits.iter_mut().zip(deltas) {
                if r2 <= d * d {
                    *h += 1;
                }
            }
        }
        hits
    });
    let mut total = vec![0u64; deltas.len()];
    for c in counts {
        total.iter_mut().zip(c).for_each(|(t, v)| *t += v);
    }
    Ok(total
        .into_iter()
        .map(|h| Proportion::from_counts(h, samples as u64))
        .collect())
}

pub fn small_ball_estimate<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    center: &[f64],
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<Proportion> {
    Ok(small_ball_curve(tuple, dist, center, &[delta], samples, seed)?[0])
}

/// Polynomial small-ball quantities at a single phase `t`:
/// `P(|P̃_n(t)| ≤ δ)` and `P(|P̃_n'(t)| ≤ δ)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PolySmallBall {
    pub value: Proportion,
    pub derivative: Proportion,
}

pub fn polynomial_small_ball<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    delta: f64,
    samples: usize,
    seed: u64,
) -> Result<PolySmallBall> {
    ensure!(tuple.m() == 1, "polynomial small-ball projection needs m = 1");
    ensure!(samples >= 10_000, "small-ball estimates need at least 10⁴ samples");
    let sampler = WalkSampler::new(tuple, WalkVariant::Full4m)?;
    let counts = mc_blocks(samples, seed, |rng, count| {
        let mut out = [0.0; 4];
        let (mut hv, mut hd) = (0u64, 0u64);
        for _ in 0..count {
            sampler.sample_into(dist, rng, &mut out);
            // (Im P̃, Im P̃', Re P̃, Re P̃')
            if out[0] * out[0] + out[2] * out[2] <= delta * delta {
                hv += 1;
            }
            if out[1] * out[1] + out[3] * out[3] <= delta * delta {
                hd += 1;
            }
        }
        (hv, hd)
    });
    let (hv, hd) = counts.iter().fold((0, 0), |a, b| (a.0 + b.0, a.1 + b.1));
    Ok(PolySmallBall {
        value: Proportion::from_counts(hv, samples as u64),
        derivative: Proportion::from_counts(hd, samples as u64),
    })
}

/// `Σ_{i=0}^{k} C(k,i) (-1)^i g(j + iq)` evaluated literally (used as an
/// independent check of [`finite_difference`]).
pub fn finite_difference_binomial(seq: &[f64], k: usize, q: usize, j: usize) -> f64 {
    (0..=k)
        .map(|i| {
            let s = if i % 2 == 0 { 1.0 } else { -1.0 };
            s * binomial(k, i) * seq[j + i * q]
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymodel::{sample, ModelSpec, PolySample, Scale};
    use proptest::prelude::*;
    use rand::Rng;
    use std::f64::consts::PI;

    fn tuple(n: usize, t: &[f64]) -> PhaseTuple<f64> {
        PhaseTuple::new(n, t.to_vec()).unwrap()
    }

    #[test]
    fn step_rows() {
        let tp = tuple(100, &[1.3, 40.0]);
        let w0 = step_vector(&tp, 0);
        assert_eq!(w0, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let sm = step_matrix(&tp, -100, 100, WalkVariant::Full4m).unwrap();
        for i in 0..sm.row_count() {
            let j = sm.j_lo + i as i64;
            let bound = 1f64.max(j.abs() as f64 / 100.0);
            assert!(sm.row(i).iter().all(|v| v.abs() <= bound + 1e-15));
        }
        for j in [1i64, 17, 99] {
            let a = step_vector(&tp, j);
            let b = step_vector(&tp, -j);
            for r in 0..2 {
                assert!((a[r] - b[r] - 2.0 * a[r]).abs() < 1e-12);
                assert!((a[2 + r] - b[2 + r] - 2.0 * a[2 + r]).abs() < 1e-12);
                assert!((a[4 + r] + b[4 + r] - 2.0 * a[4 + r]).abs() < 1e-12);
                assert!((a[6 + r] + b[6 + r] - 2.0 * a[6 + r]).abs() < 1e-12);
                assert!((a[r] + b[r]).abs() < 1e-12 && (a[6 + r] - b[6 + r]).abs() < 1e-12);
            }
        }
        let flat = step_matrix(&tuple(10, &[0.0]), -10, 10, WalkVariant::Full4m).unwrap();
        for i in 0..flat.row_count() {
            assert_eq!(flat.row(i)[0], 0.0);
            assert_eq!(flat.row(i)[2], 1.0);
        }
        assert!(step_matrix(&tp, -101, 0, WalkVariant::Full4m).is_err());
    }

    #[test]
    fn covariance_examples() {
        let n = 1000;
        let c = covariance(&tuple(n, &[PI * n as f64 / 2.0]), -(n as i64), n as i64, WalkVariant::Full4m).unwrap();
        let direct_sin2: f64 =
            (-1000i64..=1000).map(|j| (j as f64 * PI / 2.0).sin().powi(2)).sum::<f64>() / 2001.0;
        assert!((c.v[(0, 0)] - direct_sin2).abs() < 1e-12);
        assert!((c.v[(0, 0)] - 0.5).abs() < 1e-3 && (c.v[(2, 2)] - 0.5).abs() < 1e-3);
        let dup = covariance(&tuple(n, &[123.4, 123.4]), -1000, 1000, WalkVariant::Full4m).unwrap();
        assert!(dup.sigma_min <= 1e-6 * dup.v.trace());
        let eig = SymmetricEigen::new(c.v.clone()).eigenvalues;
        assert!(eig.iter().all(|&e| e >= -1e-12));
    }

    #[test]
    fn gram_identity() {
        let tp = tuple(64, &[3.1, -20.2]);
        let sm = step_matrix(&tp, -64, 64, WalkVariant::Full4m).unwrap();
        let c = covariance(&tp, -64, 64, WalkVariant::Full4m).unwrap();
        let g = gram(&sm);
        let mut direct = DMatrix::<f64>::zeros(8, 8);
        for j in -64..=64 {
            let w = nalgebra::DVector::from_vec(step_vector(&tp, j));
            direct += &w * w.transpose();
        }
        assert!((g.clone() - direct).abs().max() < 1e-10);
        assert!((c.v * 129.0 - g).abs().max() < 1e-10);
    }

    #[test]
    fn walk_samples() {
        let tp = tuple(512, &[700.3]);
        let z = sample_walk(&tp, &CoefficientDist::PointMass, 3, WalkVariant::Full4m).unwrap();
        assert_eq!(z.value, vec![0.0; 4]);
        let c = covariance(&tp, -512, 512, WalkVariant::Full4m).unwrap();
        let sampler = WalkSampler::new(&tp, WalkVariant::Full4m).unwrap();
        let m = 100_000;
        let mut rng = seed::rng(9);
        let mut out = [0.0; 4];
        let mut acc = DMatrix::<f64>::zeros(4, 4);
        let mut acc2 = DMatrix::<f64>::zeros(4, 4);
        for _ in 0..m {
            sampler.sample_into(&CoefficientDist::Rademacher, &mut rng, &mut out);
            for a in 0..4 {
                for b in 0..4 {
                    let v = out[a] * out[b];
                    acc[(a, b)] += v;
                    acc2[(a, b)] += v * v;
                }
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                let mean = acc[(a, b)] / m as f64;
                let se = ((acc2[(a, b)] / m as f64 - mean * mean) / m as f64).sqrt();
                assert!((mean - c.v[(a, b)]).abs() <= 4.0 * se + 1e-12, "{a}{b}");
            }
        }
        // Mahalanobis norm of Gaussian draws has mean 4m.
        let inv = c.v.clone().try_inverse().unwrap();
        let mut maha = 0.0;
        let g = 20_000;
        for _ in 0..g {
            sampler.sample_into(&CoefficientDist::GaussianReal, &mut rng, &mut out);
            let v = nalgebra::DVector::from_column_slice(&out);
            maha += (v.transpose() * &inv * &v)[(0, 0)];
        }
        let mean = maha / g as f64;
        assert!((mean - 4.0).abs() < 5.0 * (8.0 / g as f64).sqrt(), "{mean}");
    }

    #[test]
    fn complex_walk_is_imaginary_part() {
        // Im P̃ and Im P̃' at t_r come from ξ^{(1)}_j = (ξ_j - ξ_{-j}) and
        // ξ^{(2)}_j = (ξ'_j + ξ'_{-j}) on the u_j, v_j steps, plus ξ'_0 v_0.
        let n = 50;
        let spec = ModelSpec::symmetric(n, CoefficientDist::GaussianComplexSplit);
        let poly: PolySample<f64> = sample(&spec, 4).unwrap();
        let tp = tuple(n, &[17.0, -60.5]);
        let sm = step_matrix(&tp, 1, n as i64, WalkVariant::Complex2m).unwrap();
        let c = |j: i64| poly.coeffs[(j + n as i64) as usize];
        let mut walk = vec![0.0; 4];
        for j in 1..=n as i64 {
            let x1 = c(j).re - c(-j).re;
            let x2 = c(j).im + c(-j).im;
            let u = sm.row((j - 1) as usize);
            let v = sm.row(n + (j - 1) as usize);
            for d in 0..4 {
                walk[d] += x1 * u[d] + x2 * v[d];
            }
        }
        let norm = (2.0 * n as f64 + 1.0).sqrt();
        for (r, &t) in tp.t.iter().enumerate() {
            let p = poly.evaluate(t, 0, Scale::Rescaled).unwrap() * norm;
            let dp = poly.evaluate(t, 1, Scale::Rescaled).unwrap() * norm;
            let im_p = walk[r] + c(0).im;
            let im_dp = walk[2 + r];
            assert!((p.im - im_p).abs() < 1e-10);
            assert!((dp.im - im_dp).abs() < 1e-10);
        }
    }

    #[test]
    fn charfn_closed_forms() {
        let n = 300;
        let tp = tuple(n, &[211.7]);
        let opts = CharFnOptions::default();
        let zero = charfn_log_modulus(&tp, &[0.0; 4], &CoefficientDist::Rademacher, &opts).unwrap();
        assert_eq!(zero.log_modulus, 0.0);
        let x = [0.03, -0.01, 0.02, 0.05];
        let g = charfn_log_modulus(&tp, &x, &CoefficientDist::GaussianReal, &opts).unwrap();
        let c = covariance(&tp, -(n as i64), n as i64, WalkVariant::Full4m).unwrap();
        let xv = nalgebra::DVector::from_column_slice(&x);
        let quad = (xv.transpose() * &c.v * &xv)[(0, 0)];
        assert!((g.log_modulus + 0.5 * 601.0 * quad).abs() < 1e-10 * (1.0 + g.log_modulus.abs()));
        // Probe with ⟨w_0, x⟩ = π/2 exactly.
        let sat = charfn_log_modulus(&tp, &[0.0, 0.0, PI / 2.0, 0.0], &CoefficientDist::Rademacher, &opts).unwrap();
        assert!(sat.saturated && sat.log_modulus == LOG_ZERO);
    }

    #[test]
    fn charfn_monte_carlo_tracks_closed_form() {
        let tp = tuple(20, &[5.5]);
        let rad = crate::polymodel::CustomDist::new(
            "signs",
            |r: &mut dyn RngCore| if r.next_u32() & 1 == 0 { 1.0 } else { -1.0 },
            vec![0.0, 1.0, 0.0, 1.0],
        )
        .unwrap();
        let x = [0.05, 0.1, -0.07, 0.02];
        let opts = CharFnOptions {
            samples: 200_000,
            seed: 5,
            ..Default::default()
        };
        let mc = charfn_log_modulus(&tp, &x, &CoefficientDist::Custom(rad.clone()), &opts).unwrap();
        let ex = charfn_log_modulus(&tp, &x, &CoefficientDist::Rademacher, &opts).unwrap();
        assert!(mc.stderr > 0.0);
        assert!((mc.log_modulus - ex.log_modulus).abs() <= 4.0 * mc.stderr + 1e-3);
        let strict = CharFnOptions {
            samples: 1000,
            max_stderr: Some(1e-9),
            ..opts
        };
        assert!(matches!(
            charfn_log_modulus(&tp, &x, &CoefficientDist::Custom(rad), &strict),
            Err(Error::Precision { .. })
        ));
    }

    proptest! {
        #[test]
        fn charfn_below_xi_norm_bound(seed in 0u64..1000) {
            let mut rng = seed::rng(seed);
            let n = 64;
            let tp = tuple(n, &[rng.random_range(0.0..2.0 * PI * n as f64)]);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let v = charfn_log_modulus(&tp, &x, &CoefficientDist::Rademacher, &CharFnOptions::default()).unwrap();
            let mut bound = 0.0;
            for j in -(n as i64)..=n as i64 {
                let a: f64 = step_vector(&tp, j).iter().zip(&x).map(|(w, y)| w * y).sum();
                let xn = xi_norm(a / (2.0 * PI), &CoefficientDist::Rademacher, 0, 0).unwrap();
                bound -= PI * PI * xn * xn;
            }
            prop_assert!(v.log_modulus <= bound + 1e-9);
        }
    }

    #[test]
    fn xi_norms() {
        assert_eq!(xi_norm(0.0, &CoefficientDist::Rademacher, 0, 0).unwrap(), 0.0);
        let v = xi_norm(0.25, &CoefficientDist::Rademacher, 0, 0).unwrap();
        assert!((v - (1.0f64 / 8.0).sqrt()).abs() < 1e-15);
        let (g, se) = xi_norm_estimate(0.3, &CoefficientDist::GaussianReal, 200_000, 1).unwrap();
        // ξ-ξ' ~ N(0, 2); oracle by quadrature of the wrapped normal.
        let s = 0.3 * 2f64.sqrt();
        let steps = 200_000;
        let mut oracle = 0.0;
        for i in 0..steps {
            let z = -10.0 + 20.0 * (i as f64 + 0.5) / steps as f64;
            let d = torus_norm(s * z);
            oracle += d * d * (-0.5 * z * z).exp() / (2.0 * PI).sqrt() * 20.0 / steps as f64;
        }
        assert!((g - oracle.sqrt()).abs() <= 3.0 * se + 1e-6, "{g} {}", oracle.sqrt());
    }

    #[test]
    fn psi_examples() {
        let tp = tuple(40, &[13.0]);
        let p = psi_sequence(&tp, &[1.0], &[0.0], -5, 5, PsiVariant::Psi).unwrap();
        for (i, v) in p.values.iter().enumerate() {
            let j = -5.0 + i as f64;
            assert!((v - (j * 13.0 / 40.0).cos()).abs() < 1e-15);
        }
        let z = psi_sequence(&tp, &[0.0], &[0.0], 0, 9, PsiVariant::PsiPrime).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
        assert!(psi_sequence(&tp, &[1.0, 2.0], &[0.0], 0, 1, PsiVariant::Psi).is_err());
    }

    #[test]
    fn differences() {
        let g: Vec<f64> = (0..20).map(|j| j as f64).collect();
        let d = finite_difference(&g, 1, 1).unwrap();
        assert_eq!(d.len(), 19);
        assert!(d.iter().all(|&v| v == -1.0));
        let lin: Vec<f64> = (0..30).map(|j| 3.0 - 0.5 * j as f64).collect();
        assert!(finite_difference(&lin, 2, 3).unwrap().iter().all(|v| v.abs() < 1e-12));
        let seq: Vec<f64> = (0..50).map(|j| ((j * j) as f64 * 0.37).sin()).collect();
        let d = finite_difference(&seq, 4, 3).unwrap();
        assert_eq!(d.len(), 50 - 12);
        for (j, v) in d.iter().enumerate() {
            assert!((v - finite_difference_binomial(&seq, 4, 3, j)).abs() < 1e-12);
        }
    }

    #[test]
    fn exponential_eigen_identity() {
        let n = 97;
        let t = 41.3;
        let seq: Vec<Complex<f64>> = (0..80).map(|j| e_n(j as f64 * t, n)).collect();
        for (k, q) in [(1, 1), (3, 2), (5, 7)] {
            let d = finite_difference(&seq, k, q).unwrap();
            let f = (Complex::new(1.0, 0.0) - e_n(q as f64 * t, n)).powi(k as i32);
            for (j, v) in d.iter().enumerate() {
                assert!((v - f * seq[j]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn twisted_difference_identities() {
        let n = 128;
        let (t0, t, l) = (37.2, 51.9, 9);
        let f0: Vec<Complex<f64>> = (0..60).map(|j| f_t(t0, n, j, 6, 3)).collect();
        let g0: Vec<Complex<f64>> = (0..60).map(|j| partial_f_t(t0, n, j, 6, 3)).collect();
        for s in [&f0, &g0] {
            let d = twisted_difference(s, t0, l, n).unwrap();
            assert!(d.iter().all(|v| v.norm() < 1e-12));
        }
        let one = Complex::new(1.0, 0.0);
        let fac = (one - e_n(l as f64 * (t - t0), n)).powi(2);
        let ft: Vec<Complex<f64>> = (0..60).map(|j| e_n(j as f64 * t, n)).collect();
        let gt: Vec<Complex<f64>> = (0..60)
            .map(|j| Complex::new(0.0, j as f64 / n as f64) * e_n(j as f64 * t, n))
            .collect();
        let df = twisted_difference(&ft, t0, l, n).unwrap();
        let dg = twisted_difference(&gt, t0, l, n).unwrap();
        let beta = beta_l(t - t0, l, n);
        for j in 0..df.len() {
            assert!((df[j] - fac * ft[j]).norm() < 1e-12);
            assert!((dg[j] - fac * (gt[j] + beta * ft[j])).norm() < 1e-12);
        }
    }

    #[test]
    fn partial_derivative_matches_numeric() {
        let (n, j, p, k) = (64, 11, 5, 3);
        let t = 20.4;
        let h = 1e-6;
        let num = (f_t(t + h, n, j, p, k) - f_t(t - h, n, j, p, k)) / (2.0 * h);
        assert!((num - partial_f_t(t, n, j, p, k)).norm() < 1e-8);
    }

    #[test]
    fn dpsi_identity() {
        let tp = tuple(200, &[33.3, -120.7]);
        let (y, yp) = ([0.7, -1.2], [0.4, 2.5]);
        let ps = psi_sequence(&tp, &y, &yp, -200, 200, PsiVariant::Psi).unwrap();
        let (k, q) = (3, 5);
        let d = finite_difference(&ps.values, k, q).unwrap();
        for (i, v) in d.iter().enumerate() {
            let j = -200 + i as i64;
            assert!((v - dpsi_closed_form(&tp, &y, &yp, k, q, j)).abs() < 1e-10);
        }
    }

    #[test]
    fn shift_bound_cases() {
        let n = 1024;
        let tp = tuple(n, &[100.0, 300.0]);
        let p = ShiftParams { j: 0, l: 10, l_prime: 7, ell: 1, q0: 3, k: 4 };
        let zero = shift_bound_sides(&tp, &[1.0, 1.0], &[0.0, 1.0], p).unwrap();
        assert_eq!(zero.lhs, 0.0);
        assert!(zero.rhs >= 0.0);
        // e_n(ℓ q₀ t_1) = 1.
        let t1 = 2.0 * PI * n as f64 / 3.0;
        let tp2 = tuple(n, &[t1, 300.0]);
        let v = shift_bound_sides(&tp2, &[1.0, 1.0], &[1.0, 1.0], p).unwrap();
        assert!(v.lhs < 1e-12);
        let far = ShiftParams { j: 1000, ..p };
        assert!(shift_bound_sides(&tp, &[1.0, 1.0], &[1.0, 1.0], far).is_err());
        assert_eq!(default_difference_order(2, 1.0, 0.1), 81);
    }

    #[test]
    fn small_ball_limits() {
        let tp = tuple(256, &[150.3]);
        let c = [0.0; 4];
        let r = small_ball_curve(&tp, &CoefficientDist::GaussianReal, &c, &[0.0, 1e3], 10_000, 1).unwrap();
        assert_eq!(r[0].p, 0.0);
        assert_eq!(r[1].p, 1.0);
        assert!(small_ball_estimate(&tp, &CoefficientDist::Rademacher, &c, 1.0, 100, 1).is_err());
        let pb = polynomial_small_ball(&tp, &CoefficientDist::GaussianReal, 0.5, 20_000, 2).unwrap();
        // |P̃(t)|² is close to Exp(1): P(|P̃| ≤ 0.5) ≈ 1 - e^{-1/4}.
        assert!((pb.value.p - (1.0 - (-0.25f64).exp())).abs() < 5.0 * pb.value.stderr + 0.01);
        assert!(pb.derivative.p > pb.value.p);
    }

    #[test]
    fn block_results_do_not_depend_on_threads() {
        let tp = tuple(128, &[77.7]);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    small_ball_curve(&tp, &CoefficientDist::Rademacher, &[0.0; 4], &[0.5, 1.0], 20_000, 3).unwrap()
                })
        };
        assert_eq!(run(1), run(4));
    }
}
