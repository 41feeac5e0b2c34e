//! Averaged cumulants of the phase walk and low-order Edgeworth densities.
//!
//! Cumulants follow `ln E e^{i⟨s, X⟩} = Σ_ν χ_ν (is)^ν / ν!`.  The walk over
//! `|J| = N` steps normalised by `N^{-1/2}` has cumulants `N^{1-|ν|/2} χ̄_ν`,
//! so the expansion is in powers of `N^{-1/2}`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::arithmetic::PhaseTuple;
use crate::error::{ensure, Error, Result};
use crate::phasewalk::{mc_blocks, step_matrix, WalkSampler, WalkVariant, Proportion};
use crate::polymodel::CoefficientDist;
use crate::scalar::{to_f64, Scalar};

/// Multi-index `ν ∈ N^d`.
pub type MultiIndex = Vec<u8>;

fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

fn index_factorial(nu: &[u8]) -> f64 {
    nu.iter().map(|&k| factorial(k as usize)).product()
}

fn monomial(nu: &[u8], x: &[f64]) -> f64 {
    nu.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product()
}

/// All multi-indices of total degree `k` in `d` variables, in lexicographic order.
pub fn multi_indices(d: usize, k: usize) -> Vec<MultiIndex> {
    fn rec(d: usize, left: usize, cur: &mut MultiIndex, out: &mut Vec<MultiIndex>) {
        if cur.len() == d - 1 {
            cur.push(left as u8);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for v in (0..=left).rev() {
            cur.push(v as u8);
            rec(d, left - v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if d > 0 {
        rec(d, k, &mut Vec::with_capacity(d), &mut out);
    }
    out
}

/// Averaged cumulants `χ̄_ν = χ_ν(S_n) / |J|` for `1 ≤ |ν| ≤ order`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CumulantSet {
    pub dim: usize,
    pub order: usize,
    /// `|J|`, the number of walk steps.
    pub count: usize,
    pub values: BTreeMap<MultiIndex, f64>,
    /// Raw moments of the coefficient law used.
    pub moments_used: Vec<f64>,
}

impl CumulantSet {
    /// Assembles a set from explicit values; missing indices read as 0.
    pub fn from_values(dim: usize, order: usize, count: usize, values: BTreeMap<MultiIndex, f64>) -> Result<Self> {
        ensure!(dim >= 1 && count >= 1, "cumulant set needs positive dimension and step count");
        ensure!(
            values.keys().all(|k| k.len() == dim),
            "multi-indices must have length {dim}"
        );
        Ok(Self {
            dim,
            order,
            count,
            values,
            moments_used: Vec::new(),
        })
    }

    pub fn get(&self, nu: &[u8]) -> f64 {
        self.values.get(nu).copied().unwrap_or(0.0)
    }

    /// The `|ν| = 2` block as a matrix.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim;
        DMatrix::from_fn(d, d, |a, b| {
            let mut nu = vec![0u8; d];
            nu[a] += 1;
            nu[b] += 1;
            self.get(&nu)
        })
    }

    /// Averaged cumulants `κ̄_1..κ̄_order` of the projection `⟨c, ·⟩`.
    pub fn project(&self, c: &[f64]) -> Result<Vec<f64>> {
        ensure!(c.len() == self.dim, "direction must have dimension {}", self.dim);
        let mut out = vec![0.0; self.order];
        for (nu, &v) in &self.values {
            let k: usize = nu.iter().map(|&x| x as usize).sum();
            out[k - 1] += v * factorial(k) / index_factorial(nu) * monomial(nu, c);
        }
        Ok(out)
    }

    /// The one-dimensional set of the projection `⟨c, ·⟩`.
    pub fn projected(&self, c: &[f64]) -> Result<CumulantSet> {
        let k = self.project(c)?;
        let values = k.iter().enumerate().map(|(i, &v)| (vec![i as u8 + 1], v)).collect();
        Ok(CumulantSet {
            dim: 1,
            order: self.order,
            count: self.count,
            values,
            moments_used: self.moments_used.clone(),
        })
    }
}

/// Averaged cumulants of the real walk over `J = [-n, n]`.
pub fn average_cumulants<T: Scalar>(tuple: &PhaseTuple<T>, dist: &CoefficientDist, order: usize) -> Result<CumulantSet> {
    let n = tuple.n as i64;
    average_cumulants_range(tuple, dist, order, -n, n)
}

/// As [`average_cumulants`] over `J = [j_lo, j_hi]`.
pub fn average_cumulants_range<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    order: usize,
    j_lo: i64,
    j_hi: i64,
) -> Result<CumulantSet> {
    ensure!((1..=6).contains(&order), "cumulant order must lie in 1..=6, got {order}");
    let moments = dist.raw_moments(order)?;
    let kappa = crate::polymodel::cumulants_from_moments(&moments);
    let sm = step_matrix(tuple, j_lo, j_hi, WalkVariant::Full4m)?;
    let d = sm.dim;
    let rows: Vec<Vec<f64>> = (0..sm.row_count())
        .map(|i| sm.row(i).iter().map(|&v| to_f64(v)).collect())
        .collect();
    let count = rows.len();
    let mut values = BTreeMap::new();
    for k in 1..=order {
        for nu in multi_indices(d, k) {
            let avg = rows.iter().map(|w| monomial(&nu, w)).sum::<f64>() / count as f64;
            values.insert(nu, kappa[k - 1] * avg);
        }
    }
    Ok(CumulantSet {
        dim: d,
        order,
        count,
        values,
        moments_used: moments,
    })
}

/// Sparse polynomial in `d` variables.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MultiPoly {
    pub terms: BTreeMap<MultiIndex, f64>,
}

impl MultiPoly {
    fn constant(d: usize, c: f64) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(vec![0; d], c);
        Self { terms }
    }

    fn linear(coeffs: &[f64]) -> Self {
        let d = coeffs.len();
        let mut terms = BTreeMap::new();
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                let mut nu = vec![0; d];
                nu[i] = 1;
                terms.insert(nu, c);
            }
        }
        Self { terms }
    }

    fn mul(&self, other: &Self) -> Self {
        let mut terms = BTreeMap::new();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                let nu: MultiIndex = a.iter().zip(b).map(|(x, y)| x + y).collect();
                *terms.entry(nu).or_insert(0.0) += ca * cb;
            }
        }
        Self { terms }
    }

    fn add_scaled(&mut self, other: &Self, s: f64) {
        for (nu, &c) in &other.terms {
            *self.terms.entry(nu.clone()).or_insert(0.0) += s * c;
        }
    }

    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|k| k.iter().map(|&v| v as usize).sum())
            .max()
            .unwrap_or(0)
    }
}

/// Probabilists' Hermite polynomials `He_0..He_6` at `z`.
pub fn hermite_table(z: f64) -> [f64; 7] {
    let mut h = [0.0; 7];
    h[0] = 1.0;
    h[1] = z;
    for k in 1..6 {
        h[k + 1] = z * h[k] - k as f64 * h[k - 1];
    }
    h
}

/// `Q_{n,ℓ}(x) = φ_{0,V}(x) (1 + Σ_{r=1}^{ℓ-2} N^{-r/2} P_r(A x))` with `A = L^{-1}`,
/// `V = L Lᵀ`.  `P_r` is stored in Hermite form: monomial `u^μ` stands for
/// `Π He_{μ_i}(z_i)`.
#[derive(Clone, Debug, Serialize)]
pub struct ExpansionDensity {
    pub dim: usize,
    pub ell: usize,
    pub count: usize,
    #[serde(skip)]
    pub v: DMatrix<f64>,
    #[serde(skip)]
    whiten_flat: Vec<f64>,
    log_norm: f64,
    /// `P_1, …, P_{ℓ-2}`.
    pub terms: Vec<MultiPoly>,
    /// The same, flattened and scaled by `N^{-r/2}`.
    #[serde(skip)]
    compiled: Vec<Vec<([u8; 8], f64)>>,
}

/// Homogeneous polynomial `Σ_{|ν|=k} χ̄_ν/ν! (Aᵀu)^ν`.
fn whitened_form(cum: &CumulantSet, a: &DMatrix<f64>, k: usize) -> MultiPoly {
    let d = cum.dim;
    let forms: Vec<MultiPoly> = (0..d)
        .map(|i| MultiPoly::linear(&(0..d).map(|b| a[(b, i)]).collect::<Vec<_>>()))
        .collect();
    let mut out = MultiPoly::default();
    for nu in multi_indices(d, k) {
        let c = cum.get(&nu);
        if c == 0.0 {
            continue;
        }
        let mut p = MultiPoly::constant(d, 1.0);
        for (i, &e) in nu.iter().enumerate() {
            for _ in 0..e {
                p = p.mul(&forms[i]);
            }
        }
        out.add_scaled(&p, c / index_factorial(&nu));
    }
    out.terms.retain(|_, c| *c != 0.0);
    out
}

pub fn build_expansion(cum: &CumulantSet, v: &DMatrix<f64>, ell: usize) -> Result<ExpansionDensity> {
    ensure!((2..=4).contains(&ell), "expansion order must be 2, 3 or 4, got {ell}");
    ensure!(cum.dim <= 8, "expansion supports dimension ≤ 8, got {}", cum.dim);
    ensure!(
        v.nrows() == cum.dim && v.ncols() == cum.dim,
        "covariance must be {0}×{0}",
        cum.dim
    );
    ensure!(cum.order >= ell, "order-{ell} expansion needs cumulants up to order {ell}");
    let sigma_min = crate::phasewalk::smallest_eigenvalue(v);
    if sigma_min <= 1e-8 {
        return Err(Error::SingularCovariance(sigma_min));
    }
    let chol = v.clone().cholesky().ok_or(Error::SingularCovariance(sigma_min))?;
    let l = chol.l();
    let whiten = l.clone().try_inverse().ok_or(Error::SingularCovariance(sigma_min))?;
    let d = cum.dim;
    let log_det: f64 = (0..d).map(|i| l[(i, i)].ln()).sum();
    let log_norm = -0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln() - log_det;
    let mut terms = Vec::new();
    if ell >= 3 {
        terms.push(whitened_form(cum, &whiten, 3));
    }
    if ell >= 4 {
        let c3 = &terms[0];
        let mut p2 = whitened_form(cum, &whiten, 4);
        p2.add_scaled(&c3.mul(c3), 0.5);
        p2.terms.retain(|_, c| *c != 0.0);
        terms.push(p2);
    }
    Ok(ExpansionDensity {
        dim: d,
        ell,
        count: cum.count,
        v: v.clone(),
        whiten_flat: (0..d * d).map(|k| whiten[(k / d, k % d)]).collect(),
        log_norm,
        compiled: terms
            .iter()
            .enumerate()
            .map(|(r, p)| {
                let scale = (cum.count as f64).powf(-((r + 1) as f64) / 2.0);
                p.terms
                    .iter()
                    .map(|(mu, &c)| {
                        let mut key = [0u8; 8];
                        key[..d].copy_from_slice(mu);
                        (key, c * scale)
                    })
                    .collect()
            })
            .collect(),
        terms,
    })
}

impl ExpansionDensity {
    /// Whitened point and the Gaussian factor.
    fn whitened(&self, x: &[f64], z: &mut [f64; 8]) -> f64 {
        let d = self.dim;
        let mut r2 = 0.0;
        for (i, zi) in z.iter_mut().enumerate().take(d) {
            *zi = (0..=i).map(|k| self.whiten_flat[i * d + k] * x[k]).sum();
            r2 += *zi * *zi;
        }
        (self.log_norm - 0.5 * r2).exp()
    }

    /// `[φ_{0,V}(x), φ_{0,V}(x) N^{-1/2} P_1(Ax), φ_{0,V}(x) N^{-1} P_2(Ax)]`,
    /// zero past the expansion order.
    pub fn summands(&self, x: &[f64]) -> [f64; 3] {
        let mut z = [0.0; 8];
        let g = self.whitened(x, &mut z);
        let mut out = [g, 0.0, 0.0];
        if self.compiled.is_empty() {
            return out;
        }
        let mut he = [[0.0; 7]; 8];
        for i in 0..self.dim {
            he[i] = hermite_table(z[i]);
        }
        for (r, poly) in self.compiled.iter().enumerate() {
            let mut s = 0.0;
            for (mu, c) in poly {
                let mut t = *c;
                for i in 0..self.dim {
                    t *= he[i][mu[i] as usize];
                }
                s += t;
            }
            out[r + 1] = g * s;
        }
        out
    }

    /// `φ_{0,V}(x)`.
    pub fn gaussian(&self, x: &[f64]) -> f64 {
        self.whitened(x, &mut [0.0; 8])
    }

    /// The `r`-th summand `φ_{0,V}(x) N^{-r/2} P_r(Ax)`; `r = 0` is the Gaussian.
    pub fn term(&self, r: usize, x: &[f64]) -> f64 {
        if r > 2 {
            return 0.0;
        }
        self.summands(x)[r]
    }

    pub fn density(&self, x: &[f64]) -> f64 {
        self.summands(x).iter().sum()
    }

    fn is_diagonal_gaussian(&self) -> bool {
        self.ell == 2
            && (0..self.dim).all(|a| (0..self.dim).all(|b| a == b || self.v[(a, b)] == 0.0))
    }
}

/// Axis-aligned box `Π [lo_i, hi_i]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxRegion {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        ensure!(lo.len() == hi.len() && !lo.is_empty(), "box bounds must have equal positive length");
        ensure!(
            lo.iter().zip(&hi).all(|(a, b)| a.is_finite() && b.is_finite() && b > a),
            "box sides must be finite with positive length"
        );
        Ok(Self { lo, hi })
    }

    /// `[c - h, c + h]^d`.
    pub fn cube(dim: usize, center: f64, half: f64) -> Result<Self> {
        Self::new(vec![center - half; dim], vec![center + half; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn volume(&self) -> f64 {
        self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(self.lo.iter().zip(&self.hi)).all(|(v, (a, b))| a <= v && v <= b)
    }
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(degree: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; degree];
    let mut w = vec![0.0; degree];
    let nf = degree as f64;
    for i in 0..degree.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=degree {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let p = if degree == 0 { 1.0 } else { p1 };
            dp = nf * (z * p - p0) / (z * z - 1.0);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[degree - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[degree - 1 - i] = w[i];
    }
    (x, w)
}

const GL_DEGREE: usize = 16;

fn composite_rule(lo: f64, hi: f64, panels: usize, base: &(Vec<f64>, Vec<f64>)) -> (Vec<f64>, Vec<f64>) {
    let h = (hi - lo) / panels as f64;
    let mut xs = Vec::with_capacity(panels * base.0.len());
    let mut ws = Vec::with_capacity(panels * base.0.len());
    for p in 0..panels {
        let a = lo + p as f64 * h;
        for (x, w) in base.0.iter().zip(&base.1) {
            xs.push(a + 0.5 * h * (x + 1.0));
            ws.push(0.5 * h * w);
        }
    }
    (xs, ws)
}

fn tensor_rule<F>(f: &F, outputs: usize, region: &BoxRegion, panels: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let base = gauss_legendre(GL_DEGREE);
    let rules: Vec<(Vec<f64>, Vec<f64>)> = (0..region.dim())
        .map(|i| composite_rule(region.lo[i], region.hi[i], panels, &base))
        .collect();
    let per = rules[0].0.len();
    let inner: usize = per.pow(region.dim() as u32 - 1);
    let parts: Vec<Vec<f64>> = (0..per)
        .into_par_iter()
        .map(|i0| {
            let mut x = vec![0.0; region.dim()];
            let mut val = vec![0.0; outputs];
            let mut acc = vec![0.0; outputs];
            x[0] = rules[0].0[i0];
            for flat in 0..inner {
                let mut rest = flat;
                let mut w = rules[0].1[i0];
                for (d, rule) in rules.iter().enumerate().skip(1) {
                    let k = rest % per;
                    rest /= per;
                    x[d] = rule.0[k];
                    w *= rule.1[k];
                }
                f(&x, &mut val);
                acc.iter_mut().zip(&val).for_each(|(a, v)| *a += w * v);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; outputs];
    for p in parts {
        total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
    }
    total
}

/// Default cap on quadrature points.
pub const MAX_QUADRATURE_POINTS: usize = 1 << 26;

/// Tensor composite Gauss–Legendre integration of a vector-valued integrand,
/// doubling the panel count until two successive estimates agree to
/// `rel_tol` in every component (absolute for components below 1).
pub fn integrate_box_many<F>(f: F, outputs: usize, region: &BoxRegion, rel_tol: f64, max_points: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let d = region.dim() as u32;
    let points = |p: usize| (p * GL_DEGREE).checked_pow(d).unwrap_or(usize::MAX);
    let mut panels = 1;
    let mut prev = tensor_rule(&f, outputs, region, panels);
    let mut change = f64::INFINITY;
    while points(2 * panels) <= max_points {
        panels *= 2;
        let cur = tensor_rule(&f, outputs, region, panels);
        change = cur
            .iter()
            .zip(&prev)
            .map(|(c, p)| (c - p).abs() / c.abs().max(1.0))
            .fold(0.0, f64::max);
        if change <= rel_tol {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(Error::Quadrature {
        achieved: change,
        points: points(panels),
    })
}

/// Scalar form of [`integrate_box_many`].
pub fn integrate_box<F: Fn(&[f64]) -> f64 + Sync>(
    f: F,
    region: &BoxRegion,
    rel_tol: f64,
    max_points: usize,
) -> Result<f64> {
    Ok(integrate_box_many(|x, out| out[0] = f(x), 1, region, rel_tol, max_points)?[0])
}

/// `Q_{n,ℓ}(region)`.  Uncorrelated Gaussians use the product of error
/// functions; everything else goes through [`integrate_box`].
pub fn box_probability(density: &ExpansionDensity, region: &BoxRegion) -> Result<f64> {
    ensure!(
        region.dim() == density.dim,
        "box has dimension {}, density has dimension {}",
        region.dim(),
        density.dim
    );
    if density.is_diagonal_gaussian() {
        let mut p = 1.0;
        for i in 0..density.dim {
            let s = (2.0 * density.v[(i, i)]).sqrt();
            p *= 0.5 * (libm::erf(region.hi[i] / s) - libm::erf(region.lo[i] / s));
        }
        return Ok(p);
    }
    integrate_box(|x| density.density(x), region, 1e-6, MAX_QUADRATURE_POINTS)
}

/// Monte Carlo and analytic box probabilities side by side.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxComparison {
    pub n: usize,
    pub samples: usize,
    pub ell: usize,
    pub empirical: f64,
    pub stderr: f64,
    pub gaussian: f64,
    pub edgeworth: f64,
    pub diff_gaussian: f64,
    pub diff_edgeworth: f64,
}

/// Empirical `P(S̃_n(t) ∈ Q)` for the normalised real walk.
pub fn empirical_box<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    region: &BoxRegion,
    samples: usize,
    seed: u64,
) -> Result<Proportion> {
    ensure!(samples >= 1, "need at least one sample");
    let sampler = WalkSampler::new(tuple, WalkVariant::Full4m)?;
    ensure!(region.dim() == sampler.dim, "box must have dimension {}", sampler.dim);
    let hits: u64 = mc_blocks(samples, seed, |rng, count| {
        let mut out = vec![0.0; sampler.dim];
        let mut h = 0u64;
        for _ in 0..count {
            sampler.sample_into(dist, rng, &mut out);
            if region.contains(&out) {
                h += 1;
            }
        }
        h
    })
    .iter()
    .sum();
    Ok(Proportion::from_counts(hits, samples as u64))
}

pub fn compare_box<T: Scalar>(
    tuple: &PhaseTuple<T>,
    dist: &CoefficientDist,
    region: &BoxRegion,
    samples: usize,
    ell: usize,
    seed: u64,
) -> Result<BoxComparison> {
    let cum = average_cumulants(tuple, dist, ell)?;
    let v = cum.covariance();
    let gauss = box_probability(&build_expansion(&cum, &v, 2)?, region)?;
    let edge = if ell == 2 {
        gauss
    } else {
        box_probability(&build_expansion(&cum, &v, ell)?, region)?
    };
    let emp = empirical_box(tuple, dist, region, samples, seed)?;
    Ok(BoxComparison {
        n: tuple.n,
        samples,
        ell,
        empirical: emp.p,
        stderr: emp.stderr,
        gaussian: gauss,
        edgeworth: edge,
        diff_gaussian: emp.p - gauss,
        diff_edgeworth: emp.p - edge,
    })
}
