//! Mesh-based extraction of the near-minima of `|P_n|`.
//!
//! On the mesh `x_α = 2πα/N` each site is replaced by the first-order model
//! `P(x_α + y) ≈ p_α + y p'_α`.  `Y_α` is the minimiser of that model and
//! `|Z_α|/n` its minimum value.

use std::io::Write;

use num_complex::Complex;
use serde::Serialize;

use crate::arithmetic;
use crate::error::{ensure, Result};
use crate::polymodel::{MeshEvaluator, PolySample, Scale};
use crate::scalar::{from_usize, lit, to_f64, Scalar};

pub const DEFAULT_K0: f64 = 5.0;
pub const DEFAULT_C0: f64 = 2.0;
pub const DEFAULT_BETA: f64 = 64.0;
pub const DEFAULT_KAPPA: f64 = 0.1;

/// Mesh and selection thresholds for degree `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeshConfig {
    pub n: usize,
    pub k0: f64,
    pub c0: f64,
    pub beta: f64,
    /// `⌊n² / (ln n)^{K0}⌋`.
    pub n_nominal: u64,
    /// `max(n_nominal, ⌈β n⌉)`; the mesh actually used.
    pub n_effective: usize,
}

/// Mesh size for degree `n`.  Natural logarithms throughout.
pub fn build_mesh(n: usize, k0: f64, c0: f64, beta: f64) -> Result<MeshConfig> {
    ensure!(n >= 3, "mesh construction needs n ≥ 3 (ln n > 1), got n = {n}");
    ensure!(k0 > 4.0, "K0 must exceed 4, got {k0}");
    ensure!(c0 > 0.0, "C0 must be positive, got {c0}");
    ensure!(beta >= 8.0, "β must be at least 8, got {beta}");
    let nf = n as f64;
    let n_nominal = (nf * nf / nf.ln().powf(k0)).floor() as u64;
    let floor = (beta * nf).ceil() as u64;
    let n_effective = n_nominal.max(floor);
    ensure!(
        n_effective <= usize::MAX as u64 / 4,
        "mesh of {n_effective} points is too large"
    );
    Ok(MeshConfig {
        n,
        k0,
        c0,
        beta,
        n_nominal,
        n_effective: n_effective as usize,
    })
}

impl MeshConfig {
    pub fn with_defaults(n: usize) -> Result<Self> {
        build_mesh(n, DEFAULT_K0, DEFAULT_C0, DEFAULT_BETA)
    }

    pub fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// Mesh point `x_α`.
    pub fn x<T: Scalar>(&self, alpha: usize) -> T {
        T::TAU() * from_usize::<T>(alpha) / from_usize::<T>(self.n_effective)
    }

    /// `π/N`, the half-spacing.
    pub fn half_step(&self) -> f64 {
        std::f64::consts::PI / self.n_effective as f64
    }

    /// Largest index gap `n/(ln n)^{3 K0}` inside which two selected sites
    /// must not coexist.
    pub fn separation_band(&self) -> f64 {
        self.n as f64 / self.log_n().powf(3.0 * self.k0)
    }
}

/// Result of linearising one site.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Linearization<T> {
    Regular { y: T, z: T },
    /// `p' = 0`: the linear model has no minimiser.
    DegenerateDerivative,
}

/// `Y = -Re(p·conj p')/|p'|²`, `Z = n·Im(p·conj p')/|p'|`.
pub fn linearize_site<T: Scalar>(p: Complex<T>, dp: Complex<T>, n: usize) -> Linearization<T> {
    let d2 = dp.norm_sqr();
    if d2 == T::zero() {
        return Linearization::DegenerateDerivative;
    }
    let w = p * dp.conj();
    Linearization::Regular {
        y: -w.re / d2,
        z: from_usize::<T>(n) * w.im / d2.sqrt(),
    }
}

/// One mesh site with its linearisation and selection flags.
///
/// `y` and `z` are NaN when `p' = 0`; such sites are never selected.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteRecord<T> {
    pub alpha: usize,
    pub x: T,
    pub p: Complex<T>,
    pub dp: Complex<T>,
    pub y: T,
    pub z: T,
    /// `|Y| ≤ π/N` and `|Z| ≤ ln n`.
    pub a_prime: bool,
    /// `|p| ≤ n^{-1/2}` and `n (ln n)^{-K0/2} ≤ |p'| ≤ C0 n √(ln n)`.
    pub a_double_prime: bool,
}

impl<T: Scalar> SiteRecord<T> {
    pub fn selected(&self) -> bool {
        self.a_prime && self.a_double_prime
    }

    /// Value of the linear model at its minimiser, `|Z|/n`.
    pub fn linear_min(&self, n: usize) -> T {
        self.z.abs() / from_usize::<T>(n)
    }
}

struct Thresholds<T> {
    half_step: T,
    log_n: T,
    p_max: T,
    dp_min: T,
    dp_max: T,
}

impl<T: Scalar> Thresholds<T> {
    fn new(mesh: &MeshConfig) -> Self {
        let n = mesh.n as f64;
        let l = mesh.log_n();
        Self {
            half_step: lit(mesh.half_step()),
            log_n: lit(l),
            p_max: lit(n.powf(-0.5)),
            dp_min: lit(n * l.powf(-mesh.k0 / 2.0)),
            dp_max: lit(mesh.c0 * n * l.sqrt()),
        }
    }

    fn site(&self, mesh: &MeshConfig, alpha: usize, p: Complex<T>, dp: Complex<T>) -> SiteRecord<T> {
        let (y, z, a_prime) = match linearize_site(p, dp, mesh.n) {
            Linearization::Regular { y, z } => {
                (y, z, y.abs() <= self.half_step && z.abs() <= self.log_n)
            }
            Linearization::DegenerateDerivative => (T::nan(), T::nan(), false),
        };
        let dpn = dp.norm();
        let a_double_prime = p.norm() <= self.p_max && dpn >= self.dp_min && dpn <= self.dp_max;
        SiteRecord {
            alpha,
            x: mesh.x(alpha),
            p,
            dp,
            y,
            z,
            a_prime,
            a_double_prime,
        }
    }
}

fn check_degree<T: Scalar>(poly: &PolySample<T>, mesh: &MeshConfig) -> Result<()> {
    ensure!(
        poly.n() == mesh.n,
        "mesh built for n = {} applied to a polynomial of degree {}",
        mesh.n,
        poly.n()
    );
    Ok(())
}

/// All `N` sites of the mesh.
pub fn site_table<T: Scalar>(poly: &PolySample<T>, mesh: &MeshConfig) -> Result<Vec<SiteRecord<T>>> {
    check_degree(poly, mesh)?;
    let ev = MeshEvaluator::new(mesh.n_effective);
    let p = ev.eval(poly, 0)?;
    let dp = ev.eval(poly, 1)?;
    let th = Thresholds::new(mesh);
    Ok((0..mesh.n_effective)
        .map(|i| th.site(mesh, i + 1, p[i], dp[i]))
        .collect())
}

/// The selected sites of one polynomial.
#[derive(Clone, Debug)]
pub struct MinimaProcess<T> {
    pub mesh: MeshConfig,
    /// Selected sites in increasing `α`.
    pub records: Vec<SiteRecord<T>>,
    /// `bad[i]` is set when `records[i]` lies in a bad arc; empty until
    /// [`MinimaProcess::thin`] is called.
    pub bad: Vec<bool>,
}

impl<T: Scalar> MinimaProcess<T> {
    /// Marks records whose `n x_α` is not `n^κ`-smooth.
    pub fn thin(&mut self, kappa: f64) -> Result<()> {
        self.bad = self
            .records
            .iter()
            .map(|r| arithmetic::site_is_bad(&self.mesh, r.alpha, kappa))
            .collect::<Result<_>>()?;
        Ok(())
    }

    /// Records kept by the thinning (all records if not thinned).
    pub fn sharp(&self) -> impl Iterator<Item = &SiteRecord<T>> {
        self.records
            .iter()
            .enumerate()
            .filter(|(i, _)| !self.bad.get(*i).copied().unwrap_or(false))
            .map(|(_, r)| r)
    }

    /// Linearised minimum values `|Z_α|/n` of the selected sites.
    pub fn values(&self) -> Vec<T> {
        self.records.iter().map(|r| r.linear_min(self.mesh.n)).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let bad = if self.bad.is_empty() { None } else { Some(self.bad.as_slice()) };
        write_sites_csv(&self.records, bad, w)
    }
}

/// Sites in `A = A' ∩ A''`.
pub fn select_minima<T: Scalar>(poly: &PolySample<T>, mesh: &MeshConfig) -> Result<MinimaProcess<T>> {
    check_degree(poly, mesh)?;
    let ev = MeshEvaluator::new(mesh.n_effective);
    select_with(poly, mesh, &ev)
}

fn select_with<T: Scalar>(
    poly: &PolySample<T>,
    mesh: &MeshConfig,
    ev: &MeshEvaluator<T>,
) -> Result<MinimaProcess<T>> {
    let p = ev.eval(poly, 0)?;
    let dp = ev.eval(poly, 1)?;
    let th = Thresholds::new(mesh);
    let records = (0..mesh.n_effective)
        .filter(|&i| p[i].norm() <= th.p_max)
        .map(|i| th.site(mesh, i + 1, p[i], dp[i]))
        .filter(|r| r.selected())
        .collect();
    Ok(MinimaProcess {
        mesh: *mesh,
        records,
        bad: Vec::new(),
    })
}

#[derive(Serialize)]
struct SiteRow {
    alpha: usize,
    x: f64,
    re_p: f64,
    im_p: f64,
    re_dp: f64,
    im_dp: f64,
    y: f64,
    z: f64,
    a_prime: bool,
    a_double_prime: bool,
    selected: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    bad: Option<bool>,
}

/// Writes site records as CSV (`alpha, x, re_p, im_p, re_dp, im_dp, y, z, flags`).
pub fn write_sites_csv<T: Scalar, W: Write>(
    records: &[SiteRecord<T>],
    bad: Option<&[bool]>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (i, r) in records.iter().enumerate() {
        out.serialize(SiteRow {
            alpha: r.alpha,
            x: to_f64(r.x),
            re_p: to_f64(r.p.re),
            im_p: to_f64(r.p.im),
            re_dp: to_f64(r.dp.re),
            im_dp: to_f64(r.dp.im),
            y: to_f64(r.y),
            z: to_f64(r.z),
            a_prime: r.a_prime,
            a_double_prime: r.a_double_prime,
            selected: r.selected(),
            bad: bad.map(|b| b[i]),
        })?;
    }
    out.flush()?;
    Ok(())
}

/// How the global minimum is located.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GlobalMinMethod {
    /// Smallest `|Z_α|/n` over selected sites of the given mesh.
    MeshLinearized(MeshConfig),
    /// Uniform grid of `resolution` points, then golden-section refinement of
    /// every grid cell that a derivative bound cannot exclude.
    DenseOracle { resolution: usize, refine_iters: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MinQuality {
    /// Taken from a selected mesh site.
    Flagged,
    /// No site was selected; smallest raw `|P(x_α)|` on the mesh.
    RawMeshFallback,
    /// Dense grid plus refinement.
    Refined,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GlobalMin<T> {
    pub x: T,
    pub value: T,
    pub quality: MinQuality,
}

/// `min_x |P_n(x)|`.
pub fn global_min<T: Scalar>(poly: &PolySample<T>, method: GlobalMinMethod) -> Result<GlobalMin<T>> {
    MinSolver::new(method, poly.n())?.solve(poly)
}

/// Reusable solver holding the FFT plan for a fixed degree and method.
#[derive(Clone, Debug)]
pub struct MinSolver<T: Scalar> {
    method: GlobalMinMethod,
    n: usize,
    ev: MeshEvaluator<T>,
}

/// Oracle candidates beyond this count trigger the derivative-based pruning.
const CHEAP_CANDIDATES: usize = 256;

impl<T: Scalar> MinSolver<T> {
    pub fn new(method: GlobalMinMethod, n: usize) -> Result<Self> {
        let len = match method {
            GlobalMinMethod::MeshLinearized(mesh) => {
                ensure!(mesh.n == n, "mesh built for n = {} used at n = {n}", mesh.n);
                mesh.n_effective
            }
            GlobalMinMethod::DenseOracle { resolution, .. } => {
                let need = (4 * n).max(2 * n + 1).max(8);
                ensure!(
                    resolution >= need,
                    "oracle resolution {resolution} below the minimum {need} for n = {n}"
                );
                resolution
            }
        };
        Ok(Self {
            method,
            n,
            ev: MeshEvaluator::new(len),
        })
    }

    pub fn method(&self) -> GlobalMinMethod {
        self.method
    }

    pub fn solve(&self, poly: &PolySample<T>) -> Result<GlobalMin<T>> {
        ensure!(poly.n() == self.n, "solver built for n = {}, got degree {}", self.n, poly.n());
        match self.method {
            GlobalMinMethod::MeshLinearized(mesh) => self.solve_mesh(poly, &mesh),
            GlobalMinMethod::DenseOracle { refine_iters, .. } => self.solve_dense(poly, refine_iters),
        }
    }

    fn solve_mesh(&self, poly: &PolySample<T>, mesh: &MeshConfig) -> Result<GlobalMin<T>> {
        let p = self.ev.eval(poly, 0)?;
        let dp = self.ev.eval(poly, 1)?;
        let th = Thresholds::new(mesh);
        let mut best: Option<SiteRecord<T>> = None;
        for i in 0..mesh.n_effective {
            if p[i].norm() > th.p_max {
                continue;
            }
            let r = th.site(mesh, i + 1, p[i], dp[i]);
            if r.selected() && best.map_or(true, |b| r.z.abs() < b.z.abs()) {
                best = Some(r);
            }
        }
        if let Some(b) = best {
            return Ok(GlobalMin {
                x: b.x + b.y,
                value: b.linear_min(mesh.n),
                quality: MinQuality::Flagged,
            });
        }
        let (i, v) = p
            .iter()
            .map(|z| z.norm())
            .enumerate()
            .fold((0, T::infinity()), |a, (i, v)| if v < a.1 { (i, v) } else { a });
        Ok(GlobalMin {
            x: mesh.x(i + 1),
            value: v,
            quality: MinQuality::RawMeshFallback,
        })
    }

    fn solve_dense(&self, poly: &PolySample<T>, iters: usize) -> Result<GlobalMin<T>> {
        let r = self.ev.len();
        let h = T::TAU() / from_usize::<T>(r);
        let half = h / lit(2.0);
        let j0 = poly.lowest_frequency();
        let (mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero());
        for (k, c) in poly.spectrum().iter().enumerate() {
            let j = crate::scalar::from_i64::<T>(j0 + k as i64).abs();
            s1 = s1 + j * c.norm();
            s2 = s2 + j * j * c.norm();
            s3 = s3 + j * j * j * c.norm();
        }
        let p = self.ev.eval(poly, 0)?;
        let v: Vec<T> = p.iter().map(|z| z.norm()).collect();
        let (mut bi, mut best) = (0, T::infinity());
        for (i, &x) in v.iter().enumerate() {
            if x < best {
                bi = i;
                best = x;
            }
        }
        let mut best_x = h * from_usize::<T>(bi + 1);

        // Lower bound for |P| on the cell of half-width h/2 around each grid point.
        let slack = half * s1;
        let mut cand: Vec<(T, usize)> = v
            .iter()
            .enumerate()
            .filter(|(_, &x)| x - slack <= best)
            .map(|(i, &x)| (x - slack, i))
            .collect();
        if cand.len() > CHEAP_CANDIDATES {
            // On the cell |P''| ≤ min(S2, |P''(x_i)| + (h/2) S3).
            let dp = self.ev.eval(poly, 1)?;
            let ddp = self.ev.eval(poly, 2)?;
            let q = half * half / lit(2.0);
            cand = cand
                .into_iter()
                .map(|(_, i)| {
                    let curv = q * s2.min(ddp[i].norm() + half * s3);
                    (clipped_linear_min(p[i], dp[i], half) - curv, i)
                })
                .filter(|(lb, _)| *lb <= best)
                .collect();
        }
        cand.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));

        let f = |x: T| poly.eval_natural(x, 0).norm();
        for (lb, i) in cand {
            if lb >= best {
                break;
            }
            let c = h * from_usize::<T>(i + 1);
            let (x, val) = golden_min(f, c - h, c + h, iters);
            if val < best {
                best = val;
                best_x = x;
            }
        }
        Ok(GlobalMin {
            x: best_x,
            value: best,
            quality: MinQuality::Refined,
        })
    }
}

fn clipped_linear_min<T: Scalar>(p: Complex<T>, dp: Complex<T>, half: T) -> T {
    let d2 = dp.norm_sqr();
    if d2 == T::zero() {
        return p.norm();
    }
    let u = (-(p * dp.conj()).re / d2).max(-half).min(half);
    (p + dp * u).norm()
}

/// Golden-section minimisation on `[a, b]`; returns the best point seen.
pub(crate) fn golden_min<T: Scalar, F: Fn(T) -> T>(f: F, mut a: T, mut b: T, iters: usize) -> (T, T) {
    let g = lit::<T>(0.618_033_988_749_894_8);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let (fa, fb) = (f(a), f(b));
    let mut best = if fa < fb { (a, fa) } else { (b, fb) };
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    for (x, v) in [(c, fc), (d, fd)] {
        if v < best.1 {
            best = (x, v);
        }
    }
    best
}

/// Outcome of the derivative-size check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivativeCheck<T> {
    pub holds: bool,
    /// `n^{-k} sup_x |P^{(k)}(x)|`, i.e. `sup_s |P̃^{(k)}(s)|`.
    pub sup: T,
    /// `(ln n)^K`.
    pub bound: T,
}

/// Tests `sup |P̃^{(k)}| ≤ (ln n)^K`.  `kexp = ∞` always holds.
pub fn check_derivative_event<T: Scalar>(poly: &PolySample<T>, k: u32, kexp: f64) -> Result<DerivativeCheck<T>> {
    ensure!(k <= 2, "derivative order must be at most 2, got {k}");
    ensure!(poly.n() >= 2, "derivative event needs n ≥ 2");
    let sup = sup_abs(poly, k)?;
    let n = from_usize::<T>(poly.n());
    let sup = sup / n.powi(k as i32);
    let l = (poly.n() as f64).ln();
    let bound = if kexp.is_infinite() && kexp > 0.0 { T::infinity() } else { lit(l.powf(kexp)) };
    Ok(DerivativeCheck {
        holds: sup <= bound,
        sup,
        bound,
    })
}

/// `sup_x |P^{(k)}(x)|` via a 16× oversampled grid and local refinement.
pub fn sup_abs<T: Scalar>(poly: &PolySample<T>, k: u32) -> Result<T> {
    let len = (16 * poly.spec.frequency_span()).max(64).next_power_of_two();
    let vals = poly.evaluate_mesh(len, k)?;
    let a: Vec<T> = vals.iter().map(|z| z.norm()).collect();
    let mut peaks: Vec<usize> = (0..len)
        .filter(|&i| a[i] >= a[(i + len - 1) % len] && a[i] >= a[(i + 1) % len])
        .collect();
    peaks.sort_by(|&i, &j| a[j].partial_cmp(&a[i]).unwrap_or(std::cmp::Ordering::Equal));
    let h = T::TAU() / from_usize::<T>(len);
    let mut best = a.iter().copied().fold(T::zero(), T::max);
    let f = |x: T| -poly.evaluate(x, k, Scale::Natural).map(|z| z.norm()).unwrap_or(T::zero());
    for &i in peaks.iter().take(8) {
        let c = h * from_usize::<T>(i + 1);
        let (_, v) = golden_min(f, c - h, c + h, 60);
        best = best.max(-v);
    }
    Ok(best)
}

/// Pairs of selected sites that are too close together.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeparationReport {
    /// Pairs with `2 ≤ |α' - α| ≤ n/(ln n)^{3K0}` (cyclic distance).
    pub band: Vec<(usize, usize)>,
    /// Adjacent pairs whose lower site has `Y_α` outside
    /// `[π/N - π/(N (ln n)^{K0/4}), π/N]`.
    pub adjacent: Vec<(usize, usize)>,
}

impl SeparationReport {
    pub fn is_clean(&self) -> bool {
        self.band.is_empty() && self.adjacent.is_empty()
    }

    pub fn violations(&self) -> usize {
        self.band.len() + self.adjacent.len()
    }
}

pub fn check_separation<T: Scalar>(process: &MinimaProcess<T>, k0: f64) -> SeparationReport {
    let mesh = &process.mesh;
    let big_n = mesh.n_effective;
    let band = (mesh.n as f64 / mesh.log_n().powf(3.0 * k0)).floor() as usize;
    let hi = mesh.half_step();
    let lo = hi - hi / mesh.log_n().powf(k0 / 4.0);
    let mut rep = SeparationReport::default();
    let recs = &process.records;
    let m = recs.len();
    for i in 0..m {
        for step in 1..m {
            let r2 = &recs[(i + step) % m];
            let fwd = (r2.alpha + big_n - recs[i].alpha) % big_n;
            if fwd > band.max(1) {
                break;
            }
            if fwd == 1 {
                let y = to_f64(recs[i].y);
                if !(lo..=hi).contains(&y) {
                    rep.adjacent.push((recs[i].alpha, r2.alpha));
                }
            } else if fwd >= 2 {
                rep.band.push((recs[i].alpha, r2.alpha));
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polymodel::{sample, CoefficientDist, ModelSpec};
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn mesh_sizes() {
        let m = build_mesh(1000, 5.0, 2.0, 64.0).unwrap();
        assert_eq!(m.n_nominal, (1e6 / 1000f64.ln().powi(5)).floor() as u64);
        assert!(m.n_nominal < 100);
        assert_eq!(m.n_effective, 64_000);
        let big = build_mesh(1_000_000, 5.0, 2.0, 64.0).unwrap();
        assert!((big.n_nominal as f64 - 1.987e6).abs() < 2e3, "{}", big.n_nominal);
        assert_eq!(big.n_effective, 64_000_000);
        assert!(build_mesh(2, 5.0, 2.0, 64.0).is_err());
        assert!(build_mesh(10, 4.0, 2.0, 64.0).is_err());
        assert!(build_mesh(10, 5.0, 2.0, 4.0).is_err());
    }

    #[test]
    fn degenerate_derivative() {
        let z = Complex::new(0.0, 0.0);
        assert_eq!(
            linearize_site(Complex::new(1.0, 2.0), z, 10),
            Linearization::DegenerateDerivative
        );
    }

    proptest! {
        #[test]
        fn linear_model_identity(pr in -3.0..3.0f64, pi in -3.0..3.0f64,
                                 dr in -50.0..50.0f64, di in -50.0..50.0f64, n in 3usize..5000) {
            prop_assume!(dr.abs() + di.abs() > 1e-3);
            let p = Complex::new(pr, pi);
            let dp = Complex::new(dr, di);
            if let Linearization::Regular { y, z } = linearize_site(p, dp, n) {
                let lhs = (p + dp * y).norm();
                prop_assert!((lhs - z.abs() / n as f64).abs() <= 1e-12 * (1.0 + lhs));
                // Y minimises the linear model.
                for du in [-1e-3, 1e-3] {
                    prop_assert!((p + dp * (y + du)).norm() >= lhs - 1e-12);
                }
            } else {
                prop_assert!(false);
            }
        }
    }

    #[test]
    fn selection_matches_pointwise_recomputation() {
        let n = 200;
        let mesh = MeshConfig::with_defaults(n).unwrap();
        let spec = ModelSpec::symmetric(n, CoefficientDist::GaussianComplexSplit);
        let mut total = 0;
        for seed in 0..5 {
            let poly = sample::<f64>(&spec, seed).unwrap();
            let proc_ = select_minima(&poly, &mesh).unwrap();
            total += proc_.records.len();
            for r in &proc_.records {
                let x = 2.0 * PI * r.alpha as f64 / mesh.n_effective as f64;
                let p = poly.evaluate(x, 0, Scale::Natural).unwrap();
                let dp = poly.evaluate(x, 1, Scale::Natural).unwrap();
                let w = p * dp.conj();
                let y = -w.re / dp.norm_sqr();
                let z = n as f64 * w.im / dp.norm();
                assert!(y.abs() <= PI / mesh.n_effective as f64 + 1e-15);
                assert!(z.abs() <= (n as f64).ln() + 1e-12);
                assert!(p.norm() <= (n as f64).powf(-0.5) + 1e-12);
                assert!((r.z - z).abs() < 1e-8);
            }
            let all = site_table(&poly, &mesh).unwrap();
            let count = all.iter().filter(|r| r.selected()).count();
            assert_eq!(count, proc_.records.len());
        }
        assert!(total > 0);
    }

    fn brute_min(poly: &PolySample<f64>, grid: usize) -> f64 {
        (0..grid)
            .map(|i| {
                let x = 2.0 * PI * i as f64 / grid as f64;
                poly.evaluate(x, 0, Scale::Natural).unwrap().norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn dense_oracle_agrees_with_brute_force() {
        let n = 8;
        let spec = ModelSpec::symmetric(n, CoefficientDist::GaussianComplexSplit);
        for seed in 0..6 {
            let poly = sample::<f64>(&spec, seed).unwrap();
            let g = global_min(
                &poly,
                GlobalMinMethod::DenseOracle {
                    resolution: 64,
                    refine_iters: 60,
                },
            )
            .unwrap();
            let b = brute_min(&poly, 400_000);
            assert!(g.value <= b + 1e-9, "{} {}", g.value, b);
            assert!(b - g.value < 1e-4, "{} {}", g.value, b);
            let at = poly.evaluate(g.x, 0, Scale::Natural).unwrap().norm();
            assert!((at - g.value).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_oracle_with_pruning_path() {
        let n = 300;
        let spec = ModelSpec::symmetric(n, CoefficientDist::Rademacher);
        let poly = sample::<f64>(&spec, 4).unwrap();
        let coarse = global_min(
            &poly,
            GlobalMinMethod::DenseOracle {
                resolution: 64 * n,
                refine_iters: 50,
            },
        )
        .unwrap();
        let fine = global_min(
            &poly,
            GlobalMinMethod::DenseOracle {
                resolution: 1 << 20,
                refine_iters: 50,
            },
        )
        .unwrap();
        assert!((coarse.value - fine.value).abs() < 1e-9);
    }

    #[test]
    fn degree_zero_minimum() {
        let spec = ModelSpec::symmetric(0, CoefficientDist::GaussianReal);
        let poly = sample::<f64>(&spec, 3).unwrap();
        let g = global_min(
            &poly,
            GlobalMinMethod::DenseOracle {
                resolution: 16,
                refine_iters: 10,
            },
        )
        .unwrap();
        assert!((g.value - poly.coeffs[0].norm()).abs() < 1e-15);
    }

    #[test]
    fn mesh_method_close_to_oracle() {
        let n = 128;
        let mesh = MeshConfig::with_defaults(n).unwrap();
        let spec = ModelSpec::symmetric(n, CoefficientDist::GaussianComplexSplit);
        for seed in 0..5 {
            let poly = sample::<f64>(&spec, seed).unwrap();
            let a = global_min(&poly, GlobalMinMethod::MeshLinearized(mesh)).unwrap();
            let b = global_min(
                &poly,
                GlobalMinMethod::DenseOracle {
                    resolution: 1 << 16,
                    refine_iters: 50,
                },
            )
            .unwrap();
            if a.quality == MinQuality::Flagged {
                assert!((a.value - b.value).abs() < 1e-3, "{} {}", a.value, b.value);
            }
        }
    }

    #[test]
    fn derivative_event_all_ones() {
        let n = 30;
        let spec = ModelSpec::symmetric(n, CoefficientDist::Rademacher);
        let poly =
            PolySample::<f64>::from_coefficients(spec, vec![Complex::new(1.0, 0.0); 2 * n + 1], 0)
                .unwrap();
        let c = check_derivative_event(&poly, 0, 1.0).unwrap();
        assert!((c.sup - 61f64.sqrt()).abs() < 1e-12);
        // sup |P'| of the Dirichlet kernel is attained away from the grid.
        let d = check_derivative_event(&poly, 1, f64::INFINITY).unwrap();
        assert!(d.holds);
        let h = 1e-6;
        let brute = (0..200_000)
            .map(|i| {
                let x = PI * i as f64 / 200_000.0;
                poly.evaluate(x, 1, Scale::Natural).unwrap().norm()
            })
            .fold(0.0, f64::max);
        assert!((d.sup * n as f64 - brute).abs() < 1e-6 * brute + h);
    }

    fn rec(alpha: usize, y: f64) -> SiteRecord<f64> {
        SiteRecord {
            alpha,
            x: 0.0,
            p: Complex::new(0.0, 0.0),
            dp: Complex::new(1.0, 0.0),
            y,
            z: 0.0,
            a_prime: true,
            a_double_prime: true,
        }
    }

    #[test]
    fn separation_rules() {
        // n large enough that the band is at least 2 wide.
        let mut mesh = MeshConfig::with_defaults(1000).unwrap();
        mesh.k0 = 0.5;
        let band = mesh.separation_band();
        assert!(band >= 3.0, "{band}");
        let hs = mesh.half_step();
        let lo_y = hs - hs / mesh.log_n().powf(0.5 / 4.0);
        let process = MinimaProcess {
            mesh,
            records: vec![rec(10, hs), rec(11, 0.0), rec(100, lo_y - 1e-12), rec(101, 0.0), rec(500, 0.0), rec(502, 0.0)],
            bad: vec![],
        };
        let r = check_separation(&process, 0.5);
        assert_eq!(r.adjacent, vec![(100, 101)]);
        assert_eq!(r.band, vec![(500, 502)]);
        let strict = check_separation(&process, 5.0);
        assert_eq!(strict.band, vec![]);
    }
}
