//! Random trigonometric polynomial models.
//!
//! A [`PolySample`] stores the raw random coefficients of one draw and the
//! normalisation is applied only at evaluation time.  Every model is reduced to
//! exponential form `P(x) = Σ_j s_j e^{ijx}` (the "spectrum") so that evaluation,
//! differentiation and FFT mesh evaluation share one code path.

use std::fmt;
use std::io::{Read, Write};
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::scalar::{from_i64, lit, to_f64, Scalar};
use crate::seed;

/// Sampler for a user supplied coefficient law.
pub type Sampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// User supplied real coefficient law with declared raw moments.
#[derive(Clone)]
pub struct CustomDist {
    pub name: String,
    pub sampler: Sampler,
    /// `moments[k - 1] = E ξ^k`.
    pub moments: Vec<f64>,
    /// Draw coefficients as `(ξ + iξ')/√2` from two independent draws.
    pub complex_split: bool,
}

impl CustomDist {
    pub fn new<F>(name: impl Into<String>, sampler: F, moments: Vec<f64>) -> Result<Self>
    where
        F: Fn(&mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        let name = name.into();
        ensure!(
            moments.len() >= 2,
            "custom distribution `{name}` must declare at least mean and second moment"
        );
        ensure!(
            moments[0].abs() <= 1e-12 && (moments[1] - 1.0).abs() <= 1e-12,
            "custom distribution `{name}` must declare mean 0 and variance 1"
        );
        Ok(Self {
            name,
            sampler: Arc::new(sampler),
            moments,
            complex_split: false,
        })
    }

    pub fn complex(mut self) -> Self {
        self.complex_split = true;
        self
    }

    /// Empirical check of the declared mean and variance.
    pub fn validate(&self, draws: usize, seed: u64, tol: f64) -> Result<()> {
        let mut rng = seed::rng(seed);
        let (mut s1, mut s2) = (0.0, 0.0);
        for index in 0..draws {
            let v = (self.sampler)(&mut rng);
            if !v.is_finite() {
                return Err(Error::NonFinite { value: v, index });
            }
            s1 += v;
            s2 += v * v;
        }
        let mean = s1 / draws as f64;
        let var = s2 / draws as f64 - mean * mean;
        ensure!(
            mean.abs() <= tol && (var - 1.0).abs() <= tol,
            "custom distribution `{}`: empirical mean {mean:.4}, variance {var:.4}",
            self.name
        );
        Ok(())
    }
}

impl fmt::Debug for CustomDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomDist")
            .field("name", &self.name)
            .field("moments", &self.moments)
            .field("complex_split", &self.complex_split)
            .finish_non_exhaustive()
    }
}

/// Coefficient law.
///
/// Real laws are standardised (mean 0, variance 1).  `GaussianComplexSplit`
/// draws `(g + ig')/√2`; its "component law" (used by the random-walk code) is
/// the standard Gaussian.  `PointMass` is the degenerate law at 0 and exists
/// for exercising degenerate code paths.
#[derive(Clone, Debug)]
pub enum CoefficientDist {
    Rademacher,
    GaussianReal,
    GaussianComplexSplit,
    UniformSymmetric,
    Custom(CustomDist),
    PointMass,
}

const SQRT3: f64 = 1.732_050_807_568_877_2;

impl CoefficientDist {
    pub fn name(&self) -> String {
        match self {
            Self::Rademacher => "rademacher".into(),
            Self::GaussianReal => "gaussian_real".into(),
            Self::GaussianComplexSplit => "gaussian_complex_split".into(),
            Self::UniformSymmetric => "uniform_symmetric".into(),
            Self::Custom(c) => format!("custom:{}", c.name),
            Self::PointMass => "point_mass".into(),
        }
    }

    /// Parses the name of a built-in law.
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "rademacher" => Self::Rademacher,
            "gaussian_real" | "gaussian" => Self::GaussianReal,
            "gaussian_complex_split" | "complex_gaussian" => Self::GaussianComplexSplit,
            "uniform_symmetric" | "uniform" => Self::UniformSymmetric,
            "point_mass" => Self::PointMass,
            other => {
                return Err(Error::Precondition(format!(
                    "unknown coefficient distribution `{other}`"
                )))
            }
        })
    }

    pub fn is_real(&self) -> bool {
        match self {
            Self::GaussianComplexSplit => false,
            Self::Custom(c) => !c.complex_split,
            _ => true,
        }
    }

    /// One draw from the component law.
    pub fn draw_real<R: RngCore>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Rademacher => {
                if rng.next_u32() & 1 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::GaussianReal | Self::GaussianComplexSplit => rng.sample(StandardNormal),
            Self::UniformSymmetric => SQRT3 * (2.0 * rng.random::<f64>() - 1.0),
            Self::Custom(c) => (c.sampler)(rng),
            Self::PointMass => 0.0,
        }
    }

    /// One coefficient draw.
    pub fn draw<R: RngCore>(&self, rng: &mut R, index: usize) -> Result<Complex<f64>> {
        let z = match self {
            Self::GaussianComplexSplit => {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
            Self::Custom(c) if c.complex_split => {
                let re = self.draw_real(rng);
                let im = self.draw_real(rng);
                Complex::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            }
            _ => Complex::new(self.draw_real(rng), 0.0),
        };
        if !z.re.is_finite() || !z.im.is_finite() {
            let value = if z.re.is_finite() { z.im } else { z.re };
            return Err(Error::NonFinite { value, index });
        }
        Ok(z)
    }

    /// Raw moments `E ξ^k`, `k = 1..=order`, of the component law.
    pub fn raw_moments(&self, order: usize) -> Result<Vec<f64>> {
        let m = (1..=order)
            .map(|k| match self {
                Self::Rademacher => Some(if k % 2 == 0 { 1.0 } else { 0.0 }),
                Self::GaussianReal | Self::GaussianComplexSplit => Some(if k % 2 == 0 {
                    (1..k).step_by(2).map(|i| i as f64).product()
                } else {
                    0.0
                }),
                Self::UniformSymmetric => Some(if k % 2 == 0 {
                    3f64.powi(k as i32 / 2) / (k as f64 + 1.0)
                } else {
                    0.0
                }),
                Self::Custom(c) => c.moments.get(k - 1).copied(),
                Self::PointMass => Some(0.0),
            })
            .collect::<Option<Vec<f64>>>();
        m.ok_or_else(|| Error::MissingMoments {
            dist: self.name(),
            required: order,
            declared: match self {
                Self::Custom(c) => c.moments.len(),
                _ => order,
            },
        })
    }

    /// Cumulants `κ_1..=κ_order` of the component law.
    pub fn cumulants(&self, order: usize) -> Result<Vec<f64>> {
        Ok(cumulants_from_moments(&self.raw_moments(order)?))
    }
}

/// Converts raw moments `μ_1..μ_K` to cumulants `κ_1..κ_K`.
pub fn cumulants_from_moments(mu: &[f64]) -> Vec<f64> {
    let k = mu.len();
    let mut kappa = vec![0.0; k];
    for n in 1..=k {
        let mut v = mu[n - 1];
        for m in 1..n {
            v -= binomial(n - 1, m - 1) * kappa[m - 1] * mu[n - m - 1];
        }
        kappa[n - 1] = v;
    }
    kappa
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

/// Polynomial family.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    /// `(2n+1)^{-1/2} Σ_{|j|≤n} ξ_j e^{ijx}`.
    SymmetricKac,
    /// `(n+1)^{-1/2} Σ_{0≤j≤n} ξ_j e^{ijx}`.
    OneSidedKac,
    /// `(n+a)^{-1/2} [√a ξ_0 + Σ_{1≤j≤n} ξ_j cos jx + η_j sin jx]`.
    CosSin { a: f64 },
}

impl Model {
    pub fn name(&self) -> &'static str {
        match self {
            Model::SymmetricKac => "symmetric_kac",
            Model::OneSidedKac => "one_sided_kac",
            Model::CosSin { .. } => "cos_sin",
        }
    }

    pub fn from_name(name: &str, a: f64) -> Result<Self> {
        match name {
            "symmetric_kac" | "symmetric" => Ok(Model::SymmetricKac),
            "one_sided_kac" | "one_sided" => Ok(Model::OneSidedKac),
            "cos_sin" => Ok(Model::CosSin { a }),
            other => Err(Error::Precondition(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    pub model: Model,
    pub n: usize,
    pub dist: CoefficientDist,
}

impl ModelSpec {
    pub fn new(model: Model, n: usize, dist: CoefficientDist) -> Result<Self> {
        if let Model::CosSin { a } = model {
            ensure!(a.is_finite() && a > 0.0, "cos-sin weight a must be positive, got {a}");
        }
        Ok(Self { model, n, dist })
    }

    pub fn symmetric(n: usize, dist: CoefficientDist) -> Self {
        Self {
            model: Model::SymmetricKac,
            n,
            dist,
        }
    }

    pub fn coefficient_count(&self) -> usize {
        match self.model {
            Model::OneSidedKac => self.n + 1,
            _ => 2 * self.n + 1,
        }
    }

    pub fn normalization(&self) -> f64 {
        let n = self.n as f64;
        match self.model {
            Model::SymmetricKac => 1.0 / (2.0 * n + 1.0).sqrt(),
            Model::OneSidedKac => 1.0 / (n + 1.0).sqrt(),
            Model::CosSin { a } => 1.0 / (n + a).sqrt(),
        }
    }

    /// Lowest frequency present in the exponential form.
    pub fn lowest_frequency(&self) -> i64 {
        match self.model {
            Model::OneSidedKac => 0,
            _ => -(self.n as i64),
        }
    }

    /// Number of frequencies in the exponential form; meshes must be at least this long.
    pub fn frequency_span(&self) -> usize {
        self.coefficient_count()
    }
}

/// Argument convention for [`PolySample::evaluate`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    /// `P(x)`.
    Natural,
    /// `P̃(s) = P(s/n)`; derivatives are taken in `s`.
    Rescaled,
}

/// One draw of a random polynomial.
#[derive(Clone, Debug)]
pub struct PolySample<T: Scalar> {
    pub spec: ModelSpec,
    /// Raw coefficients.  Layout: `SymmetricKac` stores `ξ_{-n..=n}`,
    /// `OneSidedKac` stores `ξ_{0..=n}`, `CosSin` stores `ξ_0, ξ_1..ξ_n, η_1..η_n`.
    pub coeffs: Vec<Complex<T>>,
    pub seed: u64,
    spectrum: Vec<Complex<T>>,
}

impl<T: Scalar> PolySample<T> {
    pub fn from_coefficients(spec: ModelSpec, coeffs: Vec<Complex<T>>, seed: u64) -> Result<Self> {
        ensure!(
            coeffs.len() == spec.coefficient_count(),
            "expected {} coefficients for {} with n = {}, got {}",
            spec.coefficient_count(),
            spec.model.name(),
            spec.n,
            coeffs.len()
        );
        let spectrum = build_spectrum(&spec, &coeffs);
        Ok(Self {
            spec,
            coeffs,
            seed,
            spectrum,
        })
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Normalised exponential-form coefficients, lowest frequency first.
    pub fn spectrum(&self) -> &[Complex<T>] {
        &self.spectrum
    }

    pub fn lowest_frequency(&self) -> i64 {
        self.spec.lowest_frequency()
    }

    /// `P^{(order)}` at `x` (or `P̃^{(order)}` at `s = x` when rescaled).
    pub fn evaluate(&self, x: T, order: u32, scale: Scale) -> Result<Complex<T>> {
        ensure!(order <= 2, "derivative order must be 0, 1 or 2, got {order}");
        match scale {
            Scale::Natural => Ok(self.eval_natural(x, order)),
            Scale::Rescaled => {
                ensure!(self.n() > 0, "rescaled evaluation needs n ≥ 1");
                let n = from_i64::<T>(self.n() as i64);
                Ok(self.eval_natural(x / n, order) / n.powi(order as i32))
            }
        }
    }

    /// Direct summation with a re-anchored rotation recurrence.
    pub(crate) fn eval_natural(&self, x: T, order: u32) -> Complex<T> {
        const ANCHOR: usize = 64;
        let j0 = self.lowest_frequency();
        let (s, c) = x.sin_cos();
        let step = Complex::new(c, s);
        let mut acc = Complex::new(T::zero(), T::zero());
        let mut z = Complex::new(T::one(), T::zero());
        for (k, coef) in self.spectrum.iter().enumerate() {
            let j = j0 + k as i64;
            if k % ANCHOR == 0 {
                let (s, c) = (from_i64::<T>(j) * x).sin_cos();
                z = Complex::new(c, s);
            } else {
                z = z * step;
            }
            acc = acc + *coef * z * derivative_factor::<T>(j, order);
        }
        acc
    }

    /// Values of `P^{(order)}` at `x_α = 2πα/len`, `α = 1..=len`.
    pub fn evaluate_mesh(&self, len: usize, order: u32) -> Result<Vec<Complex<T>>> {
        MeshEvaluator::new(len).eval(self, order)
    }

    pub fn to_record(&self) -> PolyRecord {
        PolyRecord {
            model: self.spec.model.name().into(),
            a: match self.spec.model {
                Model::CosSin { a } => Some(a),
                _ => None,
            },
            n: self.spec.n,
            dist: self.spec.dist.name(),
            coeffs: self
                .coeffs
                .iter()
                .map(|c| [to_f64(c.re), to_f64(c.im)])
                .collect(),
            seed: self.seed,
        }
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, &self.to_record())?;
        Ok(())
    }
}

impl PolySample<f64> {
    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let rec: PolyRecord = serde_json::from_reader(r)?;
        let dist = CoefficientDist::from_name(&rec.dist)?;
        Self::from_record(rec, dist)
    }

    /// Rebuilds a sample from its record; `dist` replaces the recorded law name.
    pub fn from_record(rec: PolyRecord, dist: CoefficientDist) -> Result<Self> {
        let model = Model::from_name(&rec.model, rec.a.unwrap_or(1.0))?;
        let spec = ModelSpec::new(model, rec.n, dist)?;
        let coeffs = rec.coeffs.iter().map(|c| Complex::new(c[0], c[1])).collect();
        Self::from_coefficients(spec, coeffs, rec.seed)
    }
}

/// Serialised form of a [`PolySample`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyRecord {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    pub n: usize,
    pub dist: String,
    pub coeffs: Vec<[f64; 2]>,
    pub seed: u64,
}

#[inline]
fn derivative_factor<T: Scalar>(j: i64, order: u32) -> Complex<T> {
    let jt = from_i64::<T>(j);
    match order {
        0 => Complex::new(T::one(), T::zero()),
        1 => Complex::new(T::zero(), jt),
        _ => Complex::new(-jt * jt, T::zero()),
    }
}

fn build_spectrum<T: Scalar>(spec: &ModelSpec, coeffs: &[Complex<T>]) -> Vec<Complex<T>> {
    let norm = lit::<T>(spec.normalization());
    match spec.model {
        Model::SymmetricKac | Model::OneSidedKac => coeffs.iter().map(|c| *c * norm).collect(),
        Model::CosSin { a } => {
            let n = spec.n;
            let half = lit::<T>(0.5);
            let mut out = vec![Complex::new(T::zero(), T::zero()); 2 * n + 1];
            out[n] = coeffs[0] * lit::<T>(a.sqrt());
            for j in 1..=n {
                let xi = coeffs[j];
                let eta = coeffs[n + j];
                let i_eta = Complex::new(-eta.im, eta.re);
                out[n + j] = (xi - i_eta) * half;
                out[n - j] = (xi + i_eta) * half;
            }
            out.iter().map(|c| *c * norm).collect()
        }
    }
}

/// Draws one polynomial.  Coefficients are drawn in storage order from
/// `ChaCha8Rng::seed_from_u64(seed)`.
pub fn sample<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<PolySample<T>> {
    let mut rng = seed::rng(seed);
    let coeffs = (0..spec.coefficient_count())
        .map(|i| {
            spec.dist
                .draw(&mut rng, i)
                .map(|z| Complex::new(lit::<T>(z.re), lit::<T>(z.im)))
        })
        .collect::<Result<Vec<_>>>()?;
    PolySample::from_coefficients(spec.clone(), coeffs, seed)
}

/// Planned inverse FFT for evaluating polynomials on the uniform mesh of length `len`.
#[derive(Clone)]
pub struct MeshEvaluator<T: Scalar> {
    len: usize,
    fft: Arc<dyn Fft<T>>,
}

impl<T: Scalar> MeshEvaluator<T> {
    pub fn new(len: usize) -> Self {
        let fft = FftPlanner::new().plan_fft_inverse(len.max(1));
        Self { len, fft }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// `P^{(order)}(2πα/len)` for `α = 1..=len` (entry `α - 1`).
    pub fn eval(&self, poly: &PolySample<T>, order: u32) -> Result<Vec<Complex<T>>> {
        ensure!(order <= 2, "derivative order must be 0, 1 or 2, got {order}");
        ensure!(
            self.len >= poly.spec.frequency_span(),
            "mesh length {} would alias a polynomial with {} frequencies",
            self.len,
            poly.spec.frequency_span()
        );
        let len = self.len as i64;
        let mut buf = vec![Complex::new(T::zero(), T::zero()); self.len];
        let j0 = poly.lowest_frequency();
        for (k, c) in poly.spectrum().iter().enumerate() {
            let j = j0 + k as i64;
            buf[j.rem_euclid(len) as usize] = *c * derivative_factor::<T>(j, order);
        }
        self.fft.process(&mut buf);
        buf.rotate_left(1);
        Ok(buf)
    }
}

impl<T: Scalar> fmt::Debug for MeshEvaluator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MeshEvaluator").field("len", &self.len).finish()
    }
}
