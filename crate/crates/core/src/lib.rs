//! Minimum modulus of random trigonometric polynomials: sampling, mesh-based
//! near-minimum detection, the phase-space random walk and its Edgeworth
//! expansion, and the numerical checks built on them.

pub mod arithmetic;
pub mod edgeworth;
pub mod error;
pub mod harness;
pub mod minima;
pub mod phasewalk;
pub mod polymodel;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};

pub type Poly = polymodel::PolySample<f64>;
pub type Poly32 = polymodel::PolySample<f32>;
pub type Site = minima::SiteRecord<f64>;
pub type Minima = minima::MinimaProcess<f64>;
pub type Tuple = arithmetic::PhaseTuple<f64>;
pub type Steps = phasewalk::StepMatrix<f64>;
pub type Psi = phasewalk::PsiSequence<f64>;
