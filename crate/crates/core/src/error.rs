use thiserror::Error;

/// Errors raised by the library.
///
/// `Precondition` covers every refusal of out-of-domain input; the CLI maps it
/// to exit code 2.
#[derive(Debug, Error)]
pub enum Error {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("custom sampler returned non-finite value {value} (draw {index})")]
    NonFinite { value: f64, index: usize },
    #[error("distribution `{dist}` declares moments up to order {declared}, order {required} required")]
    MissingMoments {
        dist: String,
        required: usize,
        declared: usize,
    },
    #[error("covariance is numerically singular (smallest eigenvalue {0:e})")]
    SingularCovariance(f64),
    #[error("quadrature did not converge: relative change {achieved:e} after {points} points")]
    Quadrature { achieved: f64, points: usize },
    #[error("requested standard error {requested:e} unattainable with {samples} samples")]
    Precision { requested: f64, samples: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Precondition(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
