//! Ensembles, statistics and the acceptance criteria.

pub mod acceptance;
pub mod ensemble;
pub mod stats;

pub use ensemble::{run_ensemble, sharp_consistency, EnsembleResult, Replicate, SharpConsistency};
pub use stats::{fit_exponential, histogram, ks_distance, target_lambda, FitReport, HistBin, Reference};
