//! Ensembles of `n m_n` over independent polynomial draws.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::minima::{select_minima, GlobalMinMethod, MeshConfig, MinQuality, MinSolver};
use crate::polymodel::{sample, ModelSpec};
use crate::seed;

/// One replicate: the seed it used and either `n m_n` or the error it hit.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Replicate {
    pub index: usize,
    pub seed: u64,
    /// `n · min |P_n|`.
    pub value: Option<f64>,
    pub x: Option<f64>,
    pub quality: Option<MinQuality>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub spec: ModelSpec,
    pub mesh: Option<MeshConfig>,
    pub method: GlobalMinMethod,
    pub master_seed: u64,
    pub replicates: Vec<Replicate>,
    pub wallclock: f64,
}

impl EnsembleResult {
    /// Values of the successful replicates, in replicate order.
    pub fn samples(&self) -> Vec<f64> {
        self.replicates.iter().filter_map(|r| r.value).collect()
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.replicates.iter().map(|r| r.seed).collect()
    }

    pub fn failures(&self) -> usize {
        self.replicates.iter().filter(|r| r.error.is_some()).count()
    }

    pub fn count_quality(&self, q: MinQuality) -> usize {
        self.replicates.iter().filter(|r| r.quality == Some(q)).count()
    }
}

/// Runs `replicates` independent draws; replicate `i` uses `seed::split(master_seed, i)`.
/// `threads = None` uses the global rayon pool.
pub fn run_ensemble(
    spec: &ModelSpec,
    method: GlobalMinMethod,
    replicates: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<EnsembleResult> {
    ensure!(replicates >= 1, "ensemble needs at least one replicate");
    let n = spec.n;
    // Validate the method once so that configuration errors are fatal.
    MinSolver::<f64>::new(method, n)?;
    let start = Instant::now();
    let work = || -> Vec<Replicate> {
        (0..replicates)
            .into_par_iter()
            .map_init(
                || MinSolver::<f64>::new(method, n).expect("validated above"),
                |solver, i| {
                    let s = seed::split(master_seed, i as u64);
                    let out = sample::<f64>(spec, s).and_then(|p| solver.solve(&p));
                    match out {
                        Ok(g) => Replicate {
                            index: i,
                            seed: s,
                            value: Some(n as f64 * g.value),
                            x: Some(g.x),
                            quality: Some(g.quality),
                            error: None,
                        },
                        Err(e) => Replicate {
                            index: i,
                            seed: s,
                            value: None,
                            x: None,
                            quality: None,
                            error: Some(e.to_string()),
                        },
                    }
                },
            )
            .collect()
    };
    let reps = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::Precondition(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    Ok(EnsembleResult {
        spec: spec.clone(),
        mesh: match method {
            GlobalMinMethod::MeshLinearized(m) => Some(m),
            GlobalMinMethod::DenseOracle { .. } => None,
        },
        method,
        master_seed,
        replicates: reps,
        wallclock: start.elapsed().as_secs_f64(),
    })
}

/// Agreement between the global minimum of the selected process and of its
/// bad-arc thinning.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SharpConsistency {
    pub replicates: usize,
    /// Replicates with at least one selected site.
    pub with_sites: usize,
    /// Replicates where the thinned minimum differs from the unthinned one.
    pub differing: usize,
    /// Of those, how many had the unthinned minimiser in a bad arc.
    pub explained: usize,
    pub fraction: f64,
}

pub fn sharp_consistency(
    spec: &ModelSpec,
    mesh: &MeshConfig,
    kappa: f64,
    replicates: usize,
    master_seed: u64,
) -> Result<SharpConsistency> {
    ensure!(replicates >= 1, "need at least one replicate");
    let rows: Vec<Result<Option<(bool, bool)>>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let p = sample::<f64>(spec, seed::split(master_seed, i as u64))?;
            let mut proc = select_minima(&p, mesh)?;
            proc.thin(kappa)?;
            let all = proc
                .records
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.z.abs().total_cmp(&b.1.z.abs()));
            let Some((i_all, r_all)) = all else {
                return Ok(None);
            };
            let sharp = proc.sharp().map(|r| r.z.abs()).fold(f64::INFINITY, f64::min);
            let differs = sharp != r_all.z.abs();
            Ok(Some((differs, proc.bad[i_all])))
        })
        .collect();
    let mut out = SharpConsistency {
        replicates,
        with_sites: 0,
        differing: 0,
        explained: 0,
        fraction: 0.0,
    };
    for r in rows {
        if let Some((differs, bad)) = r? {
            out.with_sites += 1;
            if differs {
                out.differing += 1;
                if bad {
                    out.explained += 1;
                }
            }
        }
    }
    out.fraction = out.differing as f64 / replicates as f64;
    Ok(out)
}
