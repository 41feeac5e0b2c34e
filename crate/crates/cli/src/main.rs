use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use trigmin::arithmetic::{arith_meta, classify_bad_arcs, PhaseTuple};
use trigmin::edgeworth::{compare_box, BoxRegion};
use trigmin::harness::acceptance;
use trigmin::harness::{fit_exponential, histogram, run_ensemble};
use trigmin::minima::{build_mesh, select_minima, GlobalMinMethod, MeshConfig, MinSolver};
use trigmin::phasewalk::{charfn_log_modulus, covariance, small_ball_curve, CharFnOptions, WalkVariant};
use trigmin::polymodel::{sample, CoefficientDist, Model, ModelSpec};
use trigmin::{Error, Result};

#[derive(Parser)]
#[command(name = "trigmin", version, about = "Minimum modulus of random trigonometric polynomials")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// symmetric_kac, one_sided_kac or cos_sin
    #[arg(long, global = true, default_value = "symmetric_kac")]
    model: String,
    /// Weight `a` of the constant term in the cos_sin model.
    #[arg(long, global = true, default_value_t = 1.0)]
    cos_weight: f64,
    /// rademacher, gaussian_real, gaussian_complex_split, uniform_symmetric
    #[arg(long, global = true, default_value = "rademacher")]
    dist: String,
    #[arg(long, global = true, default_value_t = 1000)]
    n: usize,
    #[arg(long, global = true, default_value_t = 100)]
    replicates: usize,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value_t = trigmin::minima::DEFAULT_K0)]
    k0: f64,
    #[arg(long, global = true, default_value_t = trigmin::minima::DEFAULT_C0)]
    c0: f64,
    #[arg(long, global = true, default_value_t = trigmin::minima::DEFAULT_BETA)]
    beta: f64,
    #[arg(long, global = true, default_value_t = trigmin::minima::DEFAULT_KAPPA)]
    kappa: f64,
    #[arg(long, global = true, value_enum, default_value_t = Method::Oracle)]
    method: Method,
    /// Oracle grid size (default 64 n).
    #[arg(long, global = true)]
    resolution: Option<usize>,
    #[arg(long, global = true, default_value_t = 40)]
    refine: usize,
    /// Output file (default stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mesh,
    Oracle,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Variant {
    Full,
    Complex,
}

#[derive(Subcommand)]
enum Cmd {
    /// Ensemble of n·m_n with exponential fit and histogram.
    Simulate {
        #[arg(long, default_value_t = 40)]
        bins: usize,
    },
    /// One polynomial: minimum by both methods; csv writes the selected sites.
    Minmod,
    /// Bad-arc flags per mesh site, or the arithmetic summary of `--t`.
    Classify {
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        t: Vec<f64>,
    },
    /// Covariance of the phase-space walk.
    Covariance {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        t: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Variant::Full)]
        variant: Variant,
    },
    /// ln |E e^{i⟨S_n(t), x⟩}|.
    Charfn {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        t: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        x: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// P(|S̃_n(t)| ≤ δ) for each δ.
    Smallball {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        t: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "0.4,0.6,0.8,1.0")]
        delta: Vec<f64>,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Empirical box probability against the Gaussian and Edgeworth approximations.
    Edgeworth {
        #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
        t: Vec<f64>,
        #[arg(long, default_value_t = 2)]
        ell: usize,
        /// Half side of the cube centred at the origin.
        #[arg(long, default_value_t = 0.5)]
        half: f64,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
    },
    /// Run acceptance criteria; exit code 3 if any fails.
    Report {
        #[arg(long, value_delimiter = ',')]
        criteria: Vec<usize>,
    },
}

enum Outcome {
    Ok,
    AcceptanceFailed,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::AcceptanceFailed) => ExitCode::from(3),
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Precondition(_) | Error::MissingMoments { .. } | Error::SingularCovariance(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn output(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.out {
        Some(p) => Box::new(File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json(cli: &Cli, v: &Value) -> Result<()> {
    let mut w = output(cli)?;
    serde_json::to_writer_pretty(&mut w, v)?;
    writeln!(w)?;
    Ok(())
}

/// Writes rows of equal-length JSON objects as CSV, or the whole value as JSON.
fn write_table(cli: &Cli, whole: &Value, rows: &[Value]) -> Result<()> {
    if cli.format == Format::Json {
        return write_json(cli, whole);
    }
    let mut w = output(cli)?;
    let Some(Value::Object(first)) = rows.first() else {
        return Ok(());
    };
    let keys: Vec<&String> = first.keys().collect();
    writeln!(w, "{}", keys.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(","))?;
    for r in rows {
        let cells: Vec<String> = keys
            .iter()
            .map(|k| match &r[k.as_str()] {
                Value::Null => String::new(),
                Value::String(s) => format!("\"{}\"", s.replace('"', "\"\"")),
                v => v.to_string(),
            })
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

fn spec(cli: &Cli) -> Result<ModelSpec> {
    let model = Model::from_name(&cli.model, cli.cos_weight)?;
    ModelSpec::new(model, cli.n, CoefficientDist::from_name(&cli.dist)?)
}

fn mesh(cli: &Cli) -> Result<MeshConfig> {
    build_mesh(cli.n, cli.k0, cli.c0, cli.beta)
}

fn oracle(cli: &Cli) -> GlobalMinMethod {
    GlobalMinMethod::DenseOracle {
        resolution: cli.resolution.unwrap_or(64 * cli.n),
        refine_iters: cli.refine,
    }
}

fn method(cli: &Cli) -> Result<GlobalMinMethod> {
    Ok(match cli.method {
        Method::Mesh => GlobalMinMethod::MeshLinearized(mesh(cli)?),
        Method::Oracle => oracle(cli),
    })
}

fn tuple(cli: &Cli, t: &[f64]) -> Result<PhaseTuple<f64>> {
    PhaseTuple::new(cli.n, t.to_vec())
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.cmd {
        Cmd::Simulate { bins } => {
            let spec = spec(cli)?;
            let ens = run_ensemble(&spec, method(cli)?, cli.replicates, cli.seed, None)?;
            let s = ens.samples();
            let rows: Vec<Value> = ens.replicates.iter().map(|r| json!(r)).collect();
            let fit = if s.len() >= 100 {
                fit_exponential(&s, &[]).map(|f| json!(f)).unwrap_or(Value::Null)
            } else {
                Value::Null
            };
            let top = s.iter().copied().fold(0.0, f64::max);
            let hist = if s.is_empty() || top <= 0.0 {
                Value::Null
            } else {
                json!(histogram(&s, *bins, 0.0, top)?)
            };
            let whole = json!({
                "model": spec.model.name(),
                "dist": spec.dist.name(),
                "n": spec.n,
                "master_seed": cli.seed,
                "failures": ens.failures(),
                "wallclock": ens.wallclock,
                "target_lambda": trigmin::harness::target_lambda(),
                "fit": fit,
                "histogram": hist,
                "replicates": rows,
            });
            write_table(cli, &whole, &rows)?;
        }
        Cmd::Minmod => {
            let spec = spec(cli)?;
            let mesh = mesh(cli)?;
            let p = sample::<f64>(&spec, cli.seed)?;
            if cli.format == Format::Csv {
                let mut proc = select_minima(&p, &mesh)?;
                proc.thin(cli.kappa)?;
                proc.write_csv(output(cli)?)?;
                return Ok(Outcome::Ok);
            }
            let m = MinSolver::new(GlobalMinMethod::MeshLinearized(mesh), cli.n)?.solve(&p)?;
            let o = MinSolver::new(oracle(cli), cli.n)?.solve(&p)?;
            let proc = select_minima(&p, &mesh)?;
            let n = cli.n as f64;
            write_json(
                cli,
                &json!({
                    "n": cli.n,
                    "seed": cli.seed,
                    "mesh": mesh,
                    "selected_sites": proc.records.len(),
                    "mesh_linearized": {"value": m.value, "n_m_n": n * m.value, "x": m.x, "quality": m.quality},
                    "dense_oracle": {"value": o.value, "n_m_n": n * o.value, "x": o.x, "quality": o.quality},
                }),
            )?;
        }
        Cmd::Classify { t } => {
            if !t.is_empty() {
                let tup = tuple(cli, t)?;
                let nf = cli.n as f64;
                let grid: Vec<f64> = (1..=40).map(|i| nf.powf(i as f64 / 40.0)).collect();
                let meta = arith_meta(&tup, &grid)?;
                write_json(cli, &json!({"n": cli.n, "t": t, "meta": meta}))?;
                return Ok(Outcome::Ok);
            }
            let mesh = mesh(cli)?;
            let bad = classify_bad_arcs(&mesh, cli.kappa)?;
            let rows: Vec<Value> = bad
                .iter()
                .enumerate()
                .map(|(i, &b)| json!({"alpha": i + 1, "x": mesh.x::<f64>(i + 1), "smooth": !b, "bad": b}))
                .collect();
            let whole = json!({
                "mesh": mesh,
                "kappa": cli.kappa,
                "bad_count": bad.iter().filter(|&&b| b).count(),
                "sites": rows,
            });
            write_table(cli, &whole, &rows)?;
        }
        Cmd::Covariance { t, variant } => {
            let tup = tuple(cli, t)?;
            let v = match variant {
                Variant::Full => WalkVariant::Full4m,
                Variant::Complex => WalkVariant::Complex2m,
            };
            let (lo, hi) = v.default_range(cli.n);
            let c = covariance(&tup, lo, hi, v)?;
            let rows: Vec<Vec<f64>> = c.v.row_iter().map(|r| r.iter().copied().collect()).collect();
            write_json(cli, &json!({"n": cli.n, "t": t, "sigma_min": c.sigma_min, "v": rows}))?;
        }
        Cmd::Charfn { t, x, samples } => {
            let tup = tuple(cli, t)?;
            let opts = CharFnOptions {
                samples: *samples,
                seed: cli.seed,
                ..CharFnOptions::default()
            };
            let dist = CoefficientDist::from_name(&cli.dist)?;
            let v = charfn_log_modulus(&tup, x, &dist, &opts)?;
            write_json(cli, &json!({"n": cli.n, "t": t, "x": x, "dist": dist.name(), "result": v}))?;
        }
        Cmd::Smallball { t, delta, samples } => {
            let tup = tuple(cli, t)?;
            let dist = CoefficientDist::from_name(&cli.dist)?;
            let center = vec![0.0; 4 * tup.m()];
            let curve = small_ball_curve(&tup, &dist, &center, delta, *samples, cli.seed)?;
            let rows: Vec<Value> = delta
                .iter()
                .zip(&curve)
                .map(|(d, c)| json!({"delta": d, "p": c.p, "stderr": c.stderr}))
                .collect();
            let whole = json!({"n": cli.n, "t": t, "dist": dist.name(), "samples": samples, "curve": rows});
            write_table(cli, &whole, &rows)?;
        }
        Cmd::Edgeworth { t, ell, half, samples } => {
            let tup = tuple(cli, t)?;
            let dist = CoefficientDist::from_name(&cli.dist)?;
            let region = BoxRegion::cube(4 * tup.m(), 0.0, *half)?;
            let c = compare_box(&tup, &dist, &region, *samples, *ell, cli.seed)?;
            write_json(cli, &json!({"t": t, "dist": dist.name(), "half": half, "comparison": c}))?;
        }
        Cmd::Report { criteria } => {
            let ids: Vec<usize> = if criteria.is_empty() { (1..=10).collect() } else { criteria.clone() };
            let results = acceptance::run(&ids)?;
            if cli.format == Format::Json {
                write_json(cli, &json!(results))?;
            } else {
                let mut w = output(cli)?;
                for r in &results {
                    writeln!(w, "{}", r.line())?;
                    for s in &r.supplementary {
                        writeln!(w, "    {s}")?;
                    }
                }
            }
            if results.iter().any(|r| !r.passed) {
                return Ok(Outcome::AcceptanceFailed);
            }
        }
    }
    Ok(Outcome::Ok)
}
