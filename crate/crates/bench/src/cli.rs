//! Command-line front end.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use colupdate_core::design::{self, CoefficientSpec, GaussianDesignModel};
use colupdate_core::lasso::{self, LassoProblem, SolverOptions};
use colupdate_core::rng::{tag, Substream};
use colupdate_core::{debias_generalized, kkt_report, Residualizer};
use ndarray::{Array1, Array2};

use crate::config::{Config, EngineChoice};
use crate::error::{BenchError, Result};
use crate::experiments::{diag, fdr, semireal, update_error};
use crate::output::{self, RunManifest, TableRow};

pub const DEFAULT_SEED: u64 = 1;
pub const THREADS_ENV: &str = "COLUPDATE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "colupdate", version, about = "Column-update estimators: simulation, fitting and selection benchmarks")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Worker threads (overrides COLUPDATE_THREADS and the config).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub engine: Option<Engine>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Engine {
    Approx,
    Exact,
}

impl From<Engine> for EngineChoice {
    fn from(e: Engine) -> Self {
        match e {
            Engine::Approx => EngineChoice::Approx,
            Engine::Exact => EngineChoice::Exact,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an AR(1) design, sparse coefficients and a response.
    Gen,
    /// Fit the Lasso to a design/response CSV pair.
    Fit(FitArgs),
    /// Fit and debias every coordinate.
    Debias(FitArgs),
    /// Approximate versus exact one-column update errors.
    UpdateError {
        #[arg(long)]
        reps: Option<usize>,
        /// Dump per-coordinate values to percoord.csv.
        #[arg(long)]
        percoord: Option<bool>,
    },
    /// FDR and power of the selection procedures.
    FdrBench {
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        a_val: Option<f64>,
    },
    /// Knockoff-precision diagonal diagnostics.
    DiagKnockoff,
    /// Semi-synthetic benchmark on a CSV design.
    SemiReal {
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        q: Option<f64>,
        #[arg(long)]
        reps: Option<usize>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub response: Option<PathBuf>,
    #[arg(long)]
    pub lambda: Option<f64>,
}

/// Parse `args` and run; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn thread_count(flag: Option<usize>, config: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n = v
            .trim()
            .parse()
            .map_err(|_| BenchError::validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        return Ok(Some(n));
    }
    Ok(config)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.common.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let seed = cli.common.seed.or(config.seed).unwrap_or(DEFAULT_SEED);
    config.seed = Some(seed);
    let threads = thread_count(cli.common.threads, config.threads)?;
    if threads == Some(0) {
        return Err(BenchError::validation("threads must be positive"));
    }
    if let Some(engine) = cli.common.engine {
        config.fdr_bench.engine = engine.into();
        config.semi_real.engine = engine.into();
    }
    let out = cli.common.out.clone();
    fs::create_dir_all(&out).map_err(|source| BenchError::Write {
        path: out.clone(),
        source,
    })?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| BenchError::validation(e.to_string()))?
    };
    pool.install(|| dispatch(cli.command, config, seed, &out))
}

fn dispatch(command: Command, mut config: Config, seed: u64, out: &Path) -> Result<()> {
    let start = Instant::now();
    let (name, rows, extra, notes, timings): (&str, Vec<TableRow>, Vec<PathBuf>, Vec<String>, Vec<(String, f64)>) =
        match command {
            Command::Gen => {
                let files = generate(&config, seed, out)?;
                ("gen", Vec::new(), files, Vec::new(), Vec::new())
            }
            Command::Fit(args) => {
                apply_fit_args(&mut config, args);
                let (rows, file) = fit(&config, out, false)?;
                ("fit", rows, vec![file], Vec::new(), Vec::new())
            }
            Command::Debias(args) => {
                apply_fit_args(&mut config, args);
                let (rows, file) = fit(&config, out, true)?;
                ("debias", rows, vec![file], Vec::new(), Vec::new())
            }
            Command::UpdateError { reps, percoord } => {
                let cfg = &mut config.update_error;
                if let Some(r) = reps {
                    cfg.reps = r;
                }
                if let Some(p) = percoord {
                    cfg.percoord = p;
                }
                let res = update_error::run(cfg, seed)?;
                let mut extra = Vec::new();
                if cfg.percoord {
                    let path = out.join("percoord.csv");
                    output::write_rows(&path, &res.percoord)?;
                    extra.push(path);
                }
                let notes = vec![format!("worst KKT violation {:e}", res.kkt_worst)];
                ("update-error", res.rows, extra, notes, Vec::new())
            }
            Command::FdrBench { q, reps, a_val } => {
                let cfg = &mut config.fdr_bench;
                if let Some(q) = q {
                    cfg.q = q;
                }
                if let Some(r) = reps {
                    cfg.reps = r;
                }
                if let Some(a) = a_val {
                    cfg.a_val = a;
                }
                let res = fdr::run(cfg, seed)?;
                let notes = res.dropped.iter().map(|(r, e)| format!("replicate {r} dropped: {e}")).collect();
                let timings = res.timings.into_iter().map(|(k, v)| (format!("seconds_per_rep/{k}"), v)).collect();
                ("fdr-bench", res.rows, Vec::new(), notes, timings)
            }
            Command::DiagKnockoff => {
                let (rows, _) = diag::run(&config.diag_knockoff)?;
                ("diag-knockoff", rows, Vec::new(), Vec::new(), Vec::new())
            }
            Command::SemiReal { csv, q, reps } => {
                let cfg = &mut config.semi_real;
                if let Some(c) = csv {
                    cfg.csv = Some(c);
                }
                if let Some(q) = q {
                    cfg.q = q;
                }
                if let Some(r) = reps {
                    cfg.reps = r;
                }
                let res = semireal::run(cfg, seed)?;
                let mut notes: Vec<String> =
                    res.dropped.iter().map(|(r, e)| format!("replicate {r} dropped: {e}")).collect();
                notes.push(format!("kept columns {:?}", res.prepared.kept));
                let timings = res.timings.into_iter().map(|(k, v)| (format!("seconds_per_rep/{k}"), v)).collect();
                ("semi-real", res.rows, Vec::new(), notes, timings)
            }
        };
    for row in &rows {
        row.validate()?;
    }
    let mut manifest = RunManifest::new(name, seed, config.snapshot());
    if !rows.is_empty() || extra.is_empty() {
        let table = out.join("table.csv");
        output::write_rows(&table, &rows)?;
        manifest.record_file(&table)?;
    }
    for f in &extra {
        manifest.record_file(f)?;
    }
    manifest.notes = notes;
    manifest.stages.insert(name.to_string(), start.elapsed().as_secs_f64());
    manifest.stages.extend(timings);
    manifest.write(out)?;
    Ok(())
}

fn apply_fit_args(config: &mut Config, args: FitArgs) {
    if let Some(d) = args.design {
        config.fit.design = Some(d);
    }
    if let Some(r) = args.response {
        config.fit.response = Some(r);
    }
    if let Some(l) = args.lambda {
        config.fit.lambda = l;
    }
}

fn generate(config: &Config, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let g = &config.gen;
    if g.n == 0 || g.p == 0 || g.s > g.p {
        return Err(BenchError::validation(format!("need n, p > 0 and s <= p (n={}, p={}, s={})", g.n, g.p, g.s)));
    }
    if !(g.noise_variance >= 0.0) {
        return Err(BenchError::validation("noise_variance must be nonnegative"));
    }
    let model = GaussianDesignModel::from_covariance(design::ar1_covariance(g.p, g.rho)?)?;
    let stream = Substream::new(seed, 0, 0, 0);
    let a = design::sample_design(g.n, &model, &mut stream.child(tag::DESIGN, 0).rng());
    let truth = design::sparse_coefficients(g.p, g.s, CoefficientSpec::GaussianSupport, &mut stream.child(tag::COEFFICIENTS, 0).rng())?;
    let y = design::generate_response(a.view(), truth.coefficients.view(), g.noise_variance, &mut stream.child(tag::NOISE, 0).rng())?;
    let names: Vec<String> = (1..=g.p).map(|j| format!("x{j}")).collect();
    let design_path = out.join("design.csv");
    output::write_matrix(&design_path, &names, a.view())?;
    let response_path = out.join("response.csv");
    output::write_matrix(&response_path, &["y".to_string()], y.view().insert_axis(ndarray::Axis(1)))?;
    let coef_path = out.join("coefficients.csv");
    output::write_matrix(&coef_path, &["coefficient".to_string()], truth.coefficients.view().insert_axis(ndarray::Axis(1)))?;
    Ok(vec![design_path, response_path, coef_path])
}

fn fit(config: &Config, out: &Path, debias: bool) -> Result<(Vec<TableRow>, PathBuf)> {
    let f = &config.fit;
    let dpath = f.design.as_ref().ok_or_else(|| BenchError::validation("--design is required"))?;
    let rpath = f.response.as_ref().ok_or_else(|| BenchError::validation("--response is required"))?;
    let a: Array2<f64> = semireal::ingest_csv(dpath, f.has_header, false)?.matrix;
    let rt = semireal::ingest_csv(rpath, f.has_header, false)?.matrix;
    if rt.ncols() != 1 {
        return Err(BenchError::validation(format!("{} must hold one column", rpath.display())));
    }
    let y: Array1<f64> = rt.column(0).to_owned();
    let problem = LassoProblem::new(a.view(), y.view(), f.lambda)?;
    let fit = lasso::solve_lasso(&problem, &SolverOptions::default())?;
    let kkt = kkt_report(&problem, &fit)?;
    let mut rows = vec![
        TableRow::new("fit", f.lambda, a.ncols(), "k", &[fit.k as f64]),
        TableRow::new("fit", f.lambda, a.ncols(), "nnz", &[fit.nnz() as f64]),
        TableRow::new("fit", f.lambda, a.ncols(), "objective", &[fit.objective]),
        TableRow::new("fit", f.lambda, a.ncols(), "kkt_worst", &[kkt.worst()]),
    ];
    let p = a.ncols();
    let mut names = vec!["coefficient".to_string(), "subgradient".to_string()];
    let mut cols: Vec<Array1<f64>> = vec![fit.coefficients.clone(), fit.subgradient.clone()];
    let path;
    if debias {
        let residualizer = match f.rho {
            Some(rho) => Residualizer::gaussian(GaussianDesignModel::from_covariance(design::ar1_covariance(p, rho)?)?.theta)?,
            None => Residualizer::OlsProjection,
        };
        let d = debias_generalized(a.view(), y.view(), &fit, &residualizer)?;
        rows.push(TableRow::new("debias", f.lambda, p, "degenerate", &[d.degenerate_count() as f64]));
        names.extend(["debiased", "denominator", "t"].map(String::from));
        cols.push(d.alpha_u.clone());
        cols.push(d.denominators.clone());
        cols.push(d.t_stats.clone());
        path = out.join("debias.csv");
    } else {
        path = out.join("coefficients.csv");
    }
    let mut m = Array2::zeros((p, cols.len()));
    for (c, v) in cols.iter().enumerate() {
        m.column_mut(c).assign(v);
    }
    output::write_matrix(&path, &names, m.view())?;
    Ok((rows, path))
}
