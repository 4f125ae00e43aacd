//! FDR and power of the selection procedures on the equicorrelated-precision design.

use std::collections::BTreeMap;
use std::time::Instant;

use colupdate_core::design::{self, ColumnSampler, CoefficientSpec, GaussianDesignModel};
use colupdate_core::lasso;
use colupdate_core::rng::{tag, Substream};
use colupdate_core::selection::{
    self, CrtConfig, KnockoffConfig, KnockoffStatistic, LocalKnockoffConfig, SelectionOutcome, SelectionProblem,
    Statistic,
};
use colupdate_core::{Error as CoreError, Residualizer};
use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::config::{EngineChoice, FdrBenchConfig, LambdaRule, Method};
use crate::error::Result;
use crate::output::TableRow;

/// The fixed Gaussian model of a benchmark: equicorrelated precision with
/// an eq-knockoff `s`.
#[derive(Debug, Clone)]
pub struct FdrModel {
    pub model: GaussianDesignModel,
    pub residualizer: Residualizer,
    /// Joint `(A, Ã)` precision, built only when a debiased knockoff runs.
    pub joint_precision: Option<Array2<f64>>,
}

impl FdrModel {
    pub fn new(cfg: &FdrBenchConfig) -> Result<Self> {
        let (sigma, theta) = design::equicorrelated_from_precision(cfg.p, cfg.a_p(), cfg.eps_eq)?;
        let s0 = Array1::from_elem(cfg.p, design::eq_knockoff_s(cfg.p, cfg.a_p(), cfg.eps_eq));
        let s = design::shrink_knockoff_s(theta.view(), s0.view())?;
        let model = GaussianDesignModel::from_parts(sigma, theta)?.with_knockoff_s(s.clone())?;
        let joint_precision = if cfg.methods.contains(&Method::KnockoffDb) {
            Some(design::knockoff_joint_precision(model.theta.view(), s.view())?)
        } else {
            None
        };
        Ok(FdrModel {
            residualizer: Residualizer::gaussian(model.theta.clone())?,
            model,
            joint_precision,
        })
    }
}

/// Outcome of every method on one data set.
#[derive(Debug, Clone)]
pub struct RepResult {
    pub outcomes: Vec<(Method, SelectionOutcome, f64)>,
}

/// Data shared by all methods within one replicate.
pub struct RepData {
    pub design: Array2<f64>,
    pub response: Array1<f64>,
    pub support: Vec<usize>,
}

pub fn simulate(cfg: &FdrBenchConfig, model: &FdrModel, stream: Substream) -> Result<RepData> {
    let a = design::sample_design(cfg.n, &model.model, &mut stream.child(tag::DESIGN, 0).rng());
    let truth = design::sparse_coefficients(
        cfg.p,
        cfg.s,
        CoefficientSpec::FixedAmplitude {
            a_val: cfg.a_val,
            n: cfg.n,
        },
        &mut stream.child(tag::COEFFICIENTS, 0).rng(),
    )?;
    let y = design::generate_response(
        a.view(),
        truth.coefficients.view(),
        cfg.noise_sd().powi(2),
        &mut stream.child(tag::NOISE, 0).rng(),
    )?;
    Ok(RepData {
        design: a,
        response: y,
        support: truth.support,
    })
}

fn resolve(rule: &LambdaRule, noise_sd: f64, a: ArrayView2<f64>, y: &Array1<f64>) -> f64 {
    let (n, p) = a.dim();
    rule.resolve(noise_sd, n, p, lasso::lambda_max(a, y.view()))
}

/// Run every configured method on one simulated data set.
pub fn run_methods(
    cfg: &FdrBenchConfig,
    model: &FdrModel,
    data: &RepData,
    noise_sd: f64,
    stream: Substream,
) -> Result<RepResult> {
    let lambda = resolve(&cfg.lambda, noise_sd, data.design.view(), &data.response);
    let pb = SelectionProblem::new(data.design.view(), data.response.view(), lambda);
    let sampler = ColumnSampler::gaussian(&model.model);
    let engine = cfg.engine.into();
    let knockoffs = if cfg.methods.iter().any(|m| m.is_knockoff()) {
        Some(design::model_x_knockoff_sample(
            data.design.view(),
            &model.model,
            &mut stream.child(tag::KNOCKOFF, 0).rng(),
        )?)
    } else {
        None
    };
    let mut outcomes = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let method_stream = stream.child(tag::RESAMPLE, mi as u64);
        let start = Instant::now();
        let mut out = match method {
            Method::Knockoff | Method::KnockoffDb => {
                let k = knockoffs.as_ref().expect("knockoffs sampled");
                let rule = cfg.knockoff_lambda.unwrap_or(cfg.lambda);
                let aug = concatenate(Axis(1), &[data.design.view(), k.view()]).map_err(|e| CoreError::Dimension(e.to_string()))?;
                let kpb = SelectionProblem::new(data.design.view(), data.response.view(), resolve(&rule, noise_sd, aug.view(), &data.response));
                let kc = KnockoffConfig {
                    q: cfg.q,
                    statistic: if method == Method::Knockoff {
                        KnockoffStatistic::LassoDiff
                    } else {
                        KnockoffStatistic::DebiasedDiff
                    },
                    offset: cfg.knockoff_offset,
                };
                selection::knockoff_filter(&kpb, k.view(), model.joint_precision.as_ref().map(|m| m.view()), &kc)?
            }
            Method::LocalKnockoff | Method::LocalKnockoffDb => {
                let lc = LocalKnockoffConfig {
                    q: cfg.q,
                    statistic: if method == Method::LocalKnockoff {
                        Statistic::Lasso
                    } else {
                        Statistic::Debiased
                    },
                    epsilon: cfg.epsilon,
                    engine,
                };
                selection::local_knockoff_filter(&pb, &model.residualizer, &sampler, &lc, method_stream)?
            }
            Method::Crt | Method::CrtDb => {
                let cc = CrtConfig {
                    q: cfg.q,
                    resamples: cfg.crt_resamples,
                    statistic: if method == Method::Crt {
                        Statistic::Lasso
                    } else {
                        Statistic::Debiased
                    },
                    engine,
                };
                selection::crt(&pb, &model.residualizer, &sampler, &cc, method_stream)?
            }
        };
        let secs = start.elapsed().as_secs_f64();
        out.score(&data.support);
        outcomes.push((method, out, secs));
    }
    Ok(RepResult { outcomes })
}

#[derive(Debug, Clone)]
pub struct FdrBenchOutput {
    pub rows: Vec<TableRow>,
    /// Per-replicate results in replicate order (dropped replicates omitted).
    pub reps: Vec<RepResult>,
    pub dropped: Vec<(usize, String)>,
    /// Mean wall-clock seconds per method and replicate (kept out of the table
    /// so it stays byte-reproducible).
    pub timings: BTreeMap<String, f64>,
}

impl FdrBenchOutput {
    /// Mean FDP and power of one method across the kept replicates.
    pub fn summary(&self, method: Method) -> Option<(f64, f64)> {
        let vals: Vec<(f64, f64)> = self
            .reps
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|(m, _, _)| *m == method)
            .map(|(_, o, _)| (o.fdp.unwrap_or(0.0), o.power.unwrap_or(0.0)))
            .collect();
        if vals.is_empty() {
            return None;
        }
        let k = vals.len() as f64;
        Some((
            vals.iter().map(|v| v.0).sum::<f64>() / k,
            vals.iter().map(|v| v.1).sum::<f64>() / k,
        ))
    }

    pub fn lasso_solves(&self, method: Method) -> Vec<usize> {
        self.reps
            .iter()
            .flat_map(|r| r.outcomes.iter())
            .filter(|(m, _, _)| *m == method)
            .map(|(_, o, _)| o.lasso_solves)
            .collect()
    }
}

/// Table label: knockoff methods have no engine prefix.
pub fn method_label(method: Method, engine: EngineChoice) -> String {
    if method.is_knockoff() {
        return method.name().to_string();
    }
    let prefix = match engine {
        EngineChoice::Approx => "approx",
        EngineChoice::Exact => "exact",
    };
    format!("{prefix}-{}", method.name())
}

/// Numerical failures drop the replicate for every method; validation errors abort.
pub fn run(cfg: &FdrBenchConfig, seed: u64) -> Result<FdrBenchOutput> {
    cfg.validate()?;
    let model = FdrModel::new(cfg)?;
    let noise_sd = cfg.noise_sd();
    let mut reps = Vec::new();
    let mut dropped = Vec::new();
    for r in 0..cfg.reps {
        let stream = Substream::new(seed, 0, 0, r as u64);
        let data = simulate(cfg, &model, stream)?;
        match run_methods(cfg, &model, &data, noise_sd, stream) {
            Ok(res) => reps.push(res),
            Err(crate::error::BenchError::Core(e)) if !e.is_validation() => dropped.push((r, e.to_string())),
            Err(e) => return Err(e),
        }
    }
    let mut per_method: BTreeMap<usize, (String, Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for rep in &reps {
        for (i, (method, out, secs)) in rep.outcomes.iter().enumerate() {
            let label = method_label(*method, cfg.engine);
            let e = per_method.entry(i).or_insert_with(|| (label, vec![], vec![], vec![], vec![]));
            e.1.push(out.fdp.unwrap_or(0.0));
            e.2.push(out.power.unwrap_or(0.0));
            e.3.push(*secs);
            e.4.push(out.lasso_solves as f64);
        }
    }
    let mut rows = Vec::new();
    let mut timings = BTreeMap::new();
    for (_, (label, fdp, power, secs, solves)) in per_method {
        rows.push(TableRow::new("fdr-bench", &label, cfg.a_val, "fdr", &fdp));
        rows.push(TableRow::new("fdr-bench", &label, cfg.a_val, "power", &power));
        timings.insert(label.clone(), secs.iter().sum::<f64>() / secs.len() as f64);
        rows.push(TableRow::new("fdr-bench", &label, cfg.a_val, "lasso_solves", &solves));
    }
    rows.push(TableRow::new(
        "fdr-bench",
        "all",
        cfg.a_val,
        "dropped_reps",
        &[dropped.len() as f64],
    ));
    Ok(FdrBenchOutput {
        rows,
        reps,
        dropped,
        timings,
    })
}
