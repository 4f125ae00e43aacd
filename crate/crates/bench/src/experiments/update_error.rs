//! Normalized error of the one-column update formulas against exact refits.

use colupdate_core::design::{self, ColumnSampler, CoefficientSpec, GaussianDesignModel};
use colupdate_core::lasso::{self, Gram, LassoProblem, SolverOptions};
use colupdate_core::rng::{tag, Substream};
use colupdate_core::update::{exact_update_oracle, sign_change_count, ColumnUpdater};
use colupdate_core::{kkt_report, normalized_update_error, DebiasContext, Residualizer};
use rand::seq::index;
use rayon::prelude::*;

use crate::config::{LambdaRule, UpdateErrorConfig};
use crate::error::Result;
use crate::output::{CoordRow, TableRow};

/// One simulated data set of the update-error experiment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateScenario {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    /// Three-point innovations when set, Gaussian otherwise.
    pub xi: Option<f64>,
    pub noise_variance: f64,
    pub lambda: LambdaRule,
    /// Number of resampled coordinates.
    pub coords: usize,
}

impl UpdateScenario {
    /// `n = 800α`, `p = 1000α`, `s = 400α`, noise variance `0.01 n`,
    /// `⌊p / (10α)⌋` resampled coordinates.
    pub fn scaled(cfg: &UpdateErrorConfig, scale: f64, rho: f64, xi: Option<f64>) -> Self {
        let n = (cfg.base_n as f64 * scale).round() as usize;
        let p = (cfg.base_p as f64 * scale).round() as usize;
        let s = (cfg.base_s as f64 * scale).round() as usize;
        UpdateScenario {
            n,
            p,
            s,
            rho,
            xi,
            noise_variance: cfg.noise_factor * n as f64,
            lambda: cfg.lambda,
            coords: ((p as f64 / (10.0 * scale)).floor() as usize).clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordDetail {
    pub j: usize,
    pub approx_debiased: Option<f64>,
    pub exact_debiased: Option<f64>,
    pub approx_lasso: Option<f64>,
    pub exact_lasso: f64,
    pub approx_t: f64,
    pub exact_t: f64,
    pub sign_changes: usize,
}

#[derive(Debug, Clone)]
pub struct ReplicateResult {
    pub lambda: f64,
    pub k: usize,
    pub lasso_error: f64,
    pub debiased_error: f64,
    pub t_error: f64,
    /// Coordinates where either debiased value was degenerate.
    pub degenerate: usize,
    /// Worst KKT diagnostic over the base fit and every refit.
    pub kkt_worst: f64,
    pub coords: Vec<CoordDetail>,
}

/// Simulate one data set, fit once and compare approximate and exact
/// updates on a random subset of coordinates.
pub fn run_replicate(sc: &UpdateScenario, stream: Substream) -> Result<ReplicateResult> {
    let model = GaussianDesignModel::from_covariance(design::ar1_covariance(sc.p, sc.rho)?)?;
    let a = design::sample_design(sc.n, &model, &mut stream.child(tag::DESIGN, 0).rng());
    let truth = design::sparse_coefficients(
        sc.p,
        sc.s,
        CoefficientSpec::GaussianSupport,
        &mut stream.child(tag::COEFFICIENTS, 0).rng(),
    )?;
    let y = design::generate_response(
        a.view(),
        truth.coefficients.view(),
        sc.noise_variance,
        &mut stream.child(tag::NOISE, 0).rng(),
    )?;
    let lambda = sc
        .lambda
        .resolve(sc.noise_variance.sqrt(), sc.n, sc.p, lasso::lambda_max(a.view(), y.view()));
    let problem = LassoProblem::new(a.view(), y.view(), lambda)?;
    let gram = Gram::new(a.view(), y.view());
    let opts = SolverOptions::default();
    let fit = lasso::solve_lasso_with_gram(&problem, &gram, &opts)?;
    let base_kkt = kkt_report(&problem, &fit)?.worst();

    let residualizer = Residualizer::gaussian(model.theta.clone())?;
    let ctx = DebiasContext::new(a.view(), &fit, &residualizer)?;
    let updater = ColumnUpdater::new(a.view(), &fit, &ctx)?;
    let sampler = match sc.xi {
        Some(xi) => ColumnSampler::three_point(&model, xi)?,
        None => ColumnSampler::gaussian(&model),
    };
    let mut coords = index::sample(&mut stream.child(tag::COORD_SUBSET, 0).rng(), sc.p, sc.coords).into_vec();
    coords.sort_unstable();

    let details: Vec<(CoordDetail, f64)> = coords
        .par_iter()
        .map(|&j| -> Result<(CoordDetail, f64)> {
            let coord = updater.coordinate(j)?;
            let mean = sampler.mean(a.view(), j);
            let column = sampler.sample_with_mean(mean.view(), j, &mut stream.child(tag::RESAMPLE, j as u64).rng());
            let approx = coord.evaluate(column.view())?;
            let exact = exact_update_oracle(
                a.view(),
                y.view(),
                lambda,
                j,
                column.view(),
                coord.centering(),
                &fit,
                Some(&gram),
                &opts,
            )?;
            let b = lasso::replace_column(a.view(), j, column.view());
            let refit_problem = LassoProblem::new(b.view(), y.view(), lambda)?;
            let kkt = kkt_report(&refit_problem, &exact.fit)?.worst();
            Ok((
                CoordDetail {
                    j,
                    approx_debiased: approx.debiased,
                    exact_debiased: exact.debiased,
                    approx_lasso: approx.lasso,
                    exact_lasso: exact.lasso,
                    approx_t: approx.t,
                    exact_t: exact.t,
                    sign_changes: sign_change_count(&fit, &exact.fit)?,
                },
                kkt,
            ))
        })
        .collect::<Result<_>>()?;

    let kkt_worst = details.iter().map(|d| d.1).fold(base_kkt, f64::max);
    let coords: Vec<CoordDetail> = details.into_iter().map(|d| d.0).collect();
    let debiased_pairs: Vec<(f64, f64)> = coords
        .iter()
        .filter_map(|c| Some((c.approx_debiased?, c.exact_debiased?)))
        .collect();
    let lasso_pairs: Vec<(f64, f64)> = coords
        .iter()
        .filter_map(|c| Some((c.approx_lasso?, c.exact_lasso)))
        .collect();
    let t_pairs: Vec<(f64, f64)> = coords.iter().map(|c| (c.approx_t, c.exact_t)).collect();
    Ok(ReplicateResult {
        lambda,
        k: fit.k,
        lasso_error: normalized_update_error(&lasso_pairs)?,
        debiased_error: normalized_update_error(&debiased_pairs)?,
        t_error: normalized_update_error(&t_pairs)?,
        degenerate: coords.len() - debiased_pairs.len(),
        kkt_worst,
        coords,
    })
}

#[derive(Debug, Clone)]
pub struct UpdateErrorOutput {
    pub rows: Vec<TableRow>,
    pub percoord: Vec<CoordRow>,
    pub kkt_worst: f64,
}

/// Every `(scale, ρ or ξ)` cell of the grid, `reps` replicates each.
pub fn run(cfg: &UpdateErrorConfig, seed: u64) -> Result<UpdateErrorOutput> {
    cfg.validate()?;
    let (experiment, variants): (&str, Vec<(f64, Option<f64>)>) = if cfg.xis.is_empty() {
        ("update-error", cfg.rhos.iter().map(|&r| (r, None)).collect())
    } else {
        (
            "update-error-3pt",
            cfg.xis.iter().map(|&x| (cfg.three_point_rho, Some(x))).collect(),
        )
    };
    let mut rows = Vec::new();
    let mut percoord = Vec::new();
    let mut kkt_worst = 0.0f64;
    let mut cell = 0u64;
    for &scale in &cfg.scales {
        for &(rho, xi) in &variants {
            let sc = UpdateScenario::scaled(cfg, scale, rho, xi);
            let param2 = xi.unwrap_or(rho);
            let mut reps = Vec::with_capacity(cfg.reps);
            for r in 0..cfg.reps {
                let stream = Substream::new(seed, 0, cell, r as u64);
                let res = run_replicate(&sc, stream)?;
                if cfg.percoord {
                    for c in &res.coords {
                        let label = |stat: &str| format!("{stat}|{experiment}|{scale}|{param2}|{r}");
                        if let (Some(a), Some(e)) = (c.approx_debiased, c.exact_debiased) {
                            percoord.push(CoordRow {
                                j: c.j,
                                statistic: label("debiased"),
                                approx: a,
                                exact: e,
                                error: (a - e).abs(),
                            });
                        }
                        if let Some(a) = c.approx_lasso {
                            percoord.push(CoordRow {
                                j: c.j,
                                statistic: label("lasso"),
                                approx: a,
                                exact: c.exact_lasso,
                                error: (a - c.exact_lasso).abs(),
                            });
                        }
                    }
                }
                kkt_worst = kkt_worst.max(res.kkt_worst);
                reps.push(res);
            }
            let collect = |f: &dyn Fn(&ReplicateResult) -> f64| reps.iter().map(f).collect::<Vec<f64>>();
            let metrics: [(&str, Vec<f64>); 7] = [
                ("lasso_error", collect(&|r| r.lasso_error)),
                ("debiased_error", collect(&|r| r.debiased_error)),
                ("t_error", collect(&|r| r.t_error)),
                ("degenerate", collect(&|r| r.degenerate as f64)),
                (
                    "mean_sign_changes",
                    collect(&|r| {
                        r.coords.iter().map(|c| c.sign_changes as f64).sum::<f64>() / r.coords.len() as f64
                    }),
                ),
                ("lambda", collect(&|r| r.lambda)),
                ("k", collect(&|r| r.k as f64)),
            ];
            for (metric, samples) in metrics {
                rows.push(TableRow::new(experiment, scale, param2, metric, &samples));
            }
            cell += 1;
        }
    }
    Ok(UpdateErrorOutput {
        rows,
        percoord,
        kkt_worst,
    })
}
