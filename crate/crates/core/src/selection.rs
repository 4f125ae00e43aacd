//! Variable selection with FDR control: local knockoff filter, conditional
//! randomization test, model-X knockoff filter and Benjamini-Hochberg.

use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::debias::{debias_with_context, DebiasContext, DebiasResult};
use crate::design::ColumnSampler;
use crate::error::{Error, Result};
use crate::lasso::{self, Gram, LassoFit, LassoProblem, SolverOptions};
use crate::residualizer::Residualizer;
use crate::rng::{tag, Substream};
use crate::update::{exact_update_oracle, ApproxValues, ColumnUpdater, ExactUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Debiased,
    Lasso,
    T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Approx,
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KnockoffStatistic {
    LassoDiff,
    DebiasedDiff,
}

#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub method: String,
    /// Sorted selected indices.
    pub selected: Vec<usize>,
    /// Threshold for knockoff-style methods; `+∞` when nothing is feasible.
    pub threshold: Option<f64>,
    pub p_values: Option<Array1<f64>>,
    /// `α̂ᵁ`, `α̂` or `t` (zero at degenerate coordinates).
    pub statistics: Array1<f64>,
    /// Resampled statistics `γ̂` or knockoff `W`.
    pub companion: Option<Array1<f64>>,
    pub epsilon: Option<f64>,
    pub fdp: Option<f64>,
    pub power: Option<f64>,
    /// Number of Lasso problems solved.
    pub lasso_solves: usize,
}

impl SelectionOutcome {
    fn new(method: String, statistics: Array1<f64>) -> Self {
        SelectionOutcome {
            method,
            selected: Vec::new(),
            threshold: None,
            p_values: None,
            statistics,
            companion: None,
            epsilon: None,
            fdp: None,
            power: None,
            lasso_solves: 0,
        }
    }

    /// Fill `fdp` and `power` against a known support.
    pub fn score(&mut self, truth: &[usize]) {
        let (fdp, power) = fdp_power(&self.selected, truth);
        self.fdp = Some(fdp);
        self.power = Some(power);
    }
}

/// `(|Ŝ ∖ H₁| / max(1, |Ŝ|), |Ŝ ∩ H₁| / max(1, |H₁|))`.
pub fn fdp_power(selected: &[usize], truth: &[usize]) -> (f64, f64) {
    let hits = selected.iter().filter(|j| truth.contains(j)).count();
    let false_hits = selected.len() - hits;
    (
        false_hits as f64 / selected.len().max(1) as f64,
        hits as f64 / truth.len().max(1) as f64,
    )
}

/// Step-up procedure; returns the rejected indices in increasing order.
pub fn benjamini_hochberg(p_values: ArrayView1<f64>, q: f64) -> Result<Vec<usize>> {
    check_level(q)?;
    if p_values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("p-values must lie in [0, 1]"));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p_values[a].total_cmp(&p_values[b]).then(a.cmp(&b)));
    let count = (1..=m)
        .rev()
        .find(|&i| p_values[order[i - 1]] <= i as f64 * q / m as f64)
        .unwrap_or(0);
    let mut out = order[..count].to_vec();
    out.sort_unstable();
    Ok(out)
}

fn check_level(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("FDR level must be in (0, 1), got {q}")));
    }
    Ok(())
}

/// Smallest candidate `t` with `#{|γ̂_j| > t − ε} / #{|α̂_j| > t} ≤ q`.
///
/// Candidates are `{|α̂_j|} ∪ {|γ̂_j| + ε}`; a zero denominator fails.
/// Returns `+∞` when no candidate is feasible.
pub fn local_knockoff_threshold(stats: ArrayView1<f64>, resampled: ArrayView1<f64>, q: f64, epsilon: f64) -> f64 {
    let mut candidates: Vec<f64> = stats
        .iter()
        .map(|v| v.abs())
        .chain(resampled.iter().map(|v| v.abs() + epsilon))
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for &t in &candidates {
        let den = stats.iter().filter(|v| v.abs() > t).count();
        if den == 0 {
            continue;
        }
        // Same rounding as the candidates, so t = |γ̂_j| + ε never counts j.
        let num = resampled.iter().filter(|v| v.abs() + epsilon > t).count();
        if num as f64 <= q * den as f64 {
            return t;
        }
    }
    f64::INFINITY
}

/// `T = min{t ∈ {|W_j| ≠ 0}: (offset + #{W_j ≤ −t}) / max(1, #{W_j ≥ t}) ≤ q}`.
pub fn knockoff_threshold(w: ArrayView1<f64>, q: f64, offset: usize) -> f64 {
    let mut candidates: Vec<f64> = w.iter().map(|v| v.abs()).filter(|v| *v != 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for &t in &candidates {
        let neg = w.iter().filter(|v| **v <= -t).count();
        let pos = w.iter().filter(|v| **v >= t).count();
        if (offset + neg) as f64 <= q * pos.max(1) as f64 {
            return t;
        }
    }
    f64::INFINITY
}

/// Data, penalty and solver shared by every procedure.
#[derive(Debug, Clone)]
pub struct SelectionProblem<'a> {
    pub design: ArrayView2<'a, f64>,
    pub response: ArrayView1<'a, f64>,
    pub lambda: f64,
    pub solver: SolverOptions,
}

impl<'a> SelectionProblem<'a> {
    pub fn new(design: ArrayView2<'a, f64>, response: ArrayView1<'a, f64>, lambda: f64) -> Self {
        SelectionProblem {
            design,
            response,
            lambda,
            solver: SolverOptions::default(),
        }
    }
}

/// The base fit plus everything the per-coordinate work reuses.
struct BaseFit {
    fit: LassoFit,
    gram: Gram,
    ctx: DebiasContext,
    debias: Option<DebiasResult>,
}

impl BaseFit {
    fn new(pb: &SelectionProblem, residualizer: &Residualizer) -> Result<Self> {
        let problem = LassoProblem::new(pb.design, pb.response, pb.lambda)?;
        let gram = Gram::new(pb.design, pb.response);
        let fit = lasso::solve_lasso_with_gram(&problem, &gram, &pb.solver)?;
        let ctx = DebiasContext::new(pb.design, &fit, residualizer)?;
        let debias = match debias_with_context(pb.design, &fit, &ctx) {
            Ok(d) => Some(d),
            Err(Error::AllDegenerate) => None,
            Err(e) => return Err(e),
        };
        Ok(BaseFit { fit, gram, ctx, debias })
    }

    fn statistics(&self, statistic: Statistic) -> Result<Array1<f64>> {
        match statistic {
            Statistic::Lasso => Ok(self.fit.coefficients.clone()),
            Statistic::Debiased | Statistic::T => {
                let d = self.debias.as_ref().ok_or(Error::AllDegenerate)?;
                Ok(match statistic {
                    Statistic::Debiased => d.alpha_u.mapv(|v| if v.is_finite() { v } else { 0.0 }),
                    _ => d.t_stats.clone(),
                })
            }
        }
    }
}

fn approx_value(v: &ApproxValues, statistic: Statistic) -> f64 {
    match statistic {
        Statistic::Debiased => v.debiased.unwrap_or(0.0),
        Statistic::Lasso => v.lasso.unwrap_or(0.0),
        Statistic::T => v.t,
    }
}

fn exact_value(e: &ExactUpdate, statistic: Statistic) -> f64 {
    match statistic {
        Statistic::Debiased => e.debiased.unwrap_or(0.0),
        Statistic::Lasso => e.lasso,
        Statistic::T => e.t,
    }
}

fn method_name(base: &str, statistic: Statistic, engine: Engine) -> String {
    let stat = match statistic {
        Statistic::Debiased => "-db",
        Statistic::Lasso => "",
        Statistic::T => "-t",
    };
    let eng = match engine {
        Engine::Approx => "approx",
        Engine::Exact => "exact",
    };
    format!("{eng}-{base}{stat}")
}

#[derive(Debug, Clone, Copy)]
pub struct LocalKnockoffConfig {
    pub q: f64,
    pub statistic: Statistic,
    pub epsilon: f64,
    pub engine: Engine,
}

impl Default for LocalKnockoffConfig {
    fn default() -> Self {
        LocalKnockoffConfig {
            q: 0.1,
            statistic: Statistic::Debiased,
            epsilon: 0.0,
            engine: Engine::Approx,
        }
    }
}

/// Local knockoff filter: one conditional resample per coordinate.
pub fn local_knockoff_filter(
    pb: &SelectionProblem,
    residualizer: &Residualizer,
    sampler: &ColumnSampler,
    config: &LocalKnockoffConfig,
    stream: Substream,
) -> Result<SelectionOutcome> {
    check_level(config.q)?;
    if !(config.epsilon >= 0.0) {
        return Err(Error::invalid("epsilon must be nonnegative"));
    }
    let base = BaseFit::new(pb, residualizer)?;
    let stats = base.statistics(config.statistic)?;
    let p = pb.design.ncols();
    let updater = ColumnUpdater::new(pb.design, &base.fit, &base.ctx)?;
    let resampled: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream.child(tag::RESAMPLE, j as u64).rng();
            let coord = updater.coordinate(j)?;
            let mean = sampler.mean(pb.design, j);
            let column = sampler.sample_with_mean(mean.view(), j, &mut rng);
            match config.engine {
                Engine::Approx => Ok(approx_value(&coord.evaluate(column.view())?, config.statistic)),
                Engine::Exact => {
                    let e = exact_update_oracle(
                        pb.design,
                        pb.response,
                        pb.lambda,
                        j,
                        column.view(),
                        coord.centering(),
                        &base.fit,
                        Some(&base.gram),
                        &pb.solver,
                    )?;
                    Ok(exact_value(&e, config.statistic))
                }
            }
        })
        .collect::<Result<_>>()?;
    let resampled = Array1::from(resampled);
    let t = local_knockoff_threshold(stats.view(), resampled.view(), config.q, config.epsilon);
    let mut out = SelectionOutcome::new(method_name("local-knockoff", config.statistic, config.engine), stats);
    out.selected = (0..p).filter(|&j| out.statistics[j].abs() > t).collect();
    out.threshold = Some(t);
    out.companion = Some(resampled);
    out.epsilon = Some(config.epsilon);
    out.lasso_solves = 1 + if config.engine == Engine::Exact { p } else { 0 };
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct CrtConfig {
    pub q: f64,
    pub resamples: usize,
    pub statistic: Statistic,
    pub engine: Engine,
}

impl Default for CrtConfig {
    fn default() -> Self {
        CrtConfig {
            q: 0.1,
            resamples: DEFAULT_CRT_RESAMPLES,
            statistic: Statistic::Debiased,
            engine: Engine::Approx,
        }
    }
}

/// Default number of conditional resamples per coordinate.
pub const DEFAULT_CRT_RESAMPLES: usize = 400;

/// `p_j = (1 + #{b: |s_j| ≤ |γ̂ᵇ_j|}) / (K + 1)`.
pub fn crt_p_value(stat: f64, resampled: &[f64]) -> f64 {
    let exceed = resampled.iter().filter(|g| stat.abs() <= g.abs()).count();
    (1 + exceed) as f64 / (resampled.len() + 1) as f64
}

/// Conditional randomization test with Benjamini-Hochberg selection.
pub fn crt(
    pb: &SelectionProblem,
    residualizer: &Residualizer,
    sampler: &ColumnSampler,
    config: &CrtConfig,
    stream: Substream,
) -> Result<SelectionOutcome> {
    check_level(config.q)?;
    if config.resamples == 0 {
        return Err(Error::invalid("CRT needs at least one resample"));
    }
    let k = config.resamples;
    let base = BaseFit::new(pb, residualizer)?;
    let stats = base.statistics(config.statistic)?;
    let degenerate: Vec<bool> = match (config.statistic, &base.debias) {
        (Statistic::Debiased, Some(d)) => d.degenerate.clone(),
        _ => vec![false; stats.len()],
    };
    let (n, p) = pb.design.dim();
    let updater = ColumnUpdater::new(pb.design, &base.fit, &base.ctx)?;
    let p_values: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|j| {
            if degenerate[j] {
                return Ok(1.0);
            }
            let mut rng = stream.child(tag::CRT, j as u64).rng();
            let coord = updater.coordinate(j)?;
            let mean = sampler.mean(pb.design, j);
            let mut candidates = Array2::zeros((n, k));
            for mut col in candidates.axis_iter_mut(Axis(1)) {
                col.assign(&sampler.sample_with_mean(mean.view(), j, &mut rng));
            }
            let resampled: Vec<f64> = match config.engine {
                Engine::Approx => coord
                    .evaluate_batch(candidates.view())?
                    .iter()
                    .map(|v| approx_value(v, config.statistic))
                    .collect(),
                Engine::Exact => candidates
                    .axis_iter(Axis(1))
                    .map(|col| {
                        exact_update_oracle(
                            pb.design,
                            pb.response,
                            pb.lambda,
                            j,
                            col,
                            coord.centering(),
                            &base.fit,
                            Some(&base.gram),
                            &pb.solver,
                        )
                        .map(|e| exact_value(&e, config.statistic))
                    })
                    .collect::<Result<_>>()?,
            };
            Ok(crt_p_value(stats[j], &resampled))
        })
        .collect::<Result<_>>()?;
    let p_values = Array1::from(p_values);
    let mut out = SelectionOutcome::new(method_name("crt", config.statistic, config.engine), stats);
    out.selected = benjamini_hochberg(p_values.view(), config.q)?;
    out.p_values = Some(p_values);
    out.lasso_solves = 1 + if config.engine == Engine::Exact { p * k } else { 0 };
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct KnockoffConfig {
    pub q: f64,
    pub statistic: KnockoffStatistic,
    pub offset: usize,
}

impl Default for KnockoffConfig {
    fn default() -> Self {
        KnockoffConfig {
            q: 0.1,
            statistic: KnockoffStatistic::LassoDiff,
            offset: 1,
        }
    }
}

/// Model-X knockoff filter on the augmented design `[A, Ã]`.
///
/// `joint_precision` (the `2p × 2p` precision of `(A, Ã)`) is required for
/// the debiased statistic.
pub fn knockoff_filter(
    pb: &SelectionProblem,
    knockoffs: ArrayView2<f64>,
    joint_precision: Option<ArrayView2<f64>>,
    config: &KnockoffConfig,
) -> Result<SelectionOutcome> {
    check_level(config.q)?;
    if knockoffs.dim() != pb.design.dim() {
        return Err(Error::dim(format!(
            "knockoffs are {:?} but design is {:?}",
            knockoffs.dim(),
            pb.design.dim()
        )));
    }
    let p = pb.design.ncols();
    let augmented = concatenate(Axis(1), &[pb.design, knockoffs]).map_err(|e| Error::dim(e.to_string()))?;
    let problem = LassoProblem::new(augmented.view(), pb.response, pb.lambda)?;
    let fit = lasso::solve_lasso(&problem, &pb.solver)?;
    let (stat, name) = match config.statistic {
        KnockoffStatistic::LassoDiff => (fit.coefficients.clone(), "knockoff"),
        KnockoffStatistic::DebiasedDiff => {
            let prec = joint_precision.ok_or_else(|| Error::invalid("debiased knockoff statistic needs the joint precision"))?;
            let residualizer = Residualizer::gaussian(prec.to_owned())?;
            let ctx = DebiasContext::new(augmented.view(), &fit, &residualizer)?;
            let d = debias_with_context(augmented.view(), &fit, &ctx)?;
            (d.alpha_u.mapv(|v| if v.is_finite() { v } else { 0.0 }), "knockoff-db")
        }
    };
    let w: Array1<f64> = (0..p).map(|j| stat[j].abs() - stat[j + p].abs()).collect();
    let t = knockoff_threshold(w.view(), config.q, config.offset);
    let mut out = SelectionOutcome::new(name.to_string(), stat.slice(ndarray::s![..p]).to_owned());
    out.selected = (0..p).filter(|&j| w[j] >= t).collect();
    out.threshold = Some(t);
    out.companion = Some(w);
    out.lasso_solves = 1;
    Ok(out)
}

/// Minimum number of replicates for the oracle threshold.
pub const ORACLE_MIN_REPLICATES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleThreshold {
    pub threshold: f64,
    pub fdr: f64,
    pub power: f64,
}

/// Smallest grid threshold whose Monte Carlo FDR is at most `q`.
///
/// The grid is `{0}` plus every pooled `|statistic|`; threshold `t`
/// selects `{j: |stat_j| ≥ t}` (so `t = 0` selects everything).
pub fn empirical_oracle_threshold(runs: &[(Array1<f64>, Vec<usize>)], q: f64) -> Result<OracleThreshold> {
    if runs.len() < ORACLE_MIN_REPLICATES {
        return Err(Error::invalid(format!(
            "oracle threshold needs at least {ORACLE_MIN_REPLICATES} replicates, got {}",
            runs.len()
        )));
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(Error::invalid(format!("FDR level must be in (0, 1], got {q}")));
    }
    let mut grid: Vec<f64> = std::iter::once(0.0)
        .chain(runs.iter().flat_map(|(s, _)| s.iter().map(|v| v.abs())))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let evaluate = |t: f64| {
        let (mut fdr, mut power) = (0.0, 0.0);
        for (stats, truth) in runs {
            let selected: Vec<usize> = (0..stats.len()).filter(|&j| stats[j].abs() >= t).collect();
            let (f, pw) = fdp_power(&selected, truth);
            fdr += f;
            power += pw;
        }
        let r = runs.len() as f64;
        (fdr / r, power / r)
    };
    for &t in &grid {
        let (fdr, power) = evaluate(t);
        if fdr <= q {
            return Ok(OracleThreshold { threshold: t, fdr, power });
        }
    }
    Ok(OracleThreshold {
        threshold: f64::INFINITY,
        fdr: 0.0,
        power: 0.0,
    })
}
