//! One-column update formulas.
//!
//! Given a fit on `A` and a replacement column `B_:j`, approximate the
//! statistics of the refit on `B` (which differs from `A` only in column
//! `j`) without solving a second Lasso:
//!
//! ```text
//! t_j   ≈ (1/n) B̌ᵀR + (1/n) B̌ᵀ(I − P_𝒜)A_:j α̂_j
//! β̂ᵁ_j ≈ t_j / ((1/n) B̌ᵀ(I − P_𝒜)B_:j)
//! β̂_j  ≈ S_λ((1/n) BᵀR + (1/n) Bᵀ(I − P_𝒜)A_:j α̂_j) / ((1/n) Bᵀ(I − P_𝒜)B_:j)
//! ```
//!
//! `B̌ = B_:j − μ_:j` uses the same centering column as `Ǎ_:j`. The dropped
//! mode omits the `(I − P_𝒜)A_:j α̂_j` term. Exact refits are provided as
//! oracles.

use ndarray::{Array1, ArrayView1, ArrayView2, Axis};

use crate::debias::{is_degenerate, DebiasContext};
use crate::error::{Error, Result};
use crate::lasso::{self, Gram, LassoFit, LassoProblem, SolverOptions};
use crate::linalg::Cholesky;
use crate::residualizer::Residualizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateMode {
    Full,
    Dropped,
}

/// Inner products shared by every approximation for one candidate column.
#[derive(Debug, Clone, Copy)]
struct Products {
    checked_score: f64,
    checked_cross: f64,
    checked_denom: f64,
    raw_score: f64,
    raw_cross: f64,
    raw_denom: f64,
    raw_sq_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxValues {
    pub debiased: Option<f64>,
    pub debiased_dropped: Option<f64>,
    pub t: f64,
    pub t_dropped: f64,
    pub lasso: Option<f64>,
    /// `(1/n) B̌ᵀ(I − P_𝒜)B_:j`.
    pub denominator: f64,
}

/// Per-fit state for evaluating many replacement columns.
#[derive(Debug)]
pub struct ColumnUpdater<'a> {
    design: ArrayView2<'a, f64>,
    fit: &'a LassoFit,
    ctx: &'a DebiasContext,
}

/// Per-coordinate state: `μ_:j` and `(I − P_𝒜)A_:j` computed once.
#[derive(Debug, Clone)]
pub struct CoordinateUpdater<'u, 'a> {
    parent: &'u ColumnUpdater<'a>,
    j: usize,
    mu: Array1<f64>,
    column_complement: Array1<f64>,
}

impl<'a> ColumnUpdater<'a> {
    pub fn new(design: ArrayView2<'a, f64>, fit: &'a LassoFit, ctx: &'a DebiasContext) -> Result<Self> {
        if fit.p() != design.ncols() || fit.n() != design.nrows() {
            return Err(Error::dim("fit does not match design"));
        }
        if ctx.checked.dim() != design.dim() {
            return Err(Error::dim("debias context does not match design"));
        }
        Ok(ColumnUpdater { design, fit, ctx })
    }

    pub fn coordinate<'u>(&'u self, j: usize) -> Result<CoordinateUpdater<'u, 'a>> {
        let p = self.design.ncols();
        if j >= p {
            return Err(Error::invalid(format!("column {j} out of range (p = {p})")));
        }
        let col = self.design.column(j);
        Ok(CoordinateUpdater {
            parent: self,
            j,
            mu: self.ctx.centering(self.design, j),
            column_complement: self.ctx.family.column_complement(j, col),
        })
    }
}

impl CoordinateUpdater<'_, '_> {
    pub fn j(&self) -> usize {
        self.j
    }

    pub fn centering(&self) -> ArrayView1<'_, f64> {
        self.mu.view()
    }

    fn products(&self, column: ArrayView1<f64>) -> Result<Products> {
        let n = self.mu.len();
        if column.len() != n {
            return Err(Error::dim(format!("replacement column has length {} != {n}", column.len())));
        }
        let nf = n as f64;
        let parent = self.parent;
        let checked = &column - &self.mu;
        let comp_b = parent.ctx.family.complement(self.j, column);
        let r = &parent.fit.residual;
        Ok(Products {
            checked_score: checked.dot(r) / nf,
            checked_cross: checked.dot(&self.column_complement) / nf,
            checked_denom: checked.dot(&comp_b) / nf,
            raw_score: column.dot(r) / nf,
            raw_cross: column.dot(&self.column_complement) / nf,
            raw_denom: column.dot(&comp_b) / nf,
            raw_sq_norm: column.dot(&column),
        })
    }

    /// All approximations for one replacement column.
    pub fn evaluate(&self, column: ArrayView1<f64>) -> Result<ApproxValues> {
        let pr = self.products(column)?;
        let fit = self.parent.fit;
        Ok(values(&pr, fit.coefficients[self.j], fit.lambda, self.mu.len()))
    }

    pub fn debiased(&self, column: ArrayView1<f64>, mode: UpdateMode) -> Result<f64> {
        let v = self.evaluate(column)?;
        let out = match mode {
            UpdateMode::Full => v.debiased,
            UpdateMode::Dropped => v.debiased_dropped,
        };
        out.ok_or(Error::Degenerate {
            j: self.j,
            value: v.denominator,
        })
    }

    pub fn t(&self, column: ArrayView1<f64>, mode: UpdateMode) -> Result<f64> {
        let v = self.evaluate(column)?;
        Ok(match mode {
            UpdateMode::Full => v.t,
            UpdateMode::Dropped => v.t_dropped,
        })
    }

    pub fn lasso(&self, column: ArrayView1<f64>) -> Result<f64> {
        let pr = self.products(column)?;
        let alpha_j = self.parent.fit.coefficients[self.j];
        if is_degenerate(pr.raw_denom, pr.raw_sq_norm, self.mu.len()) {
            return Err(Error::Degenerate {
                j: self.j,
                value: pr.raw_denom,
            });
        }
        Ok(lasso::soft_threshold(pr.raw_score + pr.raw_cross * alpha_j, self.parent.fit.lambda) / pr.raw_denom)
    }

    /// `(1/n) B̌ᵀ(I − P_𝒜)A_:j`, the coefficient of `α̂_j` in the full formula.
    pub fn cross_term(&self, column: ArrayView1<f64>) -> Result<f64> {
        Ok(self.products(column)?.checked_cross)
    }

    /// Evaluate a batch of candidate columns (stored as columns of `candidates`).
    pub fn evaluate_batch(&self, candidates: ArrayView2<f64>) -> Result<Vec<ApproxValues>> {
        let n = self.mu.len();
        if candidates.nrows() != n {
            return Err(Error::dim(format!("candidates have {} rows != {n}", candidates.nrows())));
        }
        let nf = n as f64;
        let parent = self.parent;
        let mu = self.mu.view().insert_axis(Axis(1));
        let checked = &candidates - &mu;
        let comp = &candidates - &parent.ctx.family.apply_mat(self.j, candidates);
        let r = &parent.fit.residual;
        let checked_score = checked.t().dot(r) / nf;
        let checked_cross = checked.t().dot(&self.column_complement) / nf;
        let raw_score = candidates.t().dot(r) / nf;
        let raw_cross = candidates.t().dot(&self.column_complement) / nf;
        let alpha_j = parent.fit.coefficients[self.j];
        let lambda = parent.fit.lambda;
        Ok((0..candidates.ncols())
            .map(|b| {
                let col = candidates.column(b);
                let c = comp.column(b);
                let pr = Products {
                    checked_score: checked_score[b],
                    checked_cross: checked_cross[b],
                    checked_denom: checked.column(b).dot(&c) / nf,
                    raw_score: raw_score[b],
                    raw_cross: raw_cross[b],
                    raw_denom: col.dot(&c) / nf,
                    raw_sq_norm: col.dot(&col),
                };
                values(&pr, alpha_j, lambda, n)
            })
            .collect())
    }
}

fn values(pr: &Products, alpha_j: f64, lambda: f64, n: usize) -> ApproxValues {
    let t_dropped = pr.checked_score;
    let t = t_dropped + pr.checked_cross * alpha_j;
    let checked_ok = !is_degenerate(pr.checked_denom, pr.raw_sq_norm, n);
    let raw_ok = !is_degenerate(pr.raw_denom, pr.raw_sq_norm, n);
    let lasso_num = lasso::soft_threshold(pr.raw_score + pr.raw_cross * alpha_j, lambda);
    ApproxValues {
        debiased: checked_ok.then(|| t / pr.checked_denom),
        debiased_dropped: checked_ok.then(|| t_dropped / pr.checked_denom),
        t,
        t_dropped,
        lasso: raw_ok.then(|| lasso_num / pr.raw_denom),
        denominator: pr.checked_denom,
    }
}

fn one_shot<T>(
    fit: &LassoFit,
    design: ArrayView2<f64>,
    residualizer: &Residualizer,
    j: usize,
    f: impl FnOnce(&CoordinateUpdater) -> Result<T>,
) -> Result<T> {
    if j >= design.ncols() {
        return Err(Error::invalid(format!("column {j} out of range (p = {})", design.ncols())));
    }
    let ctx = DebiasContext::new(design, fit, residualizer)?;
    let updater = ColumnUpdater::new(design, fit, &ctx)?;
    let coord = updater.coordinate(j)?;
    f(&coord)
}

/// Approximate updated debiased coefficient `β̂ᵁ_j`.
pub fn update_debias_approx(
    fit: &LassoFit,
    design: ArrayView2<f64>,
    j: usize,
    column: ArrayView1<f64>,
    residualizer: &Residualizer,
    mode: UpdateMode,
) -> Result<f64> {
    one_shot(fit, design, residualizer, j, |c| c.debiased(column, mode))
}

/// Approximate updated statistic `t(j, B, Y)`; never divides.
pub fn update_t_approx(
    fit: &LassoFit,
    design: ArrayView2<f64>,
    j: usize,
    column: ArrayView1<f64>,
    residualizer: &Residualizer,
    mode: UpdateMode,
) -> Result<f64> {
    one_shot(fit, design, residualizer, j, |c| c.t(column, mode))
}

/// Approximate updated Lasso coefficient `β̂_j` (raw column, no centering).
pub fn update_lasso_approx(fit: &LassoFit, design: ArrayView2<f64>, j: usize, column: ArrayView1<f64>) -> Result<f64> {
    one_shot(fit, design, &Residualizer::Zero, j, |c| c.lasso(column))
}

#[derive(Debug, Clone)]
pub struct ExactUpdate {
    pub lasso: f64,
    /// `None` when the refit denominator is degenerate.
    pub debiased: Option<f64>,
    pub t: f64,
    /// `(1/n) B̌ᵀ(I − P_ℬ)B_:j`.
    pub denominator: f64,
    pub fit: LassoFit,
}

/// Refit on `B` (warm-started from `fit_a`) and evaluate the exact statistics
/// with `ℬ = active(fit_B) ∖ {j}`.
///
/// `gram_a`, when given, must be the Gram statistics of `(A, Y)`; only row
/// and column `j` are then recomputed.
#[allow(clippy::too_many_arguments)]
pub fn exact_update_oracle(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    lambda: f64,
    j: usize,
    column: ArrayView1<f64>,
    centering: ArrayView1<f64>,
    fit_a: &LassoFit,
    gram_a: Option<&Gram>,
    options: &SolverOptions,
) -> Result<ExactUpdate> {
    let (n, p) = design.dim();
    if j >= p {
        return Err(Error::invalid(format!("column {j} out of range (p = {p})")));
    }
    if column.len() != n || centering.len() != n {
        return Err(Error::dim("replacement or centering column has wrong length"));
    }
    let b = lasso::replace_column(design, j, column);
    let problem = LassoProblem::new(b.view(), response, lambda)?;
    let gram = match gram_a {
        Some(g) => {
            let mut g = g.clone();
            g.replace_column(b.view(), response, j);
            g
        }
        None => Gram::new(b.view(), response),
    };
    let opts = SolverOptions {
        warm_start: Some(fit_a.coefficients.clone()),
        ..options.clone()
    };
    let fit = lasso::solve_lasso_with_gram(&problem, &gram, &opts)?;

    let nf = n as f64;
    let others: Vec<usize> = fit.active_set.iter().copied().filter(|&l| l != j).collect();
    let complement = if others.is_empty() {
        column.to_owned()
    } else {
        // Normal equations on the cached Gram block: (B_ℬᵀB_ℬ) c = B_ℬᵀ B_:j.
        let block = gram.g.select(Axis(0), &others).select(Axis(1), &others);
        let rhs = gram.g.column(j).select(Axis(0), &others);
        let coef = Cholesky::factor_with_jitter(block.view())?.solve(rhs.view());
        &column - &b.select(Axis(1), &others).dot(&coef)
    };
    let checked = &column - &centering;
    let denominator = checked.dot(&complement) / nf;
    let score = checked.dot(&fit.residual) / nf;
    let beta_j = fit.coefficients[j];
    let debiased = (!is_degenerate(denominator, column.dot(&column), n)).then(|| beta_j + score / denominator);
    Ok(ExactUpdate {
        lasso: beta_j,
        debiased,
        t: denominator * beta_j + score,
        denominator,
        fit,
    })
}

/// Indices where the essential signs of two fits differ.
pub fn sign_change_set(fit_a: &LassoFit, fit_b: &LassoFit) -> Result<Vec<usize>> {
    if fit_a.p() != fit_b.p() {
        return Err(Error::dim(format!("fits have p = {} and {}", fit_a.p(), fit_b.p())));
    }
    Ok((0..fit_a.p()).filter(|&l| fit_a.signs[l] != fit_b.signs[l]).collect())
}

pub fn sign_change_count(fit_a: &LassoFit, fit_b: &LassoFit) -> Result<usize> {
    Ok(sign_change_set(fit_a, fit_b)?.len())
}

/// `Σ (approx − exact)² / Σ exact²`.
pub fn normalized_update_error(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no (approx, exact) pairs"));
    }
    let denom: f64 = pairs.iter().map(|(_, e)| e * e).sum();
    if !(denom > 0.0) {
        return Err(Error::invalid("exact values are all zero"));
    }
    let num: f64 = pairs.iter().map(|(a, e)| (a - e) * (a - e)).sum();
    Ok(num / denom)
}

/// Observable diagnostics attached to one update.
#[derive(Debug, Clone)]
pub struct UpdateOutcome {
    pub j: usize,
    pub approx: ApproxValues,
    pub exact: Option<ExactUpdate>,
    pub sign_changes: Option<usize>,
    /// `max(‖A_:j‖, ‖B_:j‖) / √n`.
    pub column_norm_ratio: f64,
}

impl UpdateOutcome {
    pub fn debiased_error(&self) -> Option<f64> {
        let exact = self.exact.as_ref()?.debiased?;
        Some((exact - self.approx.debiased?).abs())
    }

    pub fn lasso_error(&self) -> Option<f64> {
        Some((self.exact.as_ref()?.lasso - self.approx.lasso?).abs())
    }

    pub fn t_error(&self) -> Option<f64> {
        Some((self.exact.as_ref()?.t - self.approx.t).abs())
    }
}

pub fn column_norm_ratio(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let n = a.len() as f64;
    a.dot(&a).sqrt().max(b.dot(&b).sqrt()) / n.sqrt()
}
