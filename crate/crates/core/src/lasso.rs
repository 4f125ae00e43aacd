//! ℓ₁-penalized least squares with the `1/(2n)` loss scaling,
//!
//! ```text
//! minimize  (1/2n) ‖Y − Aβ‖² + λ ‖β‖₁
//! ```
//!
//! solved by cyclic coordinate descent on cached Gram statistics. Every fit
//! carries its exact KKT structure: the subgradient `ψ = AᵀR/(nλ)`, the
//! essential signs `χ` and the effective active-set size `k = ‖χ‖₀`.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};
use crate::rng::{tag, Substream};

pub const DEFAULT_KKT_TOL: f64 = 1e-8;
pub const DEFAULT_SIGN_TOL: f64 = 1e-6;

/// Soft-thresholding `S_t(x)`.
pub fn soft_threshold(x: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LassoProblem<'a> {
    pub design: ArrayView2<'a, f64>,
    pub response: ArrayView1<'a, f64>,
    pub lambda: f64,
}

impl<'a> LassoProblem<'a> {
    pub fn new(
        design: ArrayView2<'a, f64>,
        response: ArrayView1<'a, f64>,
        lambda: f64,
    ) -> Result<Self> {
        let (n, p) = design.dim();
        if n == 0 || p == 0 {
            return Err(Error::invalid(format!("empty design {n}x{p}")));
        }
        if response.len() != n {
            return Err(Error::dim(format!(
                "response has length {} but design has {n} rows",
                response.len()
            )));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if design.iter().chain(response.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite value in design or response"));
        }
        if lambda == 0.0 && n <= p {
            return Err(Error::invalid(format!(
                "lambda = 0 needs n > p (got n={n}, p={p})"
            )));
        }
        Ok(LassoProblem {
            design,
            response,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn objective(&self, beta: ArrayView1<f64>) -> f64 {
        let r = &self.response - &self.design.dot(&beta);
        r.dot(&r) / (2.0 * self.n() as f64) + self.lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Bound on the max KKT violation, measured in units of `ψ`.
    pub kkt_tol: f64,
    /// `|ψ_j| ≥ 1 − sign_tol` declares the essential sign `χ_j ≠ 0`.
    pub sign_tol: f64,
    /// Maximum number of coordinate sweeps (full or active-set).
    pub max_sweeps: usize,
    pub warm_start: Option<Array1<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kkt_tol: DEFAULT_KKT_TOL,
            sign_tol: DEFAULT_SIGN_TOL,
            max_sweeps: 200_000,
            warm_start: None,
        }
    }
}

impl SolverOptions {
    pub fn warm(mut self, beta: Array1<f64>) -> Self {
        self.warm_start = Some(beta);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub coefficients: Array1<f64>,
    pub residual: Array1<f64>,
    pub subgradient: Array1<f64>,
    pub signs: Vec<i8>,
    pub active_set: Vec<usize>,
    pub k: usize,
    pub lambda: f64,
    pub objective: f64,
    pub duality_gap: f64,
    pub kkt_gap: f64,
    pub iterations: usize,
}

impl LassoFit {
    pub fn n(&self) -> usize {
        self.residual.len()
    }

    pub fn p(&self) -> usize {
        self.coefficients.len()
    }

    pub fn nnz(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }

    pub fn is_active(&self, j: usize) -> bool {
        self.signs[j] != 0
    }
}

/// Sufficient statistics `G = AᵀA/n`, `c = AᵀY/n` for coordinate descent.
#[derive(Debug, Clone)]
pub struct Gram {
    pub g: Array2<f64>,
    pub c: Array1<f64>,
}

impl Gram {
    pub fn new(design: ArrayView2<f64>, response: ArrayView1<f64>) -> Self {
        let n = design.nrows() as f64;
        let mut g = linalg::gram(design);
        g /= n;
        let c = design.t().dot(&response) / n;
        Gram { g, c }
    }

    /// Refresh row and column `j` after column `j` of the design changed.
    /// `design` must already hold the new column.
    pub fn replace_column(&mut self, design: ArrayView2<f64>, response: ArrayView1<f64>, j: usize) {
        let n = design.nrows() as f64;
        let col = design.column(j);
        let gj = design.t().dot(&col) / n;
        self.g.column_mut(j).assign(&gj);
        self.g.row_mut(j).assign(&gj);
        self.c[j] = col.dot(&response) / n;
    }
}

fn violation(psi: f64, beta: f64) -> f64 {
    if beta > 0.0 {
        (psi - 1.0).abs()
    } else if beta < 0.0 {
        (psi + 1.0).abs()
    } else {
        (psi.abs() - 1.0).max(0.0)
    }
}

fn max_violation(grad: ArrayView1<f64>, beta: ArrayView1<f64>, lambda: f64) -> f64 {
    grad.iter()
        .zip(beta.iter())
        .map(|(g, b)| violation(g / lambda, *b))
        .fold(0.0, f64::max)
}

pub fn solve_lasso(problem: &LassoProblem, options: &SolverOptions) -> Result<LassoFit> {
    let gram = Gram::new(problem.design, problem.response);
    solve_lasso_with_gram(problem, &gram, options)
}

/// Solve using precomputed Gram statistics (must match `problem`).
pub fn solve_lasso_with_gram(
    problem: &LassoProblem,
    gram: &Gram,
    options: &SolverOptions,
) -> Result<LassoFit> {
    let p = problem.p();
    if gram.g.dim() != (p, p) || gram.c.len() != p {
        return Err(Error::dim("gram statistics do not match the problem"));
    }
    if problem.lambda == 0.0 {
        return solve_ols(problem, gram);
    }
    if options.warm_start.is_none() {
        let lmax = gram.c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if problem.lambda < PATH_RATIO * lmax {
            return solve_along_path(problem, gram, options, lmax);
        }
    }
    let lambda = problem.lambda;
    let g = &gram.g;
    let c = &gram.c;

    let mut beta = match &options.warm_start {
        Some(w) if w.len() == p => w.clone(),
        Some(w) => {
            return Err(Error::dim(format!("warm start has length {} != {p}", w.len())));
        }
        None => Array1::zeros(p),
    };
    // q = G β
    let mut q = g.dot(&beta);
    let diag: Vec<f64> = g.diag().to_vec();

    let update = |j: usize, beta: &mut Array1<f64>, q: &mut Array1<f64>| -> f64 {
        let gjj = diag[j];
        if gjj <= 0.0 {
            return 0.0;
        }
        let old = beta[j];
        let z = c[j] - q[j] + gjj * old;
        let new = soft_threshold(z, lambda) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            q.scaled_add(delta, &g.column(j));
        }
        delta.abs()
    };

    let mut sweeps = 0usize;
    let mut last_gap;
    loop {
        // Admit the worst inactive KKT violators, a bounded batch at a time.
        let mut entering: Vec<(usize, f64)> = (0..p)
            .filter(|&j| beta[j] == 0.0)
            .map(|j| (j, (c[j] - q[j]).abs()))
            .filter(|&(_, v)| v > lambda)
            .collect();
        let nnz = beta.iter().filter(|b| **b != 0.0).count();
        let cap = (nnz / 4).max(MIN_ENTERING).min(problem.n().saturating_sub(nnz) / 2).max(1);
        if entering.len() > cap {
            entering.select_nth_unstable_by(cap, |a, b| b.1.total_cmp(&a.1));
            entering.truncate(cap);
        }
        entering.sort_unstable_by_key(|e| e.0);
        for &(j, _) in &entering {
            update(j, &mut beta, &mut q);
        }
        for j in 0..p {
            if beta[j] != 0.0 {
                update(j, &mut beta, &mut q);
            }
        }
        sweeps += 1;

        // Active-set sweeps until the active coordinates settle.
        let mut active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
        if !active.is_empty() {
            let mut inner = 0usize;
            loop {
                let mut max_delta = 0.0f64;
                for &j in &active {
                    max_delta = max_delta.max(update(j, &mut beta, &mut q));
                }
                sweeps += 1;
                inner += 1;
                if inner % NEWTON_EVERY == 0 && newton_on_face(g, c, lambda, &mut active, &mut beta, &mut q) {
                    break;
                }
                if active.is_empty() || sweeps >= options.max_sweeps {
                    break;
                }
                let active_gap = active
                    .iter()
                    .map(|&j| violation((c[j] - q[j]) / lambda, beta[j]))
                    .fold(0.0, f64::max);
                if active_gap <= 0.05 * options.kkt_tol || max_delta == 0.0 {
                    break;
                }
            }
        }

        // Refresh q to shed incremental drift, then check all coordinates.
        q = g.dot(&beta);
        let grad = c - &q;
        last_gap = max_violation(grad.view(), beta.view(), lambda);
        if last_gap <= 0.5 * options.kkt_tol {
            let fit = finalize(problem, beta.clone(), sweeps, options.sign_tol);
            if fit.kkt_gap <= options.kkt_tol {
                return Ok(fit);
            }
            last_gap = fit.kkt_gap;
        }
        if sweeps >= options.max_sweeps {
            break;
        }
    }
    let best = finalize(problem, beta, sweeps, options.sign_tol);
    Err(Error::NotConverged {
        iterations: sweeps,
        kkt_gap: last_gap.max(best.kkt_gap),
        best: Box::new(best),
    })
}

const PATH_RATIO: f64 = 0.7;
const MIN_ENTERING: usize = 10;
const NEWTON_EVERY: usize = 5;
const PATH_KKT_TOL: f64 = 1e-4;

/// Cold starts far below `λ_max` flood the active set on the first sweep, so
/// walk a geometric grid down from `λ_max` with loose intermediate fits.
fn solve_along_path(problem: &LassoProblem, gram: &Gram, options: &SolverOptions, lmax: f64) -> Result<LassoFit> {
    let mut beta = Array1::zeros(problem.p());
    let mut sweeps = 0usize;
    let mut l = lmax * PATH_RATIO;
    while l > problem.lambda {
        let step = LassoProblem { lambda: l, ..*problem };
        let opts = SolverOptions {
            kkt_tol: PATH_KKT_TOL.max(options.kkt_tol),
            sign_tol: options.sign_tol,
            max_sweeps: options.max_sweeps,
            warm_start: Some(beta),
        };
        match solve_lasso_with_gram(&step, gram, &opts) {
            Ok(fit) => {
                sweeps += fit.iterations;
                beta = fit.coefficients;
            }
            Err(Error::NotConverged { iterations, best, .. }) => {
                sweeps += iterations;
                beta = best.coefficients;
            }
            Err(e) => return Err(e),
        }
        l *= PATH_RATIO;
    }
    let opts = SolverOptions {
        warm_start: Some(beta),
        ..options.clone()
    };
    match solve_lasso_with_gram(problem, gram, &opts) {
        Ok(mut fit) => {
            fit.iterations += sweeps;
            Ok(fit)
        }
        Err(Error::NotConverged { iterations, kkt_gap, best }) => Err(Error::NotConverged {
            iterations: iterations + sweeps,
            kkt_gap,
            best,
        }),
        Err(e) => Err(e),
    }
}

/// Result of one sign-fixed Newton step.
enum Newton {
    /// Landed on the face minimizer.
    Full,
    /// Stopped where a coefficient reached zero; it was dropped.
    Partial,
    Failed,
}

/// Active-set Newton iterations: partial steps drop blocking coefficients
/// until a full step lands. Coordinate descent crawls on near-collinear
/// active columns; this finishes the job once the support is nearly right.
fn newton_on_face(
    g: &Array2<f64>,
    c: &Array1<f64>,
    lambda: f64,
    active: &mut Vec<usize>,
    beta: &mut Array1<f64>,
    q: &mut Array1<f64>,
) -> bool {
    let mut landed = false;
    let mut moved = false;
    active.retain(|&j| beta[j] != 0.0);
    for _ in 0..active.len() {
        match polish(g, c, lambda, active, beta) {
            Newton::Full => {
                landed = true;
                moved = true;
                break;
            }
            Newton::Partial => {
                moved = true;
                active.retain(|&j| beta[j] != 0.0);
                if active.is_empty() {
                    break;
                }
            }
            Newton::Failed => break,
        }
    }
    if moved {
        *q = g.dot(beta);
    }
    landed
}

/// Sign-fixed Newton step on the active set: solve `G_𝒜𝒜 β = c_𝒜 − λ sign(β_𝒜)`.
fn polish(g: &Array2<f64>, c: &Array1<f64>, lambda: f64, active: &[usize], beta: &mut Array1<f64>) -> Newton {
    let k = active.len();
    let mut gaa = Array2::zeros((k, k));
    let mut rhs = Array1::zeros(k);
    for (a, &i) in active.iter().enumerate() {
        if beta[i] == 0.0 {
            return Newton::Failed;
        }
        for (b, &j) in active.iter().enumerate() {
            gaa[[a, b]] = g[[i, j]];
        }
        rhs[a] = c[i] - lambda * beta[i].signum();
    }
    let Ok(chol) = Cholesky::factor(gaa.view()) else {
        return Newton::Failed;
    };
    let sol = chol.solve(rhs.view());
    if !sol.iter().all(|v| v.is_finite()) {
        return Newton::Failed;
    }
    // The objective is a convex quadratic on the sign face, so moving toward
    // `sol` descends; stop where the first coefficient reaches zero.
    let mut step = 1.0f64;
    let mut blocker = None;
    for (a, (&i, v)) in active.iter().zip(sol.iter()).enumerate() {
        if v * beta[i] <= 0.0 {
            let t = beta[i] / (beta[i] - v);
            if t < step {
                step = t;
                blocker = Some(a);
            }
        }
    }
    for (a, (&i, v)) in active.iter().zip(sol.iter()).enumerate() {
        let moved = beta[i] + step * (v - beta[i]);
        beta[i] = if blocker == Some(a) || moved * beta[i] <= 0.0 { 0.0 } else { moved };
    }
    if blocker.is_some() { Newton::Partial } else { Newton::Full }
}

fn solve_ols(problem: &LassoProblem, gram: &Gram) -> Result<LassoFit> {
    let chol = Cholesky::factor(gram.g.view())?;
    let beta = chol.solve(gram.c.view());
    let residual = &problem.response - &problem.design.dot(&beta);
    let n = problem.n() as f64;
    let grad = problem.design.t().dot(&residual) / n;
    let subgradient = beta.mapv(|b| if b > 0.0 { 1.0 } else if b < 0.0 { -1.0 } else { 0.0 });
    let signs: Vec<i8> = subgradient.iter().map(|&s| s as i8).collect();
    let active_set: Vec<usize> = (0..signs.len()).filter(|&j| signs[j] != 0).collect();
    let objective = residual.dot(&residual) / (2.0 * n);
    Ok(LassoFit {
        k: active_set.len(),
        coefficients: beta,
        residual,
        subgradient,
        signs,
        active_set,
        lambda: 0.0,
        objective,
        duality_gap: 0.0,
        kkt_gap: linalg::max_abs(grad.view()),
        iterations: 0,
    })
}

fn finalize(problem: &LassoProblem, beta: Array1<f64>, iterations: usize, sign_tol: f64) -> LassoFit {
    let n = problem.n() as f64;
    let lambda = problem.lambda;
    let residual = &problem.response - &problem.design.dot(&beta);
    let subgradient = problem.design.t().dot(&residual) / (n * lambda);
    let signs: Vec<i8> = subgradient
        .iter()
        .map(|&s| {
            if s >= 1.0 - sign_tol {
                1
            } else if s <= -1.0 + sign_tol {
                -1
            } else {
                0
            }
        })
        .collect();
    let active_set: Vec<usize> = (0..signs.len()).filter(|&j| signs[j] != 0).collect();
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let rss = residual.dot(&residual);
    let objective = rss / (2.0 * n) + lambda * l1;
    let duality_gap = {
        let scale = linalg::max_abs(subgradient.view()).max(1.0);
        let nu = &residual / scale;
        let dual = nu.dot(&problem.response) / n - nu.dot(&nu) / (2.0 * n);
        (objective - dual).max(0.0)
    };
    let kkt_gap = subgradient
        .iter()
        .zip(beta.iter())
        .map(|(s, b)| violation(*s, *b))
        .fold(0.0, f64::max);
    LassoFit {
        k: active_set.len(),
        coefficients: beta,
        residual,
        subgradient,
        signs,
        active_set,
        lambda,
        objective,
        duality_gap,
        kkt_gap,
        iterations,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `max(max_j |ψ_j| − 1, 0)`.
    pub max_psi_excess: f64,
    /// `max |ψ_j − sign(α̂_j)|` over nonzero coefficients.
    pub max_sign_violation: f64,
    /// Difference between the stored `ψ` and `ψ` recomputed from the coefficients.
    pub psi_drift: f64,
}

impl KktReport {
    pub fn worst(&self) -> f64 {
        self.max_psi_excess.max(self.max_sign_violation).max(self.psi_drift)
    }
}

/// Recompute `ψ` from `(A, Y, α̂)` and report how far the fit is from optimal.
pub fn kkt_report(problem: &LassoProblem, fit: &LassoFit) -> Result<KktReport> {
    if fit.p() != problem.p() || fit.n() != problem.n() {
        return Err(Error::dim(format!(
            "fit is {}x{} but problem is {}x{}",
            fit.n(),
            fit.p(),
            problem.n(),
            problem.p()
        )));
    }
    let n = problem.n() as f64;
    let residual = &problem.response - &problem.design.dot(&fit.coefficients);
    let grad = problem.design.t().dot(&residual) / n;
    if problem.lambda == 0.0 {
        return Ok(KktReport {
            max_psi_excess: 0.0,
            max_sign_violation: linalg::max_abs(grad.view()),
            psi_drift: 0.0,
        });
    }
    let psi = grad / problem.lambda;
    let max_psi_excess = (linalg::max_abs(psi.view()) - 1.0).max(0.0);
    let max_sign_violation = psi
        .iter()
        .zip(fit.coefficients.iter())
        .filter(|(_, b)| **b != 0.0)
        .map(|(s, b)| (s - b.signum()).abs())
        .fold(0.0, f64::max);
    let psi_drift = psi
        .iter()
        .zip(fit.subgradient.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(KktReport {
        max_psi_excess,
        max_sign_violation,
        psi_drift,
    })
}

/// Smallest λ for which the null solution is optimal: `‖AᵀY‖_∞ / n`.
pub fn lambda_max(design: ArrayView2<f64>, response: ArrayView1<f64>) -> f64 {
    linalg::max_abs((design.t().dot(&response) / design.nrows() as f64).view())
}

/// Geometric grid from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, ratio: f64, len: usize) -> Vec<f64> {
    if len <= 1 {
        return vec![lambda_max];
    }
    let step = ratio.ln() / (len - 1) as f64;
    (0..len).map(|i| lambda_max * (step * i as f64).exp()).collect()
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub best_lambda: f64,
    pub best_index: usize,
    pub grid: Vec<f64>,
    /// Mean held-out squared error per grid value.
    pub errors: Vec<f64>,
}

/// K-fold cross-validation over a descending λ grid with warm-started paths.
pub fn cross_validate_lambda(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    grid: &[f64],
    folds: usize,
    seed: u64,
) -> Result<CvResult> {
    let n = design.nrows();
    if grid.is_empty() {
        return Err(Error::invalid("empty lambda grid"));
    }
    if grid.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("lambda grid must be sorted descending"));
    }
    if folds < 2 {
        return Err(Error::invalid("need at least 2 folds"));
    }
    if n < folds {
        return Err(Error::invalid(format!("n = {n} is smaller than folds = {folds}")));
    }
    if response.len() != n {
        return Err(Error::dim("response length does not match design"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut Substream::new(seed, tag::CV_FOLDS, 0, 0).rng());
    let mut fold_of = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        fold_of[row] = pos % folds;
    }

    let per_fold: Vec<Result<Vec<f64>>> = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| fold_of[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| fold_of[i] == f).collect();
            let a_train = design.select(Axis(0), &train);
            let y_train = response.select(Axis(0), &train);
            let a_test = design.select(Axis(0), &test);
            let y_test = response.select(Axis(0), &test);
            let gram = Gram::new(a_train.view(), y_train.view());
            let mut warm: Option<Array1<f64>> = None;
            let mut sse = Vec::with_capacity(grid.len());
            for &lam in grid {
                let problem = LassoProblem::new(a_train.view(), y_train.view(), lam)?;
                let mut opts = SolverOptions::default();
                opts.warm_start = warm.take();
                let fit = match solve_lasso_with_gram(&problem, &gram, &opts) {
                    Ok(fit) => fit,
                    Err(Error::NotConverged { best, .. }) => *best,
                    Err(e) => return Err(e),
                };
                let r = &y_test - &a_test.dot(&fit.coefficients);
                sse.push(r.dot(&r));
                warm = Some(fit.coefficients);
            }
            Ok(sse)
        })
        .collect();

    let mut errors = vec![0.0; grid.len()];
    for fold in per_fold {
        for (e, s) in errors.iter_mut().zip(fold?) {
            *e += s;
        }
    }
    errors.iter_mut().for_each(|e| *e /= n as f64);

    // Descending grid: the first strict minimum is the largest minimizing λ.
    let mut best_index = 0;
    for (i, &e) in errors.iter().enumerate() {
        if e < errors[best_index] {
            best_index = i;
        }
    }
    Ok(CvResult {
        best_lambda: grid[best_index],
        best_index,
        grid: grid.to_vec(),
        errors,
    })
}

/// The design restricted to `cols`, keeping column order.
pub fn select_columns(design: ArrayView2<f64>, cols: &[usize]) -> Array2<f64> {
    design.select(Axis(1), cols)
}

/// Copy of `design` with column `j` replaced.
pub fn replace_column(design: ArrayView2<f64>, j: usize, column: ArrayView1<f64>) -> Array2<f64> {
    let mut b = design.to_owned();
    b.slice_mut(s![.., j]).assign(&column);
    b
}
