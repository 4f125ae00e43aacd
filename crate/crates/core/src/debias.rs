//! Generalized and classic debiased Lasso estimators.
//!
//! For each coordinate `j`, with `𝒜 = active ∖ {j}`:
//!
//! ```text
//! d_j   = (1/n) Ǎ_:jᵀ (I − P_𝒜) A_:j
//! α̂ᵁ_j = α̂_j + d_j⁻¹ (1/n) Ǎ_:jᵀ R
//! t_j   = d_j α̂ᵁ_j = d_j α̂_j + (1/n) Ǎ_:jᵀ R
//! ```

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lasso::LassoFit;
use crate::linalg::{self, Cholesky};
use crate::projection::ProjectionFamily;
use crate::residualizer::Residualizer;

/// Relative floor below which a denominator is flagged degenerate.
pub const DEGENERATE_FLOOR: f64 = 1e-10;

/// `|d| < floor · ‖col‖² / n` flags a degenerate denominator.
pub fn is_degenerate(denominator: f64, column_sq_norm: f64, n: usize) -> bool {
    !(denominator.abs() >= DEGENERATE_FLOOR * column_sq_norm / n as f64) || !denominator.is_finite()
}

#[derive(Debug, Clone)]
pub struct DebiasResult {
    /// Generalized estimator; `NaN` at degenerate coordinates.
    pub alpha_u: Array1<f64>,
    pub denominators: Array1<f64>,
    pub t_stats: Array1<f64>,
    pub alpha_u_classic: Option<Array1<f64>>,
    pub degenerate: Vec<bool>,
    pub residualizer_id: &'static str,
}

impl DebiasResult {
    pub fn p(&self) -> usize {
        self.alpha_u.len()
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.iter().filter(|d| **d).count()
    }

    /// `α̂ᵁ_j`, or `None` when the denominator is degenerate.
    pub fn get(&self, j: usize) -> Option<f64> {
        (!self.degenerate[j]).then(|| self.alpha_u[j])
    }
}

/// Everything needed to evaluate debiased quantities for one fit.
///
/// Shared by the debias engine and the column-update formulas so the
/// residualized design and the projection family are built once.
#[derive(Debug, Clone)]
pub struct DebiasContext {
    pub checked: Array2<f64>,
    pub family: ProjectionFamily,
    pub residualizer_id: &'static str,
}

impl DebiasContext {
    pub fn new(design: ArrayView2<f64>, fit: &LassoFit, residualizer: &Residualizer) -> Result<Self> {
        check_fit(design, fit)?;
        let n = design.nrows();
        if fit.active_set.len() >= n {
            return Err(Error::invalid(format!(
                "active set size {} must be below n = {n}",
                fit.active_set.len()
            )));
        }
        let checked = residualizer.checked_matrix(design)?;
        let family = ProjectionFamily::build(design, &fit.active_set)?;
        Ok(DebiasContext {
            checked,
            family,
            residualizer_id: residualizer.id(),
        })
    }

    pub fn centering(&self, design: ArrayView2<f64>, j: usize) -> Array1<f64> {
        &design.column(j) - &self.checked.column(j)
    }
}

fn check_fit(design: ArrayView2<f64>, fit: &LassoFit) -> Result<()> {
    let (n, p) = design.dim();
    if fit.p() != p || fit.n() != n {
        return Err(Error::dim(format!(
            "fit is {}x{} but design is {n}x{p}",
            fit.n(),
            fit.p()
        )));
    }
    Ok(())
}

pub fn debias_generalized(
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    fit: &LassoFit,
    residualizer: &Residualizer,
) -> Result<DebiasResult> {
    if response.len() != design.nrows() {
        return Err(Error::dim("response length does not match design"));
    }
    let ctx = DebiasContext::new(design, fit, residualizer)?;
    debias_with_context(design, fit, &ctx)
}

pub fn debias_with_context(design: ArrayView2<f64>, fit: &LassoFit, ctx: &DebiasContext) -> Result<DebiasResult> {
    check_fit(design, fit)?;
    let (n, p) = design.dim();
    let nf = n as f64;
    let per_coord: Vec<(f64, f64, f64, bool)> = (0..p)
        .into_par_iter()
        .map(|j| {
            let col = design.column(j);
            let chk = ctx.checked.column(j);
            let comp = ctx.family.column_complement(j, col);
            let d = chk.dot(&comp) / nf;
            let score = chk.dot(&fit.residual) / nf;
            let t = d * fit.coefficients[j] + score;
            let degenerate = is_degenerate(d, col.dot(&col), n);
            let au = if degenerate { f64::NAN } else { fit.coefficients[j] + score / d };
            (au, d, t, degenerate)
        })
        .collect();
    let degenerate: Vec<bool> = per_coord.iter().map(|c| c.3).collect();
    if degenerate.iter().all(|d| *d) {
        return Err(Error::AllDegenerate);
    }
    Ok(DebiasResult {
        alpha_u: per_coord.iter().map(|c| c.0).collect(),
        denominators: per_coord.iter().map(|c| c.1).collect(),
        t_stats: per_coord.iter().map(|c| c.2).collect(),
        alpha_u_classic: None,
        degenerate,
        residualizer_id: ctx.residualizer_id,
    })
}

/// Classic debiased Lasso `α̂ + Θ Aᵀ(Y − Aα̂) / (n − k)` with a supplied precision.
pub fn debias_classic(
    fit: &LassoFit,
    design: ArrayView2<f64>,
    response: ArrayView1<f64>,
    precision: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    check_fit(design, fit)?;
    let (n, p) = design.dim();
    if precision.dim() != (p, p) {
        return Err(Error::dim(format!("precision is {:?}, expected {p}x{p}", precision.dim())));
    }
    if fit.k >= n {
        return Err(Error::invalid(format!("k = {} must be below n = {n}", fit.k)));
    }
    let asym = linalg::max_abs_diff(precision, precision.t());
    if asym > 1e-10 * linalg::max_abs(precision.diag()).max(1.0) {
        return Err(Error::invalid("precision matrix is not symmetric"));
    }
    Cholesky::factor(precision)?;
    let residual = &response - &design.dot(&fit.coefficients);
    let correction = precision.dot(&design.t().dot(&residual)) / (n - fit.k) as f64;
    Ok(&fit.coefficients + &correction)
}

#[derive(Debug, Clone)]
pub struct DenominatorGaps {
    /// `|d_j − Σ_{j|∖j}(1 − k/n)| / Σ_{j|∖j}` per coordinate.
    pub gaps: Array1<f64>,
    pub median: f64,
    pub q90: f64,
    pub max: f64,
}

impl DenominatorGaps {
    pub fn fraction_within(&self, tol: f64) -> f64 {
        self.gaps.iter().filter(|g| **g <= tol).count() as f64 / self.gaps.len().max(1) as f64
    }
}

/// Quantile by linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Compare denominators with their Gaussian-design prediction `Σ_{j|∖j}(1 − k/n)`.
pub fn gaussian_denominator_check(
    result: &DebiasResult,
    fit: &LassoFit,
    conditional_variances: ArrayView1<f64>,
) -> Result<DenominatorGaps> {
    let p = result.p();
    if conditional_variances.len() != p || fit.p() != p {
        return Err(Error::dim(format!(
            "{} conditional variances for {p} coordinates",
            conditional_variances.len()
        )));
    }
    if conditional_variances.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("conditional variances must be positive"));
    }
    let shrink = 1.0 - fit.k as f64 / fit.n() as f64;
    let gaps: Array1<f64> = result
        .denominators
        .iter()
        .zip(conditional_variances.iter())
        .map(|(d, v)| (d - v * shrink).abs() / v)
        .collect();
    let slice = gaps.as_slice().unwrap_or(&[]);
    Ok(DenominatorGaps {
        median: quantile(slice, 0.5),
        q90: quantile(slice, 0.9),
        max: gaps.iter().copied().fold(0.0, f64::max),
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[3.0, 1.0, 2.0], 0.5), 2.0);
        assert_eq!(quantile(&[1.0, 2.0], 0.5), 1.5);
    }

    #[test]
    fn degenerate_floor() {
        assert!(is_degenerate(1e-13, 1.0, 1));
        assert!(!is_degenerate(1e-3, 1.0, 1));
        assert!(is_degenerate(f64::NAN, 1.0, 1));
    }
}
