//! Centering columns `μ_:j` and residualized columns `Ǎ_:j = A_:j − μ_:j`.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};

#[derive(Debug, Clone)]
pub enum Residualizer {
    /// `μ = 0`.
    Zero,
    /// `μ_:j` = projection of `A_:j` onto the span of the other columns.
    OlsProjection,
    /// Gaussian conditional mean `μ_:j = −A_:∖j Θ_∖j,j / Θ_jj`.
    GaussianConditional { precision: Array2<f64> },
    /// Explicit `n × p` matrix of centering columns.
    Custom { mu: Array2<f64> },
}

impl Residualizer {
    /// Gaussian residualizer; `precision` must be symmetric positive definite.
    pub fn gaussian(precision: Array2<f64>) -> Result<Self> {
        let p = precision.nrows();
        if precision.ncols() != p {
            return Err(Error::dim("precision matrix must be square"));
        }
        let asym = linalg::max_abs_diff(precision.view(), precision.t());
        let scale = linalg::max_abs(precision.diag()).max(1.0);
        if asym > 1e-10 * scale {
            return Err(Error::invalid(format!("precision matrix is not symmetric ({asym:e})")));
        }
        Cholesky::factor(precision.view())?;
        Ok(Residualizer::GaussianConditional { precision })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Residualizer::Zero => "zero",
            Residualizer::OlsProjection => "ols_projection",
            Residualizer::GaussianConditional { .. } => "gaussian_conditional",
            Residualizer::Custom { .. } => "custom",
        }
    }

    fn check(&self, design: ArrayView2<f64>) -> Result<()> {
        let (n, p) = design.dim();
        match self {
            Residualizer::GaussianConditional { precision } if precision.nrows() != p => Err(
                Error::dim(format!("precision is {}x{} but design has {p} columns", precision.nrows(), precision.ncols())),
            ),
            Residualizer::Custom { mu } if mu.dim() != (n, p) => Err(Error::dim(format!(
                "custom centering is {:?} but design is {n}x{p}",
                mu.dim()
            ))),
            _ => Ok(()),
        }
    }

    /// `(μ_:j, Ǎ_:j)` for one column.
    pub fn residual_column(&self, design: ArrayView2<f64>, j: usize) -> Result<(Array1<f64>, Array1<f64>)> {
        self.check(design)?;
        let (n, p) = design.dim();
        if j >= p {
            return Err(Error::invalid(format!("column {j} out of range (p = {p})")));
        }
        let col = design.column(j);
        let mu = match self {
            Residualizer::Zero => Array1::zeros(n),
            Residualizer::Custom { mu } => mu.column(j).to_owned(),
            Residualizer::GaussianConditional { precision } => {
                let tjj = precision[[j, j]];
                let mut weights = precision.column(j).mapv(|t| -t / tjj);
                weights[j] = 0.0;
                design.dot(&weights)
            }
            Residualizer::OlsProjection => {
                let others: Vec<usize> = (0..p).filter(|&l| l != j).collect();
                if others.is_empty() {
                    Array1::zeros(n)
                } else {
                    let rest = design.select(Axis(1), &others);
                    let chol = Cholesky::factor(linalg::gram(rest.view()).view())?;
                    let coef = chol.solve(rest.t().dot(&col).view());
                    rest.dot(&coef)
                }
            }
        };
        let checked = &col - &mu;
        Ok((mu, checked))
    }

    /// All residualized columns `Ǎ` as an `n × p` matrix.
    pub fn checked_matrix(&self, design: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(design)?;
        let (n, p) = design.dim();
        match self {
            Residualizer::Zero => Ok(design.to_owned()),
            Residualizer::Custom { mu } => Ok(&design - mu),
            Residualizer::GaussianConditional { precision } => {
                // Ǎ = A Θ diag(Θ)⁻¹
                let mut checked = design.dot(precision);
                for (j, mut col) in checked.axis_iter_mut(Axis(1)).enumerate() {
                    col /= precision[[j, j]];
                }
                Ok(checked)
            }
            Residualizer::OlsProjection => {
                if n < p {
                    return Err(Error::NotPositiveDefinite { pivot: n, value: 0.0 });
                }
                // Residual of A_:j on the other columns is A (AᵀA)⁻¹ e_j / [(AᵀA)⁻¹]_jj.
                let inv = Cholesky::factor(linalg::gram(design).view())?.inverse();
                let mut checked = design.dot(&inv);
                for (j, mut col) in checked.axis_iter_mut(Axis(1)).enumerate() {
                    col /= inv[[j, j]];
                }
                Ok(checked)
            }
        }
    }

    /// Centering matrix `μ = A − Ǎ`.
    pub fn centering_matrix(&self, design: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(&design - &self.checked_matrix(design)?)
    }
}
