//! Gaussian design models, simulation, conditional resampling and
//! model-X knockoffs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};

/// Tolerance on `‖ΣΘ − I‖_max` for a constructed model.
pub const INVERSE_TOL: f64 = 1e-8;
/// Eigenvalue guard for positive semidefinite checks.
pub const EIGEN_GUARD: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct GaussianDesignModel {
    pub sigma: Array2<f64>,
    pub theta: Array2<f64>,
    pub chol_sigma: Array2<f64>,
    /// `Σ_{j|∖j} = 1/Θ_jj`.
    pub conditional_variances: Array1<f64>,
    pub knockoff_s: Option<Array1<f64>>,
}

impl GaussianDesignModel {
    /// Model from a covariance; the precision is computed by Cholesky inversion.
    pub fn from_covariance(sigma: Array2<f64>) -> Result<Self> {
        let theta = linalg::spd_inverse(sigma.view())?;
        Self::from_parts(sigma, theta)
    }

    /// Model from a covariance and its known inverse.
    pub fn from_parts(sigma: Array2<f64>, theta: Array2<f64>) -> Result<Self> {
        let p = sigma.nrows();
        if sigma.dim() != (p, p) || theta.dim() != (p, p) {
            return Err(Error::dim("covariance and precision must be square and equal-sized"));
        }
        if linalg::max_abs_diff(sigma.view(), sigma.t()) > 1e-12 * linalg::max_abs(sigma.diag()).max(1.0) {
            return Err(Error::invalid("covariance is not symmetric"));
        }
        let chol = Cholesky::factor(sigma.view())?;
        let prod = sigma.dot(&theta);
        let err = linalg::max_abs_diff(prod.view(), Array2::<f64>::eye(p).view());
        if err > INVERSE_TOL {
            return Err(Error::invalid(format!("covariance times precision deviates from I by {err:e}")));
        }
        let conditional_variances = theta.diag().mapv(|t| 1.0 / t);
        if conditional_variances.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::invalid("precision has a nonpositive diagonal"));
        }
        Ok(GaussianDesignModel {
            chol_sigma: chol.lower().clone(),
            sigma,
            theta,
            conditional_variances,
            knockoff_s: None,
        })
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    /// Attach a knockoff `s` after checking `2 diag(s) − diag(s) Θ diag(s) ⪰ 0`.
    pub fn with_knockoff_s(mut self, s: Array1<f64>) -> Result<Self> {
        if s.len() != self.p() {
            return Err(Error::dim(format!("knockoff s has length {} != {}", s.len(), self.p())));
        }
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("knockoff s must be nonnegative"));
        }
        let cov = knockoff_conditional_covariance(self.theta.view(), s.view());
        let min = linalg::min_eigenvalue(cov.view());
        if min < -EIGEN_GUARD * linalg::max_abs(s.view()).max(1.0) {
            return Err(Error::NotPositiveDefinite { pivot: 0, value: min });
        }
        self.knockoff_s = Some(s);
        Ok(self)
    }
}

/// `Σ_ij = ρ^{|i−j|}`.
pub fn ar1_covariance(p: usize, rho: f64) -> Result<Array2<f64>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::invalid(format!("AR(1) coefficient must satisfy |rho| < 1, got {rho}")));
    }
    if p == 0 {
        return Err(Error::invalid("p must be positive"));
    }
    Ok(Array2::from_shape_fn((p, p), |(i, j)| rho.powi(i.abs_diff(j) as i32)))
}

/// `Θ = a_p (E + ε I)` and its closed-form inverse
/// `Σ = (1/(a_p ε)) (I − (ε⁻¹ / (1 + ε⁻¹ p)) E)`.
pub fn equicorrelated_from_precision(p: usize, a_p: f64, eps: f64) -> Result<(Array2<f64>, Array2<f64>)> {
    if !(a_p > 0.0) || !(eps > 0.0) || p == 0 {
        return Err(Error::invalid("equicorrelated model needs p ≥ 1, a_p > 0 and eps > 0"));
    }
    let theta = Array2::from_shape_fn((p, p), |(i, j)| a_p * (1.0 + if i == j { eps } else { 0.0 }));
    let c = (1.0 / eps) / (1.0 + p as f64 / eps);
    let scale = 1.0 / (a_p * eps);
    let sigma = Array2::from_shape_fn((p, p), |(i, j)| scale * (if i == j { 1.0 } else { 0.0 } - c));
    Ok((sigma, theta))
}

/// Equal-valued knockoff `s` for the equicorrelated precision model.
pub fn eq_knockoff_s(p: usize, a_p: f64, eps: f64) -> f64 {
    let pf = p as f64;
    if eps < pf - 1.0 {
        2.0 / (a_p * (pf + eps))
    } else {
        (1.0 + (pf - 1.0) / eps) / (a_p * (eps + pf))
    }
}

/// `n × p` matrix with i.i.d. `N(0, Σ)` rows.
pub fn sample_design<R: Rng + ?Sized>(n: usize, model: &GaussianDesignModel, rng: &mut R) -> Array2<f64> {
    let z = standard_normal_matrix(n, model.p(), rng);
    z.dot(&model.chol_sigma.t())
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || StandardNormal.sample(rng))
}

pub fn standard_normal_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Array1<f64> {
    Array1::from_shape_simple_fn(len, || StandardNormal.sample(rng))
}

/// Conditional mean `E[A_:j | A_:∖j] = −A_:∖j Θ_∖j,j / Θ_jj`.
pub fn conditional_mean(design: ArrayView2<f64>, j: usize, theta: ArrayView2<f64>) -> Array1<f64> {
    let tjj = theta[[j, j]];
    let mut w = theta.column(j).mapv(|t| -t / tjj);
    w[j] = 0.0;
    design.dot(&w)
}

/// Innovation law for conditional resampling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Innovation {
    Gaussian,
    /// `±ξ^{-1/2}` with probability `ξ/2` each, `0` otherwise.
    ThreePoint { xi: f64 },
}

impl Innovation {
    pub fn three_point(xi: f64) -> Result<Self> {
        if !(xi > 0.0 && xi <= 1.0) {
            return Err(Error::invalid(format!("three-point parameter must be in (0, 1], got {xi}")));
        }
        Ok(Innovation::ThreePoint { xi })
    }

    pub fn draw<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Array1<f64> {
        match *self {
            Innovation::Gaussian => standard_normal_vector(len, rng),
            Innovation::ThreePoint { xi } => {
                let mag = xi.powf(-0.5);
                Array1::from_shape_simple_fn(len, || {
                    let u: f64 = rng.random();
                    if u < xi / 2.0 {
                        mag
                    } else if u < xi {
                        -mag
                    } else {
                        0.0
                    }
                })
            }
        }
    }
}

/// Draws replacement columns `B_:j = μ_:j + √(1/Θ_jj) Ξ_:j` from a Gaussian model.
#[derive(Debug, Clone)]
pub struct ColumnSampler<'m> {
    pub model: &'m GaussianDesignModel,
    pub innovation: Innovation,
}

impl<'m> ColumnSampler<'m> {
    pub fn gaussian(model: &'m GaussianDesignModel) -> Self {
        ColumnSampler {
            model,
            innovation: Innovation::Gaussian,
        }
    }

    pub fn three_point(model: &'m GaussianDesignModel, xi: f64) -> Result<Self> {
        Ok(ColumnSampler {
            model,
            innovation: Innovation::three_point(xi)?,
        })
    }

    pub fn mean(&self, design: ArrayView2<f64>, j: usize) -> Array1<f64> {
        conditional_mean(design, j, self.model.theta.view())
    }

    /// New column given a precomputed conditional mean.
    pub fn sample_with_mean<R: Rng + ?Sized>(&self, mean: ArrayView1<f64>, j: usize, rng: &mut R) -> Array1<f64> {
        let sd = self.model.conditional_variances[j].sqrt();
        let mut col = self.innovation.draw(mean.len(), rng);
        col.zip_mut_with(&mean, |z, m| *z = m + sd * *z);
        col
    }

    pub fn sample<R: Rng + ?Sized>(&self, design: ArrayView2<f64>, j: usize, rng: &mut R) -> Result<Array1<f64>> {
        check_model(design, self.model)?;
        if j >= design.ncols() {
            return Err(Error::invalid(format!("column {j} out of range")));
        }
        Ok(self.sample_with_mean(self.mean(design, j).view(), j, rng))
    }
}

fn check_model(design: ArrayView2<f64>, model: &GaussianDesignModel) -> Result<()> {
    if design.ncols() != model.p() {
        return Err(Error::dim(format!("design has {} columns, model has {}", design.ncols(), model.p())));
    }
    Ok(())
}

/// `B_:j ~ P(A_:j | A_:∖j)` under the Gaussian model.
pub fn conditional_column_sampler<R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    j: usize,
    model: &GaussianDesignModel,
    rng: &mut R,
) -> Result<Array1<f64>> {
    ColumnSampler::gaussian(model).sample(design, j, rng)
}

/// Conditional mean plus scaled three-point innovations.
pub fn three_point_column_sampler<R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    j: usize,
    model: &GaussianDesignModel,
    xi: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    ColumnSampler::three_point(model, xi)?.sample(design, j, rng)
}

/// `Y = Aα + w` with `w` i.i.d. `N(0, v)`.
pub fn generate_response<R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    coefficients: ArrayView1<f64>,
    noise_variance: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if coefficients.len() != design.ncols() {
        return Err(Error::dim("coefficient length does not match design"));
    }
    if !(noise_variance > 0.0) {
        return Err(Error::invalid(format!("noise variance must be positive, got {noise_variance}")));
    }
    let normal = Normal::new(0.0, noise_variance.sqrt()).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y = design.dot(&coefficients);
    y.mapv_inplace(|m| m + normal.sample(rng));
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoefficientSpec {
    /// First `s` entries i.i.d. `N(0, 1)`.
    GaussianSupport,
    /// A uniformly random `s`-subset set to `a_val / √n`.
    FixedAmplitude { a_val: f64, n: usize },
}

#[derive(Debug, Clone)]
pub struct SparseTruth {
    pub coefficients: Array1<f64>,
    /// Sorted support `H₁`.
    pub support: Vec<usize>,
}

pub fn sparse_coefficients<R: Rng + ?Sized>(p: usize, s: usize, spec: CoefficientSpec, rng: &mut R) -> Result<SparseTruth> {
    if s > p {
        return Err(Error::invalid(format!("sparsity {s} exceeds p = {p}")));
    }
    let mut coefficients = Array1::zeros(p);
    let support: Vec<usize> = match spec {
        CoefficientSpec::GaussianSupport => {
            for c in coefficients.iter_mut().take(s) {
                *c = StandardNormal.sample(rng);
            }
            (0..s).collect()
        }
        CoefficientSpec::FixedAmplitude { a_val, n } => {
            if n == 0 {
                return Err(Error::invalid("n must be positive"));
            }
            let mut idx = index::sample(rng, p, s).into_vec();
            idx.sort_unstable();
            let value = a_val / (n as f64).sqrt();
            for &j in &idx {
                coefficients[j] = value;
            }
            idx
        }
    };
    Ok(SparseTruth { coefficients, support })
}

/// `2 diag(s) − diag(s) Θ diag(s)`.
pub fn knockoff_conditional_covariance(theta: ArrayView2<f64>, s: ArrayView1<f64>) -> Array2<f64> {
    let p = s.len();
    Array2::from_shape_fn((p, p), |(i, j)| {
        let base = if i == j { 2.0 * s[i] } else { 0.0 };
        base - s[i] * theta[[i, j]] * s[j]
    })
}

/// Scale `s` by `1 − ε` (ε = 1e-8, 1e-7, ...) until the conditional
/// covariance `2S − SΘS` is strictly positive definite.
pub fn shrink_knockoff_s(theta: ArrayView2<f64>, s: ArrayView1<f64>) -> Result<Array1<f64>> {
    let mut eps = 1e-8;
    while eps < 1.0 {
        let shrunk = s.mapv(|v| v * (1.0 - eps));
        if Cholesky::factor(knockoff_conditional_covariance(theta, shrunk.view()).view()).is_ok() {
            return Ok(shrunk);
        }
        eps *= 10.0;
    }
    Err(Error::invalid("no feasible shrinkage of the knockoff s"))
}

/// Knockoff copy with rows `Ã_i | A_i ~ N(A_i − SΘA_i, 2S − SΘS)`.
pub fn model_x_knockoff_sample<R: Rng + ?Sized>(
    design: ArrayView2<f64>,
    model: &GaussianDesignModel,
    rng: &mut R,
) -> Result<Array2<f64>> {
    check_model(design, model)?;
    let s = model
        .knockoff_s
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no knockoff s"))?;
    let (n, p) = design.dim();
    let cov = knockoff_conditional_covariance(model.theta.view(), s.view());
    let factor = linalg::psd_factor(cov.view(), EIGEN_GUARD * linalg::max_abs(s.view()).max(1.0))?;
    let mut ts = model.theta.clone();
    for (j, mut col) in ts.axis_iter_mut(Axis(1)).enumerate() {
        col *= s[j];
    }
    let mean = &design - &design.dot(&ts);
    let z = standard_normal_matrix(n, p, rng);
    Ok(mean + z.dot(&factor.t()))
}

/// Covariance of the joint `(A, Ã)` row: `[[Σ, Σ − S], [Σ − S, Σ]]`.
pub fn knockoff_joint_covariance(sigma: ArrayView2<f64>, s: ArrayView1<f64>) -> Array2<f64> {
    let p = s.len();
    let mut joint = Array2::zeros((2 * p, 2 * p));
    let mut off = sigma.to_owned();
    for j in 0..p {
        off[[j, j]] -= s[j];
    }
    joint.slice_mut(ndarray::s![..p, ..p]).assign(&sigma);
    joint.slice_mut(ndarray::s![p.., p..]).assign(&sigma);
    joint.slice_mut(ndarray::s![..p, p..]).assign(&off);
    joint.slice_mut(ndarray::s![p.., ..p]).assign(&off);
    joint
}

/// Joint `2p` precision of `(A, Ã)` in block form.
///
/// With `G = I − SΘ` and `M = (2S − SΘS)⁻¹` the inverse of the joint
/// covariance is `[[Θ + GᵀMG, −GᵀM], [−MG, M]]`.
pub fn knockoff_joint_precision(theta: ArrayView2<f64>, s: ArrayView1<f64>) -> Result<Array2<f64>> {
    let p = s.len();
    let c = knockoff_conditional_covariance(theta, s);
    let m = Cholesky::factor(c.view())?.inverse();
    let g = Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { 0.0 } - s[i] * theta[[i, j]]);
    let gt_m = g.t().dot(&m);
    let top_left = &theta + &gt_m.dot(&g);
    let mut joint = Array2::zeros((2 * p, 2 * p));
    joint.slice_mut(ndarray::s![..p, ..p]).assign(&top_left);
    joint.slice_mut(ndarray::s![..p, p..]).assign(&gt_m.mapv(|v| -v));
    joint.slice_mut(ndarray::s![p.., ..p]).assign(&gt_m.t().mapv(|v| -v));
    joint.slice_mut(ndarray::s![p.., p..]).assign(&m);
    linalg::symmetrize(&mut joint);
    Ok(joint)
}

#[derive(Debug, Clone)]
pub struct KnockoffDiagnostic {
    /// Diagonals of `(2S − SΘS)⁻¹`.
    pub diagonals: Array1<f64>,
    pub threshold: f64,
    pub fraction_above: f64,
}

/// Diagonals of `(2S − SΘS)⁻¹` and the fraction exceeding `threshold`.
///
/// `delta > 0` replaces `Θ` with `Θ + δI` so singular precisions can be used.
pub fn knockoff_precision_diagnostic(
    theta: ArrayView2<f64>,
    s: ArrayView1<f64>,
    threshold: f64,
    delta: f64,
) -> Result<KnockoffDiagnostic> {
    let p = s.len();
    if theta.dim() != (p, p) {
        return Err(Error::dim(format!("precision is {:?} but s has length {p}", theta.dim())));
    }
    let mut th = theta.to_owned();
    for j in 0..p {
        th[[j, j]] += delta;
    }
    let c = knockoff_conditional_covariance(th.view(), s);
    let min = linalg::min_eigenvalue(c.view());
    if !(min > EIGEN_GUARD) {
        return Err(Error::NotPositiveDefinite { pivot: 0, value: min });
    }
    let diagonals = Cholesky::factor(c.view())?.inverse().diag().to_owned();
    let above = diagonals.iter().filter(|d| **d > threshold).count();
    Ok(KnockoffDiagnostic {
        fraction_above: above as f64 / p.max(1) as f64,
        diagonals,
        threshold,
    })
}
