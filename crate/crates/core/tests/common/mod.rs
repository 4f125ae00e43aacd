#![allow(dead_code)]

use colupdate_core::design::{self, GaussianDesignModel};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    design::standard_normal_matrix(rows, cols, &mut rng(seed))
}

pub fn randn_vec(len: usize, seed: u64) -> Array1<f64> {
    design::standard_normal_vector(len, &mut rng(seed))
}

pub fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

pub fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Columns orthogonal with squared norm `n` (Gram-Schmidt via QR).
pub fn orthogonal_design(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let g = to_na(randn(n, p, seed).view());
    let q = g.qr().q();
    from_na(&q) * (n as f64).sqrt()
}

/// Least squares via SVD.
pub fn least_squares(a: ArrayView2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let am = to_na(a);
    let ym = DMatrix::from_column_slice(y.len(), 1, y.as_slice().unwrap_or(&y.to_vec()));
    let sol = am.svd(true, true).solve(&ym, 1e-14).expect("svd solve");
    Array1::from_iter(sol.column(0).iter().copied())
}

/// Orthogonal projection of `v` onto the span of `cols` (direct, SVD based).
pub fn project(a: ArrayView2<f64>, cols: &[usize], v: ArrayView1<f64>) -> Array1<f64> {
    if cols.is_empty() {
        return Array1::zeros(v.len());
    }
    let sub = a.select(ndarray::Axis(1), cols);
    let coef = least_squares(sub.view(), v);
    sub.dot(&coef)
}

/// Lasso by plain proximal gradient (ISTA), run until the iterates stall.
pub fn prox_grad_lasso(a: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64, tol: f64) -> Array1<f64> {
    let n = a.nrows() as f64;
    let am = to_na(a);
    let l = (am.transpose() * &am / n).symmetric_eigenvalues().max();
    let step = 1.0 / l;
    let mut b = Array1::zeros(a.ncols());
    for _ in 0..2_000_000 {
        let grad = a.t().dot(&(&a.dot(&b) - &y)) / n;
        let next = (&b - &(&grad * step)).mapv(|x| {
            if x > step * lambda {
                x - step * lambda
            } else if x < -step * lambda {
                x + step * lambda
            } else {
                0.0
            }
        });
        let delta = (&next - &b).mapv(f64::abs).fold(0.0f64, |m, v| m.max(*v));
        b = next;
        if delta < tol {
            break;
        }
    }
    b
}

pub fn ar1_model(p: usize, rho: f64) -> GaussianDesignModel {
    GaussianDesignModel::from_covariance(design::ar1_covariance(p, rho).unwrap()).unwrap()
}

pub fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}
