//! Dense linear-algebra helpers used across the crate.
//!
//! Everything here works on `ndarray` row-major matrices. Symmetric
//! eigendecompositions are delegated to `nalgebra`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn factor(a: ArrayView2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim(format!("cholesky of {}x{} matrix", n, a.ncols())));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let dot: f64 = {
                    let li = l.row(i);
                    let lj = l.row(j);
                    li.iter().zip(lj.iter()).take(j).map(|(x, y)| x * y).sum()
                };
                let v = a[[i, j]] - dot;
                if i == j {
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::NotPositiveDefinite { pivot: i, value: v });
                    }
                    l[[i, i]] = v.sqrt();
                } else {
                    l[[i, j]] = v / l[[j, j]];
                }
            }
        }
        Ok(Cholesky { lower: l })
    }

    /// Factor, retrying once with a diagonal jitter of `1e-12 * trace / dim`.
    pub fn factor_with_jitter(a: ArrayView2<f64>) -> Result<Self> {
        match Cholesky::factor(a) {
            Ok(c) => Ok(c),
            Err(Error::NotPositiveDefinite { .. }) => {
                let n = a.nrows().max(1);
                let jitter = 1e-12 * a.diag().sum().abs() / n as f64;
                let mut b = a.to_owned();
                b.diag_mut().mapv_inplace(|d| d + jitter);
                Cholesky::factor(b.view())
            }
            Err(e) => Err(e),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    /// Solve `L y = b` in place.
    pub fn forward(&self, b: &mut [f64]) {
        let l = &self.lower;
        for i in 0..b.len() {
            let row = l.row(i);
            let mut s = b[i];
            for k in 0..i {
                s -= row[k] * b[k];
            }
            b[i] = s / row[i];
        }
    }

    /// Solve `Lᵀ x = y` in place.
    pub fn backward(&self, b: &mut [f64]) {
        let l = &self.lower;
        let n = b.len();
        for i in (0..n).rev() {
            let v = b[i] / l[[i, i]];
            b[i] = v;
            for k in 0..i {
                b[k] -= l[[i, k]] * v;
            }
        }
    }

    pub fn solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let mut x = b.to_vec();
        self.forward(&mut x);
        self.backward(&mut x);
        Array1::from(x)
    }

    /// Solve `A X = B` column by column.
    pub fn solve_mat(&self, b: ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::<f64>::zeros(b.raw_dim());
        for (col_in, mut col_out) in b.axis_iter(Axis(1)).zip(out.axis_iter_mut(Axis(1))) {
            col_out.assign(&self.solve(col_in));
        }
        out
    }

    pub fn inverse(&self) -> Array2<f64> {
        let n = self.dim();
        let mut inv = Array2::<f64>::zeros((n, n));
        let mut e = vec![0.0; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = 0.0);
            e[j] = 1.0;
            self.forward(&mut e);
            self.backward(&mut e);
            for i in 0..n {
                inv[[i, j]] = e[i];
            }
        }
        symmetrize(&mut inv);
        inv
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(a: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(Cholesky::factor(a)?.inverse())
}

pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}

/// `Aᵀ A`.
pub fn gram(a: ArrayView2<f64>) -> Array2<f64> {
    let mut g = a.t().dot(&a);
    symmetrize(&mut g);
    g
}

pub fn max_abs_diff(a: ArrayView2<f64>, b: ArrayView2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn max_abs(v: ArrayView1<f64>) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn to_nalgebra(a: ArrayView2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Eigenvalues (ascending) and eigenvectors (as columns) of a symmetric matrix.
pub fn sym_eigen(a: ArrayView2<f64>) -> (Array1<f64>, Array2<f64>) {
    let n = a.nrows();
    let eig = nalgebra::SymmetricEigen::new(to_nalgebra(a));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let mut vectors = Array2::<f64>::zeros((n, n));
    for (dst, &k) in order.iter().enumerate() {
        for i in 0..n {
            vectors[[i, dst]] = eig.eigenvectors[(i, k)];
        }
    }
    (values, vectors)
}

pub fn min_eigenvalue(a: ArrayView2<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    sym_eigen(a).0[0]
}

pub fn max_eigenvalue(a: ArrayView2<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    let (v, _) = sym_eigen(a);
    v[v.len() - 1]
}

/// Square-root factor `F` of a positive semidefinite matrix with `F Fᵀ = A`.
///
/// Eigenvalues in `[-tol, 0)` are clamped to zero; anything more negative
/// is reported as a failure.
pub fn psd_factor(a: ArrayView2<f64>, tol: f64) -> Result<Array2<f64>> {
    let n = a.nrows();
    let (values, mut vectors) = sym_eigen(a);
    for (k, &lam) in values.iter().enumerate() {
        if lam < -tol {
            return Err(Error::NotPositiveDefinite { pivot: k, value: lam });
        }
        let s = lam.max(0.0).sqrt();
        for i in 0..n {
            vectors[[i, k]] *= s;
        }
    }
    Ok(vectors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cholesky_reconstructs() {
        let a = array![[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let c = Cholesky::factor(a.view()).unwrap();
        let l = c.lower();
        let back = l.dot(&l.t());
        assert!(max_abs_diff(back.view(), a.view()) < 1e-12);
        let inv = c.inverse();
        let eye = a.dot(&inv);
        assert!(max_abs_diff(eye.view(), Array2::eye(3).view()) < 1e-12);
    }

    #[test]
    fn cholesky_reports_pivot() {
        let a = array![[1.0, 2.0], [2.0, 1.0]];
        match Cholesky::factor(a.view()) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn eigen_sorted_and_psd_factor() {
        let a = array![[2.0, 1.0], [1.0, 2.0]];
        let (vals, _) = sym_eigen(a.view());
        assert!((vals[0] - 1.0).abs() < 1e-12 && (vals[1] - 3.0).abs() < 1e-12);
        let singular = array![[1.0, 1.0], [1.0, 1.0]];
        let f = psd_factor(singular.view(), 1e-10).unwrap();
        assert!(max_abs_diff(f.dot(&f.t()).view(), singular.view()) < 1e-12);
        assert!(psd_factor(array![[-1.0]].view(), 1e-10).is_err());
    }
}
