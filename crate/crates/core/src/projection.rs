//! Projections onto active-set columns with one column removed.
//!
//! For a base set `S` with Gram block `Ω = A_Sᵀ A_S` and `Π = Ω⁻¹`, the
//! projection onto `S ∖ {j}` follows from the Schur-complement downdate
//! `Π_{S_j} = Π_{S_j} − Π_{S_j j} Π_jj⁻¹ Π_{j S_j}`. In vector form this is
//!
//! ```text
//! P_j = P − w_j w_jᵀ / Π_jj,   w_j = A_S Π e_j,
//! ```
//!
//! so one `O(n|S|² + |S|³)` setup serves every `j` at `O(n|S|)` per apply.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};

#[derive(Debug, Clone)]
pub struct ProjectionFamily {
    active: Vec<usize>,
    position: Vec<Option<usize>>,
    basis: Array2<f64>,
    pi: Array2<f64>,
    dual: Array2<f64>,
}

impl ProjectionFamily {
    pub fn build(design: ArrayView2<f64>, active_set: &[usize]) -> Result<Self> {
        let (n, p) = design.dim();
        let mut position = vec![None; p];
        for (pos, &j) in active_set.iter().enumerate() {
            if j >= p {
                return Err(Error::invalid(format!("active index {j} out of range (p = {p})")));
            }
            if position[j].is_some() {
                return Err(Error::invalid(format!("active index {j} repeated")));
            }
            position[j] = Some(pos);
        }
        if active_set.len() > n {
            return Err(Error::invalid(format!(
                "active set of size {} exceeds n = {n}",
                active_set.len()
            )));
        }
        let basis = design.select(Axis(1), active_set);
        let m = active_set.len();
        let (pi, dual) = if m == 0 {
            (Array2::zeros((0, 0)), Array2::zeros((n, 0)))
        } else {
            let omega = linalg::gram(basis.view());
            let chol = Cholesky::factor_with_jitter(omega.view()).map_err(|e| match e {
                Error::NotPositiveDefinite { pivot, value } => Error::NotPositiveDefinite {
                    pivot: active_set[pivot],
                    value,
                },
                other => other,
            })?;
            // Relative pivot floor: a column nearly in the span of earlier ones.
            for (i, &l) in chol.lower().diag().iter().enumerate() {
                let rel = l * l / omega[[i, i]];
                if rel < 1e-10 {
                    return Err(Error::NotPositiveDefinite {
                        pivot: active_set[i],
                        value: rel,
                    });
                }
            }
            let pi = chol.inverse();
            let dual = basis.dot(&pi);
            (pi, dual)
        };
        Ok(ProjectionFamily {
            active: active_set.to_vec(),
            position,
            basis,
            pi,
            dual,
        })
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.position.get(j).copied().flatten().is_some()
    }

    /// `Π = (A_Sᵀ A_S)⁻¹`.
    pub fn inverse_gram(&self) -> &Array2<f64> {
        &self.pi
    }

    /// Projection onto all base columns.
    pub fn apply_base(&self, v: ArrayView1<f64>) -> Array1<f64> {
        if self.active.is_empty() {
            return Array1::zeros(v.len());
        }
        self.dual.dot(&self.basis.t().dot(&v))
    }

    /// `P_j v`: projection onto `S ∖ {j}` (equal to the base projection for `j ∉ S`).
    pub fn apply(&self, j: usize, v: ArrayView1<f64>) -> Array1<f64> {
        let mut out = self.apply_base(v);
        if let Some(pos) = self.position.get(j).copied().flatten() {
            let w = self.dual.column(pos);
            let coef = w.dot(&v) / self.pi[[pos, pos]];
            out.scaled_add(-coef, &w);
        }
        out
    }

    /// `P_j M` for every column of `M`.
    pub fn apply_mat(&self, j: usize, m: ArrayView2<f64>) -> Array2<f64> {
        if self.active.is_empty() {
            return Array2::zeros(m.dim());
        }
        let mut out = self.dual.dot(&self.basis.t().dot(&m));
        if let Some(pos) = self.position.get(j).copied().flatten() {
            let w = self.dual.column(pos);
            let coef = m.t().dot(&w) / self.pi[[pos, pos]];
            for (mut col, c) in out.axis_iter_mut(Axis(1)).zip(coef.iter()) {
                col.scaled_add(-c, &w);
            }
        }
        out
    }

    /// `(I − P_j) v`.
    pub fn complement(&self, j: usize, v: ArrayView1<f64>) -> Array1<f64> {
        &v - &self.apply(j, v)
    }

    /// `(I − P_j) A_:j` for the design the family was built on.
    ///
    /// For `j ∈ S` the base projection fixes `A_:j`, leaving `w_j / Π_jj`.
    pub fn column_complement(&self, j: usize, column: ArrayView1<f64>) -> Array1<f64> {
        match self.position.get(j).copied().flatten() {
            Some(pos) => self.dual.column(pos).mapv(|w| w / self.pi[[pos, pos]]),
            None => self.complement(j, column),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn randn(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| StandardNormal.sample(&mut rng))
    }

    fn direct_projection(a: ArrayView2<f64>, cols: &[usize], v: ArrayView1<f64>) -> Array1<f64> {
        if cols.is_empty() {
            return Array1::zeros(v.len());
        }
        let sub = a.select(Axis(1), cols);
        let chol = Cholesky::factor(linalg::gram(sub.view()).view()).unwrap();
        sub.dot(&chol.solve(sub.t().dot(&v).view()))
    }

    #[test]
    fn empty_active_set_projects_to_zero() {
        let a = randn(10, 4, 1);
        let fam = ProjectionFamily::build(a.view(), &[]).unwrap();
        let v = a.column(0);
        assert!(fam.apply(2, v).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn inactive_index_uses_base_projection() {
        let a = randn(20, 6, 2);
        let fam = ProjectionFamily::build(a.view(), &[0, 2, 5]).unwrap();
        let v = randn(20, 1, 3).column(0).to_owned();
        assert_eq!(fam.apply(3, v.view()), fam.apply_base(v.view()));
    }

    #[test]
    fn matches_direct_factorization_and_is_idempotent() {
        let a = randn(30, 12, 4);
        let active = [1, 3, 4, 7, 8, 11];
        let fam = ProjectionFamily::build(a.view(), &active).unwrap();
        let probes = randn(30, 5, 5);
        for j in 0..12 {
            let cols: Vec<usize> = active.iter().copied().filter(|&l| l != j).collect();
            for v in probes.axis_iter(Axis(1)) {
                let got = fam.apply(j, v);
                let want = direct_projection(a.view(), &cols, v);
                let err = linalg::max_abs((&got - &want).view());
                assert!(err < 1e-10, "j={j} err={err:e}");
                let twice = fam.apply(j, got.view());
                assert!(linalg::max_abs((&twice - &got).view()) < 1e-10);
            }
            let batch = fam.apply_mat(j, probes.view());
            for (b, v) in batch.axis_iter(Axis(1)).zip(probes.axis_iter(Axis(1))) {
                assert!(linalg::max_abs((&b - &fam.apply(j, v)).view()) < 1e-12);
            }
            let cc = fam.column_complement(j, a.column(j));
            let want = fam.complement(j, a.column(j));
            assert!(linalg::max_abs((&cc - &want).view()) < 1e-10);
        }
    }

    #[test]
    fn singular_block_names_column() {
        let mut a = randn(10, 4, 6);
        let c0 = a.column(0).to_owned();
        a.column_mut(3).assign(&c0);
        match ProjectionFamily::build(a.view(), &[0, 1, 3]) {
            Err(Error::NotPositiveDefinite { pivot, .. }) => assert_eq!(pivot, 3),
            other => panic!("expected failure, got {other:?}"),
        }
    }
}
