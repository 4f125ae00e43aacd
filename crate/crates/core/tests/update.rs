mod common;

use colupdate_core::update::{update_debias_approx, update_lasso_approx, update_t_approx};
use colupdate_core::{
    exact_update_oracle, normalized_update_error, sign_change_count, solve_lasso, ColumnUpdater, DebiasContext,
    LassoFit, LassoProblem, Residualizer, SolverOptions, UpdateMode,
};
use common::*;
use ndarray::{Array1, Array2};

fn fit(a: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> LassoFit {
    solve_lasso(&LassoProblem::new(a.view(), y.view(), lambda).unwrap(), &SolverOptions::default()).unwrap()
}

#[test]
fn unchanged_column_reproduces_base_statistics() {
    let a = randn(90, 30, 1);
    let y = a.column(0).mapv(|x| 2.0 * x) + randn_vec(90, 2);
    let f = fit(&a, &y, 0.1);
    let res = Residualizer::gaussian(ar1_model(30, 0.2).theta).unwrap();
    let base = colupdate_core::debias_generalized(a.view(), y.view(), &f, &res).unwrap();
    let ctx = DebiasContext::new(a.view(), &f, &res).unwrap();
    let up = ColumnUpdater::new(a.view(), &f, &ctx).unwrap();
    for j in 0..30 {
        let c = up.coordinate(j).unwrap();
        let v = c.evaluate(a.column(j)).unwrap();
        assert!((v.t - base.t_stats[j]).abs() < 1e-10);
        if let Some(d) = v.debiased {
            assert!((d - base.alpha_u[j]).abs() < 1e-8);
        }
        assert!((v.lasso.unwrap() - f.coefficients[j]).abs() < 1e-8, "j {j}");
    }
}

#[test]
fn orthogonal_replacement_is_exact() {
    let (n, p) = (128, 64);
    for seed in 0..4u64 {
        let a = orthogonal_design(n, p, seed);
        let y = a.column(0).mapv(|x| 1.5 * x) + randn_vec(n, 50 + seed);
        let lambda = 0.1;
        let f = fit(&a, &y, lambda);
        for j in [0usize, 5, 63] {
            let others: Vec<usize> = (0..p).filter(|&l| l != j).collect();
            let g = randn_vec(n, 900 + seed * 10 + j as u64);
            let scale = 0.3 + 2.0 * seed as f64;
            let b = (&g - &project(a.view(), &others, g.view())) * scale;
            let zero = Array1::zeros(n);
            let exact = exact_update_oracle(a.view(), y.view(), lambda, j, b.view(), zero.view(), &f, None, &SolverOptions::default()).unwrap();
            let lasso = update_lasso_approx(&f, a.view(), j, b.view()).unwrap();
            let t = update_t_approx(&f, a.view(), j, b.view(), &Residualizer::Zero, UpdateMode::Full).unwrap();
            let db = update_debias_approx(&f, a.view(), j, b.view(), &Residualizer::Zero, UpdateMode::Full).unwrap();
            assert!((lasso - exact.lasso).abs() < 1e-8);
            assert!((t - exact.t).abs() < 1e-8);
            assert!((db - exact.debiased.unwrap()).abs() < 1e-8);
            // Closed form of the decoupled problem.
            let nb = b.dot(&b) / n as f64;
            let closed = colupdate_core::soft_threshold(b.dot(&y) / n as f64, lambda) / nb;
            assert!((exact.lasso - closed).abs() < 1e-8);
        }
    }
}

#[test]
fn dropped_mode_differs_by_cross_term() {
    let (n, p) = (100, 25);
    let a = randn(n, p, 7);
    let y = a.column(2).mapv(|x| 3.0 * x) + randn_vec(n, 8);
    let f = fit(&a, &y, 0.1);
    let res = Residualizer::gaussian(ar1_model(p, 0.4).theta).unwrap();
    let ctx = DebiasContext::new(a.view(), &f, &res).unwrap();
    let up = ColumnUpdater::new(a.view(), &f, &ctx).unwrap();
    for j in 0..p {
        let c = up.coordinate(j).unwrap();
        let b = randn_vec(n, 300 + j as u64);
        let full = c.t(b.view(), UpdateMode::Full).unwrap();
        let dropped = c.t(b.view(), UpdateMode::Dropped).unwrap();
        let cols: Vec<usize> = f.active_set.iter().copied().filter(|&l| l != j).collect();
        let comp = &a.column(j) - &project(a.view(), &cols, a.column(j));
        let checked = &b - &ctx.centering(a.view(), j);
        let cross = checked.dot(&comp) / n as f64 * f.coefficients[j];
        assert!((full - dropped - cross).abs() < 1e-10);
        if f.coefficients[j] == 0.0 {
            assert_eq!(full, dropped);
        }
    }
}

#[test]
fn sign_change_counts() {
    let a = randn(50, 15, 9);
    let y = randn_vec(50, 10);
    let f = fit(&a, &y, 0.05);
    assert_eq!(sign_change_count(&f, &f).unwrap(), 0);
    // Orthogonal design: replacing column j only touches coordinate j.
    let o = orthogonal_design(64, 16, 2);
    let y = o.column(3).mapv(|x| 2.0 * x) + randn_vec(64, 3);
    let fo = fit(&o, &y, 0.1);
    let others: Vec<usize> = (0..16).filter(|&l| l != 3).collect();
    let g = randn_vec(64, 4);
    let b = &g - &project(o.view(), &others, g.view());
    let zero = Array1::zeros(64);
    let ex = exact_update_oracle(o.view(), y.view(), 0.1, 3, b.view(), zero.view(), &fo, None, &SolverOptions::default()).unwrap();
    assert!(sign_change_count(&fo, &ex.fit).unwrap() <= 1);
}

#[test]
fn normalized_error_examples() {
    assert_eq!(normalized_update_error(&[(1.0, 1.0), (2.0, 2.0)]).unwrap(), 0.0);
    assert_eq!(normalized_update_error(&[(2.0, 1.0)]).unwrap(), 1.0);
    assert!((normalized_update_error(&[(1.0, 2.0), (0.0, 0.0)]).unwrap() - 0.25).abs() < 1e-15);
    assert!(normalized_update_error(&[]).is_err());
    assert!(normalized_update_error(&[(1.0, 0.0)]).is_err());
}
