mod common;

use colupdate_core::debias::{self, gaussian_denominator_check};
use colupdate_core::{debias_classic, debias_generalized, solve_lasso, LassoProblem, ProjectionFamily, Residualizer, SolverOptions};
use common::*;
use ndarray::{array, Array1, Array2};

fn fit(a: &Array2<f64>, y: &Array1<f64>, lambda: f64) -> colupdate_core::LassoFit {
    solve_lasso(&LassoProblem::new(a.view(), y.view(), lambda).unwrap(), &SolverOptions::default()).unwrap()
}

#[test]
fn ols_residualizer_recovers_least_squares() {
    let (n, p) = (200, 50);
    let a = randn(n, p, 11);
    let y = a.dot(&randn_vec(p, 12)) + randn_vec(n, 13);
    let ols = least_squares(a.view(), y.view());
    for lambda in [0.0, 0.05, 0.3] {
        let f = fit(&a, &y, lambda);
        let res = debias_generalized(a.view(), y.view(), &f, &Residualizer::OlsProjection).unwrap();
        for j in 0..p {
            assert!((res.alpha_u[j] - ols[j]).abs() < 1e-8, "λ {lambda} j {j}");
        }
    }
}

#[test]
fn orthogonal_zero_residualizer_gives_marginal_scores() {
    let (n, p) = (64, 16);
    let a = orthogonal_design(n, p, 3);
    let y = randn_vec(n, 4) * 2.0;
    let f = fit(&a, &y, 0.2);
    let res = debias_generalized(a.view(), y.view(), &f, &Residualizer::Zero).unwrap();
    let z = a.t().dot(&y) / n as f64;
    for j in 0..p {
        assert!((res.alpha_u[j] - z[j]).abs() < 1e-10);
        assert!((res.denominators[j] - 1.0).abs() < 1e-10);
    }
}

#[test]
fn projection_family_matches_direct_projection() {
    let a = randn(40, 10, 21);
    let active = [1, 3, 4, 8];
    let fam = ProjectionFamily::build(a.view(), &active).unwrap();
    for probe in 0..5 {
        let v = randn_vec(40, 100 + probe);
        let base = project(a.view(), &active, v.view());
        assert!(max_abs((&fam.apply_base(v.view()) - &base).iter().copied()) < 1e-10);
        for j in 0..10 {
            let cols: Vec<usize> = active.iter().copied().filter(|&l| l != j).collect();
            let direct = project(a.view(), &cols, v.view());
            assert!(max_abs((&fam.apply(j, v.view()) - &direct).iter().copied()) < 1e-10);
            let m = randn(40, 3, probe * 7 + j as u64);
            let pm = fam.apply_mat(j, m.view());
            for c in 0..3 {
                let d = project(a.view(), &cols, m.column(c));
                assert!(max_abs((&pm.column(c) - &d).iter().copied()) < 1e-10);
            }
            let comp = fam.column_complement(j, a.column(j));
            let d = &a.column(j) - &project(a.view(), &cols, a.column(j));
            assert!(max_abs((&comp - &d).iter().copied()) < 1e-10);
        }
    }
}

#[test]
fn gaussian_two_by_two_centering() {
    let rho = 0.6;
    let sigma = array![[1.0, rho], [rho, 1.0]];
    let theta = colupdate_core::linalg::spd_inverse(sigma.view()).unwrap();
    let a = randn(30, 2, 5);
    let (mu, checked) = Residualizer::gaussian(theta).unwrap().residual_column(a.view(), 0).unwrap();
    let expect = a.column(1).mapv(|x| rho * x);
    assert!(max_abs((&mu - &expect).iter().copied()) < 1e-12);
    assert!(max_abs((&checked - &(&a.column(0) - &expect)).iter().copied()) < 1e-12);
}

#[test]
fn residualizer_matrix_agrees_with_columns() {
    let a = randn(25, 6, 8);
    let theta = ar1_model(6, 0.4).theta;
    for r in [Residualizer::Zero, Residualizer::OlsProjection, Residualizer::gaussian(theta).unwrap()] {
        let m = r.checked_matrix(a.view()).unwrap();
        for j in 0..6 {
            let (_, c) = r.residual_column(a.view(), j).unwrap();
            assert!(max_abs((&m.column(j) - &c).iter().copied()) < 1e-10);
        }
    }
}

#[test]
fn t_reconstructs_from_debiased() {
    let a = randn(80, 30, 31);
    let y = randn_vec(80, 32);
    let f = fit(&a, &y, 0.15);
    let res = debias_generalized(a.view(), y.view(), &f, &Residualizer::gaussian(ar1_model(30, 0.3).theta).unwrap()).unwrap();
    for j in 0..30 {
        if !res.degenerate[j] {
            assert!((res.t_stats[j] - res.denominators[j] * res.alpha_u[j]).abs() < 1e-10);
        }
    }
}

#[test]
fn classic_matches_direct_formula() {
    let (n, p) = (60, 12);
    let a = randn(n, p, 41);
    let y = randn_vec(n, 42);
    let f = fit(&a, &y, 0.1);
    let theta = ar1_model(p, 0.5).theta;
    let got = debias_classic(&f, a.view(), y.view(), theta.view()).unwrap();
    let r = &y - &a.dot(&f.coefficients);
    let expect = &f.coefficients + &(theta.dot(&a.t().dot(&r)) / (n - f.k) as f64);
    assert!(max_abs((&got - &expect).iter().copied()) < 1e-12);
    // Identity precision on an orthogonal design with λ = 0 leaves OLS untouched.
    let o = orthogonal_design(n, p, 43);
    let f0 = fit(&o, &y, 0.0);
    let same = debias_classic(&f0, o.view(), y.view(), Array2::eye(p).view()).unwrap();
    assert!(max_abs((&same - &f0.coefficients).iter().copied()) < 1e-10);
    // Non-symmetric precision is rejected.
    let mut bad = Array2::<f64>::eye(p);
    bad[[0, 1]] = 0.5;
    assert!(debias_classic(&f, a.view(), y.view(), bad.view()).is_err());
}

#[test]
fn denominator_check_scales_with_variance() {
    let a = randn(100, 20, 51);
    let y = randn_vec(100, 52);
    let f = fit(&a, &y, 0.2);
    let res = debias_generalized(a.view(), y.view(), &f, &Residualizer::Zero).unwrap();
    let shrink = 1.0 - f.k as f64 / 100.0;
    let exact: Array1<f64> = res.denominators.mapv(|d| d / shrink);
    let ok = gaussian_denominator_check(&res, &f, exact.view()).unwrap();
    assert!(ok.max < 1e-12);
    assert_eq!(ok.fraction_within(0.1), 1.0);
    let doubled = exact.mapv(|v| 2.0 * v);
    let off = gaussian_denominator_check(&res, &f, doubled.view()).unwrap();
    assert!((off.median - 0.5).abs() < 1e-12);
    assert_eq!(off.fraction_within(0.1), 0.0);
}

#[test]
fn degenerate_floor() {
    assert!(debias::is_degenerate(0.0, 1.0, 10));
    assert!(debias::is_degenerate(f64::NAN, 1.0, 10));
    assert!(!debias::is_degenerate(1e-3, 1.0, 10));
}
