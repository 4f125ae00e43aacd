//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Run with `cargo test --release -p colupdate-bench --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use colupdate_bench::config::{DiagConfig, EngineChoice, FdrBenchConfig, LambdaRule, Method, UpdateErrorConfig};
use colupdate_bench::experiments::update_error::{self, run_replicate, UpdateScenario};
use colupdate_bench::experiments::{diag, fdr};
use colupdate_core::debias::gaussian_denominator_check;
use colupdate_core::design::{self, CoefficientSpec, GaussianDesignModel};
use colupdate_core::lasso::{self, kkt_report, Gram, LassoFit, LassoProblem, SolverOptions};
use colupdate_core::update::{exact_update_oracle, update_t_approx, UpdateMode};
use colupdate_core::{debias_generalized, ProjectionFamily, Residualizer, Substream};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

const ORTHO_TOL: f64 = 1e-8;
const OLS_TOL: f64 = 1e-8;
const PROJECTION_TOL: f64 = 1e-10;
const KKT_TOL: f64 = 1e-8;
const UPDATE_ERROR_MAX: f64 = 0.02;
const UPDATE_RATIO_MIN: f64 = 20.0;
const THREE_POINT_MAX: f64 = 0.05;
const CRT_FDR_MAX: f64 = 0.15;
const LOCAL_FDR_MAX: f64 = 0.20;
const POWER_MIN: f64 = 0.9;
const SEPARATION_FACTOR: f64 = 5.0;
const KNOCKOFF_POWER_MAX: f64 = 0.1;
const DIAG_FRACTION_MIN: f64 = 3.0 / 5.0;
const DENOM_GAP: f64 = 0.1;
const DENOM_FRACTION_MIN: f64 = 0.9;
const PEARSON_MIN: f64 = 0.99;

const SEED: u64 = 20240611;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn randn(rows: usize, cols: usize, stream: Substream) -> Array2<f64> {
    design::standard_normal_matrix(rows, cols, &mut stream.rng())
}

fn to_na(a: ArrayView2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Least squares through nalgebra's SVD, independent of the crate's linear algebra.
fn least_squares(a: ArrayView2<f64>, y: ArrayView1<f64>) -> Array1<f64> {
    let ym = DMatrix::from_iterator(y.len(), 1, y.iter().copied());
    let sol = to_na(a).svd(true, true).solve(&ym, 1e-14).expect("svd solve");
    sol.column(0).iter().copied().collect()
}

fn project(a: ArrayView2<f64>, cols: &[usize], v: ArrayView1<f64>) -> Array1<f64> {
    if cols.is_empty() {
        return Array1::zeros(v.len());
    }
    let sub = a.select(Axis(1), cols);
    sub.dot(&least_squares(sub.view(), v))
}

fn orthogonal_design(n: usize, p: usize, stream: Substream) -> Array2<f64> {
    let q = to_na(randn(n, p, stream).view()).qr().q();
    Array2::from_shape_fn((n, p), |(i, j)| q[(i, j)] * (n as f64).sqrt())
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn solve(a: ArrayView2<f64>, y: ArrayView1<f64>, lambda: f64) -> LassoFit {
    lasso::solve_lasso(&LassoProblem::new(a, y, lambda).unwrap(), &SolverOptions::default()).unwrap()
}

/// ψ recomputed from the fit must equal the stored subgradient bit for bit.
fn kkt_ok(a: ArrayView2<f64>, y: ArrayView1<f64>, fit: &LassoFit) -> Result<f64, String> {
    let n = a.nrows() as f64;
    let psi = a.t().dot(&fit.residual) / (n * fit.lambda);
    if psi != fit.subgradient {
        return Err("stored ψ differs from AᵀR/(nλ)".into());
    }
    let excess = max_abs(psi.iter().copied()) - 1.0;
    if excess > KKT_TOL {
        return Err(format!("‖ψ‖∞ − 1 = {excess:e}"));
    }
    let pb = LassoProblem::new(a, y, fit.lambda).unwrap();
    Ok(kkt_report(&pb, fit).unwrap().worst())
}

fn universal(n: usize, p: usize, sd: f64) -> f64 {
    LambdaRule::Universal(1.0).resolve(sd, n, p, 0.0)
}

fn c1_orthogonal() -> Outcome {
    let (n, p) = (128, 64);
    let mut worst = 0.0f64;
    for inst in 0..20u64 {
        let root = Substream::new(SEED, 1, inst, 0);
        let a = orthogonal_design(n, p, root.child(1, 0));
        let beta: Array1<f64> = (0..p).map(|j| if j < 8 { 1.0 } else { 0.0 }).collect();
        let y = a.dot(&beta) + randn(n, 1, root.child(2, 0)).column(0);
        let lambda = universal(n, p, 1.0);
        let fit = solve(a.view(), y.view(), lambda);
        let j = (inst as usize * 7) % p;
        let others: Vec<usize> = (0..p).filter(|&l| l != j).collect();
        let g = randn(n, 1, root.child(3, 0)).column(0).to_owned();
        let scale = 0.25 + inst as f64 * 0.2;
        let b = (&g - &project(a.view(), &others, g.view())) * scale;
        let zero = Array1::zeros(n);
        let approx = update_t_approx(&fit, a.view(), j, b.view(), &Residualizer::Zero, UpdateMode::Full).unwrap();
        let exact = exact_update_oracle(a.view(), y.view(), lambda, j, b.view(), zero.view(), &fit, None, &SolverOptions::default()).unwrap();
        worst = worst.max((approx - exact.t).abs());
    }
    outcome(worst <= ORTHO_TOL, format!("max |t approx − exact| = {worst:.2e} over 20 instances"))
}

fn c2_ols() -> Outcome {
    let (n, p) = (200, 50);
    let root = Substream::new(SEED, 2, 0, 0);
    let a = randn(n, p, root.child(1, 0));
    let beta: Array1<f64> = (0..p).map(|j| if j % 5 == 0 { 0.5 } else { 0.0 }).collect();
    let y = a.dot(&beta) + randn(n, 1, root.child(2, 0)).column(0);
    let fit = solve(a.view(), y.view(), universal(n, p, 1.0));
    let res = debias_generalized(a.view(), y.view(), &fit, &Residualizer::OlsProjection).unwrap();
    let ols = least_squares(a.view(), y.view());
    let gap = max_abs((&res.alpha_u - &ols).iter().copied());
    outcome(gap <= OLS_TOL, format!("‖α̂ᵁ − OLS‖∞ = {gap:.2e}"))
}

fn c3_projection() -> Outcome {
    let (n, p, size) = (120, 80, 40);
    let root = Substream::new(SEED, 3, 0, 0);
    let a = randn(n, p, root.child(1, 0));
    let active: Vec<usize> = (0..size).map(|i| 2 * i).collect();
    let fam = ProjectionFamily::build(a.view(), &active).unwrap();
    let probes = randn(n, 50, root.child(2, 0));
    let mut worst = 0.0f64;
    for j in 0..p {
        let cols: Vec<usize> = active.iter().copied().filter(|&l| l != j).collect();
        let fast = fam.apply_mat(j, probes.view());
        for (c, v) in probes.axis_iter(Axis(1)).enumerate() {
            let direct = project(a.view(), &cols, v);
            worst = worst.max(max_abs((&fast.column(c) - &direct).iter().copied()));
        }
    }
    outcome(worst <= PROJECTION_TOL, format!("max discrepancy {worst:.2e} over {p} coordinates × 50 probes"))
}

/// KKT over a grid of designs, penalties and exact refits.
fn c4_kkt(update_kkt: f64) -> Outcome {
    let mut worst = update_kkt;
    let mut fits = 0usize;
    for (gi, &(n, p, rho)) in [(50, 20, 0.0), (100, 300, 0.5), (200, 100, 0.95), (80, 80, 0.3)].iter().enumerate() {
        let root = Substream::new(SEED, 4, gi as u64, 0);
        let model = GaussianDesignModel::from_covariance(design::ar1_covariance(p, rho).unwrap()).unwrap();
        let a = design::sample_design(n, &model, &mut root.child(1, 0).rng());
        let truth = design::sparse_coefficients(p, p / 10, CoefficientSpec::GaussianSupport, &mut root.child(2, 0).rng()).unwrap();
        let y = design::generate_response(a.view(), truth.coefficients.view(), 1.0, &mut root.child(3, 0).rng()).unwrap();
        let gram = Gram::new(a.view(), y.view());
        let grid = lasso::lambda_grid(lasso::lambda_max(a.view(), y.view()), 0.01, 15);
        let mut warm: Option<Array1<f64>> = None;
        for &lambda in &grid {
            let pb = LassoProblem::new(a.view(), y.view(), lambda).unwrap();
            let opts = SolverOptions { warm_start: warm.take(), ..SolverOptions::default() };
            let fit = lasso::solve_lasso_with_gram(&pb, &gram, &opts).unwrap();
            match kkt_ok(a.view(), y.view(), &fit) {
                Ok(w) => worst = worst.max(w),
                Err(e) => return outcome(false, format!("n={n} p={p} λ={lambda:.3e}: {e}")),
            }
            fits += 1;
            warm = Some(fit.coefficients.clone());
        }
    }
    outcome(worst <= KKT_TOL, format!("worst KKT diagnostic {worst:.2e} over {fits} grid fits and all update-error refits"))
}

fn c5_update_error() -> (Outcome, f64) {
    let cfg = UpdateErrorConfig {
        scales: vec![1.0],
        rhos: vec![0.95],
        reps: 3,
        percoord: false,
        ..UpdateErrorConfig::default()
    };
    let out = update_error::run(&cfg, SEED).unwrap();
    let mean = |metric: &str| out.rows.iter().find(|r| r.metric == metric).map(|r| r.value).unwrap();
    let debiased = mean("debiased_error");
    let ratio = mean("lasso_error") / debiased;
    (
        outcome(
            debiased <= UPDATE_ERROR_MAX && ratio >= UPDATE_RATIO_MIN,
            format!("debiased error {debiased:.5}, lasso/debiased ratio {ratio:.1} (3 seeds)"),
        ),
        out.kkt_worst,
    )
}

fn c6_three_point() -> (Outcome, f64) {
    let cfg = UpdateErrorConfig {
        scales: vec![0.9],
        xis: vec![0.5, 0.1],
        reps: 2,
        percoord: false,
        ..UpdateErrorConfig::default()
    };
    let out = update_error::run(&cfg, SEED).unwrap();
    let errs: Vec<(f64, f64)> = out
        .rows
        .iter()
        .filter(|r| r.metric == "debiased_error")
        .map(|r| (r.param2.parse().unwrap(), r.value))
        .collect();
    let pass = errs.len() == 2 && errs.iter().all(|e| e.1 <= THREE_POINT_MAX);
    let detail = errs.iter().map(|(xi, e)| format!("ξ={xi}: {e:.5}")).collect::<Vec<_>>().join(", ");
    (outcome(pass, format!("debiased error {detail}")), out.kkt_worst)
}

fn c7_fdr() -> Outcome {
    let cfg = FdrBenchConfig {
        methods: vec![Method::CrtDb, Method::LocalKnockoffDb],
        reps: 20,
        ..FdrBenchConfig::default()
    };
    let out = fdr::run(&cfg, SEED).unwrap();
    let (cf, cp) = out.summary(Method::CrtDb).unwrap();
    let (lf, lp) = out.summary(Method::LocalKnockoffDb).unwrap();
    let pass = out.dropped.is_empty() && cf <= CRT_FDR_MAX && cp >= POWER_MIN && lf <= LOCAL_FDR_MAX && lp >= POWER_MIN;
    outcome(
        pass,
        format!("crt-db FDR {cf:.3} power {cp:.3}; local-knockoff-db FDR {lf:.3} power {lp:.3}"),
    )
}

fn c8_separation() -> Outcome {
    let cfg = FdrBenchConfig {
        n: 600,
        p: 1000,
        s: 200,
        a_val: 0.6,
        methods: vec![Method::Knockoff, Method::LocalKnockoff],
        reps: 10,
        ..FdrBenchConfig::default()
    };
    let out = fdr::run(&cfg, SEED).unwrap();
    let (_, kp) = out.summary(Method::Knockoff).unwrap();
    let (_, lp) = out.summary(Method::LocalKnockoff).unwrap();
    outcome(
        out.dropped.is_empty() && lp >= SEPARATION_FACTOR * kp && kp <= KNOCKOFF_POWER_MAX,
        format!("local-knockoff power {lp:.3}, knockoff power {kp:.3}"),
    )
}

fn c9_diag() -> Outcome {
    let (_, cases) = diag::run(&DiagConfig::default()).unwrap();
    let pass = cases.len() == 4 && cases.iter().all(|c| c.diagnostic.fraction_above >= DIAG_FRACTION_MIN);
    let detail = cases
        .iter()
        .map(|c| format!("{} p={}: {:.3}", c.setting, c.p, c.diagnostic.fraction_above))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn c10_denominator() -> Outcome {
    let (n, p, s) = (800, 1000, 400);
    let root = Substream::new(SEED, 10, 0, 0);
    let model = GaussianDesignModel::from_covariance(design::ar1_covariance(p, 0.5).unwrap()).unwrap();
    let a = design::sample_design(n, &model, &mut root.child(1, 0).rng());
    let truth = design::sparse_coefficients(p, s, CoefficientSpec::GaussianSupport, &mut root.child(2, 0).rng()).unwrap();
    let noise = 0.01 * n as f64;
    let y = design::generate_response(a.view(), truth.coefficients.view(), noise, &mut root.child(3, 0).rng()).unwrap();
    let fit = solve(a.view(), y.view(), universal(n, p, noise.sqrt()));
    let res = Residualizer::gaussian(model.theta.clone()).unwrap();
    let debiased = debias_generalized(a.view(), y.view(), &fit, &res).unwrap();
    let condvar = model.theta.diag().mapv(|t| 1.0 / t);
    let gaps = gaussian_denominator_check(&debiased, &fit, condvar.view()).unwrap();
    let frac = gaps.fraction_within(DENOM_GAP);
    outcome(
        frac >= DENOM_FRACTION_MIN,
        format!("{:.1}% within {DENOM_GAP} (k = {}, median gap {:.4})", 100.0 * frac, fit.k, gaps.median),
    )
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let m = pairs.len() as f64;
    let (mx, my) = (pairs.iter().map(|p| p.0).sum::<f64>() / m, pairs.iter().map(|p| p.1).sum::<f64>() / m);
    let sxy: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = pairs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|(_, y)| (y - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

fn c11_pearson() -> (Outcome, f64) {
    let sc = UpdateScenario {
        n: 200,
        p: 120,
        s: 48,
        rho: 0.5,
        xi: None,
        noise_variance: 2.0,
        lambda: LambdaRule::Universal(1.0),
        coords: 20,
    };
    let mut pairs = Vec::new();
    let mut kkt = 0.0f64;
    for seed in 0..10u64 {
        let res = run_replicate(&sc, Substream::new(SEED, 11, 0, seed)).unwrap();
        kkt = kkt.max(res.kkt_worst);
        pairs.extend(res.coords.iter().filter_map(|c| Some((c.approx_debiased?, c.exact_debiased?))));
    }
    let r = pearson(&pairs);
    (outcome(r >= PEARSON_MIN, format!("Pearson {r:.5} over {} pairs", pairs.len())), kkt)
}

fn c12_counters() -> Outcome {
    let approx = FdrBenchConfig {
        n: 100,
        p: 40,
        s: 5,
        reps: 3,
        crt_resamples: 50,
        methods: vec![Method::LocalKnockoff, Method::LocalKnockoffDb, Method::Crt, Method::CrtDb],
        ..FdrBenchConfig::default()
    };
    let out = fdr::run(&approx, SEED).unwrap();
    let approx_ok = approx.methods.iter().all(|&m| out.lasso_solves(m) == vec![1; approx.reps]);
    let (p, k) = (12, 4);
    let exact = FdrBenchConfig {
        n: 60,
        p,
        s: 3,
        reps: 1,
        crt_resamples: k,
        engine: EngineChoice::Exact,
        methods: vec![Method::LocalKnockoffDb, Method::CrtDb],
        ..FdrBenchConfig::default()
    };
    let ex = fdr::run(&exact, SEED).unwrap();
    let lk = ex.lasso_solves(Method::LocalKnockoffDb);
    let crt = ex.lasso_solves(Method::CrtDb);
    let exact_ok = lk == vec![1 + p] && crt == vec![1 + p * k];
    outcome(
        approx_ok && exact_ok,
        format!("approx: 1 per replicate; exact (p={p}, K={k}): local-knockoff {lk:?}, crt {crt:?}"),
    )
}

fn main() -> ExitCode {
    let mut failures = 0;
    let mut report = |id: usize, name: &str, (o, secs): (Outcome, f64)| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {} ({secs:.1}s)", o.detail);
        if !o.pass {
            failures += 1;
        }
    };
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let o = f();
        (o, t.elapsed().as_secs_f64())
    };
    let timed_kkt = |f: &dyn Fn() -> (Outcome, f64)| {
        let t = Instant::now();
        let (o, k) = f();
        ((o, t.elapsed().as_secs_f64()), k)
    };

    report(1, "orthogonal-design exactness", timed(&c1_orthogonal));
    report(2, "OLS reduction", timed(&c2_ols));
    report(3, "projection family vs direct", timed(&c3_projection));
    let (r5, k5) = timed_kkt(&c5_update_error);
    let (r6, k6) = timed_kkt(&c6_three_point);
    let (r11, k11) = timed_kkt(&c11_pearson);
    report(4, "KKT suite", timed(&|| c4_kkt(k5.max(k6).max(k11))));
    report(5, "update error (alpha=1, rho=0.95)", r5);
    report(6, "three-point design", r6);
    report(7, "FDR bench (n=200, p=300, s=20)", timed(&c7_fdr));
    report(8, "power separation (n=600, p=1000, s=200)", timed(&c8_separation));
    report(9, "knockoff precision diagonals", timed(&c9_diag));
    report(10, "Gaussian denominator check", timed(&c10_denominator));
    report(11, "approx vs exact Pearson", r11);
    report(12, "Lasso-solve counters", timed(&c12_counters));

    println!("acceptance: {} of 12 criteria passed", 12 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
