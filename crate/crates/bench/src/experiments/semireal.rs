//! Semi-synthetic benchmark on a user-supplied design: fit the observed
//! response by cross-validated Lasso, then regenerate responses with the fitted
//! coefficients as ground truth.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use colupdate_core::design::{self, GaussianDesignModel};
use colupdate_core::lasso::{self, LassoProblem, SolverOptions};
use colupdate_core::linalg;
use colupdate_core::rng::{tag, Substream};
use colupdate_core::Residualizer;
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::config::{FdrBenchConfig, Method, SemiRealConfig};
use crate::error::{BenchError, Result};
use crate::experiments::fdr::{self, FdrModel, RepData};
use crate::output::TableRow;

const CV_GRID_LEN: usize = 30;
const CV_GRID_RATIO: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct Table {
    pub matrix: Array2<f64>,
    pub names: Vec<String>,
}

/// Read a rectangular numeric CSV. Rows and columns in errors are 1-based
/// positions in the file.
pub fn ingest_csv(path: &Path, has_header: bool, standardize: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| read_error(path, e))?;
    let mut names: Vec<String> = if has_header {
        reader
            .headers()
            .map_err(|e| read_error(path, e))?
            .iter()
            .map(str::to_string)
            .collect()
    } else {
        Vec::new()
    };
    let mut values = Vec::new();
    let mut width = if has_header { Some(names.len()) } else { None };
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| read_error(path, e))?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(rows + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            Some(w) if w != record.len() => {
                return Err(BenchError::Csv {
                    path: path.to_path_buf(),
                    row: line,
                    column: record.len().min(w) + 1,
                    message: format!("expected {w} fields, found {}", record.len()),
                });
            }
            None => width = Some(record.len()),
            _ => {}
        }
        for (c, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| BenchError::Csv {
                path: path.to_path_buf(),
                row: line,
                column: c + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(BenchError::Csv {
                    path: path.to_path_buf(),
                    row: line,
                    column: c + 1,
                    message: "non-finite value".into(),
                });
            }
            values.push(v);
        }
        rows += 1;
    }
    let width = width.unwrap_or(0);
    if rows == 0 || width == 0 {
        return Err(BenchError::validation(format!("{} holds no data rows", path.display())));
    }
    if names.is_empty() {
        names = (1..=width).map(|c| format!("V{c}")).collect();
    }
    let mut matrix = Array2::from_shape_vec((rows, width), values).map_err(|e| BenchError::validation(e.to_string()))?;
    if standardize {
        standardize_columns(&mut matrix, &names)?;
    }
    Ok(Table { matrix, names })
}

fn read_error(path: &Path, e: csv::Error) -> BenchError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => BenchError::Read {
            path: path.to_path_buf(),
            source,
        },
        other => BenchError::Csv {
            path: path.to_path_buf(),
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}

/// Center every column and scale it to unit sample variance (divisor `n − 1`).
pub fn standardize_columns(matrix: &mut Array2<f64>, names: &[String]) -> Result<()> {
    let n = matrix.nrows();
    if n < 2 {
        return Err(BenchError::validation("standardization needs at least two rows"));
    }
    for (c, mut col) in matrix.axis_iter_mut(Axis(1)).enumerate() {
        let mean = col.sum() / n as f64;
        col -= mean;
        let var = col.dot(&col) / (n - 1) as f64;
        if !(var > 0.0) {
            let name = names.get(c).cloned().unwrap_or_else(|| format!("#{}", c + 1));
            return Err(BenchError::validation(format!("column {name} has zero variance")));
        }
        col /= var.sqrt();
    }
    Ok(())
}

/// Absolute sample correlations.
fn abs_correlation(matrix: ArrayView2<f64>) -> Array2<f64> {
    let n = matrix.nrows();
    let mut centered = matrix.to_owned();
    for mut col in centered.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n as f64;
        col -= mean;
        let norm = col.dot(&col).sqrt();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let mut r = linalg::gram(centered.view());
    r.mapv_inplace(f64::abs);
    r
}

/// Greedy pruning: while some pair of kept columns has absolute correlation
/// above `cutoff`, drop the member of the worst pair with the larger mean
/// absolute correlation to the other kept columns (the larger index on ties).
pub fn prune_correlated(matrix: ArrayView2<f64>, cutoff: f64) -> Result<Vec<usize>> {
    if !(cutoff > 0.0 && cutoff < 1.0) {
        return Err(BenchError::validation(format!("cutoff must be in (0, 1), got {cutoff}")));
    }
    let p = matrix.ncols();
    let r = abs_correlation(matrix);
    let mut kept = vec![true; p];
    let mut m = p;
    let mut row_sum: Vec<f64> = (0..p).map(|i| r.row(i).sum() - r[[i, i]]).collect();
    // Per column: strongest partner among kept columns (first index on ties).
    let partner = |i: usize, kept: &[bool]| -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..p {
            if j != i && kept[j] && best.is_none_or(|(_, v)| r[[i, j]] > v) {
                best = Some((j, r[[i, j]]));
            }
        }
        best
    };
    let mut best: Vec<Option<(usize, f64)>> = (0..p).map(|i| partner(i, &kept)).collect();
    loop {
        let mut worst: Option<(usize, usize, f64)> = None;
        for i in 0..p {
            if !kept[i] {
                continue;
            }
            if let Some((j, v)) = best[i] {
                let (a, b) = (i.min(j), i.max(j));
                let better = match worst {
                    None => true,
                    Some((wa, wb, wv)) => v > wv || (v == wv && (a, b) < (wa, wb)),
                };
                if better {
                    worst = Some((a, b, v));
                }
            }
        }
        let Some((a, b, v)) = worst else { break };
        if v <= cutoff {
            break;
        }
        let mean = |i: usize| row_sum[i] / (m - 1) as f64;
        let drop = if mean(a) > mean(b) { a } else { b };
        kept[drop] = false;
        m -= 1;
        for i in 0..p {
            if kept[i] {
                row_sum[i] -= r[[i, drop]];
                if best[i].is_some_and(|(j, _)| j == drop) {
                    best[i] = partner(i, &kept);
                }
            }
        }
        if m < 2 {
            break;
        }
    }
    Ok((0..p).filter(|&j| kept[j]).collect())
}

/// A `p × p` matrix of whitespace- or comma-separated numbers.
pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path).map_err(|source| BenchError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line_no, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .enumerate()
            .map(|(c, t)| {
                t.parse::<f64>().map_err(|_| BenchError::Csv {
                    path: path.to_path_buf(),
                    row: line_no + 1,
                    column: c + 1,
                    message: format!("not a number: {t:?}"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    let p = rows.len();
    if p == 0 || rows.iter().any(|r| r.len() != p) {
        return Err(BenchError::validation(format!("{} is not a square matrix", path.display())));
    }
    Ok(Array2::from_shape_vec((p, p), rows.concat()).expect("square"))
}

/// Shrinkage estimate `(Σ̂ + δ_s · mean diag(Σ̂) · I)⁻¹` of the precision.
pub fn shrinkage_covariance(design: ArrayView2<f64>, shrinkage: f64) -> Array2<f64> {
    let n = design.nrows();
    let mut sigma = linalg::gram(design);
    sigma /= (n - 1).max(1) as f64;
    let bump = shrinkage * sigma.diag().mean().unwrap_or(1.0);
    for j in 0..sigma.nrows() {
        sigma[[j, j]] += bump;
    }
    sigma
}

/// Noise variance `‖R‖² / (n − k)` from a Lasso fit.
pub fn noise_variance(residual: &Array1<f64>, k: usize) -> f64 {
    let n = residual.len();
    residual.dot(residual) / n.saturating_sub(k).max(1) as f64
}

/// The prepared semi-synthetic model: pruned standardized design, fitted
/// truth and Gaussian feature model.
#[derive(Debug, Clone)]
pub struct SemiRealModel {
    pub design: Array2<f64>,
    pub names: Vec<String>,
    pub kept: Vec<usize>,
    pub coefficients: Array1<f64>,
    pub support: Vec<usize>,
    pub noise_variance: f64,
    pub cv_lambda: f64,
    pub model: FdrModel,
}

pub fn prepare(cfg: &SemiRealConfig, seed: u64) -> Result<SemiRealModel> {
    cfg.validate()?;
    let path = cfg
        .csv
        .as_ref()
        .ok_or_else(|| BenchError::validation("semi-real needs a csv path"))?;
    let table = ingest_csv(path, cfg.has_header, false)?;
    let width = table.matrix.ncols();
    let yc = cfg.response_column.unwrap_or(width.saturating_sub(1));
    if yc >= width || width < 3 {
        return Err(BenchError::validation(format!(
            "response column {yc} invalid for a table with {width} columns"
        )));
    }
    let cols: Vec<usize> = (0..width).filter(|&c| c != yc).collect();
    let raw = table.matrix.select(Axis(1), &cols);
    let kept_local = prune_correlated(raw.view(), cfg.cutoff)?;
    let mut a = raw.select(Axis(1), &kept_local);
    let names: Vec<String> = kept_local.iter().map(|&c| table.names[cols[c]].clone()).collect();
    standardize_columns(&mut a, &names)?;
    let mut y = table.matrix.column(yc).to_owned();
    let y_mean = y.mean().unwrap_or(0.0);
    y -= y_mean;
    let p = a.ncols();
    if p < 2 {
        return Err(BenchError::validation("fewer than two columns survive pruning"));
    }

    let lmax = lasso::lambda_max(a.view(), y.view());
    let grid = lasso::lambda_grid(lmax, CV_GRID_RATIO, CV_GRID_LEN);
    let cv = lasso::cross_validate_lambda(a.view(), y.view(), &grid, cfg.folds, Substream::new(seed, tag::CV_FOLDS, 0, 0).mixed())?;
    let fit = lasso::solve_lasso(&LassoProblem::new(a.view(), y.view(), cv.best_lambda)?, &SolverOptions::default())?;
    let support: Vec<usize> = (0..p).filter(|&j| fit.coefficients[j] != 0.0).collect();
    let noise_variance = noise_variance(&fit.residual, fit.nnz());

    let gaussian = match &cfg.precision_file {
        Some(f) => {
            let theta = read_matrix(f)?;
            if theta.dim() != (p, p) {
                return Err(BenchError::validation(format!(
                    "precision file is {}x{} but {p} columns survive pruning",
                    theta.nrows(),
                    theta.ncols()
                )));
            }
            let sigma = linalg::spd_inverse(theta.view())?;
            GaussianDesignModel::from_parts(sigma, theta)?
        }
        None => GaussianDesignModel::from_covariance(shrinkage_covariance(a.view(), cfg.shrinkage))?,
    };
    let model = feature_model(gaussian, cfg.methods.contains(&Method::KnockoffDb))?;
    Ok(SemiRealModel {
        design: a,
        names,
        kept: kept_local.iter().map(|&c| cols[c]).collect(),
        coefficients: fit.coefficients,
        support,
        noise_variance,
        cv_lambda: cv.best_lambda,
        model,
    })
}

/// Equi-valued knockoff `s_j = min(2 λ_min(Σ), min_j Σ_jj)`, shrunk to feasibility.
fn feature_model(model: GaussianDesignModel, joint: bool) -> Result<FdrModel> {
    let p = model.p();
    let lmin = linalg::min_eigenvalue(model.sigma.view());
    let dmin = model.sigma.diag().iter().copied().fold(f64::INFINITY, f64::min);
    let s0 = Array1::from_elem(p, (2.0 * lmin).min(dmin));
    let s = design::shrink_knockoff_s(model.theta.view(), s0.view())?;
    let model = model.with_knockoff_s(s.clone())?;
    let joint_precision = if joint {
        Some(design::knockoff_joint_precision(model.theta.view(), s.view())?)
    } else {
        None
    };
    Ok(FdrModel {
        residualizer: Residualizer::gaussian(model.theta.clone())?,
        model,
        joint_precision,
    })
}

#[derive(Debug, Clone)]
pub struct SemiRealOutput {
    pub rows: Vec<TableRow>,
    pub timings: BTreeMap<String, f64>,
    pub prepared: SemiRealModel,
    pub dropped: Vec<(usize, String)>,
}

pub fn run(cfg: &SemiRealConfig, seed: u64) -> Result<SemiRealOutput> {
    let prepared = prepare(cfg, seed)?;
    let (n, p) = prepared.design.dim();
    let bench = FdrBenchConfig {
        n,
        p,
        s: prepared.support.len(),
        q: cfg.q,
        reps: cfg.reps,
        methods: cfg.methods.clone(),
        engine: cfg.engine,
        crt_resamples: cfg.crt_resamples,
        lambda: cfg.lambda,
        ..FdrBenchConfig::default()
    };
    let noise_sd = prepared.noise_variance.sqrt();
    let mut per_method: BTreeMap<usize, (String, Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut dropped = Vec::new();
    for r in 0..cfg.reps {
        let stream = Substream::new(seed, 0, 0, r as u64);
        let y = design::generate_response(
            prepared.design.view(),
            prepared.coefficients.view(),
            prepared.noise_variance,
            &mut stream.child(tag::NOISE, 0).rng(),
        )?;
        let data = RepData {
            design: prepared.design.clone(),
            response: y,
            support: prepared.support.clone(),
        };
        let res = match fdr::run_methods(&bench, &prepared.model, &data, noise_sd, stream) {
            Ok(res) => res,
            Err(BenchError::Core(e)) if !e.is_validation() => {
                dropped.push((r, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        for (i, (method, out, secs)) in res.outcomes.iter().enumerate() {
            let label = fdr::method_label(*method, cfg.engine);
            let e = per_method.entry(i).or_insert_with(|| (label, vec![], vec![], vec![]));
            e.1.push(out.fdp.unwrap_or(0.0));
            e.2.push(out.power.unwrap_or(0.0));
            e.3.push(*secs);
        }
    }
    let mut rows = Vec::new();
    let mut timings = BTreeMap::new();
    for (_, (label, fdp, power, secs)) in per_method {
        rows.push(TableRow::new("semi-real", &label, cfg.q, "fdr", &fdp));
        rows.push(TableRow::new("semi-real", &label, cfg.q, "power", &power));
        timings.insert(label, secs.iter().sum::<f64>() / secs.len() as f64);
    }
    rows.push(TableRow::new("semi-real", "data", cfg.q, "n", &[n as f64]));
    rows.push(TableRow::new("semi-real", "data", cfg.q, "p", &[p as f64]));
    rows.push(TableRow::new("semi-real", "data", cfg.q, "support", &[prepared.support.len() as f64]));
    rows.push(TableRow::new("semi-real", "data", cfg.q, "noise_variance", &[prepared.noise_variance]));
    rows.push(TableRow::new("semi-real", "data", cfg.q, "cv_lambda", &[prepared.cv_lambda]));
    rows.push(TableRow::new("semi-real", "all", cfg.q, "dropped_reps", &[dropped.len() as f64]));
    Ok(SemiRealOutput {
        rows,
        timings,
        prepared,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use std::io::Write;

    fn file(text: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(text.as_bytes()).unwrap();
        f
    }

    #[test]
    fn reads_plain_matrix() {
        let f = file("1,2\n3,4\n");
        let t = ingest_csv(f.path(), false, false).unwrap();
        assert_eq!(t.matrix, array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(t.names, vec!["V1", "V2"]);
        let f = file("a,b\r\n1,2\r\n3,4\r\n");
        assert_eq!(ingest_csv(f.path(), true, false).unwrap().names, vec!["a", "b"]);
    }

    #[test]
    fn locates_bad_cells() {
        let f = file("a,b\n1,2\n3,x\n");
        match ingest_csv(f.path(), true, false) {
            Err(BenchError::Csv { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let f = file("1,2\n3\n");
        match ingest_csv(f.path(), false, false) {
            Err(BenchError::Csv { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardizes_and_rejects_constant_columns() {
        let f = file("x,y\n1,5\n2,7\n4,8\n");
        let t = ingest_csv(f.path(), true, true).unwrap();
        for col in t.matrix.columns() {
            assert!(col.mean().unwrap().abs() < 1e-12);
            assert!((col.dot(&col) / 2.0 - 1.0).abs() < 1e-12);
        }
        let f = file("x,flat\n1,3\n2,3\n");
        let err = ingest_csv(f.path(), true, true).unwrap_err().to_string();
        assert!(err.contains("flat"), "{err}");
    }

    #[test]
    fn prunes_duplicates_only() {
        let a = array![[1.0, 1.0, 0.3], [2.0, 2.0, -1.0], [0.5, 0.5, 2.0], [-1.0, -1.0, 0.1]];
        let kept = prune_correlated(a.view(), 0.5).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.contains(&2));
        let e: Array2<f64> = array![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
        assert_eq!(prune_correlated(e.view(), 0.5).unwrap(), vec![0, 1]);
    }

    #[test]
    fn noise_estimate_uses_degrees_of_freedom() {
        let r = array![1.0, -1.0, 1.0, -1.0];
        assert_eq!(noise_variance(&r, 2), 2.0);
    }
}
