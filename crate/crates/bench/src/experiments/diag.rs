//! Knockoff-precision diagonals for near-rank-one precision matrices.

use colupdate_core::design::{knockoff_precision_diagnostic, KnockoffDiagnostic};
use ndarray::{Array1, Array2};

use crate::config::DiagConfig;
use crate::error::{BenchError, Result};
use crate::output::TableRow;

#[derive(Debug, Clone)]
pub struct DiagCase {
    pub setting: &'static str,
    pub p: usize,
    pub diagnostic: KnockoffDiagnostic,
}

/// `Θ = E` with `s_j = 1/p`, threshold `p/10`.
pub fn ones_case(p: usize, delta: f64) -> Result<KnockoffDiagnostic> {
    let theta = Array2::from_elem((p, p), 1.0);
    let s = Array1::from_elem(p, 1.0 / p as f64);
    Ok(knockoff_precision_diagnostic(theta.view(), s.view(), p as f64 / 10.0, delta)?)
}

/// `Θ = a_p E` with `s_j = 1/(p a_p)`, threshold `1/10`.
pub fn scaled_ones_case(p: usize, a_p: f64, delta: f64) -> Result<KnockoffDiagnostic> {
    let theta = Array2::from_elem((p, p), a_p);
    let s = Array1::from_elem(p, 1.0 / (p as f64 * a_p));
    Ok(knockoff_precision_diagnostic(theta.view(), s.view(), 0.1, delta)?)
}

pub fn run(cfg: &DiagConfig) -> Result<(Vec<TableRow>, Vec<DiagCase>)> {
    if cfg.ps.is_empty() || cfg.ps.iter().any(|&p| p < 2) {
        return Err(BenchError::validation("ps must list dimensions of at least 2"));
    }
    if !(cfg.delta >= 0.0 && cfg.delta.is_finite()) {
        return Err(BenchError::validation("delta must be a nonnegative number"));
    }
    if cfg.a_p.is_some_and(|a| !(a > 0.0 && a.is_finite())) {
        return Err(BenchError::validation("a_p must be positive"));
    }
    let mut rows = Vec::new();
    let mut cases = Vec::new();
    for &p in &cfg.ps {
        let a_p = cfg.a_p.unwrap_or(1.0 / p as f64);
        for (setting, diagnostic) in [
            ("ones", ones_case(p, cfg.delta)?),
            ("scaled-ones", scaled_ones_case(p, a_p, cfg.delta)?),
        ] {
            let min = diagnostic.diagonals.iter().copied().fold(f64::INFINITY, f64::min);
            rows.push(TableRow::new("diag-knockoff", setting, p, "fraction_above", &[diagnostic.fraction_above]));
            rows.push(TableRow::new("diag-knockoff", setting, p, "threshold", &[diagnostic.threshold]));
            rows.push(TableRow::new("diag-knockoff", setting, p, "min_diagonal", &[min]));
            cases.push(DiagCase { setting, p, diagnostic });
        }
    }
    Ok((rows, cases))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ones_diagonals_match_closed_form() {
        // C = aI − bE with a = 2/p − δ/p², b = 1/p².
        let (p, delta) = (50usize, 1e-6);
        let pf = p as f64;
        let a = 2.0 / pf - delta / (pf * pf);
        let b = 1.0 / (pf * pf);
        let expected = 1.0 / a + b / (a * (a - b * pf));
        let d = ones_case(p, delta).unwrap();
        for v in d.diagonals.iter() {
            assert!((v - expected).abs() / expected < 1e-8);
        }
        assert_eq!(d.fraction_above, 1.0);
    }

    #[test]
    fn rejects_empty_grid() {
        let cfg = DiagConfig {
            ps: vec![],
            ..DiagConfig::default()
        };
        assert!(run(&cfg).is_err());
    }
}
