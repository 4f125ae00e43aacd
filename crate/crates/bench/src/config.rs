//! TOML run configuration. Every section is optional; CLI flags override.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// How the Lasso penalty is chosen for a simulated data set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum LambdaRule {
    Fixed(f64),
    /// `c · σ · √(2 ln p / n)` with `σ` the noise standard deviation.
    Universal(f64),
    /// `c · λ_max`.
    MaxRatio(f64),
}

impl LambdaRule {
    pub fn resolve(&self, noise_sd: f64, n: usize, p: usize, lambda_max: f64) -> f64 {
        match *self {
            LambdaRule::Fixed(v) => v,
            LambdaRule::Universal(c) => c * noise_sd * (2.0 * (p as f64).ln() / n as f64).sqrt(),
            LambdaRule::MaxRatio(c) => c * lambda_max,
        }
    }

    fn validate(&self) -> Result<()> {
        let v = match *self {
            LambdaRule::Fixed(v) | LambdaRule::Universal(v) | LambdaRule::MaxRatio(v) => v,
        };
        if !(v >= 0.0 && v.is_finite()) {
            return Err(BenchError::validation(format!("lambda parameter must be a nonnegative number, got {v}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineChoice {
    Approx,
    Exact,
}

impl From<EngineChoice> for colupdate_core::selection::Engine {
    fn from(e: EngineChoice) -> Self {
        match e {
            EngineChoice::Approx => colupdate_core::selection::Engine::Approx,
            EngineChoice::Exact => colupdate_core::selection::Engine::Exact,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UpdateErrorConfig {
    pub scales: Vec<f64>,
    /// AR(1) coefficients; ignored when `xis` is non-empty.
    pub rhos: Vec<f64>,
    /// Three-point innovation parameters.
    pub xis: Vec<f64>,
    /// AR(1) coefficient used with `xis`.
    pub three_point_rho: f64,
    pub reps: usize,
    pub lambda: LambdaRule,
    /// Per-entry noise variance is `noise_factor · n`.
    pub noise_factor: f64,
    pub base_n: usize,
    pub base_p: usize,
    pub base_s: usize,
    pub percoord: bool,
}

impl Default for UpdateErrorConfig {
    fn default() -> Self {
        UpdateErrorConfig {
            scales: vec![1.0],
            rhos: vec![0.0, 0.5, 0.95],
            xis: Vec::new(),
            three_point_rho: 0.5,
            reps: 1,
            lambda: LambdaRule::Universal(DEFAULT_UPDATE_LAMBDA),
            noise_factor: 0.01,
            base_n: 800,
            base_p: 1000,
            base_s: 400,
            percoord: true,
        }
    }
}

/// Default universal-rule constant for the update-error experiment.
pub const DEFAULT_UPDATE_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Knockoff,
    KnockoffDb,
    LocalKnockoff,
    LocalKnockoffDb,
    Crt,
    CrtDb,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Knockoff,
        Method::KnockoffDb,
        Method::LocalKnockoff,
        Method::LocalKnockoffDb,
        Method::Crt,
        Method::CrtDb,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Knockoff => "knockoff",
            Method::KnockoffDb => "knockoff-db",
            Method::LocalKnockoff => "local-knockoff",
            Method::LocalKnockoffDb => "local-knockoff-db",
            Method::Crt => "crt",
            Method::CrtDb => "crt-db",
        }
    }

    pub fn is_knockoff(&self) -> bool {
        matches!(self, Method::Knockoff | Method::KnockoffDb)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdrBenchConfig {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub a_val: f64,
    /// Defaults to `1/p`.
    pub a_p: Option<f64>,
    pub eps_eq: f64,
    /// Per-entry noise standard deviation; defaults to `1/√p`.
    pub noise_sd: Option<f64>,
    pub q: f64,
    pub reps: usize,
    pub methods: Vec<Method>,
    pub engine: EngineChoice,
    pub crt_resamples: usize,
    pub lambda: LambdaRule,
    /// Lasso penalty for the knockoff methods (augmented design).
    pub knockoff_lambda: Option<LambdaRule>,
    pub knockoff_offset: usize,
    pub epsilon: f64,
}

impl Default for FdrBenchConfig {
    fn default() -> Self {
        FdrBenchConfig {
            n: 200,
            p: 300,
            s: 20,
            a_val: 0.5,
            a_p: None,
            eps_eq: 50.0,
            noise_sd: None,
            q: 0.1,
            reps: 20,
            methods: Method::ALL.to_vec(),
            engine: EngineChoice::Approx,
            crt_resamples: colupdate_core::selection::DEFAULT_CRT_RESAMPLES,
            lambda: LambdaRule::Universal(DEFAULT_FDR_LAMBDA),
            knockoff_lambda: None,
            knockoff_offset: 1,
            epsilon: 0.0,
        }
    }
}

/// Default universal-rule constant for the FDR benchmark.
pub const DEFAULT_FDR_LAMBDA: f64 = 1.0;

impl FdrBenchConfig {
    pub fn a_p(&self) -> f64 {
        self.a_p.unwrap_or(1.0 / self.p as f64)
    }

    pub fn noise_sd(&self) -> f64 {
        self.noise_sd.unwrap_or(1.0 / (self.p as f64).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagConfig {
    pub ps: Vec<usize>,
    pub delta: f64,
    /// Scale `a_p` for the scaled-ones rows; defaults to `1/p`.
    pub a_p: Option<f64>,
}

impl Default for DiagConfig {
    fn default() -> Self {
        DiagConfig {
            ps: vec![50, 200],
            delta: 1e-6,
            a_p: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiRealConfig {
    pub csv: Option<PathBuf>,
    pub has_header: bool,
    /// Column holding the observed response; the last column when unset.
    pub response_column: Option<usize>,
    pub cutoff: f64,
    /// Optional whitespace/comma separated `p × p` precision file.
    pub precision_file: Option<PathBuf>,
    /// Shrinkage `δ_s` as a multiple of the mean diagonal of `Σ̂`.
    pub shrinkage: f64,
    pub q: f64,
    pub reps: usize,
    pub folds: usize,
    pub methods: Vec<Method>,
    pub engine: EngineChoice,
    pub crt_resamples: usize,
    pub lambda: LambdaRule,
}

impl Default for SemiRealConfig {
    fn default() -> Self {
        SemiRealConfig {
            csv: None,
            has_header: true,
            response_column: None,
            cutoff: 0.5,
            precision_file: None,
            shrinkage: 0.1,
            q: 0.1,
            reps: 20,
            folds: 5,
            methods: vec![Method::LocalKnockoffDb, Method::CrtDb],
            engine: EngineChoice::Approx,
            crt_resamples: colupdate_core::selection::DEFAULT_CRT_RESAMPLES,
            lambda: LambdaRule::Universal(DEFAULT_FDR_LAMBDA),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n: usize,
    pub p: usize,
    pub s: usize,
    pub rho: f64,
    pub noise_variance: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n: 200,
            p: 100,
            s: 10,
            rho: 0.5,
            noise_variance: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub design: Option<PathBuf>,
    pub response: Option<PathBuf>,
    pub has_header: bool,
    pub lambda: f64,
    /// AR(1) coefficient of the Gaussian residualizer for `debias`; OLS projection when unset.
    pub rho: Option<f64>,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            design: None,
            response: None,
            has_header: true,
            lambda: 0.1,
            rho: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub gen: GenConfig,
    pub fit: FitConfig,
    pub update_error: UpdateErrorConfig,
    pub fdr_bench: FdrBenchConfig,
    pub diag_knockoff: DiagConfig,
    pub semi_real: SemiRealConfig,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| BenchError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| BenchError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn snapshot(&self) -> toml::Value {
        toml::Value::try_from(self).unwrap_or(toml::Value::Table(Default::default()))
    }
}

fn check_level(q: f64) -> Result<()> {
    if !(q > 0.0 && q < 1.0) {
        return Err(BenchError::validation(format!("q must be in (0, 1), got {q}")));
    }
    Ok(())
}

fn check_positive(name: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(BenchError::validation(format!("{name} must be positive")));
    }
    Ok(())
}

impl UpdateErrorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.iter().any(|a| !(*a > 0.0)) {
            return Err(BenchError::validation("scales must be a non-empty list of positive numbers"));
        }
        if self.xis.is_empty() && self.rhos.is_empty() {
            return Err(BenchError::validation("either rhos or xis must be non-empty"));
        }
        if self.rhos.iter().chain([&self.three_point_rho]).any(|r| !(r.abs() < 1.0)) {
            return Err(BenchError::validation("AR(1) coefficients must satisfy |rho| < 1"));
        }
        if self.xis.iter().any(|x| !(*x > 0.0 && *x <= 1.0)) {
            return Err(BenchError::validation("xi must be in (0, 1]"));
        }
        if !(self.noise_factor > 0.0) {
            return Err(BenchError::validation("noise_factor must be positive"));
        }
        check_positive("reps", self.reps)?;
        self.lambda.validate()
    }
}

impl FdrBenchConfig {
    pub fn validate(&self) -> Result<()> {
        check_level(self.q)?;
        check_positive("reps", self.reps)?;
        check_positive("n", self.n)?;
        check_positive("crt_resamples", self.crt_resamples)?;
        if self.s > self.p || self.p < 2 {
            return Err(BenchError::validation(format!("need 2 ≤ p and s ≤ p (p = {}, s = {})", self.p, self.s)));
        }
        if !(self.eps_eq > 0.0) || !(self.a_p() > 0.0) || !(self.noise_sd() > 0.0) {
            return Err(BenchError::validation("eps_eq, a_p and noise_sd must be positive"));
        }
        if self.methods.is_empty() {
            return Err(BenchError::validation("no methods selected"));
        }
        if self.knockoff_offset > 1 {
            return Err(BenchError::validation("knockoff_offset must be 0 or 1"));
        }
        if !(self.epsilon >= 0.0) {
            return Err(BenchError::validation("epsilon must be nonnegative"));
        }
        self.lambda.validate()?;
        if let Some(l) = &self.knockoff_lambda {
            l.validate()?;
        }
        Ok(())
    }
}

impl SemiRealConfig {
    pub fn validate(&self) -> Result<()> {
        check_level(self.q)?;
        check_positive("reps", self.reps)?;
        if !(self.cutoff > 0.0 && self.cutoff < 1.0) {
            return Err(BenchError::validation("cutoff must be in (0, 1)"));
        }
        if self.folds < 2 {
            return Err(BenchError::validation("folds must be at least 2"));
        }
        if !(self.shrinkage > 0.0) {
            return Err(BenchError::validation("shrinkage must be positive"));
        }
        if self.methods.is_empty() {
            return Err(BenchError::validation("methods must not be empty"));
        }
        self.lambda.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_defaults() {
        let text = r#"
            seed = 7
            [update_error]
            scales = [0.5, 1.0]
            rhos = [0.95]
            lambda = { rule = "universal", value = 2.0 }
            [fdr_bench]
            methods = ["crt-db", "local-knockoff"]
            engine = "exact"
        "#;
        let c: Config = toml::from_str(text).unwrap();
        assert_eq!(c.seed, Some(7));
        assert_eq!(c.update_error.scales, vec![0.5, 1.0]);
        assert_eq!(c.update_error.lambda, LambdaRule::Universal(2.0));
        assert_eq!(c.fdr_bench.methods, vec![Method::CrtDb, Method::LocalKnockoff]);
        assert_eq!(c.fdr_bench.engine, EngineChoice::Exact);
        assert_eq!(c.fdr_bench.p, 300);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<Config>("[fdr_bench]\nbogus = 1\n").is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let c = Config::default();
        let back: Config = c.snapshot().try_into().unwrap();
        assert_eq!(back, c);
    }
}
