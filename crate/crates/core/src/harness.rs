//! Replicated-design experiment runner: fits surrogates on fresh LHS designs
//! of increasing size, scores them on one shared test set, and writes
//! per-replication and summary CSV tables.

use std::path::{Path, PathBuf};

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::benchmarks::BenchmarkCase;
use crate::distributions::SamplingMethod;
use crate::error::{Error, Result};
use crate::gp::{Estimator, FitOptions, GpModel, KernelFamily, KernelMode, TrendSpec};
use crate::pce::PceModel;
use crate::rng;
use crate::sobol::{gp_sobol_first_order, SobolRequest};

/// Nash–Sutcliffe predictivity coefficient: 1 − Σ(G−Ĝ)² / Σ(G−Ḡ)².
pub fn q2(predictions: &[f64], truths: &[f64]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::InvalidArgument("prediction/truth lengths differ".into()));
    }
    let n = truths.len();
    if n < 2 {
        return Err(Error::InvalidArgument("need at least two test points".into()));
    }
    let mean = truths.iter().sum::<f64>() / n as f64;
    let denom: f64 = truths.iter().map(|&t| (t - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(Error::DegenerateModel("test responses all equal".into()));
    }
    let num: f64 = truths
        .iter()
        .zip(predictions)
        .map(|(&t, &p)| (t - p).powi(2))
        .sum();
    Ok(1.0 - num / denom)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pce,
    Gp,
    Both,
}

impl Method {
    fn runs_pce(self) -> bool {
        matches!(self, Method::Pce | Method::Both)
    }
    fn runs_gp(self) -> bool {
        matches!(self, Method::Gp | Method::Both)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PceOptions {
    pub p_min: usize,
    pub p_max: usize,
}

impl Default for PceOptions {
    fn default() -> Self {
        Self { p_min: 1, p_max: 10 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GpOptions {
    /// "squared-exponential" | "matern12" | "matern32" | "matern52".
    pub kernel: String,
    /// "isotropic" | "tensorized".
    pub mode: String,
    /// "constant" | "linear"; ignored when `trend_monomials` is set.
    pub trend: String,
    /// Explicit monomial exponents per trend function, overriding `trend`.
    pub trend_monomials: Option<Vec<Vec<usize>>>,
    /// "reml" | "loo".
    pub estimator: String,
    pub n_starts: usize,
    /// Pick-freeze sample size for index estimation.
    pub sobol_n: usize,
    /// Posterior realizations for index estimation.
    pub sobol_m: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self {
            kernel: "matern52".into(),
            mode: "tensorized".into(),
            trend: "constant".into(),
            trend_monomials: None,
            estimator: "reml".into(),
            n_starts: 10,
            sobol_n: 10_000,
            sobol_m: 100,
        }
    }
}

impl GpOptions {
    pub fn kernel_family(&self) -> Result<KernelFamily> {
        match self.kernel.as_str() {
            "squared-exponential" => Ok(KernelFamily::SquaredExponential),
            "matern12" => Ok(KernelFamily::Matern12),
            "matern32" => Ok(KernelFamily::Matern32),
            "matern52" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidArgument(format!("unknown kernel '{other}'"))),
        }
    }

    pub fn kernel_mode(&self) -> Result<KernelMode> {
        match self.mode.as_str() {
            "isotropic" => Ok(KernelMode::Isotropic),
            "tensorized" => Ok(KernelMode::Tensorized),
            other => Err(Error::InvalidArgument(format!("unknown kernel mode '{other}'"))),
        }
    }

    pub fn trend_spec(&self, d: usize) -> Result<TrendSpec> {
        if let Some(monomials) = &self.trend_monomials {
            let spec = TrendSpec::new(monomials.clone())?;
            if spec.dimension() != d {
                return Err(Error::Trend(format!(
                    "trend monomials have dimension {}, expected {d}",
                    spec.dimension()
                )));
            }
            return Ok(spec);
        }
        match self.trend.as_str() {
            "constant" => Ok(TrendSpec::constant(d)),
            "linear" => Ok(TrendSpec::linear(d)),
            other => Err(Error::InvalidArgument(format!("unknown trend '{other}'"))),
        }
    }

    pub fn estimator(&self) -> Result<Estimator> {
        match self.estimator.as_str() {
            "reml" => Ok(Estimator::MaxLikelihood),
            "loo" => Ok(Estimator::LooCv),
            other => Err(Error::InvalidArgument(format!("unknown estimator '{other}'"))),
        }
    }
}

fn default_replications() -> usize {
    100
}
fn default_n_test() -> usize {
    10_000
}
fn default_out_dir() -> PathBuf {
    PathBuf::from(".")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub benchmark: String,
    pub method: Method,
    pub sizes: Vec<usize>,
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub pce: PceOptions,
    #[serde(default)]
    pub gp: GpOptions,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidArgument("replications must be >= 1".into()));
        }
        if self.sizes.is_empty() {
            return Err(Error::InvalidArgument("at least one design size".into()));
        }
        if self.n_test < 2 {
            return Err(Error::InvalidArgument("n_test must be >= 2".into()));
        }
        BenchmarkCase::by_name(&self.benchmark)?;
        self.gp.kernel_family()?;
        self.gp.kernel_mode()?;
        self.gp.estimator()?;
        Ok(())
    }
}

/// One fitted surrogate on one replication design.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: String,
    pub n: usize,
    pub replication: usize,
    /// Error category when the fit or index estimation failed.
    pub error: Option<String>,
    pub q2: Option<f64>,
    /// Selected degree (PCE) or fitted lengthscales (GP).
    pub diagnostic: String,
    /// First-order index estimates, one per input variable.
    pub indices: Vec<f64>,
    /// Not written to CSV: wall times would break byte-level determinism.
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReplicationRow>,
    pub dimension: usize,
    /// Reference first-order indices used for the RMSE columns.
    pub reference: Vec<f64>,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

/// Linear-interpolation quantile of an unsorted sample.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

impl ExperimentReport {
    /// Per-replication table. Columns: method,n,replication,status,q2,
    /// diagnostic,S1..Sd. Failed replications carry their error category in
    /// `status` and empty value fields.
    pub fn replications_csv(&self) -> String {
        let mut out = String::from("method,n,replication,status,q2,diagnostic");
        for i in 1..=self.dimension {
            out.push_str(&format!(",S{i}"));
        }
        out.push('\n');
        for row in &self.rows {
            let status = row.error.as_deref().unwrap_or("ok");
            let q2s = row.q2.map(fmt).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}",
                row.method, row.n, row.replication, status, q2s, row.diagnostic
            ));
            for i in 0..self.dimension {
                out.push(',');
                if let Some(&s) = row.indices.get(i) {
                    out.push_str(&fmt(s));
                }
            }
            out.push('\n');
        }
        out
    }

    /// Per-(method, n, quantity) five-number summary plus RMSE against the
    /// reference indices. Quantities are `q2` and `S1..Sd`; RMSE is empty for
    /// `q2`. `n_ok`/`n_fail` count successful and failed replications.
    pub fn summary_csv(&self) -> String {
        let mut out =
            String::from("method,n,quantity,n_ok,n_fail,min,q25,median,q75,max,rmse_vs_ref\n");
        let mut keys: Vec<(String, usize)> = Vec::new();
        for row in &self.rows {
            let key = (row.method.clone(), row.n);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        for (method, n) in keys {
            let group: Vec<&ReplicationRow> = self
                .rows
                .iter()
                .filter(|r| r.method == method && r.n == n)
                .collect();
            let ok: Vec<&&ReplicationRow> = group.iter().filter(|r| r.error.is_none()).collect();
            let n_fail = group.len() - ok.len();
            let mut quantities: Vec<(String, Vec<f64>, Option<f64>)> = Vec::new();
            let q2_values: Vec<f64> = ok.iter().filter_map(|r| r.q2).collect();
            quantities.push(("q2".into(), q2_values, None));
            for i in 0..self.dimension {
                let values: Vec<f64> = ok.iter().map(|r| r.indices[i]).collect();
                let rmse = if values.is_empty() {
                    None
                } else {
                    let mse = values
                        .iter()
                        .map(|&s| (s - self.reference[i]).powi(2))
                        .sum::<f64>()
                        / values.len() as f64;
                    Some(mse.sqrt())
                };
                quantities.push((format!("S{}", i + 1), values, rmse));
            }
            for (name, values, rmse) in quantities {
                out.push_str(&format!("{method},{n},{name},{},{n_fail}", ok.len()));
                if values.is_empty() {
                    out.push_str(",,,,,");
                } else {
                    for q in [0.0, 0.25, 0.5, 0.75, 1.0] {
                        out.push(',');
                        out.push_str(&fmt(quantile(&values, q)));
                    }
                }
                out.push(',');
                if let Some(r) = rmse {
                    out.push_str(&fmt(r));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("replications.csv"), self.replications_csv())?;
        std::fs::write(dir.join("summary.csv"), self.summary_csv())?;
        Ok(())
    }
}

fn fit_pce_row(
    case: &BenchmarkCase,
    config: &ExperimentConfig,
    n: usize,
    r: usize,
    rep_seed: u64,
    test_points: &ndarray::Array2<f64>,
    test_truths: &[f64],
) -> ReplicationRow {
    let start = std::time::Instant::now();
    let d = case.dimension();
    let result = (|| -> Result<(f64, String, Vec<f64>)> {
        let design = case.input.sample(n, SamplingMethod::Lhs, rep_seed)?;
        let responses: Array1<f64> = design
            .points
            .rows()
            .into_iter()
            .map(|row| case.eval(row.as_slice().unwrap()))
            .collect::<Result<Vec<f64>>>()?
            .into();
        let model = PceModel::adaptive_fit(
            &case.input,
            &design,
            &responses,
            config.pce.p_min,
            config.pce.p_max,
        )?;
        let predictions: Vec<f64> = test_points
            .rows()
            .into_iter()
            .map(|row| model.predict(row.as_slice().unwrap()))
            .collect::<Result<Vec<f64>>>()?;
        let score = q2(&predictions, test_truths)?;
        let report = model.sobol_indices(SobolRequest::FirstOrder)?;
        let mut indices = Vec::with_capacity(d);
        for i in 0..d {
            indices.push(report.get(&[i]).map(|e| e.estimate).unwrap_or(0.0));
        }
        Ok((score, format!("p={}", model.basis.index_set().max_degree()), indices))
    })();
    match result {
        Ok((score, diagnostic, indices)) => ReplicationRow {
            method: "pce".into(),
            n,
            replication: r,
            error: None,
            q2: Some(score),
            diagnostic,
            indices,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Err(e) => ReplicationRow {
            method: "pce".into(),
            n,
            replication: r,
            error: Some(e.category().into()),
            q2: None,
            diagnostic: String::new(),
            indices: Vec::new(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    }
}

fn fit_gp_row(
    case: &BenchmarkCase,
    config: &ExperimentConfig,
    n: usize,
    r: usize,
    rep_seed: u64,
    test_points: &ndarray::Array2<f64>,
    test_truths: &[f64],
) -> ReplicationRow {
    let start = std::time::Instant::now();
    let d = case.dimension();
    let result = (|| -> Result<(f64, String, Vec<f64>)> {
        let design = case.input.sample(n, SamplingMethod::Lhs, rep_seed)?;
        let responses: Array1<f64> = design
            .points
            .rows()
            .into_iter()
            .map(|row| case.eval(row.as_slice().unwrap()))
            .collect::<Result<Vec<f64>>>()?
            .into();
        let options = FitOptions {
            estimator: config.gp.estimator()?,
            n_starts: config.gp.n_starts,
            seed: rng::derive(rep_seed, 1),
            ..FitOptions::default()
        };
        let model = GpModel::fit(
            &design.points,
            &responses,
            config.gp.trend_spec(d)?,
            config.gp.kernel_family()?,
            config.gp.kernel_mode()?,
            &options,
        )?;
        let predictions: Vec<f64> = test_points
            .rows()
            .into_iter()
            .map(|row| model.predict_mean(row.as_slice().unwrap()))
            .collect::<Result<Vec<f64>>>()?;
        let score = q2(&predictions, test_truths)?;
        let report = gp_sobol_first_order(
            &model,
            &case.input,
            config.gp.sobol_n,
            config.gp.sobol_m,
            rng::derive(rep_seed, 2),
        )?;
        let mut indices = Vec::with_capacity(d);
        for i in 0..d {
            indices.push(report.get(&[i]).map(|e| e.estimate).unwrap_or(0.0));
        }
        let theta = model
            .kernel
            .lengthscales
            .iter()
            .map(|t| format!("{t:.6e}"))
            .collect::<Vec<_>>()
            .join("|");
        Ok((score, format!("theta={theta}"), indices))
    })();
    match result {
        Ok((score, diagnostic, indices)) => ReplicationRow {
            method: "gp".into(),
            n,
            replication: r,
            error: None,
            q2: Some(score),
            diagnostic,
            indices,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        Err(e) => ReplicationRow {
            method: "gp".into(),
            n,
            replication: r,
            error: Some(e.category().into()),
            q2: None,
            diagnostic: String::new(),
            indices: Vec::new(),
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    }
}

/// Runs the replicated study and writes `replications.csv` and `summary.csv`
/// under the configured output directory.
///
/// Every replication owns the seed stream derive(derive(master, n), r); the
/// test set is drawn once per config from derive(master, u64::MAX) and shared
/// across methods and replications. A replication failure is recorded in its
/// row and the run continues; more than 50% failures at any (method, n) fail
/// the whole run.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let case = BenchmarkCase::by_name(&config.benchmark)?;
    let d = case.dimension();
    let test = case
        .input
        .sample(config.n_test, SamplingMethod::Mc, rng::derive(config.seed, u64::MAX))?;
    let test_truths: Vec<f64> = test
        .points
        .rows()
        .into_iter()
        .map(|row| case.eval(row.as_slice().unwrap()))
        .collect::<Result<Vec<f64>>>()?;

    let mut jobs: Vec<(bool, usize, usize)> = Vec::new(); // (is_gp, n, r)
    for &n in &config.sizes {
        for r in 0..config.replications {
            if config.method.runs_pce() {
                jobs.push((false, n, r));
            }
            if config.method.runs_gp() {
                jobs.push((true, n, r));
            }
        }
    }
    let mut rows: Vec<ReplicationRow> = jobs
        .par_iter()
        .map(|&(is_gp, n, r)| {
            let rep_seed = rng::derive(rng::derive(config.seed, n as u64), r as u64);
            if is_gp {
                fit_gp_row(&case, config, n, r, rep_seed, &test.points, &test_truths)
            } else {
                fit_pce_row(&case, config, n, r, rep_seed, &test.points, &test_truths)
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.method, a.n, a.replication).cmp(&(&b.method, b.n, b.replication))
    });

    for &n in &config.sizes {
        for method in ["pce", "gp"] {
            let group: Vec<&ReplicationRow> = rows
                .iter()
                .filter(|row| row.method == method && row.n == n)
                .collect();
            if group.is_empty() {
                continue;
            }
            let failures = group.iter().filter(|row| row.error.is_some()).count();
            if 2 * failures > group.len() {
                return Err(Error::Run(format!(
                    "{failures}/{} {method} replications failed at n={n}",
                    group.len()
                )));
            }
        }
    }

    let reference: Vec<f64> = case
        .reference_indices()
        .entries()
        .iter()
        .map(|e| e.estimate)
        .collect();
    let report = ExperimentReport { rows, dimension: d, reference };
    report.write_csvs(&config.out_dir)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn q2_known_values() {
        assert_abs_diff_eq!(q2(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(q2(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_abs_diff_eq!(q2(&[1.0, 2.0, 4.0], &[1.0, 2.0, 3.0]).unwrap(), 0.5);
        assert!(matches!(
            q2(&[1.0, 2.0], &[5.0, 5.0]),
            Err(Error::DegenerateModel(_))
        ));
        assert!(q2(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn config_toml_defaults_and_validation() {
        let config = ExperimentConfig::from_toml(
            r#"
benchmark = "ishigami"
method = "pce"
sizes = [64, 128]
seed = 42
"#,
        )
        .unwrap();
        assert_eq!(config.replications, 100);
        assert_eq!(config.n_test, 10_000);
        assert_eq!(config.pce.p_max, 10);
        assert_eq!(config.gp.kernel, "matern52");
        assert!(ExperimentConfig::from_toml("benchmark = \"nope\"").is_err());
        let bad = ExperimentConfig::from_toml(
            r#"
benchmark = "ishigami"
method = "gp"
sizes = [32]
[gp]
kernel = "bogus"
"#,
        );
        assert!(bad.is_err());
    }

    fn small_config(dir: &Path, method: Method) -> ExperimentConfig {
        ExperimentConfig {
            benchmark: "ishigami".into(),
            method,
            sizes: vec![80],
            replications: 2,
            n_test: 400,
            seed: 7,
            out_dir: dir.to_path_buf(),
            pce: PceOptions { p_min: 2, p_max: 5 },
            gp: GpOptions {
                n_starts: 2,
                sobol_n: 2_000,
                sobol_m: 8,
                ..GpOptions::default()
            },
        }
    }

    #[test]
    fn one_row_per_replication_and_method() {
        let dir = std::env::temp_dir().join("metasens_harness_rows");
        let config = small_config(&dir, Method::Both);
        let report = run_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 4); // 2 methods x 1 size x 2 reps
        for row in &report.rows {
            assert!(row.error.is_none(), "{:?}", row.error);
            let score = row.q2.unwrap();
            assert!(score.is_finite() && score <= 1.0, "q2 = {score}");
            // Accuracy itself is checked elsewhere at realistic sizes; this
            // budget run (n=80, degree <= 4, 2 optimizer starts) only
            // verifies the plumbing.
            assert_eq!(row.indices.len(), 3);
        }
        let rep_csv = std::fs::read_to_string(dir.join("replications.csv")).unwrap();
        assert_eq!(rep_csv.lines().count(), 5); // header + 4 rows
        assert!(rep_csv.starts_with("method,n,replication,status,q2,diagnostic,S1,S2,S3"));
        let summary = std::fs::read_to_string(dir.join("summary.csv")).unwrap();
        // 2 (method,n) groups x (q2 + 3 indices) + header
        assert_eq!(summary.lines().count(), 9);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir1 = std::env::temp_dir().join("metasens_harness_det1");
        let dir2 = std::env::temp_dir().join("metasens_harness_det2");
        let mut c1 = small_config(&dir1, Method::Pce);
        c1.replications = 3;
        let mut c2 = c1.clone();
        c2.out_dir = dir2.clone();
        run_experiment(&c1).unwrap();
        run_experiment(&c2).unwrap();
        for file in ["replications.csv", "summary.csv"] {
            let a = std::fs::read(dir1.join(file)).unwrap();
            let b = std::fs::read(dir2.join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between identical runs");
        }
    }

    #[test]
    fn summary_recomputable_from_replication_rows() {
        let dir = std::env::temp_dir().join("metasens_harness_consistency");
        let mut config = small_config(&dir, Method::Pce);
        config.replications = 5;
        let report = run_experiment(&config).unwrap();
        let summary = report.summary_csv();
        // Recompute the q2 median by hand from the rows.
        let mut q2s: Vec<f64> = report.rows.iter().filter_map(|r| r.q2).collect();
        q2s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = q2s[q2s.len() / 2];
        let line = summary
            .lines()
            .find(|l| l.starts_with("pce,80,q2"))
            .unwrap();
        let cols: Vec<&str> = line.split(',').collect();
        assert_abs_diff_eq!(cols[7].parse::<f64>().unwrap(), median, epsilon = 1e-15);
        // RMSE column for S1 against the analytic reference.
        let reference = report.reference[0];
        let mse: f64 = report
            .rows
            .iter()
            .map(|r| (r.indices[0] - reference).powi(2))
            .sum::<f64>()
            / report.rows.len() as f64;
        let s1_line = summary.lines().find(|l| l.starts_with("pce,80,S1")).unwrap();
        let s1_cols: Vec<&str> = s1_line.split(',').collect();
        assert_abs_diff_eq!(
            s1_cols[10].parse::<f64>().unwrap(),
            mse.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn majority_failures_abort_run() {
        // Designs far too small for the requested degree range make every
        // PCE replication fail with `underdetermined`.
        let dir = std::env::temp_dir().join("metasens_harness_fail");
        let mut config = small_config(&dir, Method::Pce);
        config.sizes = vec![6];
        config.pce = PceOptions { p_min: 4, p_max: 5 };
        match run_experiment(&config) {
            Err(Error::Run(msg)) => assert!(msg.contains("failed"), "{msg}"),
            other => panic!("expected run-level error, got {other:?}"),
        }
    }
}
