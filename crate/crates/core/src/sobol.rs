//! Monte-Carlo (pick-freeze) Sobol' index estimation and the shared report
//! type used by all estimators.

use ndarray::Array2;

use crate::distributions::{InputModel, SamplingMethod};
use crate::error::{Error, Result};
use crate::rng;

/// A black-box scalar model: the true simulator, a fitted surrogate, or one
/// posterior realization.
pub trait Evaluator: Sync {
    fn eval(&self, x: &[f64]) -> Result<f64>;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Evaluator for F {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        Ok(self(x))
    }
}

/// Which indices to compute.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SobolRequest {
    FirstOrder,
    Total,
    Subset(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorTag {
    PceAnalytic,
    PickFreezeFirst,
    PickFreezeTotal,
    GpRealizations,
}

impl EstimatorTag {
    fn as_str(self) -> &'static str {
        match self {
            Self::PceAnalytic => "pce_analytic",
            Self::PickFreezeFirst => "pick_freeze_first",
            Self::PickFreezeTotal => "pick_freeze_total",
            Self::GpRealizations => "gp_realizations",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SobolEntry {
    /// Zero-based variable indices of the subset.
    pub subset: Vec<usize>,
    pub estimate: f64,
    /// Across-realization standard deviation (GP estimator only).
    pub std: Option<f64>,
    /// Raw estimates may land slightly outside [0,1]; reported unclamped.
    pub out_of_range: bool,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct SobolReport {
    entries: Vec<SobolEntry>,
    pub estimator: EstimatorTag,
    pub n_pick_freeze: Option<usize>,
    pub realizations: Option<usize>,
    pub seed: Option<u64>,
}

impl SobolReport {
    pub fn new(estimator: EstimatorTag) -> Self {
        Self { entries: Vec::new(), estimator, n_pick_freeze: None, realizations: None, seed: None }
    }

    pub fn push(&mut self, subset: Vec<usize>, estimate: f64) {
        self.push_with_std(subset, estimate, None);
    }

    pub fn push_with_std(&mut self, subset: Vec<usize>, estimate: f64, std: Option<f64>) {
        let out_of_range = !(0.0..=1.0).contains(&estimate);
        self.entries.push(SobolEntry { subset, estimate, std, out_of_range });
    }

    pub fn entries(&self) -> &[SobolEntry] {
        &self.entries
    }

    /// Looks an entry up by its (sorted) subset.
    pub fn get(&self, subset: &[usize]) -> Option<&SobolEntry> {
        self.entries.iter().find(|e| e.subset == subset)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("subset,estimate,std,estimator,N,m,seed\n");
        let opt_u = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.entries {
            let subset: Vec<String> = e.subset.iter().map(|i| (i + 1).to_string()).collect();
            out.push_str(&format!(
                "{},{:.16e},{},{},{},{},{}\n",
                subset.join("+"),
                e.estimate,
                e.std.map(|s| format!("{s:.16e}")).unwrap_or_default(),
                self.estimator.as_str(),
                opt_u(self.n_pick_freeze),
                opt_u(self.realizations),
                self.seed.map(|s| s.to_string()).unwrap_or_default(),
            ));
        }
        out
    }
}

/// The two coupled designs of the pick-freeze scheme: `x` is an iid sample,
/// `x_frozen` shares the coordinates in `subset` and redraws the rest.
pub fn pick_freeze_designs(
    input: &InputModel,
    subset: &[usize],
    n: usize,
    seed: u64,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let d = input.dimension();
    if subset.is_empty() || subset.len() >= d || subset.iter().any(|&i| i >= d) {
        return Err(Error::InvalidArgument(
            "subset must be a nonempty proper subset of the variables".into(),
        ));
    }
    if n < 2 {
        return Err(Error::InvalidArgument("pick-freeze size must be at least 2".into()));
    }
    let base = input.sample(n, SamplingMethod::Mc, rng::derive(seed, 0))?.points;
    let redraw = input.sample(n, SamplingMethod::Mc, rng::derive(seed, 1))?.points;
    let mut frozen = redraw;
    for &j in subset {
        frozen.column_mut(j).assign(&base.column(j));
    }
    Ok((base, frozen))
}

/// Symmetrized first-order (or closed-subset) pick-freeze estimate from a
/// matched pair of response samples.
pub fn first_order_from_responses(y: &[f64], y_frozen: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let mu: f64 = y.iter().zip(y_frozen).map(|(a, b)| a + b).sum::<f64>() / (2.0 * n);
    let cross = y.iter().zip(y_frozen).map(|(a, b)| a * b).sum::<f64>() / n - mu * mu;
    let var = y.iter().map(|a| a * a).sum::<f64>() / n - mu * mu;
    if var <= 0.0 {
        return Err(Error::DegenerateModel("zero empirical variance in pick-freeze sample".into()));
    }
    Ok(cross / var)
}

/// Jansen-style total-index estimate from a matched pair where `y_frozen`
/// redraws only variable i.
pub fn total_from_responses(y: &[f64], y_frozen: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let mu: f64 = y.iter().zip(y_frozen).map(|(a, b)| a + b).sum::<f64>() / (2.0 * n);
    let pooled_var = y
        .iter()
        .zip(y_frozen)
        .map(|(a, b)| (a - mu).powi(2) + (b - mu).powi(2))
        .sum::<f64>()
        / (2.0 * n);
    if pooled_var <= 0.0 {
        return Err(Error::DegenerateModel("zero empirical variance in pick-freeze sample".into()));
    }
    let half_sq = y.iter().zip(y_frozen).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / (2.0 * n);
    Ok(half_sq / pooled_var)
}

/// Sobol' index of `subset` under metamodel uncertainty: one shared
/// pick-freeze sample, `m` joint posterior realizations, the pick-freeze
/// estimate recomputed per realization. The across-realization spread
/// measures metamodel uncertainty only, because the Monte-Carlo sample is
/// fixed.
pub fn gp_sobol(
    model: &crate::gp::GpModel,
    input: &InputModel,
    subset: &[usize],
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SobolReport> {
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let (x, x_frozen) = pick_freeze_designs(input, subset, n, rng::derive(seed, 0))?;
    let d = input.dimension();
    let mut points = Array2::zeros((2 * n, d));
    points.slice_mut(ndarray::s![..n, ..]).assign(&x);
    points.slice_mut(ndarray::s![n.., ..]).assign(&x_frozen);
    let paths = model.sample_posterior(&points, m, rng::derive(seed, 1))?;
    let mut estimates = Vec::with_capacity(m);
    for j in 0..m {
        let row = paths.row(j);
        let y = row.slice(ndarray::s![..n]).to_vec();
        let y_frozen = row.slice(ndarray::s![n..]).to_vec();
        estimates.push(first_order_from_responses(&y, &y_frozen)?);
    }
    let mean = estimates.iter().sum::<f64>() / m as f64;
    let std = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
    let mut report = SobolReport::new(EstimatorTag::GpRealizations);
    report.n_pick_freeze = Some(n);
    report.realizations = Some(m);
    report.seed = Some(seed);
    report.push_with_std(subset.to_vec(), mean, Some(std));
    Ok(report)
}

/// All first-order indices from one shared pick-freeze sample and one shared
/// set of posterior realizations (so entries are mutually consistent).
pub fn gp_sobol_first_order(
    model: &crate::gp::GpModel,
    input: &InputModel,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<SobolReport> {
    if m < 2 {
        return Err(Error::InvalidArgument("need at least two realizations".into()));
    }
    let d = input.dimension();
    if d < 2 {
        return Err(Error::InvalidArgument("need at least two variables".into()));
    }
    let base = input.sample(n, SamplingMethod::Mc, rng::derive(seed, 0))?.points;
    let redraw = input.sample(n, SamplingMethod::Mc, rng::derive(seed, 1))?.points;
    let mut points = Array2::zeros(((d + 1) * n, d));
    points.slice_mut(ndarray::s![..n, ..]).assign(&base);
    for i in 0..d {
        let mut block = redraw.clone();
        block.column_mut(i).assign(&base.column(i));
        points
            .slice_mut(ndarray::s![(i + 1) * n..(i + 2) * n, ..])
            .assign(&block);
    }
    let paths = model.sample_posterior(&points, m, rng::derive(seed, 2))?;
    let mut report = SobolReport::new(EstimatorTag::GpRealizations);
    report.n_pick_freeze = Some(n);
    report.realizations = Some(m);
    report.seed = Some(seed);
    for i in 0..d {
        let mut estimates = Vec::with_capacity(m);
        for j in 0..m {
            let row = paths.row(j);
            let y = row.slice(ndarray::s![..n]).to_vec();
            let y_frozen = row.slice(ndarray::s![(i + 1) * n..(i + 2) * n]).to_vec();
            estimates.push(first_order_from_responses(&y, &y_frozen)?);
        }
        let mean = estimates.iter().sum::<f64>() / m as f64;
        let std =
            (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
        report.push_with_std(vec![i], mean, Some(std));
    }
    Ok(report)
}

/// Main-effect curve of variable `i`: for each grid value, the conditional
/// expectation of each posterior realization over `n_inner` complement draws;
/// returns (across-realization mean, 2.5th, 97.5th percentile) per grid point.
pub fn main_effects(
    model: &crate::gp::GpModel,
    input: &InputModel,
    variable: usize,
    grid: &[f64],
    m: usize,
    n_inner: usize,
    seed: u64,
) -> Result<Vec<(f64, f64, f64)>> {
    let d = input.dimension();
    if variable >= d {
        return Err(Error::InvalidArgument(format!("variable {variable} out of range")));
    }
    if grid.is_empty() || n_inner == 0 || m < 2 {
        return Err(Error::InvalidArgument(
            "need a nonempty grid, n_inner >= 1, and m >= 2".into(),
        ));
    }
    let (lo, hi) = input.marginal(variable).support();
    if grid.iter().any(|&g| g < lo || g > hi) {
        return Err(Error::InvalidArgument("grid value outside the marginal support".into()));
    }
    let complement = input.sample(n_inner, SamplingMethod::Mc, rng::derive(seed, 0))?.points;
    let mut points = Array2::zeros((grid.len() * n_inner, d));
    for (k, &g) in grid.iter().enumerate() {
        for j in 0..n_inner {
            for c in 0..d {
                points[[k * n_inner + j, c]] = if c == variable { g } else { complement[[j, c]] };
            }
        }
    }
    let paths = model.sample_posterior(&points, m, rng::derive(seed, 1))?;
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let mut cond: Vec<f64> = (0..m)
            .map(|j| {
                paths
                    .row(j)
                    .slice(ndarray::s![k * n_inner..(k + 1) * n_inner])
                    .sum()
                    / n_inner as f64
            })
            .collect();
        let mean = cond.iter().sum::<f64>() / m as f64;
        cond.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        out.push((mean, percentile(&cond, 0.025), percentile(&cond, 0.975)));
    }
    Ok(out)
}

/// Linear-interpolation empirical percentile of sorted data.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

fn eval_rows(eval: &dyn Evaluator, xs: &Array2<f64>) -> Result<Vec<f64>> {
    xs.rows()
        .into_iter()
        .map(|r| eval.eval(r.as_slice().expect("contiguous row")))
        .collect()
}

/// First-order (closed) Sobol' index of `subset` by pick-freeze sampling.
pub fn pick_freeze_first_order(
    eval: &dyn Evaluator,
    input: &InputModel,
    subset: &[usize],
    n: usize,
    seed: u64,
) -> Result<f64> {
    let (x, x_frozen) = pick_freeze_designs(input, subset, n, seed)?;
    let y = eval_rows(eval, &x)?;
    let y_frozen = eval_rows(eval, &x_frozen)?;
    first_order_from_responses(&y, &y_frozen)
}

/// Total Sobol' index of variable `i` by the squared-difference estimator.
pub fn pick_freeze_total(
    eval: &dyn Evaluator,
    input: &InputModel,
    i: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let d = input.dimension();
    if i >= d {
        return Err(Error::InvalidArgument(format!("variable {i} out of range for d={d}")));
    }
    // Freeze everything except i: the "subset" of shared coordinates is the
    // complement of {i}.
    let complement: Vec<usize> = (0..d).filter(|&k| k != i).collect();
    let (x, x_frozen) = pick_freeze_designs(input, &complement, n, seed)?;
    let y = eval_rows(eval, &x)?;
    let y_frozen = eval_rows(eval, &x_frozen)?;
    total_from_responses(&y, &y_frozen)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::MarginalDistribution;
    use approx::assert_abs_diff_eq;

    fn unit_uniform(d: usize) -> InputModel {
        InputModel::new(vec![MarginalDistribution::Uniform { a: 0.0, b: 1.0 }; d]).unwrap()
    }

    fn ishigami_model() -> InputModel {
        let pi = std::f64::consts::PI;
        InputModel::new(vec![MarginalDistribution::Uniform { a: -pi, b: pi }; 3]).unwrap()
    }

    fn ishigami(x: &[f64]) -> f64 {
        x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin()
    }

    #[test]
    fn additive_first_order() {
        let input = unit_uniform(2);
        let g = |x: &[f64]| x[0] + 2.0 * x[1];
        let s2 = pick_freeze_first_order(&g, &input, &[1], 1_000_000, 42).unwrap();
        assert_abs_diff_eq!(s2, 0.8, epsilon = 0.01);
        let s1 = pick_freeze_first_order(&g, &input, &[0], 1_000_000, 42).unwrap();
        assert_abs_diff_eq!(s1 + s2, 1.0, epsilon = 0.02);
    }

    #[test]
    fn ishigami_third_variable_first_order_is_zero() {
        let input = ishigami_model();
        let s3 = pick_freeze_first_order(&ishigami, &input, &[2], 1_000_000, 7).unwrap();
        assert_abs_diff_eq!(s3, 0.0, epsilon = 0.01);
    }

    #[test]
    fn additive_total_equals_first_order() {
        let input = unit_uniform(2);
        let g = |x: &[f64]| x[0] + 2.0 * x[1];
        let t2 = pick_freeze_total(&g, &input, 1, 500_000, 11).unwrap();
        assert_abs_diff_eq!(t2, 0.8, epsilon = 0.01);
    }

    #[test]
    fn ishigami_total_of_x3_matches_anova() {
        // ANOVA of sin x1 + a sin^2 x2 + b x3^4 sin x1 (a=7, b=0.1):
        // V1 = (1 + b pi^4/5)^2 / 2, V2 = a^2/8, V13 = 8 b^2 pi^8 / 225.
        let (a, b) = (7.0, 0.1);
        let pi = std::f64::consts::PI;
        let v1 = 0.5 * (1.0 + b * pi.powi(4) / 5.0).powi(2);
        let v2 = a * a / 8.0;
        let v13 = 8.0 * b * b * pi.powi(8) / 225.0;
        let s3_tot = v13 / (v1 + v2 + v13);
        let input = ishigami_model();
        let t3 = pick_freeze_total(&ishigami, &input, 2, 1_000_000, 13).unwrap();
        assert_abs_diff_eq!(t3, s3_tot, epsilon = 0.01);
    }

    #[test]
    fn absent_variable_has_zero_total() {
        let input = unit_uniform(3);
        let g = |x: &[f64]| x[0] * x[1];
        let t3 = pick_freeze_total(&g, &input, 2, 200_000, 3).unwrap();
        assert_abs_diff_eq!(t3, 0.0, epsilon = 0.01);
    }

    #[test]
    fn constant_model_is_degenerate() {
        let input = unit_uniform(2);
        let g = |_: &[f64]| 3.0;
        assert!(matches!(
            pick_freeze_first_order(&g, &input, &[0], 1000, 1),
            Err(Error::DegenerateModel(_))
        ));
        assert!(matches!(
            pick_freeze_total(&g, &input, 0, 1000, 1),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn estimates_are_deterministic() {
        let input = unit_uniform(2);
        let g = |x: &[f64]| (x[0] * x[1]).sin();
        let a = pick_freeze_first_order(&g, &input, &[0], 10_000, 99).unwrap();
        let b = pick_freeze_first_order(&g, &input, &[0], 10_000, 99).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn pick_freeze_matches_pce_analytic_indices() {
        use crate::distributions::SamplingMethod;
        use crate::orthopoly::MultivariateBasis;
        use crate::pce::PceModel;

        let input = InputModel::new(vec![
            MarginalDistribution::Uniform { a: -1.0, b: 1.0 };
            2
        ])
        .unwrap();
        let g = |x: &[f64]| x[0] + 0.5 * x[1] * x[1] + 0.8 * x[0] * x[1];
        let design = input.sample(80, SamplingMethod::Lhs, 21).unwrap();
        let responses = design.points.rows().into_iter().map(|r| g(r.as_slice().unwrap())).collect();
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis).unwrap();

        let analytic = model.sobol_indices(SobolRequest::FirstOrder).unwrap();
        let surrogate = |x: &[f64]| model.predict(x).unwrap();
        for i in 0..2 {
            let mc = pick_freeze_first_order(&surrogate, &input, &[i], 400_000, 5).unwrap();
            assert_abs_diff_eq!(mc, analytic.entries()[i].estimate, epsilon = 0.01);
        }
    }

    #[test]
    fn gp_sobol_uncertainty_collapses_on_dense_data() {
        use crate::gp::{FitOptions, GpModel, KernelFamily, KernelMode, TrendSpec};
        let input = unit_uniform(2);
        let g = |x: &[f64]| x[0] + 2.0 * x[1];
        let design = input.sample(200, crate::distributions::SamplingMethod::Lhs, 15).unwrap();
        let responses =
            design.points.rows().into_iter().map(|r| g(r.as_slice().unwrap())).collect();
        let model = GpModel::fit(
            &design.points,
            &responses,
            TrendSpec::constant(2),
            KernelFamily::Matern52,
            KernelMode::Tensorized,
            &FitOptions { seed: 2, n_starts: 4, ..Default::default() },
        )
        .unwrap();
        let report = gp_sobol(&model, &input, &[1], 4000, 20, 9).unwrap();
        let e = &report.entries()[0];
        assert!(e.std.unwrap() < 0.01, "std {}", e.std.unwrap());
        assert_abs_diff_eq!(e.estimate, 0.8, epsilon = 0.05);
    }

    #[test]
    fn degenerate_gp_has_zero_index_spread() {
        use crate::gp::{FitOptions, GpModel, KernelFamily, KernelMode, TrendSpec};
        let input = unit_uniform(2);
        let design = input.sample(20, crate::distributions::SamplingMethod::Lhs, 25).unwrap();
        let responses = design
            .points
            .rows()
            .into_iter()
            .map(|r| r[0] + 3.0 * r[1])
            .collect();
        let mut model = GpModel::fit(
            &design.points,
            &responses,
            TrendSpec::linear(2),
            KernelFamily::Matern52,
            KernelMode::Tensorized,
            &FitOptions { fixed_theta: Some(vec![0.4, 0.4]), ..Default::default() },
        )
        .unwrap();
        // Force the process part off: the GP degenerates to its mean, so all
        // realizations coincide and the across-realization spread vanishes.
        model.kernel.variance = 0.0;
        let report = gp_sobol(&model, &input, &[0], 2000, 2, 31).unwrap();
        assert_eq!(report.entries()[0].std.unwrap(), 0.0);
        let all = gp_sobol_first_order(&model, &input, 2000, 2, 31).unwrap();
        for e in all.entries() {
            assert_eq!(e.std.unwrap(), 0.0);
        }
    }

    #[test]
    fn main_effect_of_additive_model_tracks_its_term() {
        use crate::gp::{FitOptions, GpModel, KernelFamily, KernelMode, TrendSpec};
        let input = unit_uniform(2);
        let g = |x: &[f64]| (2.0 * x[0]).sin() + x[1];
        let design = input.sample(80, crate::distributions::SamplingMethod::Lhs, 35).unwrap();
        let responses =
            design.points.rows().into_iter().map(|r| g(r.as_slice().unwrap())).collect();
        let model = GpModel::fit(
            &design.points,
            &responses,
            TrendSpec::constant(2),
            KernelFamily::Matern52,
            KernelMode::Tensorized,
            &FitOptions { seed: 3, n_starts: 4, ..Default::default() },
        )
        .unwrap();
        let grid = [0.1, 0.3, 0.5, 0.7, 0.9];
        let curve = main_effects(&model, &input, 0, &grid, 20, 2000, 5).unwrap();
        // The conditional expectation is sin(2x) + E[x2] = sin(2x) + 0.5.
        for (g, (mean, lo, hi)) in grid.iter().zip(&curve) {
            let truth = (2.0 * g).sin() + 0.5;
            assert!((mean - truth).abs() < 0.05, "grid {g}: {mean} vs {truth}");
            assert!(lo <= mean && mean <= hi);
        }
        // Out-of-support grid values are rejected.
        assert!(main_effects(&model, &input, 0, &[1.5], 20, 100, 5).is_err());
    }

    #[test]
    fn report_csv_format() {
        let mut report = SobolReport::new(EstimatorTag::GpRealizations);
        report.n_pick_freeze = Some(100);
        report.realizations = Some(7);
        report.seed = Some(3);
        report.push_with_std(vec![0], 0.5, Some(0.01));
        report.push(vec![0, 2], 1.02);
        let csv = report.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "subset,estimate,std,estimator,N,m,seed");
        assert!(lines.next().unwrap().starts_with("1,5.0000000000000000e-1,1.00"));
        assert!(lines.next().unwrap().starts_with("1+3,1.02"));
        assert!(report.entries()[1].out_of_range);
        assert!(!report.entries()[0].out_of_range);
    }
}
