//! Least-squares polynomial chaos fitting, error estimation, and analytic
//! moment / Sobol' post-processing.

use ndarray::{Array1, Array2, Axis};
use ndarray_linalg::{qr::QR, triangular::SolveTriangular, Diag, UPLO};

use crate::distributions::{DesignMatrix, InputModel};
use crate::error::{Error, Result};
use crate::orthopoly::{total_degree_cardinality, MultivariateBasis};
use crate::sobol::{EstimatorTag, SobolReport, SobolRequest};

/// Relative rank-detection threshold on the R diagonal.
const RANK_RTOL: f64 = 1e-12;

/// Hat diagonals this close to 1 mean the LOO formula has lost all signal.
const HAT_TOL: f64 = 1e-10;

/// Basis evaluations over the experimental design plus cached hat diagonals.
#[derive(Debug, Clone)]
pub struct InformationMatrix {
    pub matrix: Array2<f64>,
    pub hat_diag: Array1<f64>,
}

impl InformationMatrix {
    /// Assembles `A_ij = Psi_j(u^(i))` from physical design points.
    pub fn assemble(
        input: &InputModel,
        design: &DesignMatrix,
        basis: &MultivariateBasis,
    ) -> Result<Self> {
        let n = design.n();
        let mut matrix = Array2::zeros((n, basis.len()));
        for (i, row) in design.points.rows().into_iter().enumerate() {
            let u = input.to_standard(row.as_slice().expect("contiguous design row"))?;
            matrix.row_mut(i).assign(&basis.eval_row(&u)?);
        }
        Ok(Self { matrix, hat_diag: Array1::zeros(n) })
    }
}

/// A fitted polynomial chaos expansion.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PceModel {
    pub input_model: InputModel,
    pub basis: MultivariateBasis,
    pub coefficients: Vec<f64>,
    /// Empirical mean-square residual, response-squared units.
    pub empirical_error: f64,
    /// Leave-one-out error from the hat-diagonal identity.
    pub loo_error: f64,
    /// Errors normalized by the sample variance of the responses.
    pub empirical_error_rel: f64,
    pub loo_error_rel: f64,
    pub n: usize,
    /// Seed of the experimental design, if known (for serialization).
    pub design_seed: Option<u64>,
    /// (degree, loo_error) pairs visited by adaptive fitting.
    pub adaptive_trace: Vec<(usize, f64)>,
}

impl PceModel {
    /// Least-squares fit over a fixed basis.
    ///
    /// Solves the normal problem through a thin QR factorization (never an
    /// explicit inverse); the hat diagonals fall out of Q's row norms.
    pub fn fit(
        input: &InputModel,
        design: &DesignMatrix,
        responses: &Array1<f64>,
        basis: MultivariateBasis,
    ) -> Result<Self> {
        let n = design.n();
        let cols = basis.len();
        if responses.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} responses for {n} design points",
                responses.len()
            )));
        }
        if responses.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("responses must be finite".into()));
        }
        if n < cols {
            return Err(Error::Underdetermined { n, cols });
        }
        let mut info = InformationMatrix::assemble(input, design, &basis)?;
        let (q, r) = info
            .matrix
            .qr()
            .map_err(|e| Error::NumericalBreakdown(format!("QR factorization: {e}")))?;

        let diag_max = (0..cols).map(|j| r[[j, j]].abs()).fold(0.0, f64::max);
        let rank = (0..cols).filter(|&j| r[[j, j]].abs() > RANK_RTOL * diag_max).count();
        if rank < cols {
            return Err(Error::IllPosedFit { rank, cols });
        }

        let qty = q.t().dot(responses);
        let coefficients = r
            .solve_triangular(UPLO::Upper, Diag::NonUnit, &qty)
            .map_err(|e| Error::NumericalBreakdown(format!("triangular solve: {e}")))?;

        for i in 0..n {
            info.hat_diag[i] = q.row(i).iter().map(|v| v * v).sum();
        }

        let predictions = info.matrix.dot(&coefficients);
        let residuals = responses - &predictions;
        let empirical_error = residuals.iter().map(|r| r * r).sum::<f64>() / n as f64;

        if info.hat_diag.iter().any(|&h| h > 1.0 - HAT_TOL) {
            return Err(Error::DegenerateLoo);
        }
        let loo_error = residuals
            .iter()
            .zip(info.hat_diag.iter())
            .map(|(r, h)| (r / (1.0 - h)).powi(2))
            .sum::<f64>()
            / n as f64;

        let var = sample_variance(responses);
        let rel = |e: f64| if var > 0.0 { e / var } else { 0.0 };
        Ok(Self {
            input_model: input.clone(),
            basis,
            coefficients: coefficients.to_vec(),
            empirical_error,
            loo_error,
            empirical_error_rel: rel(empirical_error),
            loo_error_rel: rel(loo_error),
            n,
            design_seed: Some(design.seed),
            adaptive_trace: Vec::new(),
        })
    }

    /// Fits every admissible total degree in `p_min..=p_max` (admissible per
    /// the n >= 2 card A thumb rule) and keeps the smallest LOO error.
    pub fn adaptive_fit(
        input: &InputModel,
        design: &DesignMatrix,
        responses: &Array1<f64>,
        p_min: usize,
        p_max: usize,
    ) -> Result<Self> {
        if p_min > p_max {
            return Err(Error::InvalidArgument(format!("empty degree range {p_min}..{p_max}")));
        }
        let n = design.n();
        let d = input.dimension();
        let mut best: Option<PceModel> = None;
        let mut trace = Vec::new();
        for p in p_min..=p_max {
            if 2 * total_degree_cardinality(d, p) > n {
                continue;
            }
            let basis = MultivariateBasis::for_input_model(input, p)?;
            let model = Self::fit(input, design, responses, basis)?;
            trace.push((p, model.loo_error));
            if best.as_ref().map_or(true, |b| model.loo_error < b.loo_error) {
                best = Some(model);
            }
        }
        let mut best = best.ok_or(Error::Underdetermined {
            n,
            cols: 2 * total_degree_cardinality(d, p_min),
        })?;
        best.adaptive_trace = trace;
        Ok(best)
    }

    /// Surrogate prediction at a physical point.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        let u = self.input_model.to_standard(x)?;
        let row = self.basis.eval_row(&u)?;
        Ok(row.iter().zip(&self.coefficients).map(|(b, c)| b * c).sum())
    }

    /// Analytic (mean, variance) from the coefficients.
    pub fn moments(&self) -> (f64, f64) {
        let mean = self.coefficients[0];
        let variance = self.coefficients[1..].iter().map(|c| c * c).sum();
        (mean, variance)
    }

    /// Partial variance of the exact-support subset `A`.
    fn partial_variance(&self, subset: &[usize]) -> f64 {
        self.basis
            .index_set()
            .indices()
            .iter()
            .zip(&self.coefficients)
            .filter(|(alpha, _)| {
                alpha
                    .iter()
                    .enumerate()
                    .all(|(k, &a)| (a != 0) == subset.contains(&k))
            })
            .map(|(_, c)| c * c)
            .sum()
    }

    /// Variance indistinguishable from rounding noise on the mean.
    fn degenerate_variance(&self) -> bool {
        let (mean, variance) = self.moments();
        variance <= (f64::EPSILON * mean.abs()).powi(2) * self.coefficients.len() as f64
    }

    /// Analytic Sobol' indices from the coefficients.
    pub fn sobol_indices(&self, request: SobolRequest) -> Result<SobolReport> {
        let (_, variance) = self.moments();
        if self.degenerate_variance() {
            return Err(Error::DegenerateModel("zero PCE variance".into()));
        }
        let d = self.basis.dimension();
        let mut report = SobolReport::new(EstimatorTag::PceAnalytic);
        match request {
            SobolRequest::FirstOrder => {
                for i in 0..d {
                    report.push(vec![i], self.partial_variance(&[i]) / variance);
                }
            }
            SobolRequest::Total => {
                for i in 0..d {
                    let v: f64 = self
                        .basis
                        .index_set()
                        .indices()
                        .iter()
                        .zip(&self.coefficients)
                        .filter(|(alpha, _)| alpha[i] != 0)
                        .map(|(_, c)| c * c)
                        .sum();
                    report.push(vec![i], v / variance);
                }
            }
            SobolRequest::Subset(subset) => {
                if subset.is_empty() || subset.iter().any(|&i| i >= d) {
                    return Err(Error::InvalidArgument("subset must be nonempty and within dimension".into()));
                }
                report.push(subset.clone(), self.partial_variance(&subset) / variance);
            }
        }
        Ok(report)
    }

    /// Every nonempty support present in the basis, with its index.
    /// The estimates sum to one by construction.
    pub fn sobol_all_subsets(&self) -> Result<SobolReport> {
        let (_, variance) = self.moments();
        if self.degenerate_variance() {
            return Err(Error::DegenerateModel("zero PCE variance".into()));
        }
        let mut supports: Vec<Vec<usize>> = Vec::new();
        for alpha in self.basis.index_set().indices() {
            let support: Vec<usize> =
                alpha.iter().enumerate().filter(|(_, &a)| a != 0).map(|(k, _)| k).collect();
            if !support.is_empty() && !supports.contains(&support) {
                supports.push(support);
            }
        }
        let mut report = SobolReport::new(EstimatorTag::PceAnalytic);
        for s in supports {
            let v = self.partial_variance(&s);
            report.push(s, v / variance);
        }
        Ok(report)
    }

    /// Serializes the fitted model as JSON.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// Brute-force leave-one-out error: n refits with one point deleted.
///
/// Slow by design; this is the independent oracle for the hat-diagonal
/// identity used by [`PceModel::fit`].
pub fn loo_error_explicit(
    input: &InputModel,
    design: &DesignMatrix,
    responses: &Array1<f64>,
    basis: &MultivariateBasis,
) -> Result<f64> {
    let n = design.n();
    if n < basis.len() + 1 {
        return Err(Error::Underdetermined { n, cols: basis.len() + 1 });
    }
    let mut sum = 0.0;
    for i in 0..n {
        let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let sub_points = design.points.select(Axis(0), &keep);
        let sub_design = DesignMatrix {
            points: sub_points,
            method: design.method,
            seed: design.seed,
        };
        let sub_resp = responses.select(Axis(0), &keep);
        let model = PceModel::fit(input, &sub_design, &sub_resp, basis.clone())?;
        let x: Vec<f64> = design.points.row(i).to_vec();
        let delta = responses[i] - model.predict(&x)?;
        sum += delta * delta;
    }
    Ok(sum / n as f64)
}

fn sample_variance(y: &Array1<f64>) -> f64 {
    let n = y.len() as f64;
    let mean = y.sum() / n;
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{InputModel, MarginalDistribution, SamplingMethod};
    use approx::assert_abs_diff_eq;

    fn uniform_model(d: usize) -> InputModel {
        InputModel::new(vec![MarginalDistribution::Uniform { a: -1.0, b: 1.0 }; d]).unwrap()
    }

    fn respond(design: &DesignMatrix, f: impl Fn(&[f64]) -> f64) -> Array1<f64> {
        design.points.rows().into_iter().map(|r| f(r.as_slice().unwrap())).collect()
    }

    #[test]
    fn quadratic_target_recovered_exactly() {
        let input = uniform_model(1);
        let design = input.sample(50, SamplingMethod::Lhs, 17).unwrap();
        let responses = respond(&design, |x| x[0] * x[0]);
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis).unwrap();
        // E[X^2] for U(-1,1) is 1/3.
        assert_abs_diff_eq!(model.coefficients[0], 1.0 / 3.0, epsilon = 1e-10);
        assert!(model.empirical_error < 1e-20, "{}", model.empirical_error);
        let x = [0.31];
        assert_abs_diff_eq!(model.predict(&x).unwrap(), x[0] * x[0], epsilon = 1e-12);
    }

    #[test]
    fn constant_responses() {
        let input = uniform_model(2);
        let design = input.sample(30, SamplingMethod::Lhs, 5).unwrap();
        let responses = Array1::from_elem(30, 4.5);
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis.clone()).unwrap();
        assert_abs_diff_eq!(model.coefficients[0], 4.5, epsilon = 1e-12);
        for c in &model.coefficients[1..] {
            assert!(c.abs() < 1e-12);
        }
        assert!(model.loo_error < 1e-20);
        let explicit = loo_error_explicit(&input, &design, &responses, &basis).unwrap();
        assert!(explicit < 1e-20);
    }

    #[test]
    fn loo_identity_matches_explicit_refits() {
        let input = uniform_model(2);
        let design = input.sample(40, SamplingMethod::Lhs, 23).unwrap();
        let responses = respond(&design, |x| (2.0 * x[0]).sin() + x[1] * x[1] * x[0]);
        let basis = MultivariateBasis::for_input_model(&input, 3).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis.clone()).unwrap();
        let explicit = loo_error_explicit(&input, &design, &responses, &basis).unwrap();
        assert_abs_diff_eq!(model.loo_error, explicit, epsilon = 1e-8 * explicit.abs());
    }

    #[test]
    fn interpolation_regime_is_degenerate() {
        let input = uniform_model(1);
        let basis = MultivariateBasis::for_input_model(&input, 4).unwrap();
        let design = input.sample(5, SamplingMethod::Lhs, 2).unwrap();
        let responses = respond(&design, |x| x[0].exp());
        assert!(matches!(
            PceModel::fit(&input, &design, &responses, basis),
            Err(Error::DegenerateLoo)
        ));
    }

    #[test]
    fn underdetermined_fit_rejected() {
        let input = uniform_model(3);
        let basis = MultivariateBasis::for_input_model(&input, 4).unwrap();
        let design = input.sample(10, SamplingMethod::Lhs, 2).unwrap();
        let responses = respond(&design, |x| x[0]);
        assert!(matches!(
            PceModel::fit(&input, &design, &responses, basis),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn rank_deficiency_detected() {
        // Duplicate design rows with more columns than distinct points.
        let input = uniform_model(1);
        let mut design = input.sample(12, SamplingMethod::Lhs, 2).unwrap();
        for i in 4..12 {
            let v = design.points[[i % 4, 0]];
            design.points[[i, 0]] = v;
        }
        let basis = MultivariateBasis::for_input_model(&input, 6).unwrap();
        let responses = respond(&design, |x| x[0]);
        assert!(matches!(
            PceModel::fit(&input, &design, &responses, basis),
            Err(Error::IllPosedFit { .. })
        ));
    }

    #[test]
    fn adaptive_fit_selects_containing_degree() {
        let input = uniform_model(2);
        let design = input.sample(120, SamplingMethod::Lhs, 31).unwrap();
        let responses = respond(&design, |x| {
            1.0 + x[0] - 2.0 * x[1] + 0.5 * x[0] * x[0] * x[1]
        });
        let model = PceModel::adaptive_fit(&input, &design, &responses, 1, 6).unwrap();
        let p = model.basis.index_set().max_degree();
        assert!(p >= 3, "selected degree {p}");
        assert!(model.loo_error < 1e-16, "{}", model.loo_error);
        let x = [0.2, -0.7];
        let truth = 1.0 + x[0] - 2.0 * x[1] + 0.5 * x[0] * x[0] * x[1];
        assert_abs_diff_eq!(model.predict(&x).unwrap(), truth, epsilon = 1e-8);
        assert!(!model.adaptive_trace.is_empty());
    }

    #[test]
    fn adaptive_fit_thumb_rule_gate() {
        let input = uniform_model(15);
        let design = input.sample(60, SamplingMethod::Lhs, 3).unwrap();
        let responses = respond(&design, |x| x[0]);
        // 2 * C(18,3) = 1632 > 60 for every p in 3..=8.
        assert!(matches!(
            PceModel::adaptive_fit(&input, &design, &responses, 3, 8),
            Err(Error::Underdetermined { .. })
        ));
    }

    #[test]
    fn moments_from_coefficients() {
        let input = uniform_model(2);
        let design = input.sample(30, SamplingMethod::Lhs, 4).unwrap();
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let responses = Array1::from_elem(30, 5.0);
        let model = PceModel::fit(&input, &design, &responses, basis).unwrap();
        let (mean, var) = model.moments();
        assert_abs_diff_eq!(mean, 5.0, epsilon = 1e-12);
        assert!(var < 1e-20);
    }

    #[test]
    fn sobol_arithmetic_hand_case() {
        // Coefficients y_(1,0)=1, y_(0,2)=1, y_(1,1)=sqrt(2).
        let input = uniform_model(2);
        let design = input.sample(30, SamplingMethod::Lhs, 6).unwrap();
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let mut model = PceModel::fit(
            &input,
            &design,
            &Array1::from_elem(30, 1.0),
            basis,
        )
        .unwrap();
        // Overwrite coefficients to the hand-built spectrum.
        for c in model.coefficients.iter_mut() {
            *c = 0.0;
        }
        let idx = |alpha: &[usize]| {
            model
                .basis
                .index_set()
                .indices()
                .iter()
                .position(|a| a.as_slice() == alpha)
                .unwrap()
        };
        model.coefficients[idx(&[1, 0])] = 1.0;
        model.coefficients[idx(&[0, 2])] = 1.0;
        model.coefficients[idx(&[1, 1])] = 2.0_f64.sqrt();
        let first = model.sobol_indices(SobolRequest::FirstOrder).unwrap();
        assert_abs_diff_eq!(first.entries()[0].estimate, 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(first.entries()[1].estimate, 0.25, epsilon = 1e-14);
        let pair = model.sobol_indices(SobolRequest::Subset(vec![0, 1])).unwrap();
        assert_abs_diff_eq!(pair.entries()[0].estimate, 0.5, epsilon = 1e-14);
        let total = model.sobol_indices(SobolRequest::Total).unwrap();
        assert_abs_diff_eq!(total.entries()[0].estimate, 0.75, epsilon = 1e-14);
        // Closure: all subsets sum to one.
        let all = model.sobol_all_subsets().unwrap();
        let sum: f64 = all.entries().iter().map(|e| e.estimate).sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_variance_model_degenerate_for_sobol() {
        let input = uniform_model(1);
        let design = input.sample(10, SamplingMethod::Lhs, 2).unwrap();
        let basis = MultivariateBasis::for_input_model(&input, 1).unwrap();
        let model =
            PceModel::fit(&input, &design, &Array1::from_elem(10, 2.0), basis).unwrap();
        assert!(matches!(
            model.sobol_indices(SobolRequest::FirstOrder),
            Err(Error::DegenerateModel(_))
        ));
    }

    #[test]
    fn fit_idempotent_on_own_predictions() {
        let input = uniform_model(2);
        let design = input.sample(60, SamplingMethod::Lhs, 8).unwrap();
        let responses = respond(&design, |x| (x[0] + 0.3).powi(3) - x[1]);
        let basis = MultivariateBasis::for_input_model(&input, 3).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis.clone()).unwrap();
        let surrogate = respond(&design, |x| model.predict(x).unwrap());
        let refit = PceModel::fit(&input, &design, &surrogate, basis).unwrap();
        for (a, b) in model.coefficients.iter().zip(&refit.coefficients) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn row_permutation_invariance() {
        let input = uniform_model(2);
        let design = input.sample(50, SamplingMethod::Lhs, 9).unwrap();
        let responses = respond(&design, |x| x[0].sin() + x[1]);
        let basis = MultivariateBasis::for_input_model(&input, 3).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis.clone()).unwrap();

        let perm: Vec<usize> = (0..50).rev().collect();
        let permuted = DesignMatrix {
            points: design.points.select(Axis(0), &perm),
            method: design.method,
            seed: design.seed,
        };
        let permuted_resp = responses.select(Axis(0), &perm);
        let model2 = PceModel::fit(&input, &permuted, &permuted_resp, basis).unwrap();
        for (a, b) in model.coefficients.iter().zip(&model2.coefficients) {
            assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn json_round_trip() {
        let input = uniform_model(1);
        let design = input.sample(20, SamplingMethod::Lhs, 3).unwrap();
        let responses = respond(&design, |x| x[0]);
        let basis = MultivariateBasis::for_input_model(&input, 2).unwrap();
        let model = PceModel::fit(&input, &design, &responses, basis).unwrap();
        let text = model.to_json().unwrap();
        let back = PceModel::from_json(&text).unwrap();
        assert_eq!(model.coefficients, back.coefficients);
    }
}
