//! Probabilistic input models, isoprobabilistic transforms and
//! design-of-experiments sampling.
//!
//! An [`InputModel`] is an ordered list of independent marginals. Physical
//! coordinates map to *standardized* coordinates: uniform marginals to
//! U(-1,1) (Legendre pairing), everything else to N(0,1) through
//! `u = Phi^{-1}(F(x))` (Hermite pairing).

use rand::Rng;
use statrs::distribution::{Beta, Continuous, ContinuousCDF, Gamma, Normal};

use crate::error::{Error, Result};
use crate::rng;

/// Euler-Mascheroni constant, used by the Gumbel moment matching.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// A univariate marginal distribution, parameterized in physical units.
///
/// Lognormal and Gumbel take the mean/std of the variable itself and convert
/// internally to their canonical parameters. Beta lives on [-1,1] with the
/// Jacobi-weight exponents `(1-x)^a (1+x)^b`, `a, b > -1`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginalDistribution {
    Uniform { a: f64, b: f64 },
    Gaussian { mean: f64, std: f64 },
    Lognormal { mean: f64, std: f64 },
    Gumbel { mean: f64, std: f64 },
    Gamma { shape: f64 },
    Beta { a: f64, b: f64 },
}

impl MarginalDistribution {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match *self {
            MarginalDistribution::Uniform { a, b } if !(b > a) => {
                bad(format!("uniform requires b > a, got [{a}, {b}]"))
            }
            MarginalDistribution::Gaussian { std, .. } if !(std > 0.0) => {
                bad(format!("gaussian requires std > 0, got {std}"))
            }
            MarginalDistribution::Lognormal { mean, std } if !(mean > 0.0 && std > 0.0) => {
                bad(format!("lognormal requires mean, std > 0, got ({mean}, {std})"))
            }
            MarginalDistribution::Gumbel { std, .. } if !(std > 0.0) => {
                bad(format!("gumbel requires std > 0, got {std}"))
            }
            MarginalDistribution::Gamma { shape } if !(shape > 0.0) => {
                bad(format!("gamma requires shape > 0, got {shape}"))
            }
            MarginalDistribution::Beta { a, b } if !(a > -1.0 && b > -1.0) => {
                bad(format!("beta requires a, b > -1, got ({a}, {b})"))
            }
            _ => Ok(()),
        }
    }

    /// Lognormal canonical parameters (lambda, zeta) from moment matching.
    pub fn lognormal_params(mean: f64, std: f64) -> (f64, f64) {
        let zeta2 = (1.0 + (std / mean).powi(2)).ln();
        (mean.ln() - 0.5 * zeta2, zeta2.sqrt())
    }

    /// Gumbel (location, scale) from moment matching.
    pub fn gumbel_params(mean: f64, std: f64) -> (f64, f64) {
        let scale = std * 6.0_f64.sqrt() / std::f64::consts::PI;
        (mean - EULER_GAMMA * scale, scale)
    }

    /// Open support interval of the marginal.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            MarginalDistribution::Uniform { a, b } => (a, b),
            MarginalDistribution::Gaussian { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MarginalDistribution::Lognormal { .. } => (0.0, f64::INFINITY),
            MarginalDistribution::Gumbel { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            MarginalDistribution::Gamma { .. } => (0.0, f64::INFINITY),
            MarginalDistribution::Beta { .. } => (-1.0, 1.0),
        }
    }

    /// True if the marginal standardizes to U(-1,1) rather than N(0,1).
    pub fn is_uniform(&self) -> bool {
        matches!(self, MarginalDistribution::Uniform { .. })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            MarginalDistribution::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            MarginalDistribution::Gaussian { mean, std } => std_normal().cdf((x - mean) / std),
            MarginalDistribution::Lognormal { mean, std } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let (lambda, zeta) = Self::lognormal_params(mean, std);
                std_normal().cdf((x.ln() - lambda) / zeta)
            }
            MarginalDistribution::Gumbel { mean, std } => {
                let (loc, scale) = Self::gumbel_params(mean, std);
                (-(-(x - loc) / scale).exp()).exp()
            }
            MarginalDistribution::Gamma { shape } => {
                if x <= 0.0 {
                    0.0
                } else {
                    Gamma::new(shape, 1.0).expect("validated").cdf(x)
                }
            }
            MarginalDistribution::Beta { a, b } => {
                // (1-x)^a (1+x)^b on [-1,1]  <=>  standard Beta(b+1, a+1) on [0,1].
                let t = ((x + 1.0) / 2.0).clamp(0.0, 1.0);
                Beta::new(b + 1.0, a + 1.0).expect("validated").cdf(t)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            MarginalDistribution::Uniform { a, b } => {
                if x >= a && x <= b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            MarginalDistribution::Gaussian { mean, std } => {
                std_normal().pdf((x - mean) / std) / std
            }
            MarginalDistribution::Lognormal { mean, std } => {
                if x <= 0.0 {
                    return 0.0;
                }
                let (lambda, zeta) = Self::lognormal_params(mean, std);
                std_normal().pdf((x.ln() - lambda) / zeta) / (zeta * x)
            }
            MarginalDistribution::Gumbel { mean, std } => {
                let (loc, scale) = Self::gumbel_params(mean, std);
                let z = (x - loc) / scale;
                ((-z - (-z).exp()).exp()) / scale
            }
            MarginalDistribution::Gamma { shape } => {
                if x <= 0.0 {
                    0.0
                } else {
                    Gamma::new(shape, 1.0).expect("validated").pdf(x)
                }
            }
            MarginalDistribution::Beta { a, b } => {
                let t = (x + 1.0) / 2.0;
                if !(0.0..=1.0).contains(&t) {
                    return 0.0;
                }
                Beta::new(b + 1.0, a + 1.0).expect("validated").pdf(t) / 2.0
            }
        }
    }

    /// Inverse CDF. `q` must lie strictly inside (0,1).
    pub fn quantile(&self, q: f64) -> Result<f64> {
        if !(q > 0.0 && q < 1.0) {
            return Err(Error::Domain(format!("quantile probability {q} outside (0,1)")));
        }
        let x = match *self {
            MarginalDistribution::Uniform { a, b } => a + (b - a) * q,
            MarginalDistribution::Gaussian { mean, std } => mean + std * std_normal().inverse_cdf(q),
            MarginalDistribution::Lognormal { mean, std } => {
                let (lambda, zeta) = Self::lognormal_params(mean, std);
                (lambda + zeta * std_normal().inverse_cdf(q)).exp()
            }
            MarginalDistribution::Gumbel { mean, std } => {
                let (loc, scale) = Self::gumbel_params(mean, std);
                loc - scale * (-q.ln()).ln()
            }
            MarginalDistribution::Gamma { .. } | MarginalDistribution::Beta { .. } => {
                let x0 = match *self {
                    MarginalDistribution::Gamma { shape } => {
                        Gamma::new(shape, 1.0).expect("validated").inverse_cdf(q)
                    }
                    MarginalDistribution::Beta { a, b } => {
                        2.0 * Beta::new(b + 1.0, a + 1.0).expect("validated").inverse_cdf(q) - 1.0
                    }
                    _ => unreachable!(),
                };
                self.newton_polish(x0, q)
            }
        };
        Ok(x)
    }

    // Two Newton steps sharpen library quantiles to near machine precision,
    // which the 1e-10 transform round-trip requires.
    fn newton_polish(&self, mut x: f64, q: f64) -> f64 {
        let (lo, hi) = self.support();
        for _ in 0..3 {
            let f = self.pdf(x);
            if f <= 0.0 || !f.is_finite() {
                break;
            }
            let step = (self.cdf(x) - q) / f;
            let next = x - step;
            if next > lo && next < hi {
                x = next;
            } else {
                break;
            }
            if step.abs() <= 1e-15 * x.abs().max(1.0) {
                break;
            }
        }
        x
    }

    /// Mean of the marginal.
    pub fn mean(&self) -> f64 {
        match *self {
            MarginalDistribution::Uniform { a, b } => 0.5 * (a + b),
            MarginalDistribution::Gaussian { mean, .. } => mean,
            MarginalDistribution::Lognormal { mean, .. } => mean,
            MarginalDistribution::Gumbel { mean, .. } => mean,
            MarginalDistribution::Gamma { shape } => shape,
            MarginalDistribution::Beta { a, b } => {
                // E[X] under (1-x)^a(1+x)^b: mean of Beta(b+1,a+1) mapped to [-1,1].
                2.0 * (b + 1.0) / (a + b + 2.0) - 1.0
            }
        }
    }

    fn to_standard_scalar(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) || !x.is_finite() {
            return Err(Error::Domain(format!("{x} outside support [{lo}, {hi}]")));
        }
        Ok(match *self {
            MarginalDistribution::Uniform { a, b } => (2.0 * x - a - b) / (b - a),
            MarginalDistribution::Gaussian { mean, std } => (x - mean) / std,
            _ => {
                let f = self.cdf(x);
                if f <= 0.0 || f >= 1.0 {
                    return Err(Error::Domain(format!("{x} at the boundary of the support")));
                }
                std_normal().inverse_cdf(f)
            }
        })
    }

    fn from_standard_scalar(&self, u: f64) -> Result<f64> {
        Ok(match *self {
            MarginalDistribution::Uniform { a, b } => 0.5 * (a + b) + 0.5 * (b - a) * u,
            MarginalDistribution::Gaussian { mean, std } => mean + std * u,
            _ => self.quantile(std_normal().cdf(u))?,
        })
    }
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// A vector of independent marginals.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct InputModel {
    marginals: Vec<MarginalDistribution>,
}

/// Sampling scheme for experimental designs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    /// Crude Monte Carlo, i.i.d. rows.
    Mc,
    /// Latin hypercube: one point per equiprobable stratum and dimension.
    Lhs,
}

/// An n x d experimental design in physical coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub points: ndarray::Array2<f64>,
    pub method: SamplingMethod,
    pub seed: u64,
}

impl InputModel {
    pub fn new(marginals: Vec<MarginalDistribution>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::InvalidArgument("input model needs d >= 1 marginals".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    pub fn marginal(&self, i: usize) -> &MarginalDistribution {
        &self.marginals[i]
    }

    /// Maps a physical point to standardized coordinates.
    pub fn to_standard(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x.len())?;
        x.iter()
            .zip(&self.marginals)
            .map(|(&xi, m)| m.to_standard_scalar(xi))
            .collect()
    }

    /// Maps a standardized point back to physical coordinates.
    pub fn from_standard(&self, u: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(u.len())?;
        u.iter()
            .zip(&self.marginals)
            .map(|(&ui, m)| m.from_standard_scalar(ui))
            .collect()
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dimension() {
            return Err(Error::InvalidArgument(format!(
                "point has dimension {len}, model has {}",
                self.dimension()
            )));
        }
        Ok(())
    }

    /// Draws an n x d experimental design. Bit-identical for identical
    /// `(model, n, method, seed)`.
    pub fn sample(&self, n: usize, method: SamplingMethod, seed: u64) -> Result<DesignMatrix> {
        if n == 0 {
            return Err(Error::InvalidArgument("design size n must be >= 1".into()));
        }
        let d = self.dimension();
        let mut rng = rng::stream(seed, 0);
        let mut points = ndarray::Array2::zeros((n, d));
        match method {
            SamplingMethod::Mc => {
                for i in 0..n {
                    for (j, m) in self.marginals.iter().enumerate() {
                        let q = open_unit(&mut rng);
                        points[[i, j]] = m.quantile(q)?;
                    }
                }
            }
            SamplingMethod::Lhs => {
                for (j, m) in self.marginals.iter().enumerate() {
                    let mut strata: Vec<usize> = (0..n).collect();
                    // Fisher-Yates permutation of strata for this dimension.
                    for k in (1..n).rev() {
                        let swap = rng.gen_range(0..=k);
                        strata.swap(k, swap);
                    }
                    for i in 0..n {
                        let q = (strata[i] as f64 + open_unit(&mut rng)) / n as f64;
                        points[[i, j]] = m.quantile(q)?;
                    }
                }
            }
        }
        Ok(DesignMatrix { points, method, seed })
    }
}

/// U(0,1) draw rejected at the exact endpoints so quantile stays defined.
fn open_unit<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let q: f64 = rng.gen();
        if q > 0.0 && q < 1.0 {
            return q;
        }
    }
}

impl DesignMatrix {
    pub fn n(&self) -> usize {
        self.points.nrows()
    }

    pub fn dimension(&self) -> usize {
        self.points.ncols()
    }

    /// CSV serialization: header of variable names, one sample per row,
    /// 17 significant digits.
    pub fn to_csv(&self) -> String {
        let d = self.dimension();
        let mut out = String::new();
        let header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for row in self.points.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn all_variants() -> Vec<MarginalDistribution> {
        vec![
            MarginalDistribution::Uniform { a: -1.0, b: 3.0 },
            MarginalDistribution::Gaussian { mean: 1.0, std: 2.0 },
            MarginalDistribution::Lognormal { mean: 2.1e11, std: 2.1e10 },
            MarginalDistribution::Gumbel { mean: 5.0e4, std: 7.5e3 },
            MarginalDistribution::Gamma { shape: 2.5 },
            MarginalDistribution::Beta { a: 0.5, b: 1.5 },
        ]
    }

    #[test]
    fn uniform_median_is_midpoint() {
        let d = MarginalDistribution::Uniform { a: -1.0, b: 1.0 };
        assert_eq!(d.quantile(0.5).unwrap(), 0.0);
    }

    #[test]
    fn gaussian_975_quantile() {
        // High-precision value of Phi^{-1}(0.975).
        let d = MarginalDistribution::Gaussian { mean: 0.0, std: 1.0 };
        assert_abs_diff_eq!(d.quantile(0.975).unwrap(), 1.959963984540054, epsilon = 1e-5);
    }

    #[test]
    fn gumbel_median_closed_form() {
        let (mean, std) = (5.0e4, 7.5e3);
        let d = MarginalDistribution::Gumbel { mean, std };
        let scale = std * 6.0_f64.sqrt() / std::f64::consts::PI;
        let loc = mean - EULER_GAMMA * scale;
        let expected = loc - scale * (2.0_f64.ln()).ln();
        assert_abs_diff_eq!(d.quantile(0.5).unwrap(), expected, epsilon = 1e-9 * expected.abs());
    }

    #[test]
    fn quantile_rejects_boundary_probabilities() {
        let d = MarginalDistribution::Gaussian { mean: 0.0, std: 1.0 };
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.0).is_err());
    }

    #[test]
    fn transform_trivial_cases() {
        let m = InputModel::new(vec![MarginalDistribution::Uniform { a: 0.0, b: 2.0 }]).unwrap();
        assert_eq!(m.from_standard(&[1.0]).unwrap()[0], 2.0);
        let g = InputModel::new(vec![MarginalDistribution::Gaussian { mean: 1.0, std: 2.0 }]).unwrap();
        assert_eq!(g.from_standard(&[1.5]).unwrap()[0], 4.0);
    }

    #[test]
    fn lognormal_median_moment_matching() {
        let (mean, std) = (2.1e11, 2.1e10);
        let m = InputModel::new(vec![MarginalDistribution::Lognormal { mean, std }]).unwrap();
        let (lambda, _) = MarginalDistribution::lognormal_params(mean, std);
        let x = m.from_standard(&[0.0]).unwrap()[0];
        assert_abs_diff_eq!(x, lambda.exp(), epsilon = 1e-6 * lambda.exp());
    }

    #[test]
    fn round_trip_identity() {
        for dist in all_variants() {
            let model = InputModel::new(vec![dist.clone()]).unwrap();
            let mut rng = crate::rng::stream(9, 0);
            for _ in 0..1000 {
                let q: f64 = rng.gen_range(1e-6..=1.0 - 1e-6);
                let x = dist.quantile(q).unwrap();
                let u = model.to_standard(&[x]).unwrap();
                let back = model.from_standard(&u).unwrap()[0];
                let tol = 1e-10 * x.abs().max(1.0);
                assert!(
                    (back - x).abs() <= tol,
                    "{dist:?}: {x} -> {u:?} -> {back}"
                );
            }
        }
    }

    #[test]
    fn quantile_cdf_identity() {
        for dist in all_variants() {
            for k in 1..100 {
                let q = k as f64 / 100.0;
                let x = dist.quantile(q).unwrap();
                assert!(
                    (dist.cdf(x) - q).abs() <= 1e-8,
                    "{dist:?} at q={q}: cdf(quantile)={}",
                    dist.cdf(x)
                );
            }
        }
    }

    #[test]
    fn lhs_stratification_exact() {
        let model = InputModel::new(vec![MarginalDistribution::Uniform { a: 0.0, b: 1.0 }]).unwrap();
        let design = model.sample(10, SamplingMethod::Lhs, 3).unwrap();
        let mut counts = [0usize; 10];
        for &x in design.points.column(0) {
            counts[(x * 10.0).floor() as usize % 10] += 1;
        }
        assert!(counts.iter().all(|&c| c == 1), "{counts:?}");
    }

    #[test]
    fn sampling_is_deterministic() {
        let model = InputModel::new(all_variants()).unwrap();
        let a = model.sample(25, SamplingMethod::Lhs, 7).unwrap();
        let b = model.sample(25, SamplingMethod::Lhs, 7).unwrap();
        assert_eq!(a.points, b.points);
        let c = model.sample(25, SamplingMethod::Lhs, 8).unwrap();
        assert_ne!(a.points, c.points);
    }

    #[test]
    fn mc_gaussian_moments() {
        let model = InputModel::new(vec![MarginalDistribution::Gaussian { mean: 0.0, std: 1.0 }]).unwrap();
        let design = model.sample(100_000, SamplingMethod::Mc, 11).unwrap();
        let col = design.points.column(0);
        let mean = col.mean().unwrap();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn moment_matching_of_generated_draws() {
        for dist in [
            MarginalDistribution::Gumbel { mean: 5.0e4, std: 7.5e3 },
            MarginalDistribution::Lognormal { mean: 2.0e-3, std: 2.0e-4 },
        ] {
            let (want_mean, want_std) = match dist {
                MarginalDistribution::Gumbel { mean, std } => (mean, std),
                MarginalDistribution::Lognormal { mean, std } => (mean, std),
                _ => unreachable!(),
            };
            let model = InputModel::new(vec![dist]).unwrap();
            let design = model.sample(1_000_000, SamplingMethod::Mc, 5).unwrap();
            let col = design.points.column(0);
            let mean = col.mean().unwrap();
            let std = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / (col.len() - 1) as f64)
                .sqrt();
            assert!((mean - want_mean).abs() < 0.01 * want_mean.abs());
            assert!((std - want_std).abs() < 0.01 * want_std);
        }
    }

    #[test]
    fn zero_design_size_rejected() {
        let model = InputModel::new(vec![MarginalDistribution::Gamma { shape: 1.0 }]).unwrap();
        assert!(model.sample(0, SamplingMethod::Mc, 0).is_err());
    }

    #[test]
    fn csv_has_header_and_rows() {
        let model = InputModel::new(vec![
            MarginalDistribution::Uniform { a: 0.0, b: 1.0 },
            MarginalDistribution::Gaussian { mean: 0.0, std: 1.0 },
        ])
        .unwrap();
        let csv = model.sample(3, SamplingMethod::Mc, 1).unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "x1,x2");
    }
}
