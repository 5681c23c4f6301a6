//! Gaussian-process regression with polynomial trends: fitting (REML or
//! closed-form LOO-CV), universal-kriging prediction, posterior sampling by
//! kriging conditioning, and variance-driven sequential design.

use ndarray::{s, Array1, Array2};
use ndarray_linalg::cholesky::Cholesky;
use ndarray_linalg::UPLO;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng;

/// Relative jitter ladder tried when a covariance factorization fails.
const NUGGET_LADDER: [f64; 8] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Point count above which posterior sampling switches to the spectral path.
const SPECTRAL_THRESHOLD: usize = 3000;

/// Number of random Fourier frequencies for the spectral sampler.
const SPECTRAL_FREQUENCIES: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern12,
    Matern32,
    Matern52,
    GammaExponential { gamma: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    /// One shared lengthscale.
    Isotropic,
    /// One lengthscale per input dimension.
    Tensorized,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Kernel {
    pub family: KernelFamily,
    pub mode: KernelMode,
    /// One entry (isotropic) or d entries (tensorized).
    pub lengthscales: Vec<f64>,
    /// Process variance sigma^2, response-squared units.
    pub variance: f64,
}

impl Kernel {
    pub fn new(
        family: KernelFamily,
        mode: KernelMode,
        lengthscales: Vec<f64>,
        variance: f64,
    ) -> Result<Self> {
        if lengthscales.is_empty() || lengthscales.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::InvalidArgument("lengthscales must be positive".into()));
        }
        if mode == KernelMode::Isotropic && lengthscales.len() != 1 {
            return Err(Error::InvalidArgument("isotropic kernel takes one lengthscale".into()));
        }
        if !(variance >= 0.0) {
            return Err(Error::InvalidArgument("kernel variance must be nonnegative".into()));
        }
        if let KernelFamily::GammaExponential { gamma } = family {
            if !(gamma > 0.0 && gamma <= 2.0) {
                return Err(Error::InvalidArgument("gamma must lie in (0, 2]".into()));
            }
        }
        Ok(Self { family, mode, lengthscales, variance })
    }

    fn lengthscale(&self, dim: usize) -> f64 {
        match self.mode {
            KernelMode::Isotropic => self.lengthscales[0],
            KernelMode::Tensorized => self.lengthscales[dim],
        }
    }

    /// Unit-variance correlation r(x, x').
    pub fn correlation(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::GammaExponential { gamma } => {
                // Product over dimensions of 1D gamma-exponentials.
                let sum: f64 = x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .map(|(i, (a, b))| ((a - b).abs() / self.lengthscale(i)).powf(gamma))
                    .sum();
                (-sum).exp()
            }
            _ => {
                // Scaled Euclidean distance inside the 1D closed form.
                let t2: f64 = x
                    .iter()
                    .zip(y)
                    .enumerate()
                    .map(|(i, (a, b))| ((a - b) / self.lengthscale(i)).powi(2))
                    .sum();
                let t = t2.sqrt();
                match self.family {
                    KernelFamily::SquaredExponential => (-0.5 * t2).exp(),
                    KernelFamily::Matern12 => (-t).exp(),
                    KernelFamily::Matern32 => {
                        let a = 3.0_f64.sqrt() * t;
                        (1.0 + a) * (-a).exp()
                    }
                    KernelFamily::Matern52 => {
                        let a = 5.0_f64.sqrt() * t;
                        (1.0 + a + a * a / 3.0) * (-a).exp()
                    }
                    KernelFamily::GammaExponential { .. } => unreachable!(),
                }
            }
        }
    }

    /// Full covariance sigma^2 * r(x, x').
    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != y.len() {
            return Err(Error::InvalidArgument("point dimensions differ".into()));
        }
        if self.mode == KernelMode::Tensorized && self.lengthscales.len() != x.len() {
            return Err(Error::InvalidArgument(
                "tensorized kernel needs one lengthscale per dimension".into(),
            ));
        }
        Ok(self.variance * self.correlation(x, y))
    }
}

/// A trend basis: monomials given as exponent tuples (all-zero = constant).
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrendSpec {
    monomials: Vec<Vec<usize>>,
}

impl TrendSpec {
    pub fn new(monomials: Vec<Vec<usize>>) -> Result<Self> {
        if monomials.is_empty() {
            return Err(Error::Trend("trend must contain at least one function".into()));
        }
        let d = monomials[0].len();
        if monomials.iter().any(|m| m.len() != d) {
            return Err(Error::Trend("inconsistent exponent tuple lengths".into()));
        }
        Ok(Self { monomials })
    }

    /// Constant trend m(x) = beta_0.
    pub fn constant(d: usize) -> Self {
        Self { monomials: vec![vec![0; d]] }
    }

    /// Constant plus all first-degree monomials.
    pub fn linear(d: usize) -> Self {
        let mut monomials = vec![vec![0; d]];
        for i in 0..d {
            let mut e = vec![0; d];
            e[i] = 1;
            monomials.push(e);
        }
        Self { monomials }
    }

    pub fn len(&self) -> usize {
        self.monomials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monomials.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.monomials[0].len()
    }

    pub fn monomials(&self) -> &[Vec<usize>] {
        &self.monomials
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.monomials
            .iter()
            .map(|e| e.iter().zip(x).map(|(&p, &v)| v.powi(p as i32)).product())
            .collect()
    }

    fn eval_matrix(&self, points: &Array2<f64>) -> Array2<f64> {
        let mut f = Array2::zeros((points.nrows(), self.len()));
        for (i, row) in points.rows().into_iter().enumerate() {
            let vals = self.eval(row.as_slice().expect("contiguous row"));
            f.row_mut(i).assign(&Array1::from(vals));
        }
        f
    }
}

/// Hyperparameter estimator choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    MaxLikelihood,
    LooCv,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub estimator: Estimator,
    pub n_starts: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Standard deviation of observation noise per design point.
    pub noise_std: Option<Vec<f64>>,
    /// Skip hyperparameter search and use these lengthscales as-is.
    pub fixed_theta: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            estimator: Estimator::MaxLikelihood,
            n_starts: 10,
            seed: 0,
            max_iter: 200,
            noise_std: None,
            fixed_theta: None,
        }
    }
}

/// How posterior paths are generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMethod {
    /// Dense below [`SPECTRAL_THRESHOLD`] joint points, spectral above.
    Auto,
    /// Exact joint Cholesky of the prior covariance.
    Cholesky,
    /// Random Fourier features (squared-exponential and Matern only).
    Spectral,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct GpModel {
    pub design: Array2<f64>,
    pub responses: Array1<f64>,
    pub trend: TrendSpec,
    /// Kernel with fitted lengthscales and variance.
    pub kernel: Kernel,
    pub beta: Array1<f64>,
    pub noise_std: Vec<f64>,
    /// Relative jitter actually used on the training factorization.
    pub nugget: f64,
    /// Set when the selected lengthscales sit on the search box boundary.
    pub boundary_warning: bool,
    /// (start index, objective reached) per multi-start run.
    pub optimizer_trace: Vec<(usize, f64)>,
    // Cached factors. `noisy` selects the working scale of `chol`:
    // correlation matrix R (noise-free) or full covariance sigma^2 R + Delta.
    chol: Array2<f64>,
    w: Array2<f64>,
    g_chol: Array2<f64>,
    alpha: Array1<f64>,
    noisy: bool,
}

// ---------------------------------------------------------------------------
// small dense helpers

fn solve_lower_vec(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut x = b.clone();
    for i in 0..n {
        let mut s = x[i];
        for j in 0..i {
            s -= l[[i, j]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

fn solve_upper_t_vec(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    // Solves L^T x = b with L lower triangular.
    let n = b.len();
    let mut x = b.clone();
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= l[[j, i]] * x[j];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

fn mul_lower(l: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    let n = x.len();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..=i {
            s += l[[i, j]] * x[j];
        }
        out[i] = s;
    }
    out
}

fn mul_upper_t(l: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
    // Computes L^T x with L lower triangular.
    let n = x.len();
    let mut out = Array1::zeros(n);
    for i in 0..n {
        let mut s = 0.0;
        for j in i..n {
            s += l[[j, i]] * x[j];
        }
        out[i] = s;
    }
    out
}

/// Solves (L L^T) x = b with two rounds of iterative refinement; this keeps
/// residuals near machine precision even when the kernel matrix is badly
/// conditioned (smooth kernels routinely reach condition numbers past 1e10).
fn solve_spd_refined(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let mut x = solve_upper_t_vec(l, &solve_lower_vec(l, b));
    for _ in 0..2 {
        let kx = mul_lower(l, &mul_upper_t(l, &x));
        let r = b - &kx;
        let dx = solve_upper_t_vec(l, &solve_lower_vec(l, &r));
        x += &dx;
    }
    x
}

fn solve_lower_mat(l: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(b.raw_dim());
    for (j, col) in b.columns().into_iter().enumerate() {
        out.column_mut(j).assign(&solve_lower_vec(l, &col.to_owned()));
    }
    out
}

fn standard_normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out.push(r * th.cos());
        out.push(r * th.sin());
    }
    out.truncate(n);
    out
}

/// Cholesky with the jitter ladder; returns (lower factor, jitter used).
fn cholesky_with_nugget(mut a: Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    let mean_diag = (0..n).map(|i| a[[i, i]]).sum::<f64>() / n as f64;
    let mut added = 0.0;
    for &jitter in &NUGGET_LADDER {
        let bump = jitter * mean_diag - added;
        if bump > 0.0 {
            for i in 0..n {
                a[[i, i]] += bump;
            }
            added += bump;
        }
        if let Ok(l) = a.cholesky(UPLO::Lower) {
            return Ok((l, jitter));
        }
    }
    Err(Error::NumericalBreakdown(
        "covariance not positive definite after maximum nugget".into(),
    ))
}

struct Factorized {
    chol: Array2<f64>,
    w: Array2<f64>,
    g_chol: Array2<f64>,
    beta: Array1<f64>,
    alpha: Array1<f64>,
    resid_norm2: f64,
    logdet_k: f64,
    logdet_g: f64,
    nugget: f64,
}

/// GLS machinery shared by every objective and by the final model build.
/// `kmat` is either the correlation matrix or the full covariance.
fn factorize(kmat: Array2<f64>, f: &Array2<f64>, y: &Array1<f64>) -> Result<Factorized> {
    let (chol, nugget) = cholesky_with_nugget(kmat)?;
    let n = y.len();
    let w = solve_lower_mat(&chol, f);
    let g = w.t().dot(&w);
    let g_chol = g
        .cholesky(UPLO::Lower)
        .map_err(|_| Error::Trend("trend functions linearly dependent on the design".into()))?;
    let v = solve_lower_vec(&chol, y);
    let wt_v = w.t().dot(&v);
    let beta = solve_upper_t_vec(&g_chol, &solve_lower_vec(&g_chol, &wt_v));
    let resid_white = &v - &w.dot(&beta);
    let resid_norm2 = resid_white.iter().map(|r| r * r).sum();
    let alpha = solve_spd_refined(&chol, &(y - &f.dot(&beta)));
    let logdet_k = 2.0 * (0..n).map(|i| chol[[i, i]].ln()).sum::<f64>();
    let p = f.ncols();
    let logdet_g = 2.0 * (0..p).map(|i| g_chol[[i, i]].ln()).sum::<f64>();
    Ok(Factorized { chol, w, g_chol, beta, alpha, resid_norm2, logdet_k, logdet_g, nugget })
}

/// Closed-form virtual-LOO mean-square from the factorized model
/// (no refitting): residuals e_i = [B y]_i / B_ii with
/// B = K^{-1} - K^{-1} F (F' K^{-1} F)^{-1} F' K^{-1}.
fn loo_mean_square(fac: &Factorized, y: &Array1<f64>) -> f64 {
    let n = y.len();
    let eye = Array2::eye(n);
    let l_inv = solve_lower_mat(&fac.chol, &eye);
    let k_inv = l_inv.t().dot(&l_inv);
    // K^{-1} F = L^{-T} W.
    let mut kinv_f = Array2::zeros((n, fac.w.ncols()));
    for j in 0..fac.w.ncols() {
        kinv_f
            .column_mut(j)
            .assign(&solve_upper_t_vec(&fac.chol, &fac.w.column(j).to_owned()));
    }
    // T = Lg^{-1} (K^{-1}F)^T, so that (K^{-1}F) G^{-1} (K^{-1}F)^T = T^T T.
    let t = solve_lower_mat(&fac.g_chol, &kinv_f.t().to_owned());
    let b = &k_inv - &t.t().dot(&t);
    let by = b.dot(y);
    let mut acc = 0.0;
    for i in 0..n {
        let e = by[i] / b[[i, i]];
        acc += e * e;
    }
    acc / n as f64
}

fn golden_min(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..iters {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Derivative-free simplex minimizer.
fn nelder_mead(
    mut f: impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    step: f64,
    max_iter: usize,
) -> (Vec<f64>, f64) {
    let k = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..k {
        let mut x = x0.to_vec();
        x[i] += step;
        let fx = f(&x);
        simplex.push((x, fx));
    }
    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
        let (f_best, f_worst) = (simplex[0].1, simplex[k].1);
        if (f_worst - f_best).abs() <= 1e-10 * (f_best.abs() + 1e-12) {
            break;
        }
        let centroid: Vec<f64> = (0..k)
            .map(|j| simplex[..k].iter().map(|(x, _)| x[j]).sum::<f64>() / k as f64)
            .collect();
        let lerp = |t: f64| -> Vec<f64> {
            (0..k).map(|j| centroid[j] + t * (centroid[j] - simplex[k].0[j])).collect()
        };
        let xr = lerp(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = lerp(2.0);
            let fe = f(&xe);
            simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[k - 1].1 {
            simplex[k] = (xr, fr);
        } else {
            let xc = lerp(if fr < simplex[k].1 { 0.5 } else { -0.5 });
            let fc = f(&xc);
            if fc < simplex[k].1.min(fr) {
                simplex[k] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> =
                        entry.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    entry.1 = f(&x);
                    entry.0 = x;
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    simplex.swap_remove(0)
}

impl GpModel {
    /// Fits trend, lengthscales, and variance to noise-free or noisy data.
    pub fn fit(
        design: &Array2<f64>,
        responses: &Array1<f64>,
        trend: TrendSpec,
        family: KernelFamily,
        mode: KernelMode,
        options: &FitOptions,
    ) -> Result<Self> {
        let n = design.nrows();
        let d = design.ncols();
        let p = trend.len();
        if responses.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} responses for {n} design points",
                responses.len()
            )));
        }
        if trend.dimension() != d {
            return Err(Error::Trend(format!(
                "trend dimension {} does not match design dimension {d}",
                trend.dimension()
            )));
        }
        if n <= p {
            return Err(Error::InvalidArgument(format!(
                "need more points than trend functions (n={n}, p={p})"
            )));
        }
        let noisy = options.noise_std.is_some();
        if let Some(ns) = &options.noise_std {
            if ns.len() != n || ns.iter().any(|&s| !(s >= 0.0)) {
                return Err(Error::InvalidArgument(
                    "noise_std must list one nonnegative value per design point".into(),
                ));
            }
        }
        if !noisy {
            for i in 0..n {
                for j in 0..i {
                    let same = (0..d).all(|k| design[[i, k]] == design[[j, k]]);
                    if same {
                        return Err(Error::NumericalBreakdown(format!(
                            "duplicate design rows {j} and {i} in noise-free data"
                        )));
                    }
                }
            }
        }

        let f_mat = trend.eval_matrix(design);
        let n_theta = match mode {
            KernelMode::Isotropic => 1,
            KernelMode::Tensorized => d,
        };

        // Search box: per-dimension design range times [1e-3, 1e3].
        let mut ranges = Vec::with_capacity(n_theta);
        for t in 0..n_theta {
            let r = if mode == KernelMode::Isotropic {
                (0..d)
                    .map(|k| {
                        let col = design.column(k);
                        col.iter().cloned().fold(f64::MIN, f64::max)
                            - col.iter().cloned().fold(f64::MAX, f64::min)
                    })
                    .fold(0.0, f64::max)
            } else {
                let col = design.column(t);
                col.iter().cloned().fold(f64::MIN, f64::max)
                    - col.iter().cloned().fold(f64::MAX, f64::min)
            };
            ranges.push(if r > 0.0 { r } else { 1.0 });
        }
        let log_lo: Vec<f64> = ranges.iter().map(|r| (1e-3 * r).ln()).collect();
        let log_hi: Vec<f64> = ranges.iter().map(|r| (1e3 * r).ln()).collect();

        let var_y = {
            let m = responses.sum() / n as f64;
            responses.iter().map(|y| (y - m).powi(2)).sum::<f64>() / n as f64
        };

        let make_kernel = |theta: &[f64]| {
            Kernel::new(family, mode, theta.to_vec(), 1.0).expect("positive theta")
        };
        let corr_matrix = |kernel: &Kernel| -> Array2<f64> {
            let mut r = Array2::eye(n);
            for i in 0..n {
                for j in 0..i {
                    let v = kernel.correlation(
                        design.row(i).as_slice().expect("row"),
                        design.row(j).as_slice().expect("row"),
                    );
                    r[[i, j]] = v;
                    r[[j, i]] = v;
                }
            }
            r
        };

        // Objective over clamped log-lengthscales. Returns +inf on failure so
        // the simplex walks away from degenerate regions.
        let objective = |lt: &[f64]| -> f64 {
            let theta: Vec<f64> = lt
                .iter()
                .enumerate()
                .map(|(i, &v)| v.clamp(log_lo[i], log_hi[i]).exp())
                .collect();
            let kernel = make_kernel(&theta);
            let r = corr_matrix(&kernel);
            match (options.estimator, noisy) {
                (Estimator::MaxLikelihood, false) => match factorize(r, &f_mat, responses) {
                    Ok(fac) => {
                        let sigma2 = (fac.resid_norm2 / (n - p) as f64).max(1e-300);
                        (n - p) as f64 * sigma2.ln() + fac.logdet_k + fac.logdet_g
                    }
                    Err(_) => f64::INFINITY,
                },
                (Estimator::LooCv, false) => match factorize(r, &f_mat, responses) {
                    Ok(fac) => loo_mean_square(&fac, responses),
                    Err(_) => f64::INFINITY,
                },
                (_, true) => {
                    let ns = options.noise_std.as_ref().expect("noisy");
                    let crit = |log_s2: f64| -> f64 {
                        let s2 = log_s2.exp();
                        let mut c = &r * s2;
                        for i in 0..n {
                            c[[i, i]] += ns[i] * ns[i];
                        }
                        match factorize(c, &f_mat, responses) {
                            Ok(fac) => match options.estimator {
                                Estimator::MaxLikelihood => {
                                    fac.logdet_k + fac.logdet_g + fac.resid_norm2
                                }
                                Estimator::LooCv => loo_mean_square(&fac, responses),
                            },
                            Err(_) => f64::INFINITY,
                        }
                    };
                    let lo = (1e-6 * var_y.max(1e-300)).ln();
                    let hi = (1e3 * var_y.max(1e-300)).ln();
                    crit(golden_min(&crit, lo, hi, 40))
                }
            }
        };

        let mut boundary_warning = false;
        let (theta, trace) = if let Some(theta) = &options.fixed_theta {
            if theta.len() != n_theta || theta.iter().any(|&t| !(t > 0.0)) {
                return Err(Error::InvalidArgument(format!(
                    "fixed_theta needs {n_theta} positive entries"
                )));
            }
            (theta.clone(), Vec::new())
        } else {
            let mut best: Option<(Vec<f64>, f64)> = None;
            let mut trace = Vec::new();
            for s in 0..options.n_starts.max(1) {
                let mut stream = rng::stream(options.seed, s as u64);
                let x0: Vec<f64> = (0..n_theta)
                    .map(|i| log_lo[i] + stream.gen::<f64>() * (log_hi[i] - log_lo[i]))
                    .collect();
                let (x, fx) = nelder_mead(&objective, &x0, 0.5, options.max_iter);
                trace.push((s, fx));
                if best.as_ref().map_or(true, |(_, fb)| fx < *fb) {
                    best = Some((x, fx));
                }
            }
            let (x, fx) = best.expect("at least one start");
            if !fx.is_finite() {
                return Err(Error::NumericalBreakdown(
                    "every hyperparameter start failed to factorize".into(),
                ));
            }
            let theta: Vec<f64> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let c = v.clamp(log_lo[i], log_hi[i]);
                    if (c - log_lo[i]).abs() < 1e-8 || (c - log_hi[i]).abs() < 1e-8 {
                        boundary_warning = true;
                    }
                    c.exp()
                })
                .collect();
            (theta, trace)
        };

        // Final build at the selected lengthscales.
        let kernel_unit = make_kernel(&theta);
        let r = corr_matrix(&kernel_unit);
        let (fac, sigma2, noise_std) = if noisy {
            let ns = options.noise_std.clone().expect("noisy");
            let crit = |log_s2: f64| -> f64 {
                let s2 = log_s2.exp();
                let mut c = &r * s2;
                for i in 0..n {
                    c[[i, i]] += ns[i] * ns[i];
                }
                match factorize(c, &f_mat, responses) {
                    Ok(fac) => match options.estimator {
                        Estimator::MaxLikelihood => fac.logdet_k + fac.logdet_g + fac.resid_norm2,
                        Estimator::LooCv => loo_mean_square(&fac, responses),
                    },
                    Err(_) => f64::INFINITY,
                }
            };
            let lo = (1e-6 * var_y.max(1e-300)).ln();
            let hi = (1e3 * var_y.max(1e-300)).ln();
            let s2 = golden_min(crit, lo, hi, 60).exp();
            let mut c = &r * s2;
            for i in 0..n {
                c[[i, i]] += ns[i] * ns[i];
            }
            (factorize(c, &f_mat, responses)?, s2, ns)
        } else {
            let fac = factorize(r, &f_mat, responses)?;
            let sigma2 = fac.resid_norm2 / (n - p) as f64;
            (fac, sigma2, vec![0.0; n])
        };

        Ok(Self {
            design: design.clone(),
            responses: responses.clone(),
            trend,
            kernel: Kernel { variance: sigma2, ..kernel_unit },
            beta: fac.beta.clone(),
            noise_std,
            nugget: fac.nugget,
            boundary_warning,
            optimizer_trace: trace,
            chol: fac.chol,
            w: fac.w,
            g_chol: fac.g_chol,
            alpha: fac.alpha,
            noisy,
        })
    }

    pub fn dimension(&self) -> usize {
        self.design.ncols()
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    /// Cross-covariance vector between x and the design, in the working scale
    /// of the cached factorization (correlation if noise-free).
    fn kvec(&self, x: &[f64]) -> Array1<f64> {
        let scale = if self.noisy { self.kernel.variance } else { 1.0 };
        let mut k = Array1::zeros(self.n());
        for (i, row) in self.design.rows().into_iter().enumerate() {
            k[i] = scale * self.kernel.correlation(x, row.as_slice().expect("row"));
        }
        k
    }

    /// The whitened pieces (s, t) entering the posterior covariance.
    fn cov_terms(&self, x: &[f64]) -> (Array1<f64>, Array1<f64>) {
        let k = self.kvec(x);
        let s = solve_lower_vec(&self.chol, &k);
        let f = Array1::from(self.trend.eval(x));
        let u = &f - &self.w.t().dot(&s);
        let t = solve_lower_vec(&self.g_chol, &u);
        (s, t)
    }

    /// Posterior mean at x.
    pub fn predict_mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let f = Array1::from(self.trend.eval(x));
        Ok(f.dot(&self.beta) + self.kvec(x).dot(&self.alpha))
    }

    /// Posterior (mean, variance) at x; the variance carries the
    /// trend-estimation inflation of universal kriging.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let mean = self.predict_mean(x)?;
        let (s, t) = self.cov_terms(x);
        let sigma2 = self.kernel.variance;
        let raw = if self.noisy {
            sigma2 - s.dot(&s) + t.dot(&t)
        } else {
            sigma2 * (1.0 - s.dot(&s) + t.dot(&t))
        };
        if raw < -1e-9 * sigma2 {
            return Err(Error::NumericalBreakdown(format!(
                "posterior variance {raw:.3e} below tolerance"
            )));
        }
        Ok((mean, raw.max(0.0)))
    }

    /// Posterior covariance between two prediction points.
    pub fn predict_cov(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(y)?;
        let (sx, tx) = self.cov_terms(x);
        let (sy, ty) = self.cov_terms(y);
        let r = self.kernel.correlation(x, y);
        let sigma2 = self.kernel.variance;
        Ok(if self.noisy {
            sigma2 * r - sx.dot(&sy) + tx.dot(&ty)
        } else {
            sigma2 * (r - sx.dot(&sy) + tx.dot(&ty))
        })
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dimension() {
            return Err(Error::InvalidArgument(format!(
                "point dimension {} does not match model dimension {}",
                x.len(),
                self.dimension()
            )));
        }
        Ok(())
    }

    /// Draws `q` joint posterior realizations at `points` (returned q x m) by
    /// kriging conditioning: Z_n(x) = m_n(x) - m~_n(x) + Z~(x), where Z~ is an
    /// unconditioned path and m~_n is the kriging mean rebuilt from its design
    /// values. The identity pins design values exactly for any Z~, which is
    /// what licenses the approximate spectral prior on large point sets.
    pub fn sample_posterior(&self, points: &Array2<f64>, q: usize, seed: u64) -> Result<Array2<f64>> {
        self.sample_posterior_with(points, q, seed, SampleMethod::Auto)
    }

    pub fn sample_posterior_with(
        &self,
        points: &Array2<f64>,
        q: usize,
        seed: u64,
        method: SampleMethod,
    ) -> Result<Array2<f64>> {
        if q == 0 {
            return Err(Error::InvalidArgument("need at least one realization".into()));
        }
        if points.ncols() != self.dimension() {
            return Err(Error::InvalidArgument("point dimension mismatch".into()));
        }
        let m = points.nrows();
        let n = self.n();
        let mean_pts: Array1<f64> = points
            .rows()
            .into_iter()
            .map(|r| self.predict_mean(r.as_slice().expect("row")))
            .collect::<Result<_>>()?;
        if self.kernel.variance == 0.0 {
            let mut out = Array2::zeros((q, m));
            for j in 0..q {
                out.row_mut(j).assign(&mean_pts);
            }
            return Ok(out);
        }

        let spectral_ok = !matches!(self.kernel.family, KernelFamily::GammaExponential { .. });
        let use_spectral = match method {
            SampleMethod::Cholesky => false,
            SampleMethod::Spectral => {
                if !spectral_ok {
                    return Err(Error::InvalidArgument(
                        "spectral sampling supports squared-exponential and Matern kernels only"
                            .into(),
                    ));
                }
                true
            }
            SampleMethod::Auto => spectral_ok && m + n > SPECTRAL_THRESHOLD,
        };

        // Unconditioned zero-mean paths at (points, design), q x (m+n).
        // Prediction points that coincide with design rows reuse the design
        // copy of Z~: a duplicated row would make the joint prior singular
        // and hand the two copies different nugget-level noise, breaking the
        // conditioning identity at exactly the points it must pin.
        let design_alias: Vec<Option<usize>> = points
            .rows()
            .into_iter()
            .map(|r| {
                self.design
                    .rows()
                    .into_iter()
                    .position(|dr| dr.iter().zip(r.iter()).all(|(a, b)| a == b))
            })
            .collect();
        let extra_rows: Vec<usize> =
            (0..m).filter(|&i| design_alias[i].is_none()).collect();
        let mut extra = Array2::zeros((extra_rows.len(), points.ncols()));
        for (k, &i) in extra_rows.iter().enumerate() {
            extra.row_mut(k).assign(&points.row(i));
        }
        let prior_compact = if use_spectral {
            self.spectral_prior_paths(&extra, q, seed)?
        } else {
            self.dense_prior_paths(&extra, q, seed)?
        };
        // Re-expand to the caller's point order: q x (m + n).
        let me = extra_rows.len();
        let mut prior = Array2::zeros((q, m + n));
        for j in 0..q {
            for (k, &i) in extra_rows.iter().enumerate() {
                prior[[j, i]] = prior_compact[[j, k]];
            }
            for i in 0..m {
                if let Some(di) = design_alias[i] {
                    prior[[j, i]] = prior_compact[[j, me + di]];
                }
            }
            for di in 0..n {
                prior[[j, m + di]] = prior_compact[[j, me + di]];
            }
        }

        // Cross-covariances between the m prediction points and the design.
        let mut cross = Array2::zeros((m, n));
        for (j, row) in points.rows().into_iter().enumerate() {
            cross.row_mut(j).assign(&self.kvec(row.as_slice().expect("row")));
        }
        let f_pts = self.trend.eval_matrix(points);
        let f_des = self.trend.eval_matrix(&self.design);

        let mut out = Array2::zeros((q, m));
        let mut noise_stream = rng::stream(seed, u64::MAX - 1);
        for j in 0..q {
            let path = prior.row(j);
            let z_pts = path.slice(s![..m]).to_owned();
            let mut z_des = path.slice(s![m..]).to_owned();
            if self.noisy {
                // Pseudo-observations carry the same noise as the real data.
                let eps = standard_normals(&mut noise_stream, n);
                for i in 0..n {
                    z_des[i] += self.noise_std[i] * eps[i];
                }
            }
            // Kriging mean of the pseudo data through the cached factors,
            // refined so the conditioning identity pins design values even
            // on ill-conditioned kernel matrices.
            let v = solve_lower_vec(&self.chol, &z_des);
            let wt_v = self.w.t().dot(&v);
            let beta_t =
                solve_upper_t_vec(&self.g_chol, &solve_lower_vec(&self.g_chol, &wt_v));
            let alpha_t = solve_spd_refined(&self.chol, &(&z_des - &f_des.dot(&beta_t)));
            let m_tilde = f_pts.dot(&beta_t) + cross.dot(&alpha_t);
            let mut row = out.row_mut(j);
            for i in 0..m {
                row[i] = mean_pts[i] - m_tilde[i] + z_pts[i];
            }
        }
        Ok(out)
    }

    /// Exact joint prior: dense Cholesky of the kernel over (points, design).
    fn dense_prior_paths(&self, points: &Array2<f64>, q: usize, seed: u64) -> Result<Array2<f64>> {
        let m = points.nrows();
        let n = self.n();
        let total = m + n;
        let mut joint = Array2::zeros((total, points.ncols()));
        joint.slice_mut(s![..m, ..]).assign(points);
        joint.slice_mut(s![m.., ..]).assign(&self.design);
        let mut cov = Array2::zeros((total, total));
        for i in 0..total {
            for j in 0..=i {
                let v = self.kernel.variance
                    * self.kernel.correlation(
                        joint.row(i).as_slice().expect("row"),
                        joint.row(j).as_slice().expect("row"),
                    );
                cov[[i, j]] = v;
                cov[[j, i]] = v;
            }
        }
        let (l, _) = cholesky_with_nugget(cov)?;
        let mut out = Array2::zeros((q, total));
        for j in 0..q {
            let mut stream = rng::stream(seed, j as u64);
            let z = Array1::from(standard_normals(&mut stream, total));
            out.row_mut(j).assign(&l.dot(&z));
        }
        Ok(out)
    }

    /// Approximate stationary prior via random Fourier features. Frequencies
    /// are drawn once from the kernel's spectral measure and shared across
    /// realizations; amplitudes are fresh Gaussians per realization.
    fn spectral_prior_paths(
        &self,
        points: &Array2<f64>,
        q: usize,
        seed: u64,
    ) -> Result<Array2<f64>> {
        let d = self.dimension();
        let m = points.nrows();
        let n = self.n();
        let total = m + n;
        let nf = SPECTRAL_FREQUENCIES;
        let mut freq_stream = rng::stream(seed, u64::MAX);
        // Matern spectral measure: multivariate t with 2*nu degrees of
        // freedom and per-dimension scale 1/theta_i; SE: Gaussian 1/theta_i.
        let dof: Option<usize> = match self.kernel.family {
            KernelFamily::SquaredExponential => None,
            KernelFamily::Matern12 => Some(1),
            KernelFamily::Matern32 => Some(3),
            KernelFamily::Matern52 => Some(5),
            KernelFamily::GammaExponential { .. } => {
                return Err(Error::InvalidArgument(
                    "no spectral sampler for the gamma-exponential kernel".into(),
                ))
            }
        };
        let mut omega = Array2::zeros((nf, d));
        for k in 0..nf {
            let z = standard_normals(&mut freq_stream, d);
            let scale = match dof {
                None => 1.0,
                Some(nu2) => {
                    let chi2: f64 =
                        standard_normals(&mut freq_stream, nu2).iter().map(|v| v * v).sum();
                    (nu2 as f64 / chi2.max(1e-300)).sqrt()
                }
            };
            for i in 0..d {
                let theta = match self.kernel.mode {
                    KernelMode::Isotropic => self.kernel.lengthscales[0],
                    KernelMode::Tensorized => self.kernel.lengthscales[i],
                };
                omega[[k, i]] = scale * z[i] / theta;
            }
        }
        // Gaussian amplitudes, one pair of columns per frequency and one row
        // per realization.
        let mut amps = Array2::zeros((2 * nf, q));
        for j in 0..q {
            let mut stream = rng::stream(seed, j as u64);
            amps.column_mut(j)
                .assign(&Array1::from(standard_normals(&mut stream, 2 * nf)));
        }
        let amp = (self.kernel.variance / nf as f64).sqrt();
        let mut joint = Array2::zeros((total, d));
        joint.slice_mut(s![..m, ..]).assign(points);
        joint.slice_mut(s![m.., ..]).assign(&self.design);
        // Stream the feature matrix in point blocks to bound memory.
        let block = 2048;
        let mut out = Array2::zeros((q, total));
        let mut start = 0;
        while start < total {
            let stop = (start + block).min(total);
            let rows = stop - start;
            let phase = joint.slice(s![start..stop, ..]).dot(&omega.t()); // rows x nf
            let mut phi = Array2::zeros((rows, 2 * nf));
            for i in 0..rows {
                for k in 0..nf {
                    let p = phase[[i, k]];
                    phi[[i, 2 * k]] = amp * p.cos();
                    phi[[i, 2 * k + 1]] = amp * p.sin();
                }
            }
            let vals = phi.dot(&amps); // rows x q
            out.slice_mut(s![.., start..stop]).assign(&vals.t());
            start = stop;
        }
        Ok(out)
    }

    /// Folds a fresh observation (x_new, value) into one posterior
    /// realization sampled at `points` (which must contain x_new).
    pub fn update_realization(
        &self,
        points: &Array2<f64>,
        realization: &Array1<f64>,
        new_point: &[f64],
        true_value: f64,
    ) -> Result<Array1<f64>> {
        self.check_point(new_point)?;
        if realization.len() != points.nrows() {
            return Err(Error::InvalidArgument(
                "realization length does not match point count".into(),
            ));
        }
        let idx = points
            .rows()
            .into_iter()
            .position(|r| {
                r.iter()
                    .zip(new_point)
                    .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0))
            })
            .ok_or_else(|| {
                Error::InvalidArgument("realization does not include the new point".into())
            })?;
        let k_nn = self.predict_cov(new_point, new_point)?;
        if k_nn < 1e-12 * self.kernel.variance {
            return Err(Error::DegenerateModel(
                "new point already resolved by the design (zero posterior variance)".into(),
            ));
        }
        let innovation = true_value - realization[idx];
        let mut out = realization.clone();
        for (j, row) in points.rows().into_iter().enumerate() {
            let k_j = self.predict_cov(new_point, row.as_slice().expect("row"))?;
            out[j] += k_j / k_nn * innovation;
        }
        Ok(out)
    }

    /// Index of the candidate with the largest posterior variance
    /// (lowest index wins ties).
    pub fn next_design_point(&self, candidates: &Array2<f64>) -> Result<usize> {
        if candidates.nrows() == 0 {
            return Err(Error::InvalidArgument("empty candidate set".into()));
        }
        let mut best = 0;
        let mut best_var = f64::NEG_INFINITY;
        for (i, row) in candidates.rows().into_iter().enumerate() {
            let (_, v) = self.predict(row.as_slice().expect("row"))?;
            // Rounding-level variances count as exact ties (design points).
            let v = if v < 1e-9 * self.kernel.variance { 0.0 } else { v };
            if v > best_var {
                best_var = v;
                best = i;
            }
        }
        Ok(best)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }
}
