//! Univariate orthonormal polynomial families and multivariate tensor bases
//! over total-degree truncation sets.
//!
//! All families are orthonormal with respect to the *probability* weight of
//! the matching marginal (uniform on [-1,1], standard normal, Gamma(a+1,1),
//! Beta-type on [-1,1]), so `psi_0 == 1` and `E[psi_j psi_k] = delta_jk`.

use ndarray::{Array1, Array2};
use ndarray_linalg::Eigh;

use crate::distributions::MarginalDistribution;
use crate::error::{Error, Result};

/// Hard cap on the univariate degree (normalized recurrences stay stable
/// well past this, the cap guards against accidental huge requests).
pub const MAX_DEGREE: usize = 30;

/// Cap on the truncation-set cardinality.
pub const MAX_CARDINALITY: usize = 1_000_000;

/// Classical orthonormal family.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum PolynomialFamily {
    /// Legendre, uniform weight on [-1,1].
    Legendre,
    /// Probabilists' Hermite, standard normal weight.
    Hermite,
    /// Generalized Laguerre; weight is the Gamma(a+1, 1) density.
    Laguerre { a: f64 },
    /// Jacobi; weight proportional to (1-x)^a (1+x)^b on [-1,1].
    Jacobi { a: f64, b: f64 },
}

impl PolynomialFamily {
    /// Family paired with a marginal in standardized space: Legendre for
    /// uniform marginals, Hermite for everything mapped to N(0,1).
    pub fn for_marginal(m: &MarginalDistribution) -> Self {
        if m.is_uniform() {
            PolynomialFamily::Legendre
        } else {
            PolynomialFamily::Hermite
        }
    }

    /// Monic three-term recurrence coefficients (alpha_k, beta_k) of the
    /// family w.r.t. its probability weight:
    /// `p_{k+1} = (x - alpha_k) p_k - beta_k p_{k-1}`.
    fn recurrence(&self, k: usize) -> (f64, f64) {
        let kf = k as f64;
        match *self {
            PolynomialFamily::Legendre => {
                let beta = if k == 0 { 1.0 } else { kf * kf / (4.0 * kf * kf - 1.0) };
                (0.0, beta)
            }
            PolynomialFamily::Hermite => (0.0, if k == 0 { 1.0 } else { kf }),
            PolynomialFamily::Laguerre { a } => {
                let alpha = 2.0 * kf + a + 1.0;
                let beta = if k == 0 { 1.0 } else { kf * (kf + a) };
                (alpha, beta)
            }
            PolynomialFamily::Jacobi { a, b } => {
                // Conventional Jacobi recurrences in (alpha, beta) = (a, b).
                let s = a + b;
                let alpha = if k == 0 {
                    (b - a) / (s + 2.0)
                } else {
                    (b * b - a * a) / ((2.0 * kf + s) * (2.0 * kf + s + 2.0))
                };
                let beta = if k == 0 {
                    1.0
                } else if k == 1 {
                    4.0 * (1.0 + a) * (1.0 + b) / ((2.0 + s).powi(2) * (3.0 + s))
                } else {
                    4.0 * kf * (kf + a) * (kf + b) * (kf + s)
                        / ((2.0 * kf + s).powi(2) * (2.0 * kf + s + 1.0) * (2.0 * kf + s - 1.0))
                };
                (alpha, beta)
            }
        }
    }
}

/// Value of the orthonormal polynomial `psi_j` at `x`.
///
/// Runs the normalized recurrence directly, which avoids the factorial-sized
/// norms of the classical forms.
pub fn eval_orthonormal(family: PolynomialFamily, degree: usize, x: f64) -> Result<f64> {
    Ok(*eval_orthonormal_upto(family, degree, x)?.last().expect("nonempty"))
}

/// Evaluates `psi_0(x), ..., psi_p(x)` in one pass of the normalized
/// recurrence `sqrt(beta_{k+1}) psi_{k+1} = (x - alpha_k) psi_k - sqrt(beta_k) psi_{k-1}`.
pub fn eval_orthonormal_upto(family: PolynomialFamily, max_degree: usize, x: f64) -> Result<Vec<f64>> {
    if max_degree > MAX_DEGREE {
        return Err(Error::InvalidArgument(format!(
            "degree {max_degree} exceeds the configured maximum {MAX_DEGREE}"
        )));
    }
    let mut out = Vec::with_capacity(max_degree + 1);
    out.push(1.0);
    let mut prev = 0.0;
    let mut cur = 1.0;
    for k in 0..max_degree {
        let (alpha_k, beta_k) = family.recurrence(k);
        let (_, beta_next) = family.recurrence(k + 1);
        let next = ((x - alpha_k) * cur - if k == 0 { 0.0 } else { beta_k.sqrt() * prev })
            / beta_next.sqrt();
        prev = cur;
        cur = next;
        out.push(cur);
    }
    Ok(out)
}

/// Gauss quadrature rule of the family's probability weight, by
/// Golub-Welsch on the Jacobi matrix.
pub fn gauss_rule(family: PolynomialFamily, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::InvalidArgument("quadrature order must be >= 1".into()));
    }
    let mut jacobi = Array2::<f64>::zeros((n, n));
    for k in 0..n {
        let (alpha, _) = family.recurrence(k);
        jacobi[[k, k]] = alpha;
        if k + 1 < n {
            let (_, beta) = family.recurrence(k + 1);
            let off = beta.sqrt();
            jacobi[[k, k + 1]] = off;
            jacobi[[k + 1, k]] = off;
        }
    }
    let (eigvals, eigvecs) = jacobi
        .eigh(ndarray_linalg::UPLO::Lower)
        .map_err(|e| Error::NumericalBreakdown(format!("Golub-Welsch eigensolve: {e}")))?;
    let nodes: Vec<f64> = eigvals.to_vec();
    let weights: Vec<f64> = (0..n).map(|j| eigvecs[[0, j]].powi(2)).collect();
    Ok((nodes, weights))
}

/// The total-degree truncation set of d-tuples with |alpha| <= p,
/// in graded lexicographic order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MultiIndexSet {
    d: usize,
    p: usize,
    indices: Vec<Vec<usize>>,
}

/// C(d+p, p) without overflow for the sizes accepted here.
pub fn total_degree_cardinality(d: usize, p: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=p {
        c = c * (d + i) / i;
    }
    c
}

impl MultiIndexSet {
    /// Enumerates all alpha with |alpha| <= p, graded lexicographically.
    pub fn total_degree(d: usize, p: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidArgument("dimension must be >= 1".into()));
        }
        let card = total_degree_cardinality(d, p);
        if card > MAX_CARDINALITY {
            return Err(Error::ResourceLimit(format!(
                "truncation set cardinality {card} exceeds {MAX_CARDINALITY}"
            )));
        }
        let mut indices = Vec::with_capacity(card);
        let mut alpha = vec![0usize; d];
        for degree in 0..=p {
            compositions_lex(&mut alpha, 0, degree, &mut indices);
        }
        debug_assert_eq!(indices.len(), card);
        Ok(Self { d, p, indices })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    pub fn max_degree(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[Vec<usize>] {
        &self.indices
    }

    /// CSV serialization, one multi-index per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for alpha in &self.indices {
            let row: Vec<String> = alpha.iter().map(|a| a.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Writes all d-tuples with fixed total degree, lexicographically
/// (first coordinate most significant, descending-free classic lex order).
fn compositions_lex(alpha: &mut Vec<usize>, pos: usize, remaining: usize, out: &mut Vec<Vec<usize>>) {
    let d = alpha.len();
    if pos == d - 1 {
        alpha[pos] = remaining;
        out.push(alpha.clone());
        return;
    }
    for v in (0..=remaining).rev() {
        alpha[pos] = v;
        compositions_lex(alpha, pos + 1, remaining - v, out);
    }
    alpha[pos] = 0;
}

/// Tensor-product multivariate basis: one family per input dimension over a
/// total-degree multi-index set.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MultivariateBasis {
    families: Vec<PolynomialFamily>,
    index_set: MultiIndexSet,
}

impl MultivariateBasis {
    pub fn new(families: Vec<PolynomialFamily>, index_set: MultiIndexSet) -> Result<Self> {
        if families.len() != index_set.dimension() {
            return Err(Error::InvalidArgument(format!(
                "{} families for a {}-dimensional index set",
                families.len(),
                index_set.dimension()
            )));
        }
        Ok(Self { families, index_set })
    }

    /// Basis paired to an input model's marginals over A^{d,p}.
    pub fn for_input_model(
        model: &crate::distributions::InputModel,
        p: usize,
    ) -> Result<Self> {
        let families = model.marginals().iter().map(PolynomialFamily::for_marginal).collect();
        let index_set = MultiIndexSet::total_degree(model.dimension(), p)?;
        Self::new(families, index_set)
    }

    pub fn dimension(&self) -> usize {
        self.index_set.dimension()
    }

    pub fn len(&self) -> usize {
        self.index_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index_set.is_empty()
    }

    pub fn index_set(&self) -> &MultiIndexSet {
        &self.index_set
    }

    pub fn families(&self) -> &[PolynomialFamily] {
        &self.families
    }

    /// Row of all basis values `Psi_alpha(u)` at a standardized point.
    pub fn eval_row(&self, u: &[f64]) -> Result<Array1<f64>> {
        if u.len() != self.dimension() {
            return Err(Error::InvalidArgument(format!(
                "point dimension {} does not match basis dimension {}",
                u.len(),
                self.dimension()
            )));
        }
        // Per-dimension table of psi_j(u_i) for j <= p, then products.
        let p = self.index_set.max_degree();
        let tables: Vec<Vec<f64>> = self
            .families
            .iter()
            .zip(u)
            .map(|(family, &ui)| eval_orthonormal_upto(*family, p, ui))
            .collect::<Result<_>>()?;
        let mut row = Array1::zeros(self.len());
        for (j, alpha) in self.index_set.indices().iter().enumerate() {
            let mut v = 1.0;
            for (i, &a) in alpha.iter().enumerate() {
                if a > 0 {
                    v *= tables[i][a];
                }
            }
            row[j] = v;
        }
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn degree_zero_is_one() {
        for fam in [
            PolynomialFamily::Legendre,
            PolynomialFamily::Hermite,
            PolynomialFamily::Laguerre { a: 1.3 },
            PolynomialFamily::Jacobi { a: 0.5, b: 1.5 },
        ] {
            assert_eq!(eval_orthonormal(fam, 0, 0.37).unwrap(), 1.0);
        }
    }

    #[test]
    fn legendre_linear_norm() {
        let v = eval_orthonormal(PolynomialFamily::Legendre, 1, 0.5).unwrap();
        assert_abs_diff_eq!(v, 3.0_f64.sqrt() * 0.5, epsilon = 1e-12);
    }

    #[test]
    fn hermite_quadratic() {
        // He_2(x) = x^2 - 1, norm sqrt(2!).
        let v = eval_orthonormal(PolynomialFamily::Hermite, 2, 2.0).unwrap();
        assert_abs_diff_eq!(v, 3.0 / 2.0_f64.sqrt(), epsilon = 1e-9);
    }

    #[test]
    fn degree_above_cap_rejected() {
        assert!(eval_orthonormal(PolynomialFamily::Legendre, MAX_DEGREE + 1, 0.0).is_err());
    }

    #[test]
    fn orthonormality_by_gauss_quadrature() {
        for fam in [
            PolynomialFamily::Legendre,
            PolynomialFamily::Hermite,
            PolynomialFamily::Laguerre { a: 0.8 },
            PolynomialFamily::Jacobi { a: 0.5, b: 2.0 },
        ] {
            let (nodes, weights) = gauss_rule(fam, 64).unwrap();
            for j in 0..=10usize {
                for k in 0..=10usize {
                    let integral: f64 = nodes
                        .iter()
                        .zip(&weights)
                        .map(|(&x, &w)| {
                            w * eval_orthonormal(fam, j, x).unwrap()
                                * eval_orthonormal(fam, k, x).unwrap()
                        })
                        .sum();
                    let expected = if j == k { 1.0 } else { 0.0 };
                    assert!(
                        (integral - expected).abs() < 1e-10,
                        "{fam:?} <{j},{k}> = {integral}"
                    );
                }
            }
        }
    }

    #[test]
    fn total_degree_cardinalities() {
        assert_eq!(MultiIndexSet::total_degree(3, 5).unwrap().len(), 56);
        assert_eq!(MultiIndexSet::total_degree(1, 7).unwrap().len(), 8);
        assert_eq!(MultiIndexSet::total_degree(15, 3).unwrap().len(), 816);
    }

    #[test]
    fn graded_lex_order_and_zero_index() {
        let set = MultiIndexSet::total_degree(2, 2).unwrap();
        let expect: Vec<Vec<usize>> = vec![
            vec![0, 0],
            vec![1, 0],
            vec![0, 1],
            vec![2, 0],
            vec![1, 1],
            vec![0, 2],
        ];
        assert_eq!(set.indices(), expect.as_slice());
    }

    #[test]
    fn downward_closed() {
        let set = MultiIndexSet::total_degree(3, 4).unwrap();
        let contains = |alpha: &[usize]| set.indices().iter().any(|a| a.as_slice() == alpha);
        for alpha in set.indices() {
            let mut beta = alpha.clone();
            for i in 0..3 {
                if beta[i] > 0 {
                    beta[i] -= 1;
                    assert!(contains(&beta));
                    beta[i] += 1;
                }
            }
        }
    }

    #[test]
    fn cardinality_cap() {
        assert!(matches!(
            MultiIndexSet::total_degree(50, 10),
            Err(Error::ResourceLimit(_))
        ));
    }

    #[test]
    fn basis_row_products() {
        let set = MultiIndexSet::total_degree(2, 2).unwrap();
        let basis =
            MultivariateBasis::new(vec![PolynomialFamily::Legendre; 2], set).unwrap();
        let u = [0.5, -0.5];
        let row = basis.eval_row(&u).unwrap();
        assert_eq!(row[0], 1.0);
        // alpha = (1,1) sits at position 4 in graded lex order.
        assert_abs_diff_eq!(row[4], -0.75, epsilon = 1e-12);
        for (j, alpha) in basis.index_set().indices().iter().enumerate() {
            let direct: f64 = alpha
                .iter()
                .enumerate()
                .map(|(i, &a)| eval_orthonormal(PolynomialFamily::Legendre, a, u[i]).unwrap())
                .product();
            assert_abs_diff_eq!(row[j], direct, epsilon = 0.0);
        }
    }

    #[test]
    fn multivariate_orthonormality_by_tensor_quadrature() {
        let set = MultiIndexSet::total_degree(2, 6).unwrap();
        let basis = MultivariateBasis::new(
            vec![PolynomialFamily::Legendre, PolynomialFamily::Hermite],
            set,
        )
        .unwrap();
        let (n1, w1) = gauss_rule(PolynomialFamily::Legendre, 16).unwrap();
        let (n2, w2) = gauss_rule(PolynomialFamily::Hermite, 16).unwrap();
        let m = basis.len();
        let mut gram = Array2::<f64>::zeros((m, m));
        for (i1, &x1) in n1.iter().enumerate() {
            for (i2, &x2) in n2.iter().enumerate() {
                let row = basis.eval_row(&[x1, x2]).unwrap();
                let w = w1[i1] * w2[i2];
                for a in 0..m {
                    for b in 0..m {
                        gram[[a, b]] += w * row[a] * row[b];
                    }
                }
            }
        }
        for a in 0..m {
            for b in 0..m {
                let expected = if a == b { 1.0 } else { 0.0 };
                assert!((gram[[a, b]] - expected).abs() < 1e-10, "({a},{b}) {}", gram[[a, b]]);
            }
        }
    }

    #[test]
    fn index_set_csv() {
        let set = MultiIndexSet::total_degree(2, 1).unwrap();
        assert_eq!(set.to_csv(), "0,0\n1,0\n0,1\n");
    }
}
