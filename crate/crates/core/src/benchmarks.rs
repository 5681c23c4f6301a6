//! The four reference models: Ishigami, G-Sobol, Morris, and a 23-member
//! truss with a linear-elastic bar-element solver.

use ndarray::{Array1, Array2};
use ndarray_linalg::cholesky::Cholesky;
use ndarray_linalg::UPLO;

use crate::distributions::{InputModel, MarginalDistribution};
use crate::error::{Error, Result};
use crate::rng;
use crate::sobol::{
    pick_freeze_first_order, Evaluator, EstimatorTag, SobolReport,
};

/// sin x1 + 7 sin^2 x2 + 0.1 x3^4 sin x1, with X_i ~ U(-pi, pi).
pub fn ishigami(x: &[f64]) -> f64 {
    x[0].sin() + 7.0 * x[1].sin().powi(2) + 0.1 * x[2].powi(4) * x[0].sin()
}

/// Exact ANOVA first-order indices of the Ishigami function.
pub fn ishigami_analytic_indices() -> [f64; 3] {
    let (a, b) = (7.0, 0.1);
    let pi = std::f64::consts::PI;
    let v1 = 0.5 * (1.0 + b * pi.powi(4) / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = 8.0 * b * b * pi.powi(8) / 225.0;
    let v = v1 + v2 + v13;
    [v1 / v, v2 / v, 0.0]
}

/// The paper's coefficient vector for the 15-dimensional G-Sobol study.
pub const G_SOBOL_A: [f64; 15] = [
    1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 500.0, 1000.0, 1000.0, 1000.0, 1000.0, 1000.0,
    1000.0, 1000.0,
];

/// Product over i of (|4 x_i - 2| + a_i) / (1 + a_i) on the unit cube.
pub fn g_sobol(x: &[f64], a: &[f64]) -> Result<f64> {
    if x.len() != a.len() {
        return Err(Error::InvalidArgument("x and a lengths differ".into()));
    }
    if a.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument("coefficients must be nonnegative".into()));
    }
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("G-Sobol input outside the unit cube".into()));
    }
    Ok(x.iter()
        .zip(a)
        .map(|(&xi, &ai)| ((4.0 * xi - 2.0).abs() + ai) / (1.0 + ai))
        .product())
}

/// Exact (V_i, V, S_i) for the G-Sobol function:
/// V_i = 1/(3(1+a_i)^2), V = prod(1+V_i) - 1.
pub fn g_sobol_analytic(a: &[f64]) -> (Vec<f64>, f64, Vec<f64>) {
    let vi: Vec<f64> = a.iter().map(|&ai| 1.0 / (3.0 * (1.0 + ai).powi(2))).collect();
    let v = vi.iter().map(|&x| 1.0 + x).product::<f64>() - 1.0;
    let si = vi.iter().map(|&x| x / v).collect();
    (vi, v, si)
}

fn morris_w(x: &[f64]) -> [f64; 20] {
    let mut w = [0.0; 20];
    for (i, wi) in w.iter_mut().enumerate() {
        // Indices 3, 5, 7 are 1-based in the definition.
        *wi = if i == 2 || i == 4 || i == 6 {
            2.0 * (1.1 * x[i] / (x[i] + 0.1) - 0.5)
        } else {
            2.0 * (x[i] - 0.5)
        };
    }
    w
}

/// The 20-dimensional Morris function. The general pair sum collapses to an
/// O(d) expression because the generic coefficient is (-1)^(i+j) = s_i s_j
/// with s_i = (-1)^i; only the i,j <= 6 block needs explicit correction.
pub fn morris(x: &[f64]) -> Result<f64> {
    if x.len() != 20 {
        return Err(Error::InvalidArgument("Morris takes a 20-vector".into()));
    }
    if x.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
        return Err(Error::Domain("Morris input outside the unit cube".into()));
    }
    let w = morris_w(x);
    let mut value = 0.0;
    // Linear terms: beta_i = 20 for i <= 10 (1-based), else (-1)^i.
    for i in 0..20 {
        let beta = if i < 10 {
            20.0
        } else if (i + 1) % 2 == 0 {
            1.0
        } else {
            -1.0
        };
        value += beta * w[i];
    }
    // Generic pair block: sum_{i<j} s_i s_j w_i w_j with s_i = (-1)^(i+1).
    let mut sum_s = 0.0;
    let mut sum_w2 = 0.0;
    for i in 0..20 {
        let s = if (i + 1) % 2 == 0 { 1.0 } else { -1.0 };
        sum_s += s * w[i];
        sum_w2 += w[i] * w[i];
    }
    value += 0.5 * (sum_s * sum_s - sum_w2);
    // Correction on the 1..6 block where beta_ij = -15 instead.
    for i in 0..6 {
        for j in i + 1..6 {
            let generic = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            value += (-15.0 - generic) * w[i] * w[j];
        }
    }
    // Triples: beta_ijl = -10 only for i,j,l <= 5.
    for i in 0..5 {
        for j in i + 1..5 {
            for l in j + 1..5 {
                value += -10.0 * w[i] * w[j] * w[l];
            }
        }
    }
    value += 5.0 * w[0] * w[1] * w[2] * w[3];
    Ok(value)
}

/// Reference first-order indices of the Morris function (large-MC values).
pub const MORRIS_REFERENCE: [f64; 20] = [
    0.017, 0.005, 0.008, 0.009, 0.016, 0.000, 0.069, 0.100, 0.150, 0.100, 0.000, 0.000, 0.000,
    0.000, 0.000, 0.000, 0.000, 0.000, 0.000, 0.000,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemberGroup {
    /// Chords: stiffness E1, section A1.
    Horizontal,
    /// Diagonals: stiffness E2, section A2.
    Oblique,
}

/// Geometry of the 23-member truss.
///
/// The source experiment does not publish dimensions, so this is the
/// literature-standard configuration for the benchmark: 24 m span, six 4 m
/// bays, 2 m height, Pratt-type layout, the six loads on the top-chord
/// nodes, pin at one bottom end and roller at the other, and the monitored
/// deflection at the bottom-chord mid-span node.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrussSpec {
    pub nodes: Vec<[f64; 2]>,
    /// (node a, node b, group) per bar.
    pub members: Vec<(usize, usize, MemberGroup)>,
    /// Nodes carrying P1..P6, in load order.
    pub load_nodes: Vec<usize>,
    pub pin_node: usize,
    pub roller_node: usize,
    /// Node whose vertical displacement is the quantity of interest.
    pub monitored_node: usize,
}

impl TrussSpec {
    pub fn standard() -> Self {
        // Bottom chord: nodes 0..=6 at (4k, 0); top chord: 7..=12 at (4k+2, 2).
        let mut nodes = Vec::with_capacity(13);
        for k in 0..7 {
            nodes.push([4.0 * k as f64, 0.0]);
        }
        for k in 0..6 {
            nodes.push([4.0 * k as f64 + 2.0, 2.0]);
        }
        let mut members = Vec::with_capacity(23);
        for k in 0..6 {
            members.push((k, k + 1, MemberGroup::Horizontal)); // bottom chord
        }
        for k in 0..5 {
            members.push((7 + k, 8 + k, MemberGroup::Horizontal)); // top chord
        }
        for k in 0..6 {
            members.push((k, 7 + k, MemberGroup::Oblique)); // up-diagonal
            members.push((7 + k, k + 1, MemberGroup::Oblique)); // down-diagonal
        }
        Self {
            nodes,
            members,
            load_nodes: (7..13).collect(),
            pin_node: 0,
            roller_node: 6,
            monitored_node: 3,
        }
    }

    pub fn n_dof(&self) -> usize {
        2 * self.nodes.len()
    }

    fn fixed_dofs(&self) -> Vec<usize> {
        vec![2 * self.pin_node, 2 * self.pin_node + 1, 2 * self.roller_node + 1]
    }

    /// Assembles the global stiffness matrix for given member properties.
    pub fn stiffness(&self, e1: f64, e2: f64, a1: f64, a2: f64) -> Array2<f64> {
        let nd = self.n_dof();
        let mut k = Array2::zeros((nd, nd));
        for &(na, nb, group) in &self.members {
            let (e, a) = match group {
                MemberGroup::Horizontal => (e1, a1),
                MemberGroup::Oblique => (e2, a2),
            };
            let dx = self.nodes[nb][0] - self.nodes[na][0];
            let dy = self.nodes[nb][1] - self.nodes[na][1];
            let len = (dx * dx + dy * dy).sqrt();
            let (c, s) = (dx / len, dy / len);
            let ea_l = e * a / len;
            let local = [c * c, c * s, s * s];
            let dofs = [2 * na, 2 * na + 1, 2 * nb, 2 * nb + 1];
            // Standard 4-dof bar element: EA/L * [B, -B; -B, B] with
            // B = [[c^2, cs], [cs, s^2]].
            let b = [[local[0], local[1]], [local[1], local[2]]];
            for i in 0..2 {
                for j in 0..2 {
                    k[[dofs[i], dofs[j]]] += ea_l * b[i][j];
                    k[[dofs[i + 2], dofs[j + 2]]] += ea_l * b[i][j];
                    k[[dofs[i], dofs[j + 2]]] -= ea_l * b[i][j];
                    k[[dofs[i + 2], dofs[j]]] -= ea_l * b[i][j];
                }
            }
        }
        k
    }

    /// Solves for all nodal displacements under downward loads P1..P6.
    pub fn solve(&self, e1: f64, e2: f64, a1: f64, a2: f64, loads: &[f64]) -> Result<Array1<f64>> {
        if loads.len() != self.load_nodes.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} loads, got {}",
                self.load_nodes.len(),
                loads.len()
            )));
        }
        if !(e1 > 0.0 && e2 > 0.0 && a1 > 0.0 && a2 > 0.0) {
            return Err(Error::InvalidArgument("E and A must be positive".into()));
        }
        if loads.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("loads must be finite".into()));
        }
        let nd = self.n_dof();
        let k = self.stiffness(e1, e2, a1, a2);
        let mut f = Array1::zeros(nd);
        for (node, p) in self.load_nodes.iter().zip(loads) {
            f[2 * node + 1] -= p; // downward
        }
        let fixed = self.fixed_dofs();
        let free: Vec<usize> = (0..nd).filter(|d| !fixed.contains(d)).collect();
        let nf = free.len();
        let mut k_red = Array2::zeros((nf, nf));
        for (i, &di) in free.iter().enumerate() {
            for (j, &dj) in free.iter().enumerate() {
                k_red[[i, j]] = k[[di, dj]];
            }
        }
        let f_red: Array1<f64> = free.iter().map(|&d| f[d]).collect();
        let l = k_red
            .cholesky(UPLO::Lower)
            .map_err(|_| Error::Mechanism)?;
        // Forward/back substitution.
        let mut y = f_red.clone();
        for i in 0..nf {
            let mut s = y[i];
            for j in 0..i {
                s -= l[[i, j]] * y[j];
            }
            y[i] = s / l[[i, i]];
        }
        for i in (0..nf).rev() {
            let mut s = y[i];
            for j in i + 1..nf {
                s -= l[[j, i]] * y[j];
            }
            y[i] = s / l[[i, i]];
        }
        let mut u = Array1::zeros(nd);
        for (i, &d) in free.iter().enumerate() {
            u[d] = y[i];
        }
        Ok(u)
    }

    /// Plain-text export: nodes, members, groups, supports, loads.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# truss specification\n[nodes]\n");
        for (i, n) in self.nodes.iter().enumerate() {
            out.push_str(&format!("{i} {:.6} {:.6}\n", n[0], n[1]));
        }
        out.push_str("[members]\n");
        for (i, &(a, b, g)) in self.members.iter().enumerate() {
            let tag = match g {
                MemberGroup::Horizontal => "horizontal",
                MemberGroup::Oblique => "oblique",
            };
            out.push_str(&format!("{i} {a} {b} {tag}\n"));
        }
        out.push_str(&format!(
            "[supports]\npin {}\nroller {}\n[loads]\n",
            self.pin_node, self.roller_node
        ));
        for (i, n) in self.load_nodes.iter().enumerate() {
            out.push_str(&format!("P{} {}\n", i + 1, n));
        }
        out.push_str(&format!("[monitored]\nnode {} vertical\n", self.monitored_node));
        out
    }
}

/// Mid-span deflection of the standard truss, downward positive.
/// Input order: [E1, E2, A1, A2, P1..P6].
pub fn truss_deflection(x: &[f64]) -> Result<f64> {
    if x.len() != 10 {
        return Err(Error::InvalidArgument("truss takes a 10-vector".into()));
    }
    let spec = TrussSpec::standard();
    let u = spec.solve(x[0], x[1], x[2], x[3], &x[4..10])?;
    Ok(-u[2 * spec.monitored_node + 1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CaseKind {
    Ishigami,
    GSobol,
    Morris,
    Truss,
}

/// A named benchmark: input law, evaluator, and reference indices.
#[derive(Debug, Clone)]
pub struct BenchmarkCase {
    pub name: &'static str,
    pub input: InputModel,
    kind: CaseKind,
}

pub const BENCHMARK_NAMES: [&str; 4] = ["ishigami", "g-sobol", "morris", "truss"];

impl BenchmarkCase {
    pub fn by_name(name: &str) -> Result<Self> {
        let pi = std::f64::consts::PI;
        let (kind, input, label) = match name {
            "ishigami" => (
                CaseKind::Ishigami,
                InputModel::new(vec![MarginalDistribution::Uniform { a: -pi, b: pi }; 3])?,
                "ishigami",
            ),
            "g-sobol" => (
                CaseKind::GSobol,
                InputModel::new(vec![MarginalDistribution::Uniform { a: 0.0, b: 1.0 }; 15])?,
                "g-sobol",
            ),
            "morris" => (
                CaseKind::Morris,
                InputModel::new(vec![MarginalDistribution::Uniform { a: 0.0, b: 1.0 }; 20])?,
                "morris",
            ),
            "truss" => {
                let mut marginals = vec![
                    MarginalDistribution::Lognormal { mean: 2.1e11, std: 2.1e10 },
                    MarginalDistribution::Lognormal { mean: 2.1e11, std: 2.1e10 },
                    MarginalDistribution::Lognormal { mean: 2.0e-3, std: 2.0e-4 },
                    MarginalDistribution::Lognormal { mean: 1.0e-3, std: 1.0e-4 },
                ];
                marginals
                    .extend(vec![MarginalDistribution::Gumbel { mean: 5.0e4, std: 7.5e3 }; 6]);
                (CaseKind::Truss, InputModel::new(marginals)?, "truss")
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "unknown benchmark '{other}' (expected one of {BENCHMARK_NAMES:?})"
                )))
            }
        };
        Ok(Self { name: label, input, kind })
    }

    pub fn dimension(&self) -> usize {
        self.input.dimension()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        match self.kind {
            CaseKind::Ishigami => Ok(ishigami(x)),
            CaseKind::GSobol => g_sobol(x, &G_SOBOL_A),
            CaseKind::Morris => morris(x),
            CaseKind::Truss => truss_deflection(x),
        }
    }

    /// Stored reference first-order indices (analytic where available,
    /// large-MC published values otherwise).
    pub fn reference_indices(&self) -> SobolReport {
        match self.kind {
            CaseKind::Ishigami => {
                let mut report = SobolReport::new(EstimatorTag::PceAnalytic);
                for (i, s) in ishigami_analytic_indices().into_iter().enumerate() {
                    report.push(vec![i], s);
                }
                report
            }
            CaseKind::GSobol => {
                let (_, _, si) = g_sobol_analytic(&G_SOBOL_A);
                let mut report = SobolReport::new(EstimatorTag::PceAnalytic);
                for (i, s) in si.into_iter().enumerate() {
                    report.push(vec![i], s);
                }
                report
            }
            CaseKind::Morris => {
                let mut report = SobolReport::new(EstimatorTag::PickFreezeFirst);
                for (i, s) in MORRIS_REFERENCE.into_iter().enumerate() {
                    report.push(vec![i], s);
                }
                report
            }
            CaseKind::Truss => {
                // Input order [E1, E2, A1, A2, P1..P6].
                let vals = [0.365, 0.011, 0.365, 0.011, 0.002, 0.035, 0.075, 0.074, 0.035, 0.003];
                let mut report = SobolReport::new(EstimatorTag::PickFreezeFirst);
                for (i, s) in vals.into_iter().enumerate() {
                    report.push(vec![i], s);
                }
                report
            }
        }
    }

    /// Recomputes all first-order indices by pick-freeze on the true model.
    pub fn recompute_reference(&self, n: usize, seed: u64) -> Result<SobolReport> {
        let mut report = SobolReport::new(EstimatorTag::PickFreezeFirst);
        report.n_pick_freeze = Some(n);
        report.seed = Some(seed);
        for i in 0..self.dimension() {
            let s = pick_freeze_first_order(self, &self.input, &[i], n, rng::derive(seed, i as u64))?;
            report.push(vec![i], s);
        }
        Ok(report)
    }
}

impl Evaluator for BenchmarkCase {
    fn eval(&self, x: &[f64]) -> Result<f64> {
        BenchmarkCase::eval(self, x)
    }
}
