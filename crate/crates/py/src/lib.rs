//! Python bindings: benchmarks, design sampling, PCE and GP surrogates,
//! and Sobol' index estimation.

use ndarray::Array1;
use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use metasens::benchmarks::BenchmarkCase;
use metasens::distributions::{DesignMatrix, SamplingMethod};
use metasens::gp::{FitOptions, GpModel};
use metasens::harness::{self, GpOptions};
use metasens::pce::PceModel;
use metasens::rng;
use metasens::sobol::{self, SobolRequest};

fn to_py_err(e: metasens::Error) -> PyErr {
    PyValueError::new_err(format!("[{}] {e}", e.category()))
}

/// A named reference model with its input probability law.
#[pyclass(name = "Benchmark")]
struct PyBenchmark {
    case: BenchmarkCase,
}

/// An experimental design tied to the input law that generated it.
#[pyclass(name = "Design")]
struct PyDesign {
    design: DesignMatrix,
}

#[pymethods]
impl PyDesign {
    /// Design points as an (n, d) array in physical coordinates.
    fn points<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.design.points.clone().into_pyarray_bound(py)
    }

    #[getter]
    fn n(&self) -> usize {
        self.design.n()
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.design.dimension()
    }
}

#[pymethods]
impl PyBenchmark {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        Ok(Self { case: BenchmarkCase::by_name(name).map_err(to_py_err)? })
    }

    #[getter]
    fn name(&self) -> &str {
        self.case.name
    }

    #[getter]
    fn dimension(&self) -> usize {
        self.case.dimension()
    }

    fn eval(&self, x: Vec<f64>) -> PyResult<f64> {
        self.case.eval(&x).map_err(to_py_err)
    }

    fn eval_batch<'py>(
        &self,
        py: Python<'py>,
        points: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray1<f64>>> {
        let points = points.as_array();
        let mut out = Vec::with_capacity(points.nrows());
        for row in points.rows() {
            out.push(self.case.eval(row.as_slice().unwrap()).map_err(to_py_err)?);
        }
        Ok(Array1::from(out).into_pyarray_bound(py))
    }

    /// Fresh design from the benchmark's input law. method: "lhs" | "mc".
    #[pyo3(signature = (n, seed, method = "lhs"))]
    fn sample_design(&self, n: usize, seed: u64, method: &str) -> PyResult<PyDesign> {
        let method = match method {
            "lhs" => SamplingMethod::Lhs,
            "mc" => SamplingMethod::Mc,
            other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
        };
        let design = self.case.input.sample(n, method, seed).map_err(to_py_err)?;
        Ok(PyDesign { design })
    }

    /// Stored reference first-order indices in variable order.
    fn reference_indices(&self) -> Vec<f64> {
        self.case
            .reference_indices()
            .entries()
            .iter()
            .map(|e| e.estimate)
            .collect()
    }

    /// Pick-freeze first-order indices on the true evaluator.
    fn recompute_reference(&self, n: usize, seed: u64) -> PyResult<Vec<f64>> {
        Ok(self
            .case
            .recompute_reference(n, seed)
            .map_err(to_py_err)?
            .entries()
            .iter()
            .map(|e| e.estimate)
            .collect())
    }
}

/// Polynomial-chaos surrogate with exact spectral Sobol' indices.
#[pyclass(name = "PceSurrogate")]
struct PyPce {
    model: PceModel,
}

#[pymethods]
impl PyPce {
    #[getter]
    fn loo_error(&self) -> f64 {
        self.model.loo_error_rel
    }

    #[getter]
    fn selected_degree(&self) -> usize {
        self.model.basis.index_set().max_degree()
    }

    fn predict<'py>(
        &self,
        py: Python<'py>,
        points: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<Bound<'py, PyArray1<f64>>> {
        let points = points.as_array();
        let mut out = Vec::with_capacity(points.nrows());
        for row in points.rows() {
            out.push(self.model.predict(row.as_slice().unwrap()).map_err(to_py_err)?);
        }
        Ok(Array1::from(out).into_pyarray_bound(py))
    }

    /// (mean, variance) of the surrogate output.
    fn moments(&self) -> (f64, f64) {
        self.model.moments()
    }

    fn sobol_first_order(&self) -> PyResult<Vec<f64>> {
        let report = self.model.sobol_indices(SobolRequest::FirstOrder).map_err(to_py_err)?;
        let d = self.model.basis.dimension();
        Ok((0..d)
            .map(|i| report.get(&[i]).map(|e| e.estimate).unwrap_or(0.0))
            .collect())
    }

    fn sobol_total(&self) -> PyResult<Vec<f64>> {
        let report = self.model.sobol_indices(SobolRequest::Total).map_err(to_py_err)?;
        let d = self.model.basis.dimension();
        Ok((0..d)
            .map(|i| report.get(&[i]).map(|e| e.estimate).unwrap_or(0.0))
            .collect())
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { model: PceModel::from_json(text).map_err(to_py_err)? })
    }
}

/// Gaussian-process surrogate (universal kriging).
#[pyclass(name = "GpSurrogate")]
struct PyGp {
    model: GpModel,
}

#[pymethods]
impl PyGp {
    #[getter]
    fn lengthscales(&self) -> Vec<f64> {
        self.model.kernel.lengthscales.clone()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.model.kernel.variance
    }

    /// (mean, variance) arrays at the given points.
    fn predict<'py>(
        &self,
        py: Python<'py>,
        points: PyReadonlyArray2<'py, f64>,
    ) -> PyResult<(Bound<'py, PyArray1<f64>>, Bound<'py, PyArray1<f64>>)> {
        let points = points.as_array();
        let mut means = Vec::with_capacity(points.nrows());
        let mut vars = Vec::with_capacity(points.nrows());
        for row in points.rows() {
            let (m, v) = self.model.predict(row.as_slice().unwrap()).map_err(to_py_err)?;
            means.push(m);
            vars.push(v);
        }
        Ok((
            Array1::from(means).into_pyarray_bound(py),
            Array1::from(vars).into_pyarray_bound(py),
        ))
    }

    /// q joint posterior realizations at the given points, shape (q, points).
    fn sample_posterior<'py>(
        &self,
        py: Python<'py>,
        points: PyReadonlyArray2<'py, f64>,
        q: usize,
        seed: u64,
    ) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let samples = self
            .model
            .sample_posterior(&points.as_array().to_owned(), q, seed)
            .map_err(to_py_err)?;
        Ok(samples.into_pyarray_bound(py))
    }

    fn to_json(&self) -> PyResult<String> {
        self.model.to_json().map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self { model: GpModel::from_json(text).map_err(to_py_err)? })
    }
}

/// Degree-adaptive least-squares polynomial-chaos fit.
#[pyfunction]
#[pyo3(signature = (benchmark, design, responses, p_min = 1, p_max = 10))]
fn fit_pce(
    benchmark: &PyBenchmark,
    design: &PyDesign,
    responses: PyReadonlyArray1<f64>,
    p_min: usize,
    p_max: usize,
) -> PyResult<PyPce> {
    let responses = responses.as_array().to_owned();
    let model = PceModel::adaptive_fit(
        &benchmark.case.input,
        &design.design,
        &responses,
        p_min,
        p_max,
    )
    .map_err(to_py_err)?;
    Ok(PyPce { model })
}

/// Universal-kriging fit on raw (n, d) data.
#[pyfunction]
#[pyo3(signature = (design, responses, kernel = "matern52", mode = "tensorized",
                    trend = "constant", estimator = "reml", n_starts = 10, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn fit_gp(
    design: PyReadonlyArray2<f64>,
    responses: PyReadonlyArray1<f64>,
    kernel: &str,
    mode: &str,
    trend: &str,
    estimator: &str,
    n_starts: usize,
    seed: u64,
) -> PyResult<PyGp> {
    let design = design.as_array().to_owned();
    let responses = responses.as_array().to_owned();
    let gp_opts = GpOptions {
        kernel: kernel.into(),
        mode: mode.into(),
        trend: trend.into(),
        estimator: estimator.into(),
        n_starts,
        ..GpOptions::default()
    };
    let options = FitOptions {
        estimator: gp_opts.estimator().map_err(to_py_err)?,
        n_starts,
        seed,
        ..FitOptions::default()
    };
    let model = GpModel::fit(
        &design,
        &responses,
        gp_opts.trend_spec(design.ncols()).map_err(to_py_err)?,
        gp_opts.kernel_family().map_err(to_py_err)?,
        gp_opts.kernel_mode().map_err(to_py_err)?,
        &options,
    )
    .map_err(to_py_err)?;
    Ok(PyGp { model })
}

/// GP-based first-order indices: (estimates, stds) across posterior
/// realizations of a shared pick-freeze sample.
#[pyfunction]
fn gp_sobol_first_order(
    gp: &PyGp,
    benchmark: &PyBenchmark,
    n: usize,
    m: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let report = sobol::gp_sobol_first_order(&gp.model, &benchmark.case.input, n, m, seed)
        .map_err(to_py_err)?;
    let d = benchmark.case.dimension();
    let mut est = Vec::with_capacity(d);
    let mut std = Vec::with_capacity(d);
    for i in 0..d {
        let entry = report
            .get(&[i])
            .ok_or_else(|| PyValueError::new_err("missing index entry"))?;
        est.push(entry.estimate);
        std.push(entry.std.unwrap_or(0.0));
    }
    Ok((est, std))
}

/// Pick-freeze first-order index of one variable on the true model.
#[pyfunction]
fn pick_freeze_first_order(
    benchmark: &PyBenchmark,
    variable: usize,
    n: usize,
    seed: u64,
) -> PyResult<f64> {
    sobol::pick_freeze_first_order(
        &benchmark.case,
        &benchmark.case.input,
        &[variable],
        n,
        rng::derive(seed, variable as u64),
    )
    .map_err(to_py_err)
}

/// Nash–Sutcliffe predictivity coefficient.
#[pyfunction]
fn q2(predictions: PyReadonlyArray1<f64>, truths: PyReadonlyArray1<f64>) -> PyResult<f64> {
    harness::q2(
        predictions.as_array().as_slice().unwrap(),
        truths.as_array().as_slice().unwrap(),
    )
    .map_err(to_py_err)
}

#[pymodule]
fn metasens_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBenchmark>()?;
    m.add_class::<PyDesign>()?;
    m.add_class::<PyPce>()?;
    m.add_class::<PyGp>()?;
    m.add_function(wrap_pyfunction!(fit_pce, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gp, m)?)?;
    m.add_function(wrap_pyfunction!(gp_sobol_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(pick_freeze_first_order, m)?)?;
    m.add_function(wrap_pyfunction!(q2, m)?)?;
    Ok(())
}
