//! Python bindings. Matrices cross the boundary as lists of rows, so any
//! nested sequence (including 2-D numpy arrays) is accepted as input.

use multialign::io::format_f64;
use multialign::procrustes::{gpa_iterative_mean, gpa_reference, gpa_sync_with};
use multialign::simulate::{self, trial_rng, ExperimentConfig, DEFAULT_SEED};
use multialign::{
    consistency_residual, project_class, reconstruct_pairwise, solve_aop, synchronise, Error,
    GpaMethod, IterativeMeanOptions, Kind, PairwiseTransformSet, PointCloud, ScaleMode,
    SyncResult, Transform, TransformClass,
};
use nalgebra::{DMatrix, RowDVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError, PyValueError};
use pyo3::prelude::*;

create_exception!(multialign_py, DegenerateError, PyException);
create_exception!(multialign_py, InfeasibleError, PyException);

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e {
        Error::Singular { .. } | Error::Degenerate(_) => DegenerateError::new_err(msg),
        Error::UnderDetermined { .. }
        | Error::DegenerateCloud(_)
        | Error::InfeasibleEta { .. }
        | Error::UncoveredLandmark(_) => InfeasibleError::new_err(msg),
        Error::Io(_) => PyIOError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for multialign::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

fn matrix_from(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("expected a non-empty rectangular matrix"));
    }
    Ok(DMatrix::from_fn(n, m, |r, c| rows[r][c]))
}

fn matrix_to(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn kind_of(homogeneous: bool) -> Kind {
    if homogeneous {
        Kind::Homogeneous
    } else {
        Kind::Linear
    }
}

/// One invertible transform acting on row vectors, `x' = x T`.
#[pyclass(name = "Transform", module = "multialign_py", skip_from_py_object)]
#[derive(Clone)]
struct PyTransform {
    inner: Transform,
}

#[pymethods]
impl PyTransform {
    /// A `(d+1)×(d+1)` matrix when `homogeneous`, else `d×d`.
    #[new]
    #[pyo3(signature = (matrix, homogeneous = true))]
    fn new(matrix: Vec<Vec<f64>>, homogeneous: bool) -> PyResult<Self> {
        let m = matrix_from(matrix)?;
        let dim = if homogeneous { m.nrows().saturating_sub(1) } else { m.nrows() };
        Ok(Self {
            inner: Transform::from_matrix(dim, kind_of(homogeneous), m).py()?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (dim, homogeneous = true))]
    fn identity(dim: usize, homogeneous: bool) -> Self {
        Self {
            inner: Transform::identity(dim, kind_of(homogeneous)),
        }
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn homogeneous(&self) -> bool {
        self.inner.kind() == Kind::Homogeneous
    }

    #[getter]
    fn matrix(&self) -> Vec<Vec<f64>> {
        matrix_to(self.inner.matrix())
    }

    #[getter]
    fn linear_block(&self) -> Vec<Vec<f64>> {
        matrix_to(&self.inner.linear_block())
    }

    #[getter]
    fn translation(&self) -> Vec<f64> {
        self.inner.translation().iter().copied().collect()
    }

    fn condition(&self) -> f64 {
        self.inner.condition()
    }

    /// `self` followed by `other`.
    fn compose(&self, other: &PyTransform) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.compose(&other.inner).py()?,
        })
    }

    fn invert(&self) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.invert().py()?,
        })
    }

    fn apply(&self, point: Vec<f64>) -> PyResult<Vec<f64>> {
        if point.len() != self.inner.dim() {
            return Err(PyValueError::new_err("point dimension mismatch"));
        }
        let p = RowDVector::from_vec(point);
        Ok(self.inner.apply_point(&p).iter().copied().collect())
    }

    #[pyo3(signature = (class_name, scale = "geometric"))]
    fn project(&self, class_name: &str, scale: &str) -> PyResult<Self> {
        Ok(Self {
            inner: project_class(&self.inner, parse(class_name)?, parse(scale)?).py()?,
        })
    }

    fn __matmul__(&self, other: &PyTransform) -> PyResult<Self> {
        self.compose(other)
    }

    fn __repr__(&self) -> String {
        let rows: Vec<String> = self
            .inner
            .matrix()
            .row_iter()
            .map(|r| r.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", "))
            .collect();
        format!("Transform([[{}]])", rows.join("], ["))
    }
}

/// All `k²` transforms between `k` objects; entry `(i, j)` maps `i` onto `j`.
#[pyclass(name = "PairwiseTransformSet", module = "multialign_py", skip_from_py_object)]
#[derive(Clone)]
struct PySet {
    inner: PairwiseTransformSet,
}

#[pymethods]
impl PySet {
    #[new]
    #[pyo3(signature = (k, dim, homogeneous = true, class_name = "affine"))]
    fn new(k: usize, dim: usize, homogeneous: bool, class_name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PairwiseTransformSet::new(k, dim, kind_of(homogeneous), parse(class_name)?).py()?,
        })
    }

    /// The consistent set `T_i T_j⁻¹`.
    #[staticmethod]
    #[pyo3(signature = (absolute, class_name = "affine"))]
    fn from_absolute(absolute: Vec<PyRef<'_, PyTransform>>, class_name: &str) -> PyResult<Self> {
        let abs: Vec<Transform> = absolute.iter().map(|t| t.inner.clone()).collect();
        Ok(Self {
            inner: PairwiseTransformSet::from_absolute(&abs, parse(class_name)?).py()?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn get(&self, i: usize, j: usize) -> Option<PyTransform> {
        self.inner.get(i, j).map(|t| PyTransform { inner: t.clone() })
    }

    fn set(&mut self, i: usize, j: usize, t: &PyTransform) -> PyResult<()> {
        self.inner.set(i, j, t.inner.clone()).py()
    }

    fn is_complete(&self) -> bool {
        self.inner.is_complete()
    }

    /// Largest `‖T_ij T_jl − T_il‖_F` over all triples.
    fn consistency_residual(&self) -> PyResult<f64> {
        consistency_residual(&self.inner).py()
    }

    /// Mean Frobenius distance to another set of the same shape.
    fn error_to(&self, other: &PySet) -> PyResult<f64> {
        simulate::transform_error(&self.inner, &other.inner).py()
    }
}

#[pyclass(name = "SyncResult", module = "multialign_py")]
struct PySyncResult {
    inner: SyncResult,
}

#[pymethods]
impl PySyncResult {
    #[getter]
    fn absolute(&self) -> Vec<PyTransform> {
        self.inner.absolute.iter().map(|t| PyTransform { inner: t.clone() }).collect()
    }

    #[getter]
    fn tail_singular_values(&self) -> Vec<f64> {
        self.inner.tail_singular_values.clone()
    }

    #[getter]
    fn gauge_block(&self) -> usize {
        self.inner.gauge_block
    }

    #[getter]
    fn degenerate(&self) -> bool {
        self.inner.degenerate
    }

    /// The consistent pairwise set implied by the absolute transforms.
    fn pairwise(&self) -> PyResult<PySet> {
        Ok(PySet {
            inner: reconstruct_pairwise(&self.inner).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

/// Landmarks as rows, with an optional presence mask.
#[pyclass(name = "PointCloud", module = "multialign_py", skip_from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    #[pyo3(signature = (points, present = None))]
    fn new(points: Vec<Vec<f64>>, present: Option<Vec<bool>>) -> PyResult<Self> {
        let m = matrix_from(points)?;
        let present = present.unwrap_or_else(|| vec![true; m.nrows()]);
        Ok(Self {
            inner: PointCloud::new(m, present).py()?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        matrix_to(self.inner.points())
    }

    #[getter]
    fn present(&self) -> Vec<bool> {
        self.inner.present().to_vec()
    }

    fn to_csv(&self) -> PyResult<String> {
        let bytes = multialign::io::point_cloud_to_csv(&self.inner).py()?;
        String::from_utf8(bytes).map_err(|e| PyValueError::new_err(e.to_string()))
    }
}

#[pyclass(name = "GpaOutcome", module = "multialign_py", get_all)]
struct PyGpaOutcome {
    aligned: Vec<PyPointCloud>,
    transforms: Vec<PyTransform>,
    method: String,
    error: Option<f64>,
    iterations: usize,
    converged: bool,
}

/// Synchronises a noisy pairwise set onto `class_name`.
#[pyfunction]
#[pyo3(signature = (set, class_name = None, scale = "geometric"))]
fn synchronise_set(set: &PySet, class_name: Option<&str>, scale: &str) -> PyResult<PySyncResult> {
    let class = match class_name {
        Some(c) => parse(c)?,
        None => set.inner.class(),
    };
    let mode: ScaleMode = parse(scale)?;
    Ok(PySyncResult {
        inner: synchronise(&set.inner, class, mode).py()?,
    })
}

/// Closed-form transform with `x T ≈ y` over the common points.
#[pyfunction]
#[pyo3(signature = (x, y, class_name = "similarity"))]
fn absolute_orientation(x: &PyPointCloud, y: &PyPointCloud, class_name: &str) -> PyResult<PyTransform> {
    Ok(PyTransform {
        inner: solve_aop(&x.inner, &y.inner, parse(class_name)?).py()?,
    })
}

/// Aligns several shapes with one of `reference`, `itermean` or `sync`.
#[pyfunction]
#[pyo3(signature = (shapes, method = "sync", class_name = "similarity", reference = 0, seed = DEFAULT_SEED))]
fn gpa(
    py: Python<'_>,
    shapes: Vec<PyRef<'_, PyPointCloud>>,
    method: &str,
    class_name: &str,
    reference: usize,
    seed: u64,
) -> PyResult<PyGpaOutcome> {
    let clouds: Vec<PointCloud> = shapes.iter().map(|s| s.inner.clone()).collect();
    let method: GpaMethod = parse(method)?;
    let class: TransformClass = parse(class_name)?;
    let out = py
        .detach(|| match method {
            GpaMethod::Reference => gpa_reference(&clouds, reference, class),
            GpaMethod::IterativeMean => {
                let mut rng = trial_rng(seed, &[]);
                gpa_iterative_mean(&clouds, class, IterativeMeanOptions::default(), &mut rng)
            }
            GpaMethod::Sync => gpa_sync_with(&clouds, class, ScaleMode::Geometric, |i, j| {
                solve_aop(&clouds[i], &clouds[j], class)
            }),
        })
        .py()?;
    Ok(PyGpaOutcome {
        aligned: out.aligned.into_iter().map(|c| PyPointCloud { inner: c }).collect(),
        transforms: out.transforms.into_iter().map(|t| PyTransform { inner: t }).collect(),
        method: out.method.to_string(),
        error: out.error,
        iterations: out.iterations,
        converged: out.converged,
    })
}

/// Random consistent set; returns `(absolute, pairwise)`.
#[pyfunction]
#[pyo3(signature = (k, d, class_name = "similarity", seed = DEFAULT_SEED))]
fn gen_ground_truth(k: usize, d: usize, class_name: &str, seed: u64) -> PyResult<(Vec<PyTransform>, PySet)> {
    let mut rng = trial_rng(seed, &[]);
    let gt = simulate::gen_ground_truth(k, d, parse(class_name)?, &mut rng).py()?;
    Ok((
        gt.absolute.into_iter().map(|t| PyTransform { inner: t }).collect(),
        PySet { inner: gt.pairwise },
    ))
}

/// Adds `N(0, σ²)` noise to the off-diagonal entries.
#[pyfunction]
#[pyo3(signature = (set, sigma, seed = DEFAULT_SEED))]
fn add_noise(set: &PySet, sigma: f64, seed: u64) -> PyResult<PySet> {
    let mut rng = trial_rng(seed, &[]);
    Ok(PySet {
        inner: simulate::add_gaussian_noise(&set.inner, sigma, &mut rng).py()?,
    })
}

#[pyfunction]
#[pyo3(signature = (count, n = 98, d = 2, deform_level = 3.0, noise_level = 0.03, seed = DEFAULT_SEED))]
fn gen_shapes(
    count: usize,
    n: usize,
    d: usize,
    deform_level: f64,
    noise_level: f64,
    seed: u64,
) -> PyResult<Vec<PyPointCloud>> {
    let mut rng = trial_rng(seed, &[]);
    let shapes = simulate::gen_shapes(count, n, d, deform_level, noise_level, &mut rng).py()?;
    Ok(shapes.into_iter().map(|c| PyPointCloud { inner: c }).collect())
}

/// Runs an experiment config (JSON text); returns rows of
/// `(grid_value, method_or_signal, mean_error, std_error, trials)`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<Vec<(f64, String, f64, f64, usize)>> {
    let cfg = ExperimentConfig::from_json(config_json).py()?;
    let rows = py.detach(|| simulate::run_experiment(&cfg)).py()?;
    Ok(rows
        .into_iter()
        .map(|r| (r.grid_value, r.method_or_signal, r.mean_error, r.std_error, r.trials))
        .collect())
}

/// Formats a float with 17 significant digits, as in the CSV outputs.
#[pyfunction]
fn format_float(v: f64) -> String {
    format_f64(v)
}

#[pymodule]
pub fn multialign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTransform>()?;
    m.add_class::<PySet>()?;
    m.add_class::<PySyncResult>()?;
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyGpaOutcome>()?;
    m.add_function(wrap_pyfunction!(synchronise_set, m)?)?;
    m.add_function(wrap_pyfunction!(absolute_orientation, m)?)?;
    m.add_function(wrap_pyfunction!(gpa, m)?)?;
    m.add_function(wrap_pyfunction!(gen_ground_truth, m)?)?;
    m.add_function(wrap_pyfunction!(add_noise, m)?)?;
    m.add_function(wrap_pyfunction!(gen_shapes, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(format_float, m)?)?;
    m.add("DegenerateError", m.py().get_type::<DegenerateError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    Ok(())
}
