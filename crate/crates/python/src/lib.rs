//! Python bindings: box trees, gallery operators, compression and the
//! compressed representations. Matrices cross the boundary as lists of rows.

use std::sync::Arc;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hpeel::coloring::{dsatur_color, AdjacencyGraph};
use hpeel::gallery::{
    op_double_layer_2d, op_laplace3d_kernel, op_n2d_product, op_schur_frontal,
    synth_rank_structured, ContourParams, Geometry,
};
use hpeel::linalg::rel_error_power_method;
use hpeel::peeling::{self, Format, PeelConfig};
use hpeel::rep::io::{read_rep, write_rep};
use hpeel::rep::{Category, CompressedRep, HierarchicalRep};
use hpeel::{BoxTree, DenseOperator, LinearOperator, Mat, PointCloud, TruncationSpec};

create_exception!(hpeel_py, HpeelError, PyException);

fn py_err(e: hpeel::Error) -> PyErr {
    HpeelError::new_err(format!("{}: {e}", e.kind()))
}

fn to_mat(rows: &[Vec<f64>]) -> PyResult<Mat> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(Mat::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn from_mat(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn parse_format(name: &str) -> PyResult<Format> {
    name.parse().map_err(py_err)
}

/// Hierarchical box tree over points in the unit cube.
#[pyclass(name = "BoxTree", frozen)]
struct PyBoxTree {
    inner: Arc<BoxTree>,
}

#[pymethods]
impl PyBoxTree {
    #[new]
    fn new(points: Vec<Vec<f64>>, leaf: usize) -> PyResult<Self> {
        let cloud = PointCloud::from_rows(&points).map_err(py_err)?;
        let tree = BoxTree::build(&cloud, leaf).map_err(py_err)?;
        Ok(Self {
            inner: Arc::new(tree),
        })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn n_points(&self) -> usize {
        self.inner.n_points()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// Box ids on one level.
    fn level(&self, level: usize) -> PyResult<Vec<usize>> {
        if level > self.inner.depth() {
            return Err(PyValueError::new_err(format!(
                "level {level} is below the leaves"
            )));
        }
        Ok(self.inner.level(level).collect())
    }

    /// Input indices of the points in a box.
    fn points(&self, id: usize) -> PyResult<Vec<usize>> {
        self.check_box(id)?;
        Ok(self.inner.points(id).to_vec())
    }

    fn neighbors(&self, id: usize) -> PyResult<Vec<usize>> {
        self.check_box(id)?;
        Ok(self.inner.neighbors(id).to_vec())
    }

    fn interactions(&self, id: usize) -> PyResult<Vec<usize>> {
        self.check_box(id)?;
        Ok(self.inner.interactions(id).to_vec())
    }

    fn admissible_pairs(&self, level: usize) -> Vec<(usize, usize)> {
        self.inner.admissible_pairs(level)
    }

    fn __repr__(&self) -> String {
        format!(
            "BoxTree(n_points={}, dim={}, depth={})",
            self.inner.n_points(),
            self.inner.dim(),
            self.inner.depth()
        )
    }
}

impl PyBoxTree {
    fn check_box(&self, id: usize) -> PyResult<()> {
        if id >= self.inner.n_boxes() {
            return Err(PyValueError::new_err(format!("no box {id}")));
        }
        Ok(())
    }
}

/// A black-box operator from the gallery, or an explicit matrix.
#[pyclass(name = "Operator", frozen)]
struct PyOperator {
    inner: Box<dyn LinearOperator>,
    cloud: PointCloud,
}

#[pymethods]
impl PyOperator {
    /// Explicit matrix on the given points.
    #[staticmethod]
    fn dense(matrix: Vec<Vec<f64>>, points: Vec<Vec<f64>>) -> PyResult<Self> {
        let m = to_mat(&matrix)?;
        if m.nrows() != m.ncols() || m.nrows() != points.len() {
            return Err(PyValueError::new_err(
                "need a square matrix with one row per point",
            ));
        }
        Ok(Self {
            inner: Box::new(DenseOperator::new(m)),
            cloud: PointCloud::from_rows(&points).map_err(py_err)?,
        })
    }

    /// Second-kind double-layer operator on the default star contour.
    #[staticmethod]
    fn double_layer_2d(n: usize) -> PyResult<Self> {
        let op = op_double_layer_2d(&ContourParams::default(), n).map_err(py_err)?;
        let cloud = op.cloud().map_err(py_err)?;
        Ok(Self {
            inner: Box::new(op),
            cloud,
        })
    }

    /// Neumann-to-Dirichlet map on the default star contour.
    #[staticmethod]
    fn n2d(n: usize) -> PyResult<Self> {
        let op = op_n2d_product(&ContourParams::default(), n).map_err(py_err)?;
        let cloud = op.cloud().map_err(py_err)?;
        Ok(Self {
            inner: Box::new(op),
            cloud,
        })
    }

    /// Schur complement on the separator of an `n × width` grid.
    #[staticmethod]
    #[pyo3(signature = (n, width = 51))]
    fn frontal(n: usize, width: usize) -> PyResult<Self> {
        let op = op_schur_frontal(n, width).map_err(py_err)?;
        let cloud = op.cloud().map_err(py_err)?;
        Ok(Self {
            inner: Box::new(op),
            cloud,
        })
    }

    /// Laplace 1/r kernel on random points of the unit sphere.
    #[staticmethod]
    #[pyo3(signature = (n, seed = 1))]
    fn laplace_sphere(n: usize, seed: u64) -> PyResult<Self> {
        let points = Geometry::Sphere3d.generate(n, seed).map_err(py_err)?;
        let cloud = points.cloud().map_err(py_err)?;
        let op = op_laplace3d_kernel(&points).map_err(py_err)?;
        Ok(Self {
            inner: Box::new(op),
            cloud,
        })
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.nrows(), self.inner.ncols())
    }

    /// Box tree over the operator's points.
    fn tree(&self, leaf: usize) -> PyResult<PyBoxTree> {
        let tree = BoxTree::build(&self.cloud, leaf).map_err(py_err)?;
        Ok(PyBoxTree {
            inner: Arc::new(tree),
        })
    }

    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.apply(&to_mat(&x)?).map_err(py_err)?;
        Ok(from_mat(&y))
    }

    fn apply_adjoint(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.apply_adjoint(&to_mat(&x)?).map_err(py_err)?;
        Ok(from_mat(&y))
    }
}

/// H1, uniform H1 or H2 representation.
#[pyclass(name = "Compressed", frozen)]
struct PyCompressed {
    inner: CompressedRep,
}

#[pymethods]
impl PyCompressed {
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().name()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        let n = self.inner.tree().n_points();
        (n, n)
    }

    fn tree(&self) -> PyBoxTree {
        PyBoxTree {
            inner: self.inner.tree().clone(),
        }
    }

    fn apply(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self.inner.apply_full(&to_mat(&x)?).map_err(py_err)?;
        Ok(from_mat(&y))
    }

    fn apply_adjoint(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let y = self
            .inner
            .apply_full_adjoint(&to_mat(&x)?)
            .map_err(py_err)?;
        Ok(from_mat(&y))
    }

    fn to_dense(&self) -> PyResult<Vec<Vec<f64>>> {
        Ok(from_mat(&self.inner.to_dense().map_err(py_err)?))
    }

    /// Stored scalars per category plus `total` and `per_dof`.
    fn storage<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let stats = self.inner.storage_stats();
        let out = PyDict::new(py);
        for category in Category::ALL {
            out.set_item(category.to_string(), stats.by_category(category))?;
        }
        out.set_item("total", stats.total())?;
        out.set_item("per_dof", stats.per_dof())?;
        Ok(out)
    }

    /// Power-method estimate of `‖self − op‖ / ‖op‖`.
    #[pyo3(signature = (op, iters = 20, seed = 1))]
    fn rel_error(&self, op: &Bound<'_, PyAny>, iters: usize, seed: u64) -> PyResult<f64> {
        with_operator(op, |reference| {
            rel_error_power_method(&self.inner, reference, iters, seed)
        })?
        .map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        write_rep(path, &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: read_rep(path).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!(
            "Compressed(kind={}, n={}, depth={})",
            self.inner.kind().name(),
            self.inner.tree().n_points(),
            self.inner.tree().depth()
        )
    }
}

/// Runs `f` on an `Operator` or a `Compressed` object.
fn with_operator<R>(
    obj: &Bound<'_, PyAny>,
    f: impl FnOnce(&dyn LinearOperator) -> R,
) -> PyResult<R> {
    if let Ok(op) = obj.cast::<PyOperator>() {
        return Ok(f(op.get().inner.as_ref()));
    }
    if let Ok(rep) = obj.cast::<PyCompressed>() {
        return Ok(f(&rep.get().inner));
    }
    Err(PyValueError::new_err(
        "expected an Operator or a Compressed object",
    ))
}

/// Compresses an operator on `tree` into `format`
/// (`h1`, `unif-h1`, `h1-plus-unif` or `h2`). Returns the representation
/// and a dict with the black-box column counts, flops and timings.
#[pyfunction]
#[pyo3(signature = (op, tree, format, rank, oversample = 10, seed = 1, tol = None))]
fn compress<'py>(
    py: Python<'py>,
    op: &Bound<'py, PyAny>,
    tree: &PyBoxTree,
    format: &str,
    rank: usize,
    oversample: usize,
    seed: u64,
    tol: Option<f64>,
) -> PyResult<(PyCompressed, Bound<'py, PyDict>)> {
    let mut config = PeelConfig::new(parse_format(format)?, rank, oversample, seed);
    if let Some(tol) = tol {
        config.spec = TruncationSpec::relative(rank, oversample, tol);
    }
    let (rep, report) =
        with_operator(op, |op| peeling::compress(op, &tree.inner, &config))?.map_err(py_err)?;
    let info = PyDict::new(py);
    info.set_item("format", report.format.name())?;
    info.set_item("apply_cols", report.forward_cols())?;
    info.set_item("adjoint_cols", report.adjoint_cols())?;
    info.set_item("colors_max", report.max_colors())?;
    info.set_item("flops", report.flops)?;
    info.set_item("t_total_s", report.wall_total.as_secs_f64())?;
    info.set_item("t_net_s", report.wall_net.as_secs_f64())?;
    Ok((PyCompressed { inner: rep }, info))
}

/// Random matrix that is exactly representable in `format` with rank `k`.
#[pyfunction]
#[pyo3(signature = (tree, format, k, seed = 1))]
fn synthetic(tree: &PyBoxTree, format: &str, k: usize, seed: u64) -> PyResult<PyCompressed> {
    let rep = synth_rank_structured(&tree.inner, parse_format(format)?, k, seed).map_err(py_err)?;
    Ok(PyCompressed { inner: rep })
}

/// DSatur coloring of an undirected graph; returns one color per vertex.
#[pyfunction]
fn dsatur(n_vertices: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<usize>> {
    if let Some(&(a, b)) = edges
        .iter()
        .find(|&&(a, b)| a >= n_vertices || b >= n_vertices)
    {
        return Err(PyValueError::new_err(format!(
            "edge ({a}, {b}) is out of range"
        )));
    }
    Ok(dsatur_color(&AdjacencyGraph::from_edges(n_vertices, &edges)).colors)
}

#[pymodule]
fn hpeel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBoxTree>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyCompressed>()?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(dsatur, m)?)?;
    m.add("HpeelError", m.py().get_type::<HpeelError>())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrices_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = to_mat(&rows).unwrap();
        assert_eq!(m.shape(), (3, 2));
        assert_eq!(m[(2, 1)], 6.0);
        assert_eq!(from_mat(&m), rows);
    }

    #[test]
    fn compress_from_rust_side() {
        let points: Vec<Vec<f64>> = (0..64).map(|i| vec![(i as f64 + 0.5) / 64.0]).collect();
        let tree = PyBoxTree::new(points, 8).unwrap();
        let truth = synthetic(&tree, "h2", 2, 3).unwrap();
        let mut config = PeelConfig::new(Format::H2, 2, 4, 1);
        config.spec = TruncationSpec::fixed(2, 4);
        let (rep, _) = peeling::compress(&truth.inner, &tree.inner, &config).unwrap();
        let err = rel_error_power_method(&rep, &truth.inner, 20, 1).unwrap();
        assert!(err < 1e-10, "{err}");
    }
}
