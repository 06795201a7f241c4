//! Python bindings for `edvs-core`.

use edvs_core::io::{load_matrix, load_partition, load_vector};
use edvs_core::schur::{self, IndexSplit};
use edvs_core::{
    build_derived_space, inner_product_derived, DecompositionMap, DerivedSpace, DerivedVector, Error, Krylov, NodeId,
    OriginalVector, PrimalRule, ProblemInstance, SolveConfig,
};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

create_exception!(
    edvs,
    NonConvergenceError,
    PyRuntimeError,
    "The iterative solve did not reach the tolerance."
);

fn to_py(e: Error) -> PyErr {
    match e.root() {
        Error::NonConvergence { .. } => NonConvergenceError::new_err(e.to_string()),
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn dense(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("matrix must be square"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn primal_rule(min_multiplicity: Option<usize>, nodes: Option<Vec<usize>>) -> PyResult<PrimalRule> {
    match (min_multiplicity, nodes) {
        (None, None) => Ok(PrimalRule::None),
        (Some(k), None) => Ok(PrimalRule::MinMultiplicity(k)),
        (None, Some(nodes)) => Ok(PrimalRule::Explicit(nodes.into_iter().map(NodeId).collect())),
        (Some(_), Some(_)) => Err(PyValueError::new_err(
            "give at most one of primal_min_multiplicity, primal_nodes",
        )),
    }
}

/// A matrix, right-hand side and overlapping decomposition.
#[pyclass(name = "Problem", module = "edvs", frozen)]
struct PyProblem {
    inner: ProblemInstance,
}

#[pymethods]
impl PyProblem {
    /// 1D Laplacian on `n` nodes split into `boxes` subdomains, rhs of ones.
    #[staticmethod]
    fn poisson_1d(n: usize, boxes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ProblemInstance::poisson_1d(n, boxes).map_err(to_py)?,
        })
    }

    /// 5-point Laplacian on an `nx` by `ny` grid split into `px` by `py` boxes.
    #[staticmethod]
    fn poisson_2d(nx: usize, ny: usize, px: usize, py: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ProblemInstance::poisson_2d(nx, ny, px, py).map_err(to_py)?,
        })
    }

    /// Reads Matrix Market, partition and optional rhs files.
    #[staticmethod]
    #[pyo3(signature = (matrix, partition, rhs = None, block_dim = 1))]
    fn load(matrix: &str, partition: &str, rhs: Option<&str>, block_dim: usize) -> PyResult<Self> {
        let a = load_matrix(matrix)
            .and_then(|a| a.with_block_dim(block_dim))
            .map_err(to_py)?;
        let dm = load_partition(partition, a.n_nodes()).map_err(to_py)?;
        let f = match rhs {
            Some(path) => load_vector(path, block_dim).map_err(to_py)?,
            None => OriginalVector::ones(a.n_nodes(), block_dim),
        };
        Ok(Self {
            inner: ProblemInstance::new(a, f, dm).map_err(to_py)?,
        })
    }

    /// Copy of the problem with a new right-hand side.
    fn with_rhs(&self, rhs: Vec<f64>) -> PyResult<Self> {
        let f = OriginalVector::new(rhs, self.inner.matrix.block_dim()).map_err(to_py)?;
        Ok(Self {
            inner: self.inner.clone().with_rhs(f).map_err(to_py)?,
        })
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.matrix.n_nodes()
    }

    #[getter]
    fn n_subdomains(&self) -> usize {
        self.inner.decomposition.n_subdomains()
    }

    #[getter]
    fn block_dim(&self) -> usize {
        self.inner.matrix.block_dim()
    }

    #[getter]
    fn rhs(&self) -> Vec<f64> {
        self.inner.rhs.values().to_vec()
    }

    /// Subdomain ids of every node.
    fn memberships(&self) -> Vec<Vec<usize>> {
        let dm = &self.inner.decomposition;
        (0..dm.n_nodes())
            .map(|p| dm.memberships(NodeId(p)).iter().map(|a| a.0).collect())
            .collect()
    }

    /// Dense copy of the matrix as a list of rows.
    fn dense_matrix(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.matrix.csr().to_dense())
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let x = OriginalVector::new(x, self.inner.matrix.block_dim()).map_err(to_py)?;
        if x.values().len() != self.inner.matrix.n_dofs() {
            return Err(PyValueError::new_err("length mismatch"));
        }
        Ok(self.inner.matrix.mul_vec(&x).into_values())
    }

    fn __repr__(&self) -> String {
        format!(
            "Problem(n_nodes={}, n_subdomains={}, block_dim={})",
            self.n_nodes(),
            self.n_subdomains(),
            self.block_dim()
        )
    }
}

/// Result of `solve`.
#[pyclass(name = "Solution", module = "edvs", frozen)]
struct PySolution {
    #[pyo3(get)]
    u: Vec<f64>,
    #[pyo3(get)]
    iterations: usize,
    #[pyo3(get)]
    residual_history: Vec<f64>,
    #[pyo3(get)]
    report_json: String,
}

#[pymethods]
impl PySolution {
    /// The solve report as a dict.
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        py.import("json")?.call_method1("loads", (self.report_json.as_str(),))
    }

    fn __repr__(&self) -> String {
        format!("Solution(n={}, iterations={})", self.u.len(), self.iterations)
    }
}

/// Solves the problem with the derived-space Schur method.
#[pyfunction]
#[pyo3(signature = (
    problem, tol = 1e-10, max_iters = None, krylov = "cg", threads = None, compare_direct = false,
    primal_min_multiplicity = None, primal_nodes = None
))]
#[allow(clippy::too_many_arguments)]
fn solve(
    py: Python<'_>,
    problem: &PyProblem,
    tol: f64,
    max_iters: Option<usize>,
    krylov: &str,
    threads: Option<usize>,
    compare_direct: bool,
    primal_min_multiplicity: Option<usize>,
    primal_nodes: Option<Vec<usize>>,
) -> PyResult<PySolution> {
    let cfg = SolveConfig {
        tol,
        max_iters,
        krylov: krylov.parse::<Krylov>().map_err(to_py)?,
        threads,
        compare_direct,
        primal_rule: primal_rule(primal_min_multiplicity, primal_nodes)?,
    };
    let sol = py
        .detach(|| edvs_core::solve_dvs(&problem.inner, &cfg))
        .map_err(to_py)?;
    let report_json =
        serde_json::to_string(&sol.report).map_err(|e| PyRuntimeError::new_err(format!("report: {e}")))?;
    Ok(PySolution {
        u: sol.u_hat.into_values(),
        iterations: sol.report.iterations,
        residual_history: sol.report.residual_history,
        report_json,
    })
}

/// Derived vector space of a decomposition given as per-node subdomain lists.
#[pyclass(name = "DerivedSpace", module = "edvs", frozen)]
struct PyDerivedSpace {
    ds: DerivedSpace,
}

impl PyDerivedSpace {
    fn vector(&self, values: Vec<f64>) -> PyResult<DerivedVector> {
        DerivedVector::from_values(&self.ds, values).map_err(to_py)
    }

    fn original(&self, values: Vec<f64>) -> PyResult<OriginalVector> {
        let x = OriginalVector::new(values, self.ds.block_dim()).map_err(to_py)?;
        if x.n_nodes() != self.ds.n_original() {
            return Err(PyValueError::new_err(format!(
                "expected {} nodes, got {}",
                self.ds.n_original(),
                x.n_nodes()
            )));
        }
        Ok(x)
    }
}

#[pymethods]
impl PyDerivedSpace {
    #[new]
    #[pyo3(signature = (memberships, block_dim = 1, primal_min_multiplicity = None, primal_nodes = None))]
    fn new(
        memberships: Vec<Vec<usize>>,
        block_dim: usize,
        primal_min_multiplicity: Option<usize>,
        primal_nodes: Option<Vec<usize>>,
    ) -> PyResult<Self> {
        let dm = DecompositionMap::from_memberships(memberships).map_err(to_py)?;
        let rule = primal_rule(primal_min_multiplicity, primal_nodes)?;
        Ok(Self {
            ds: build_derived_space(&dm, &rule, block_dim).map_err(to_py)?,
        })
    }

    fn __len__(&self) -> usize {
        self.ds.len()
    }

    #[getter]
    fn n_dofs(&self) -> usize {
        self.ds.n_dofs()
    }

    /// `(node, subdomain)` for every derived node, in storage order.
    fn nodes(&self) -> Vec<(usize, usize)> {
        self.ds.nodes().iter().map(|dn| (dn.node.0, dn.subdomain.0)).collect()
    }

    fn inject(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(edvs_core::inject(&self.original(x)?, &self.ds)
            .map_err(to_py)?
            .into_values())
    }

    fn retract(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(edvs_core::retract(&self.vector(u)?, &self.ds)
            .map_err(to_py)?
            .into_values())
    }

    fn project_a(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(edvs_core::project_a(&self.vector(u)?, &self.ds)
            .map_err(to_py)?
            .into_values())
    }

    fn project_j(&self, u: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(edvs_core::project_j(&self.vector(u)?, &self.ds)
            .map_err(to_py)?
            .into_values())
    }

    /// Weighted inner product of two derived vectors.
    fn inner(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        inner_product_derived(&self.vector(u)?, &self.vector(v)?, &self.ds).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "DerivedSpace(len={}, n_original={})",
            self.ds.len(),
            self.ds.n_original()
        )
    }
}

/// Minimum-norm solution of `B v = w` for a symmetric `B`.
#[pyfunction]
fn pseudo_inverse_apply(b: Vec<Vec<f64>>, w: Vec<f64>) -> PyResult<Vec<f64>> {
    let b = dense(&b)?;
    if w.len() != b.nrows() {
        return Err(PyValueError::new_err("length mismatch"));
    }
    let v = schur::pseudo_inverse_apply(&b, &DVector::from_vec(w)).map_err(to_py)?;
    Ok(v.as_slice().to_vec())
}

/// Schur complement of `B` on `n_set` after eliminating `m_set`.
#[pyfunction]
fn schur_sigma(b: Vec<Vec<f64>>, m_set: Vec<usize>, n_set: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
    let b = dense(&b)?;
    let split = IndexSplit::new(m_set, n_set, b.nrows()).map_err(to_py)?;
    Ok(rows(&schur::schur_sigma(&b, &split).map_err(to_py)?))
}

#[pymodule]
fn edvs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyProblem>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyDerivedSpace>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_inverse_apply, m)?)?;
    m.add_function(wrap_pyfunction!(schur_sigma, m)?)?;
    m.add("NonConvergenceError", m.py().get_type::<NonConvergenceError>())?;
    Ok(())
}
