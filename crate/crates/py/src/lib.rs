//! Python module `safem`: meshes, adaptive runs and rate fits.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use safem_core::driver::{
    self, cafem_run, safem_run, uniform_run, DataOnlyProblem, LevelRecord, LsProblem, MixedProblem,
    ProblemInstance, SafemParams,
};
use safem_core::marking::{ApproxState, Oscillation};
use safem_core::mesh::io::{read_mesh, write_mesh};
use safem_core::mesh::{domains, Forest, Triangulation};
use safem_core::quadrature::{QuadratureRule, ScalarField};
use safem_core::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidTheta(_)
        | Error::InvalidParameter(_)
        | Error::UnknownField(_)
        | Error::Parse { .. }
        | Error::NotALeaf(_)
        | Error::TooFewRecords(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn domain(name: &str) -> PyResult<Forest> {
    match name {
        "unit-square" => Ok(domains::unit_square()),
        "l-shape" => Ok(domains::l_shape()),
        _ => Err(PyValueError::new_err(format!("unknown domain `{name}`"))),
    }
}

fn field(spec: &str) -> PyResult<ScalarField> {
    spec.parse().map_err(to_py)
}

/// A conforming newest-vertex-bisection triangulation with its refinement forest.
#[pyclass(module = "safem")]
struct Mesh {
    forest: Forest,
    current: Triangulation,
}

#[pymethods]
impl Mesh {
    /// Built-in domain: `unit-square` or `l-shape`.
    #[new]
    #[pyo3(signature = (domain_name = "l-shape"))]
    fn new(domain_name: &str) -> PyResult<Self> {
        let forest = domain(domain_name)?;
        let current = forest.initial();
        Ok(Self { forest, current })
    }

    /// Mesh from the text format written by `to_text`.
    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let forest = read_mesh(text).map_err(to_py)?;
        let current = forest.initial();
        Ok(Self { forest, current })
    }

    fn to_text(&self) -> String {
        write_mesh(&self.forest, &self.current)
    }

    fn __len__(&self) -> usize {
        self.current.len()
    }

    /// Bisect the elements at the given positions and complete.
    fn refine(&mut self, marked: Vec<usize>) -> PyResult<()> {
        let leaves = self.current.leaves();
        let nodes = marked
            .iter()
            .map(|&i| {
                leaves
                    .get(i)
                    .copied()
                    .ok_or_else(|| PyValueError::new_err(format!("element {i} out of range")))
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.current = self.forest.refine(&self.current, &nodes).map_err(to_py)?;
        Ok(())
    }

    fn uniform_refine(&mut self) -> PyResult<()> {
        self.current = self.forest.uniform_refine(&self.current).map_err(to_py)?;
        Ok(())
    }

    fn is_conforming(&self) -> bool {
        self.forest.is_conforming(&self.current)
    }

    fn total_area(&self) -> f64 {
        self.forest.total_area(&self.current)
    }

    fn min_angle(&self) -> f64 {
        self.forest.min_angle(&self.current)
    }

    /// Vertex coordinates of every element, `[(x0, y0), (x1, y1), (x2, y2)]`.
    fn triangles(&self) -> Vec<[(f64, f64); 3]> {
        self.current
            .leaves()
            .iter()
            .map(|&k| self.forest.coords(k).map(|v| (v.x, v.y)))
            .collect()
    }

    /// Squared data oscillation of `field` per element.
    #[pyo3(signature = (field_spec, quad_degree = 5))]
    fn oscillation(&self, field_spec: &str, quad_degree: u32) -> PyResult<Vec<f64>> {
        let rule = QuadratureRule::with_degree(quad_degree).map_err(to_py)?;
        let osc = driver::oscillation(&self.forest, &self.current, &field(field_spec)?, &rule);
        Ok(osc.values().to_vec())
    }

    /// Replace the mesh by the completed APPROX output for `tol`; returns `mu^2`.
    #[pyo3(signature = (field_spec, tol, cap = 2_000_000))]
    fn approximate(&mut self, field_spec: &str, tol: f64, cap: usize) -> PyResult<f64> {
        let functional = Box::new(Oscillation {
            field: field(field_spec)?,
            rule: QuadratureRule::default(),
        });
        let mut state = ApproxState::new(&self.forest, functional, cap);
        let out = state.approx(&mut self.forest, tol).map_err(to_py)?;
        self.current = out.mesh;
        Ok(out.error)
    }
}

fn record_dict<'py>(py: Python<'py>, r: &LevelRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("level", r.level)?;
    d.set_item("N", r.n)?;
    d.set_item("elements", r.elements)?;
    d.set_item("case", r.case.to_string())?;
    d.set_item("eta2", r.eta2)?;
    d.set_item("mu2", r.mu2)?;
    d.set_item("sigma2", r.sigma2)?;
    d.set_item("delta2", r.delta2)?;
    d.set_item("marked", r.marked)?;
    d.set_item("seconds", r.seconds)?;
    Ok(d)
}

fn dispatch<P: ProblemInstance>(
    p: &P,
    mode: &str,
    params: &SafemParams,
    forest: &mut Forest,
    t0: &Triangulation,
) -> PyResult<Vec<LevelRecord>> {
    let run = match mode {
        "safem" => safem_run(p, params, forest, t0),
        "cafem" => cafem_run(p, params, forest, t0),
        "uniform" => uniform_run(p, params, forest, t0),
        _ => return Err(PyValueError::new_err(format!("unknown mode `{mode}`"))),
    };
    Ok(run.map_err(to_py)?.records)
}

/// Adaptive run; returns one dict per level with the CSV columns as keys.
#[pyfunction]
#[pyo3(signature = (
    problem = "mixed", domain_name = "l-shape", field_spec = "one", mode = "safem",
    theta_a = 0.3, kappa = 1.0, rho_b = 0.5, sigma_tol = 1e-6, max_elements = 200_000,
    max_levels = None, quad_degree = 5,
))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    problem: &str,
    domain_name: &str,
    field_spec: &str,
    mode: &str,
    theta_a: f64,
    kappa: f64,
    rho_b: f64,
    sigma_tol: f64,
    max_elements: usize,
    max_levels: Option<usize>,
    quad_degree: u32,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let params = SafemParams {
        theta_a,
        kappa,
        rho_b,
        sigma_tol,
        max_elements,
        max_levels,
        ..Default::default()
    };
    params.validate().map_err(to_py)?;
    let rule = QuadratureRule::with_degree(quad_degree).map_err(to_py)?;
    let field = field(field_spec)?;
    let mut forest = domain(domain_name)?;
    let t0 = forest.initial();
    let problem = problem.to_string();
    let mode = mode.to_string();
    // the solve holds no Python objects
    let records = py.detach(move || match problem.as_str() {
        "mixed" => dispatch(&MixedProblem { field, rule }, &mode, &params, &mut forest, &t0),
        "ls" => dispatch(&LsProblem { field, rule }, &mode, &params, &mut forest, &t0),
        "data-only" => dispatch(&DataOnlyProblem { field, rule }, &mode, &params, &mut forest, &t0),
        _ => Err(PyValueError::new_err(format!("unknown problem `{problem}`"))),
    })?;
    records.iter().map(|r| record_dict(py, r)).collect()
}

/// Rate `s` of `sigma ~ (1 + N)^(-s)` from parallel lists of `N` and `sigma^2`.
#[pyfunction]
fn fit_rate(n: Vec<usize>, sigma2: Vec<f64>) -> PyResult<f64> {
    if n.len() != sigma2.len() {
        return Err(PyValueError::new_err("N and sigma2 differ in length"));
    }
    let records: Vec<LevelRecord> = n
        .iter()
        .zip(&sigma2)
        .enumerate()
        .map(|(level, (&n, &s2))| LevelRecord {
            level,
            n,
            elements: n,
            case: driver::Case::A,
            eta2: s2,
            mu2: 0.0,
            sigma2: s2,
            delta2: None,
            marked: 0,
            seconds: 0.0,
            bulk: None,
            approx_tol: None,
            approx_mu2: None,
            diagnostics: Default::default(),
        })
        .collect();
    Ok(driver::fit_rate(&records, &[]).map_err(to_py)?.s)
}

#[pymodule]
fn safem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Mesh>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(fit_rate, m)?)?;
    Ok(())
}
