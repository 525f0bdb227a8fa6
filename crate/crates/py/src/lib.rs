use std::collections::HashMap;
use std::str::FromStr;

use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sgidla::fluctuations::{self, Field, Statistic, SweepConfig, SweepRow};
use sgidla::graph::CopyPlacement;
use sgidla::idla::{self, RadiusStats};
use sgidla::render::{self, RenderSpec};
use sgidla::sandpile::{self, SandState, ToppleSchedule};
use sgidla::walk::{self, StreamSource};
use sgidla::{green, GraphFamily, Vertex};

fn to_py(e: sgidla::Error) -> PyErr {
    match e.exit_code() {
        3 => PyValueError::new_err(e.to_string()),
        4 => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vertex(s: &str) -> PyResult<Vertex> {
    Vertex::from_str(s).map_err(to_py)
}

fn family_of(name: &str) -> PyResult<GraphFamily> {
    Ok(match name {
        "doubled" => GraphFamily::DoubledSG,
        "one-sided" => GraphFamily::OneSidedSG,
        "nine-copy" => GraphFamily::ModifiedNineCopy(CopyPlacement::subdivision3()),
        "nine-copy-upward4" => GraphFamily::ModifiedNineCopy(CopyPlacement::nine_upward4()),
        _ => return Err(PyValueError::new_err(format!("unknown family {name:?}"))),
    })
}

fn values(rows: impl Iterator<Item = (Vertex, f64)>) -> HashMap<String, f64> {
    rows.map(|(v, x)| (v.to_string(), x)).collect()
}

/// A gasket graph family with cached origin balls.
#[pyclass(name = "Gasket", frozen)]
pub struct PyGasket {
    inner: sgidla::Gasket,
}

#[pymethods]
impl PyGasket {
    #[new]
    #[pyo3(signature = (family = "doubled"))]
    fn new(family: &str) -> PyResult<Self> {
        Ok(PyGasket { inner: sgidla::Gasket::new(family_of(family)?) })
    }

    fn ball_volume(&self, n: u32) -> usize {
        self.inner.ball_volume(n)
    }

    /// `(vertex, distance)` pairs of `B_center(n)` in BFS order.
    #[pyo3(signature = (n, center = "origin"))]
    fn ball(&self, n: u32, center: &str) -> PyResult<Vec<(String, u32)>> {
        let b = self.inner.ball(vertex(center)?, n).map_err(to_py)?;
        Ok(b.members().iter().zip(b.distances()).map(|(v, &d)| (v.to_string(), d)).collect())
    }

    fn neighbors(&self, v: &str) -> PyResult<Vec<String>> {
        Ok(self.inner.neighbors(vertex(v)?).map_err(to_py)?.iter().map(Vertex::to_string).collect())
    }

    fn distance(&self, x: &str, y: &str) -> PyResult<u64> {
        self.inner.distance(vertex(x)?, vertex(y)?).map_err(to_py)
    }

    fn contains(&self, v: &str) -> PyResult<bool> {
        Ok(self.inner.contains(vertex(v)?))
    }

    /// Exact `g_n(., z)` keyed by vertex address.
    fn green(&self, py: Python<'_>, n: u32, z: &str) -> PyResult<HashMap<String, f64>> {
        let z = vertex(z)?;
        let t = py.allow_threads(|| green::green(&self.inner, n, z)).map_err(to_py)?;
        Ok(values(t.iter()))
    }

    /// Exact `E_x tau(n)` keyed by vertex address.
    fn exit_times(&self, py: Python<'_>, n: u32) -> PyResult<HashMap<String, f64>> {
        let s = py.allow_threads(|| green::expected_exit_time_exact(&self.inner, n)).map_err(to_py)?;
        Ok(values(s.iter()))
    }

    /// Monte Carlo `(mean, stderr)` of `E_x tau(n)`.
    #[pyo3(signature = (n, trials, seed, x = "origin"))]
    fn estimate_exit_time(&self, py: Python<'_>, n: u32, trials: u64, seed: u64, x: &str) -> PyResult<(f64, f64)> {
        let x = vertex(x)?;
        let e = py.allow_threads(|| walk::estimate_exit_time(&self.inner, x, n, trials, seed)).map_err(to_py)?;
        Ok((e.mean, e.stderr))
    }

    /// Stabilizes `mass` at the origin; returns `(vertex, mass, odometer)` for every touched site.
    #[pyo3(signature = (mass, tol = sandpile::DEFAULT_TOL, schedule = "parallel"))]
    fn stabilize(&self, py: Python<'_>, mass: f64, tol: f64, schedule: &str) -> PyResult<Vec<(String, f64, f64)>> {
        let sched = match schedule {
            "parallel" => ToppleSchedule::ParallelSweep,
            "priority" => ToppleSchedule::PriorityQueue,
            _ => return Err(PyValueError::new_err(format!("unknown schedule {schedule:?}"))),
        };
        let s0 = SandState::point_mass(self.inner.family(), mass).map_err(to_py)?;
        let s = py.allow_threads(|| sandpile::stabilize(&s0, &sched, tol)).map_err(to_py)?;
        Ok(s.iter().map(|(v, m, u)| (v.to_string(), m, u)).collect())
    }

    /// IDLA cluster of `b_n` particles.
    fn grow(&self, py: Python<'_>, n: u32, seed: u64) -> PyResult<PyCluster> {
        let count = self.inner.ball_volume(n) as u64;
        self.grow_particles(py, count, seed)
    }

    fn grow_particles(&self, py: Python<'_>, particles: u64, seed: u64) -> PyResult<PyCluster> {
        let c = py.allow_threads(|| idla::grow(&self.inner, particles, &mut StreamSource::new(seed))).map_err(to_py)?;
        Ok(PyCluster { inner: c })
    }

    /// Chi-square comparison of direct and stopped-then-resumed growth.
    fn abelian_test(&self, py: Python<'_>, n: u32, runs: u64, seed: u64) -> PyResult<HashMap<&'static str, f64>> {
        let r = py.allow_threads(|| idla::abelian_test(&self.inner, n, runs, seed)).map_err(to_py)?;
        Ok(HashMap::from([
            ("statistic", r.test.statistic),
            ("df", r.test.df as f64),
            ("p_value", r.test.p_value),
        ]))
    }

    /// One row per `(n, trial)`, in that order.
    #[pyo3(signature = (radii, trials, seed = 0))]
    fn sweep(&self, py: Python<'_>, radii: Vec<u32>, trials: u32, seed: u64) -> PyResult<Vec<PySweepRow>> {
        let cfg = SweepConfig { radii, trials, master_seed: seed, ..SweepConfig::default() };
        let rows = py.allow_threads(|| fluctuations::sweep(&self.inner, &cfg)).map_err(to_py)?;
        Ok(rows.into_iter().map(|inner| PySweepRow { inner }).collect())
    }

    #[pyo3(signature = (n, width = 800, height = 800))]
    fn render_ball(&self, n: u32, width: u32, height: u32) -> PyResult<String> {
        let spec = RenderSpec { width, height, ..RenderSpec::default() };
        render::render_ball(&self.inner, n, &spec).map_err(to_py)
    }

    #[pyo3(signature = (cluster, width = 800, height = 800))]
    fn render_cluster(&self, cluster: &PyCluster, width: u32, height: u32) -> PyResult<String> {
        let spec = RenderSpec { width, height, ..RenderSpec::default() };
        let stats = idla::radii(&cluster.inner).map_err(to_py)?;
        render::render_cluster(&self.inner, &cluster.inner, &stats, &[], &spec).map_err(to_py)
    }
}

#[pyclass(name = "Cluster", frozen)]
pub struct PyCluster {
    inner: idla::Cluster,
}

#[pymethods]
impl PyCluster {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __contains__(&self, v: &str) -> PyResult<bool> {
        Ok(self.inner.contains(vertex(v)?))
    }

    /// Occupied sites in settling order.
    fn vertices(&self) -> Vec<String> {
        self.inner.vertices().map(|v| v.to_string()).collect()
    }

    fn is_connected(&self) -> bool {
        self.inner.is_connected()
    }

    fn radii(&self) -> PyResult<PyRadii> {
        idla::radii(&self.inner).map(|inner| PyRadii { inner }).map_err(to_py)
    }
}

#[pyclass(name = "RadiusStats", frozen)]
pub struct PyRadii {
    inner: RadiusStats,
}

#[pymethods]
impl PyRadii {
    #[getter]
    fn n(&self) -> u32 {
        self.inner.n
    }
    #[getter]
    fn r_in(&self) -> i64 {
        self.inner.r_in
    }
    #[getter]
    fn r_out(&self) -> i64 {
        self.inner.r_out
    }
    #[getter]
    fn inner_defect(&self) -> i64 {
        self.inner.inner_defect
    }
    #[getter]
    fn outer_excess(&self) -> i64 {
        self.inner.outer_excess
    }

    fn __repr__(&self) -> String {
        let s = &self.inner;
        format!("RadiusStats(n={}, r_in={}, r_out={}, inner_defect={}, outer_excess={})", s.n, s.r_in, s.r_out, s.inner_defect, s.outer_excess)
    }
}

#[pyclass(name = "SweepRow", frozen)]
#[derive(Clone)]
pub struct PySweepRow {
    inner: SweepRow,
}

#[pymethods]
impl PySweepRow {
    #[getter]
    fn n(&self) -> u32 {
        self.inner.n
    }
    #[getter]
    fn trial(&self) -> u32 {
        self.inner.trial
    }
    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }
    #[getter]
    fn inner_defect(&self) -> Option<i64> {
        self.inner.inner_defect
    }
    #[getter]
    fn outer_excess(&self) -> Option<i64> {
        self.inner.outer_excess
    }
}

/// `(slope, intercept, r2)` of the per-radius statistic against `n` on log-log axes.
#[pyfunction]
#[pyo3(signature = (rows, field = "inner_defect", stat = "max"))]
fn fit_exponent(rows: Vec<PySweepRow>, field: &str, stat: &str) -> PyResult<(f64, f64, f64)> {
    let field = match field {
        "inner_defect" => Field::InnerDefect,
        "outer_excess" => Field::OuterExcess,
        _ => return Err(PyValueError::new_err(format!("unknown field {field:?}"))),
    };
    let stat = match stat {
        "max" => Statistic::Max,
        "mean" => Statistic::Mean,
        _ => return Err(PyValueError::new_err(format!("unknown statistic {stat:?}"))),
    };
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.inner).collect();
    let f = fluctuations::fit_exponent(&rows, field, stat).map_err(to_py)?;
    Ok((f.slope, f.intercept, f.r2))
}

/// `(empirical tail, bound, passed)` for a binomial sum.
#[pyfunction]
fn lbg_tail_check(big_n: u64, p: f64, gamma: f64, trials: u64, seed: u64) -> PyResult<(f64, f64, bool)> {
    let r = fluctuations::lbg_tail_check(big_n, p, gamma, trials, seed).map_err(to_py)?;
    Ok((r.empirical, r.bound, r.passed))
}

/// `(origin odometer, expected 2*5^k, all checks passed)`.
#[pyfunction]
#[pyo3(signature = (k, tol = sandpile::DEFAULT_TOL))]
fn closed_form_audit(py: Python<'_>, k: u32, tol: f64) -> PyResult<(f64, f64, bool)> {
    let r = py.allow_threads(|| sandpile::closed_form_audit(k, tol)).map_err(to_py)?;
    Ok((r.origin_odometer, r.expected_origin, r.passed()))
}

#[pymodule]
fn sgidla_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGasket>()?;
    m.add_class::<PyCluster>()?;
    m.add_class::<PyRadii>()?;
    m.add_class::<PySweepRow>()?;
    m.add_function(wrap_pyfunction!(fit_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(lbg_tail_check, m)?)?;
    m.add_function(wrap_pyfunction!(closed_form_audit, m)?)?;
    m.add("ALPHA", sgidla::constants::ALPHA)?;
    m.add("BETA", sgidla::constants::BETA)?;
    Ok(())
}
