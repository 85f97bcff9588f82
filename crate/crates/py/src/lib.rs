//! Python module `filippov`. Structured results come back as plain Python
//! dicts and lists (serialized through JSON); options are passed as dicts
//! with the same keys as the CLI config sections.

use std::collections::BTreeMap;

use filippov_core::classify::{
    self, CatalogOptions, ChaosOptions, RegularOptions, SphereOptions,
};
use filippov_core::exact::ExactReal;
use filippov_core::field::{self, Side, TrigField};
use filippov_core::flow::{self, integrate_branches};
use filippov_core::manifold::{self, quotient_distance};
use filippov_core::maps::{self, MapOptions, SectionPoint};
use filippov_core::scenarios;
use filippov_core::{Direction, Error, IntegrationOptions, ManifoldModel, PiecewiseField, QuotientPoint, SigmaId};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

pyo3::create_exception!(filippov, RefusedError, PyRuntimeError);
pyo3::create_exception!(filippov, NoReturnError, PyRuntimeError);

fn err(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::ModelMismatch(..) => PyValueError::new_err(e.to_string()),
        Error::Refused(_) => RefusedError::new_err(e.to_string()),
        Error::NoReturn { .. } => NoReturnError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

fn from_py<T: DeserializeOwned + Default>(py: Python<'_>, v: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    let Some(v) = v else { return Ok(T::default()) };
    let s: String = py.import("json")?.call_method1("dumps", (v,))?.extract()?;
    serde_json::from_str(&s).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn sigma(s: &str) -> PyResult<SigmaId> {
    match s {
        "sigma1" | "1" => Ok(SigmaId::Sigma1),
        "sigma2" | "2" => Ok(SigmaId::Sigma2),
        _ => Err(PyValueError::new_err(format!("unknown switching circle {s:?}; use sigma1 or sigma2"))),
    }
}

fn side(s: &str) -> PyResult<Side> {
    match s {
        "plus" | "+" => Ok(Side::Plus),
        "minus" | "-" => Ok(Side::Minus),
        _ => Err(PyValueError::new_err(format!("unknown side {s:?}; use plus or minus"))),
    }
}

fn model(s: &str) -> PyResult<ManifoldModel> {
    s.parse().map_err(err)
}

fn direction(s: &str) -> PyResult<Direction> {
    match s {
        "forward" => Ok(Direction::Forward),
        "backward" => Ok(Direction::Backward),
        _ => Err(PyValueError::new_err(format!("unknown direction {s:?}"))),
    }
}

fn exact(s: &str) -> PyResult<ExactReal> {
    s.parse().map_err(err)
}

/// A piecewise smooth field `X = (X⁺, X⁻)` on the torus or the sphere.
#[pyclass(name = "Field", module = "filippov", frozen)]
struct PyField {
    inner: PiecewiseField,
    name: String,
    params: BTreeMap<String, String>,
    expected: Option<String>,
}

#[pymethods]
impl PyField {
    /// Named scenario, e.g. `Field.scenario("four-fold", {"alpha": 0.2})`.
    #[staticmethod]
    #[pyo3(signature = (name, params = None, model = None))]
    fn scenario(name: &str, params: Option<BTreeMap<String, f64>>, model: Option<&str>) -> PyResult<Self> {
        let m = model.map(self::model).transpose()?;
        let s = scenarios::by_name(name, &params.unwrap_or_default(), m).map_err(err)?;
        Ok(PyField {
            inner: s.field,
            name: s.name,
            params: s.params,
            expected: s.expected,
        })
    }

    /// Field from two trigonometric halves, each `{"v1": {...}, "v2": {...}}`
    /// with component keys `c0, cos, sin, poly, y_cos, y_sin`.
    #[staticmethod]
    #[pyo3(signature = (plus, minus, model = "torus"))]
    fn trig(py: Python<'_>, plus: &Bound<'_, PyAny>, minus: &Bound<'_, PyAny>, model: &str) -> PyResult<Self> {
        let p: TrigField = from_py(py, Some(plus))?;
        let m: TrigField = from_py(py, Some(minus))?;
        Ok(PyField {
            inner: PiecewiseField::new(p, m, self::model(model)?),
            name: "inline".into(),
            params: BTreeMap::new(),
            expected: None,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.name
    }

    #[getter]
    fn params(&self) -> BTreeMap<String, String> {
        self.params.clone()
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.model().to_string()
    }

    /// Verdict the scenario is built to produce, if any.
    #[getter]
    fn expected(&self) -> Option<String> {
        self.expected.clone()
    }

    #[getter]
    fn sigmas(&self) -> Vec<&'static str> {
        self.inner
            .sigmas()
            .iter()
            .map(|s| match s {
                SigmaId::Sigma1 => "sigma1",
                SigmaId::Sigma2 => "sigma2",
            })
            .collect()
    }

    fn eval(&self, side: &str, x: f64, y: f64) -> PyResult<(f64, f64)> {
        let [a, b] = self.inner.eval_side(self::side(side)?, x, y);
        Ok((a, b))
    }

    /// Normal components `(pos, neg)` on a switching circle.
    fn normals(&self, sigma: &str, x: f64) -> PyResult<(f64, f64)> {
        Ok(self.inner.normals(self::sigma(sigma)?, x))
    }

    fn label(&self, sigma: &str, x: f64) -> PyResult<String> {
        Ok(format!("{:?}", field::label_at(&self.inner, self::sigma(sigma)?, x)))
    }

    fn sliding_velocity(&self, sigma: &str, x: f64) -> PyResult<f64> {
        Ok(self.inner.sliding_velocity(self::sigma(sigma)?, x))
    }

    fn tangencies(&self, py: Python<'_>, sigma: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &field::find_tangencies(&self.inner, self::sigma(sigma)?))
    }

    fn pseudo_equilibria(&self, py: Python<'_>, sigma: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &field::find_pseudo_equilibria(&self.inner, self::sigma(sigma)?))
    }

    fn decompose(&self, py: Python<'_>, sigma: &str) -> PyResult<Py<PyAny>> {
        to_py(py, &field::decompose_sigma(&self.inner, self::sigma(sigma)?))
    }

    fn parity(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &field::parity_report(&self.inner))
    }

    /// Integrate from `(x0, y0)`. `options` keys: `rel_tol, abs_tol, max_step,
    /// t_max, event_tol, pole_tol, max_events, branch_policy, record_samples`.
    #[pyo3(signature = (x0, y0, direction = "forward", options = None))]
    fn simulate(
        &self,
        py: Python<'_>,
        x0: f64,
        y0: f64,
        direction: &str,
        options: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<PyTrajectory> {
        let opts: IntegrationOptions = from_py(py, options)?;
        let d = self::direction(direction)?;
        let p0 = manifold::wrap(x0, y0, self.inner.model()).map_err(err)?;
        let field = &self.inner;
        let t = py.detach(|| flow::integrate(field, p0, &opts, d)).map_err(err)?;
        Ok(PyTrajectory { inner: t })
    }

    /// All branches under `branch_policy = {"EnumerateToDepth": k}`.
    #[pyo3(signature = (x0, y0, direction = "forward", options = None))]
    fn simulate_branches(
        &self,
        py: Python<'_>,
        x0: f64,
        y0: f64,
        direction: &str,
        options: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Vec<PyTrajectory>> {
        let opts: IntegrationOptions = from_py(py, options)?;
        let d = self::direction(direction)?;
        let p0 = manifold::wrap(x0, y0, self.inner.model()).map_err(err)?;
        let field = &self.inner;
        let ts = py.detach(|| integrate_branches(field, p0, &opts, d)).map_err(err)?;
        Ok(ts.into_iter().map(|inner| PyTrajectory { inner }).collect())
    }

    /// Half-return of the lower strip from `(xi, 0)`.
    #[pyo3(signature = (xi, options = None))]
    fn half_return(&self, py: Python<'_>, xi: f64, options: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let opts: MapOptions = from_py(py, options)?;
        let q = SectionPoint::lambda(xi).map_err(err)?;
        to_py(py, &maps::half_return(&self.inner, &q, &opts).map_err(err)?)
    }

    #[pyo3(signature = (options = None))]
    fn displacement_roots(&self, py: Python<'_>, options: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let opts: MapOptions = from_py(py, options)?;
        let field = &self.inner;
        let scan = py.detach(|| maps::displacement_roots(field, &opts)).map_err(err)?;
        to_py(py, &scan)
    }

    fn p_star(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &maps::find_p_star(&self.inner).map_err(err)?)
    }

    #[pyo3(signature = (tol = 1e-6))]
    fn fold_connections(&self, py: Python<'_>, tol: f64) -> PyResult<Py<PyAny>> {
        to_py(py, &flow::detect_fold_connection(&self.inner, tol))
    }

    /// Limit cycles, minimal bands and sliding attractors.
    #[pyo3(signature = (options = None))]
    fn classify(&self, py: Python<'_>, options: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let opts: CatalogOptions = from_py(py, options)?;
        let field = &self.inner;
        let r = py.detach(|| classify::catalog_limit_cycles(field, &opts)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (samples = 200, options = None))]
    fn chaos_check(&self, py: Python<'_>, samples: usize, options: Option<&Bound<'_, PyAny>>) -> PyResult<Py<PyAny>> {
        let opts: ChaosOptions = from_py(py, options)?;
        let field = &self.inner;
        let r = py.detach(|| classify::chaos_check(field, samples, &opts)).map_err(err)?;
        to_py(py, &r)
    }

    #[pyo3(signature = (samples = 200, options = None))]
    fn sphere_decomposition(
        &self,
        py: Python<'_>,
        samples: usize,
        options: Option<&Bound<'_, PyAny>>,
    ) -> PyResult<Py<PyAny>> {
        let opts: SphereOptions = from_py(py, options)?;
        let field = &self.inner;
        let r = py.detach(|| classify::sphere_decomposition(field, samples, &opts)).map_err(err)?;
        to_py(py, &r)
    }

    fn __repr__(&self) -> String {
        format!("Field({:?}, model={}, params={:?})", self.name, self.inner.model(), self.params)
    }
}

#[pyclass(name = "Trajectory", module = "filippov", frozen)]
struct PyTrajectory {
    inner: flow::Trajectory,
}

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn events(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.events)
    }

    #[getter]
    fn terminal_event(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, self.inner.terminal_event())
    }

    #[getter]
    fn t_end(&self) -> f64 {
        self.inner.t_end()
    }

    #[getter]
    fn final_point(&self) -> (f64, f64) {
        let p = self.inner.final_point();
        (p.x, p.y)
    }

    #[getter]
    fn branch_id(&self) -> &str {
        &self.inner.branch_id
    }

    /// `(t, x, y)` for every recorded sample.
    fn samples(&self) -> Vec<(f64, f64, f64)> {
        self.inner.samples().map(|s| (s.t, s.p.x, s.p.y)).collect()
    }

    fn point_at(&self, t: f64) -> Option<(f64, f64)> {
        self.inner.point_at(t).map(|p| (p.x, p.y))
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn events_jsonl(&self) -> String {
        self.inner.events_jsonl()
    }

    fn __len__(&self) -> usize {
        self.inner.samples().count()
    }

    fn __repr__(&self) -> String {
        let e = self.inner.terminal_event();
        format!("Trajectory(t_end={}, events={}, terminal={:?})", e.t, self.inner.events.len(), e.kind)
    }
}

/// Canonical representative of `(x, y)`.
#[pyfunction]
#[pyo3(signature = (x, y, model = "torus"))]
fn wrap(x: f64, y: f64, model: &str) -> PyResult<(f64, f64)> {
    let p = manifold::wrap(x, y, self::model(model)?).map_err(err)?;
    Ok((p.x, p.y))
}

#[pyfunction]
#[pyo3(signature = (p, q, model = "torus"))]
fn distance(p: (f64, f64), q: (f64, f64), model: &str) -> PyResult<f64> {
    let m = self::model(model)?;
    let a = QuotientPoint { x: p.0, y: p.1, model: m };
    let b = QuotientPoint { x: q.0, y: q.1, model: m };
    quotient_distance(&a, &b).map_err(err)
}

#[pyfunction]
fn diameter(model: &str) -> PyResult<f64> {
    Ok(manifold::manifold_diameter(self::model(model)?))
}

/// Exact periodicity of the crossing normal form. Arguments are strings such
/// as `"1/3"`, `"sqrt(2)"` or `"pi/4"`.
#[pyfunction]
fn periodicity_test(py: Python<'_>, a: &str, b: &str, sigma1: &str, sigma2: &str) -> PyResult<Py<PyAny>> {
    let r = maps::periodicity_test(&exact(a)?, &exact(b)?, &exact(sigma1)?, &exact(sigma2)?).map_err(err)?;
    to_py(py, &r)
}

/// Verdict for the crossing normal form with exact parameters.
#[pyfunction]
#[pyo3(signature = (a, b, sigma1, sigma2, model = "torus", options = None))]
fn classify_regular(
    py: Python<'_>,
    a: &str,
    b: &str,
    sigma1: &str,
    sigma2: &str,
    model: &str,
    options: Option<&Bound<'_, PyAny>>,
) -> PyResult<Py<PyAny>> {
    let opts: RegularOptions = from_py(py, options)?;
    let m = self::model(model)?;
    let (a, b, s1, s2) = (exact(a)?, exact(b)?, exact(sigma1)?, exact(sigma2)?);
    let r = py.detach(|| classify::classify_regular(&a, &b, &s1, &s2, m, &opts)).map_err(err)?;
    to_py(py, &r)
}

#[pyfunction]
fn equidistribution_stat(py: Python<'_>, points: Vec<f64>, n: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &classify::equidistribution_stat(&points, n).map_err(err)?)
}

#[pyfunction]
fn scenario_names() -> Vec<&'static str> {
    scenarios::SCENARIO_NAMES.to_vec()
}

/// Critical `c` of the fold-connection family.
#[pyfunction]
fn fold_connection_critical_c() -> f64 {
    scenarios::fold_connection_critical_c()
}

#[pymodule]
fn filippov(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyTrajectory>()?;
    m.add("RefusedError", m.py().get_type::<RefusedError>())?;
    m.add("NoReturnError", m.py().get_type::<NoReturnError>())?;
    m.add_function(wrap_pyfunction!(wrap, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(diameter, m)?)?;
    m.add_function(wrap_pyfunction!(periodicity_test, m)?)?;
    m.add_function(wrap_pyfunction!(classify_regular, m)?)?;
    m.add_function(wrap_pyfunction!(equidistribution_stat, m)?)?;
    m.add_function(wrap_pyfunction!(scenario_names, m)?)?;
    m.add_function(wrap_pyfunction!(fold_connection_critical_c, m)?)?;
    Ok(())
}
