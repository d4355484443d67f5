//! Python bindings. Fields cross the boundary as flat row-major lists
//! (index `j * nx + i`).

use std::collections::HashMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pfch_core::diagnostics::{series_checks, DiagnosticsSeries};
use pfch_core::electrostatics::{derivative_suite, FieldSpec};
use pfch_core::energy::{Evaluation, Model};
use pfch_core::grid::{GridSpec, ScalarField};
use pfch_core::io::config::{parse_config, RunConfig};
use pfch_core::io::init::init_state;
use pfch_core::io::series::read_series;
use pfch_core::operators::PhaseState;
use pfch_core::physics::ModelParams;
use pfch_core::stepper::{self, relative_stationarity, StationaryConfig, StepConfig};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Uniform cell-centered grid on `[0, lx] x [0, ly]`.
#[pyclass(name = "Grid", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    #[pyo3(signature = (nx, ny, lx = 1.0, ly = 1.0))]
    fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> PyResult<Self> {
        GridSpec::new(nx, ny, lx, ly).map(PyGrid).map_err(value_err)
    }

    #[getter]
    fn nx(&self) -> usize {
        self.0.nx
    }

    #[getter]
    fn ny(&self) -> usize {
        self.0.ny
    }

    #[getter]
    fn lx(&self) -> f64 {
        self.0.lx
    }

    #[getter]
    fn ly(&self) -> f64 {
        self.0.ly
    }

    fn cell_centers(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.0;
        ((0..g.nx).map(|i| g.x_center(i)).collect(), (0..g.ny).map(|j| g.y_center(j)).collect())
    }

    fn __repr__(&self) -> String {
        format!("Grid(nx={}, ny={}, lx={}, ly={})", self.0.nx, self.0.ny, self.0.lx, self.0.ly)
    }
}

/// A model, its current state and the step settings.
#[pyclass(name = "Simulation")]
struct PySimulation {
    model: Model,
    state: PhaseState,
    eval: Evaluation,
    step_cfg: StepConfig,
    stationary: StationaryConfig,
    time: f64,
    steps: usize,
}

impl PySimulation {
    fn from_run_config(cfg: RunConfig) -> PyResult<Self> {
        let g = cfg.grid;
        let state = init_state(g, &cfg.initial).map_err(value_err)?;
        let model = Model::new(g, cfg.params, cfg.field.cell_field(g), cfg.solve_tol).map_err(value_err)?;
        let eval = model.evaluate(&state, None).map_err(runtime_err)?;
        Ok(Self { model, state, eval, step_cfg: cfg.step, stationary: cfg.stationary, time: 0.0, steps: 0 })
    }

    fn energies(&self) -> HashMap<&'static str, f64> {
        let e = &self.eval;
        HashMap::from([("e1", e.e1), ("e2", e.e2), ("e3", e.e3), ("e4", e.e4), ("total", e.total())])
    }
}

#[pymethods]
impl PySimulation {
    /// Default parameters on `grid`, started from noise around `mean`.
    #[new]
    #[pyo3(signature = (grid, seed, mean = [0.3, 0.3, 0.4], amplitude = 0.05, tau = 1e-3))]
    fn new(grid: PyGrid, seed: u64, mean: [f64; 3], amplitude: f64, tau: f64) -> PyResult<Self> {
        let g = grid.0;
        let state = pfch_core::io::init::noise_state(g, mean, amplitude, seed, 1e-3).map_err(value_err)?;
        let model =
            Model::new(g, ModelParams::default(), FieldSpec::default().cell_field(g), 1e-12).map_err(value_err)?;
        let eval = model.evaluate(&state, None).map_err(runtime_err)?;
        let step_cfg = StepConfig { tau, tau_max: tau, ..StepConfig::default() };
        step_cfg.validate().map_err(value_err)?;
        Ok(Self { model, state, eval, step_cfg, stationary: StationaryConfig::default(), time: 0.0, steps: 0 })
    }

    /// Builds a simulation from configuration text.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        Self::from_run_config(parse_config(text).map_err(value_err)?)
    }

    #[staticmethod]
    fn from_file(path: std::path::PathBuf) -> PyResult<Self> {
        let text = std::fs::read_to_string(&path).map_err(value_err)?;
        Self::from_config(&text)
    }

    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(*self.model.grid())
    }

    #[getter]
    fn time(&self) -> f64 {
        self.time
    }

    #[getter]
    fn steps(&self) -> usize {
        self.steps
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.step_cfg.tau
    }

    /// `c_a`, `c_b`, `c_s` and `phi` as flat lists.
    fn fields(&self) -> HashMap<&'static str, Vec<f64>> {
        let c = self.state.fields();
        HashMap::from([
            ("c_a", c[0].values().to_vec()),
            ("c_b", c[1].values().to_vec()),
            ("c_s", c[2].values().to_vec()),
            ("phi", self.eval.phi.values().to_vec()),
        ])
    }

    /// Replaces the state; `c_s` is `1 - c_a - c_b`.
    fn set_state(&mut self, c_a: Vec<f64>, c_b: Vec<f64>) -> PyResult<()> {
        let g = *self.model.grid();
        let ca = ScalarField::from_values(g, c_a).map_err(value_err)?;
        let cb = ScalarField::from_values(g, c_b).map_err(value_err)?;
        let state = PhaseState::from_ab(ca, cb).map_err(value_err)?;
        self.eval = self.model.evaluate(&state, None).map_err(runtime_err)?;
        self.state = state;
        Ok(())
    }

    fn means(&self) -> [f64; 3] {
        self.state.means()
    }

    fn energy(&self) -> HashMap<&'static str, f64> {
        self.energies()
    }

    /// `|w - mean w| / (1 + |w|)` for the current state.
    fn stationarity(&self) -> f64 {
        relative_stationarity(&self.model, &self.state, &self.eval)
    }

    /// Chemical potential components as flat lists.
    fn chemical_potential(&self) -> Vec<Vec<f64>> {
        let w = self.model.chem_potential(&self.state, &self.eval).w;
        w.fields().iter().map(|f| f.values().to_vec()).collect()
    }

    /// One time step; returns the energies of the new state and step data.
    fn step(&mut self) -> PyResult<HashMap<&'static str, f64>> {
        let r = stepper::step_from(&self.model, &self.state, &self.eval, &self.step_cfg).map_err(runtime_err)?;
        self.time += r.accepted_tau;
        self.steps += 1;
        self.state = r.state;
        self.eval = r.eval;
        let mut out = self.energies();
        out.insert("dissipation", r.report.dissipation);
        out.insert("tau", r.accepted_tau);
        out.insert("inner_iters", r.inner_iters as f64);
        out.insert("residual", r.residual);
        Ok(out)
    }

    /// Integrates to `t_end`; returns the total energy after every step.
    fn run(&mut self, py: Python<'_>, t_end: f64) -> PyResult<Vec<f64>> {
        let remaining = t_end - self.time;
        if !(remaining >= 0.0) {
            return Err(value_err(format!("t_end {t_end} lies before the current time {}", self.time)));
        }
        let (model, state, cfg) = (&self.model, &self.state, &self.step_cfg);
        let mut totals = vec![];
        let outcome = py
            .detach(|| stepper::run(model, state, cfg, remaining, |_, _, r| totals.push(r.eval.total())))
            .map_err(runtime_err)?;
        self.time += outcome.time;
        self.steps += outcome.steps;
        self.state = outcome.state;
        self.eval = outcome.eval;
        Ok(totals)
    }

    /// Steps until the chemical potential is constant per component.
    /// Returns the step count and whether the tolerance was reached.
    #[pyo3(signature = (stat_tol = None, max_steps = None))]
    fn run_to_stationary(
        &mut self,
        py: Python<'_>,
        stat_tol: Option<f64>,
        max_steps: Option<usize>,
    ) -> PyResult<(usize, bool)> {
        let stat = StationaryConfig {
            stat_tol: stat_tol.unwrap_or(self.stationary.stat_tol),
            max_steps: max_steps.unwrap_or(self.stationary.max_steps),
        };
        let (model, state, cfg) = (&self.model, &self.state, &self.step_cfg);
        let o =
            py.detach(|| stepper::run_to_stationary(model, state, cfg, &stat, |_, _, _| {})).map_err(runtime_err)?;
        self.time += o.time;
        self.steps += o.steps;
        self.state = o.state;
        self.eval = o.eval;
        Ok((o.steps, o.converged))
    }
}

/// Derivative of order `k` of the regularized logarithmic potential.
#[pyfunction]
fn psi_delta(k: usize, s: f64, delta: f64) -> PyResult<f64> {
    pfch_core::physics::psi_delta(k, s, delta).map_err(value_err)
}

/// Checks configuration text; raises `ValueError` listing every problem.
#[pyfunction]
fn validate_config(text: &str) -> PyResult<()> {
    parse_config(text).map(|_| ()).map_err(value_err)
}

/// Taylor and stability checks of the electrostatic solution map on an
/// `n x n` grid with default parameters. One dict per case.
#[pyfunction]
#[pyo3(signature = (n = 32, cases = 10, seed = 1))]
fn derivative_test(py: Python<'_>, n: usize, cases: usize, seed: u64) -> PyResult<Vec<HashMap<&'static str, f64>>> {
    let g = GridSpec::unit_square(n).map_err(value_err)?;
    let params = ModelParams::default();
    let e0 = FieldSpec::default().cell_field(g);
    let report =
        py.detach(|| derivative_suite(g, &params.permittivity, &e0, cases, seed, 1e-12)).map_err(runtime_err)?;
    Ok(report
        .cases
        .iter()
        .map(|c| {
            HashMap::from([
                ("ds_ratio_1", c.ds_ratios[0]),
                ("ds_ratio_2", c.ds_ratios[1]),
                ("d2s_ratio_1", c.d2s_ratios[0]),
                ("d2s_ratio_2", c.d2s_ratios[1]),
                ("symmetry_gap", c.symmetry_gap),
                ("stability_ratio", c.stability_ratio),
                ("stability_bound", report.stability_bound),
                ("pass", if c.passes(report.stability_bound) { 1.0 } else { 0.0 }),
            ])
        })
        .collect())
}

/// Replays a series CSV through the checks: `(name, worst, threshold, pass)`.
#[pyfunction]
fn check_series(path: std::path::PathBuf) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let series: DiagnosticsSeries = read_series(&path).map_err(value_err)?;
    Ok(series_checks(&series).into_iter().map(|c| (c.name, c.worst, c.threshold, c.pass)).collect())
}

#[pymodule]
fn pfch(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PySimulation>()?;
    m.add_function(wrap_pyfunction!(psi_delta, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(derivative_test, m)?)?;
    m.add_function(wrap_pyfunction!(check_series, m)?)?;
    Ok(())
}
