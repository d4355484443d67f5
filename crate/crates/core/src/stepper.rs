//! Minimizing-movement time stepping.
//!
//! Each step minimizes `E(v) + |v - c_prev|^2_{*,M(c_prev)} / (2 tau)` over
//! states with the means of `c_prev`, with the potential eliminated by an
//! exact solve. The minimizer is found by projected gradient descent in a
//! metric that approximates the Hessian, with Armijo backtracking.

use crate::energy::{EnergyReport, Evaluation, Model};
use crate::error::{SolverError, StepError};
use crate::grid::{dot, neg_laplace_into, sum_sq, BoundaryCondition, GridSpec, ScalarField};
use crate::operators::{flatten, project_block, MobilityOperator, PhaseState};
use crate::physics::MobilitySpec;
use crate::solver::{conjugate_gradient, no_projection, CgOptions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub tau: f64,
    /// Relative stopping tolerance on the metric gradient.
    pub grad_tol: f64,
    pub max_inner: usize,
    pub armijo_c: f64,
    pub backtrack: f64,
    /// Floor for the adaptive time step.
    pub tau_min: f64,
    /// Tolerance of the preconditioner solves.
    pub precond_tol: f64,
    /// Factor applied to `tau` after easy steps in stationary mode.
    pub tau_growth: f64,
    pub tau_max: f64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            tau: 1e-3,
            grad_tol: 1e-8,
            max_inner: 500,
            armijo_c: 1e-4,
            backtrack: 0.5,
            tau_min: 1e-9,
            precond_tol: 1e-8,
            tau_growth: 1.0,
            tau_max: 1e-3,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("tau", self.tau),
            ("grad_tol", self.grad_tol),
            ("armijo_c", self.armijo_c),
            ("backtrack", self.backtrack),
            ("tau_min", self.tau_min),
            ("precond_tol", self.precond_tol),
            ("tau_growth", self.tau_growth),
            ("tau_max", self.tau_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if self.armijo_c >= 1.0 || self.backtrack >= 1.0 {
            return Err("armijo_c and backtrack must be below 1".into());
        }
        if self.tau_growth < 1.0 {
            return Err("tau_growth must be at least 1".into());
        }
        if self.tau_min > self.tau {
            return Err("tau_min must not exceed tau".into());
        }
        if self.max_inner == 0 {
            return Err("max_inner must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: PhaseState,
    pub phi: ScalarField,
    pub report: EnergyReport,
    pub inner_iters: usize,
    pub accepted_tau: f64,
    /// `|g|_H / (1 + |w|_H)` at the returned state.
    pub residual: f64,
    pub converged: bool,
    /// `|w|_H` at the returned state.
    pub w_norm: f64,
    /// Evaluation at the returned state, reusable as the next warm start.
    pub eval: Evaluation,
}

/// Fourth-order rational approximation of the inverse Hessian of each
/// component: `tau' L (1 + a L)^-1 (1 + b L)^-1` with `L = -lap`.
#[derive(Debug, Clone)]
struct Preconditioner {
    grid: GridSpec,
    coeffs: [(f64, f64, f64); 3],
    tol: f64,
}

impl Preconditioner {
    fn new(model: &Model, target: [f64; 3], tau: f64, tol: f64) -> Self {
        let p = model.params();
        let pot = model.potential_fn();
        let coeffs = [0, 1, 2].map(|i| {
            let alpha = if i < 2 { p.alpha[i][i].max(0.0) } else { 0.0 };
            let t = 1.0 / (1.0 / tau + alpha);
            let curv = p.theta[i] * pot.d2(target[i]);
            let sigma = curv.max(2.0 * (p.gamma[i] / t).sqrt());
            let sum = t * sigma;
            let prod = t * p.gamma[i];
            let disc = (sum * sum - 4.0 * prod).max(0.0).sqrt();
            (t, 0.5 * (sum + disc), 0.5 * (sum - disc).max(prod / (0.5 * (sum + disc))))
        });
        Self { grid: *model.grid(), coeffs, tol }
    }

    fn helmholtz(&self, a: f64, rhs: &[f64], out: &mut [f64]) -> Result<(), SolverError> {
        let g = self.grid;
        out.iter_mut().for_each(|v| *v = 0.0);
        conjugate_gradient(
            |u, y| {
                neg_laplace_into(&g, u, BoundaryCondition::NeumannZero, y);
                for (yi, ui) in y.iter_mut().zip(u) {
                    *yi = ui + a * *yi;
                }
            },
            no_projection,
            rhs,
            out,
            CgOptions::with_tol(self.tol),
        )?;
        Ok(())
    }

    /// `d = P K g` on a flattened tangent field.
    fn apply(&self, g: &[f64], d: &mut [f64]) -> Result<(), SolverError> {
        let n = self.grid.cells();
        let mut lg = vec![0.0; n];
        let mut z = vec![0.0; n];
        for i in 0..3 {
            let (t, a, b) = self.coeffs[i];
            neg_laplace_into(&self.grid, &g[i * n..(i + 1) * n], BoundaryCondition::NeumannZero, &mut lg);
            self.helmholtz(a, &lg, &mut z)?;
            let out = &mut d[i * n..(i + 1) * n];
            self.helmholtz(b, &z, out)?;
            out.iter_mut().for_each(|v| *v *= t);
        }
        project_block(d);
        Ok(())
    }
}

/// One trial point of the inner minimization.
struct Trial {
    state: PhaseState,
    eval: Evaluation,
    /// `N_M (v - c_prev)`, flattened
    nm_eta: Vec<f64>,
    penalty: f64,
}

impl Trial {
    fn augmented(&self) -> f64 {
        self.eval.total() + self.penalty
    }
}

/// Per-step context: the frozen metric at `c_prev`.
struct StepContext<'a> {
    model: &'a Model,
    c_prev: &'a PhaseState,
    prev_eval: &'a Evaluation,
    metric: Option<MobilityOperator>,
    tau: f64,
}

impl<'a> StepContext<'a> {
    fn new(model: &'a Model, c_prev: &'a PhaseState, prev_eval: &'a Evaluation, tau: f64) -> Self {
        let metric = match model.params().mobility {
            MobilitySpec::ConstantProjector => None,
            ref m => Some(MobilityOperator::new(c_prev, m)),
        };
        Self { model, c_prev, prev_eval, metric, tau }
    }

    fn initial(&self) -> Trial {
        let n = self.model.grid().cells();
        Trial { state: self.c_prev.clone(), eval: self.prev_eval.clone(), nm_eta: vec![0.0; 3 * n], penalty: 0.0 }
    }

    fn evaluate(&self, state: PhaseState, warm: &Trial) -> Result<Trial, SolverError> {
        let eval = self.model.evaluate(&state, Some(&warm.eval))?;
        let n = self.model.grid().cells();
        let mut eta = flatten(&state.difference_fields(self.c_prev)?);
        project_block(&mut eta);
        let nm_eta = match &self.metric {
            None => {
                // N is linear and both states carry N(c_i - m_i)
                let mut u = vec![0.0; 3 * n];
                for i in 0..2 {
                    let a = eval.nonlocal[i].values();
                    let b = self.prev_eval.nonlocal[i].values();
                    for k in 0..n {
                        u[i * n + k] = a[k] - b[k];
                    }
                }
                for k in 0..n {
                    u[2 * n + k] = -u[k] - u[n + k];
                }
                u
            }
            Some(op) => {
                let mut u = warm.nm_eta.clone();
                op.solve_flat(&eta, &mut u, self.model.tol())?;
                u
            }
        };
        let penalty = dot(&nm_eta, &eta) * self.model.grid().cell_area() / (2.0 * self.tau);
        Ok(Trial { state, eval, nm_eta, penalty })
    }

    /// Metric gradient `w - mean(w) + N_M(v - c_prev) / tau`, and `|w|_H`.
    fn gradient(&self, t: &Trial) -> (Vec<f64>, f64) {
        let w = self.model.chem_potential(&t.state, &t.eval).w;
        let mut g = flatten(w.fields());
        let w_norm = sum_sq(&g).sqrt() * self.model.grid().cell_area().sqrt();
        for (gi, ui) in g.iter_mut().zip(&t.nm_eta) {
            *gi += ui / self.tau;
        }
        project_block(&mut g);
        (g, w_norm)
    }

    /// `v - s d`, re-centered on the target means with `v_S = 1 - v_A - v_B`.
    fn shifted(&self, v: &PhaseState, d: &[f64], s: f64) -> PhaseState {
        let g = *self.model.grid();
        let n = g.cells();
        let m = self.c_prev.target_mean();
        let mut ab = [0, 1].map(|i| {
            let vals: Vec<f64> =
                v.component(i).values().iter().zip(&d[i * n..(i + 1) * n]).map(|(x, y)| x - s * y).collect();
            ScalarField::from_vec_unchecked(g, vals)
        });
        for i in 0..2 {
            let shift = ab[i].mean() - m[i];
            ab[i].shift(-shift);
        }
        let cs = ab[0].zip_map(&ab[1], |a, b| 1.0 - a - b);
        let [ca, cb] = ab;
        PhaseState::from_parts_unchecked([ca, cb, cs], m)
    }
}

/// Upper bound on the energy increase tolerated per step from rounding in
/// the line search, relative to `1 + |E|`.
const ROUNDING_BUDGET: f64 = 1e-11;
/// Per-trial rounding allowance relative to the energy magnitude.
const ROUNDING_FLOOR: f64 = 1e-13;
const MIN_STEP: f64 = 1e-14;

enum Outcome {
    Done(StepResult),
    Stalled,
}

fn minimize(ctx: &StepContext, cfg: &StepConfig) -> Result<Outcome, StepError> {
    let pre = Preconditioner::new(ctx.model, ctx.c_prev.target_mean(), ctx.tau, cfg.precond_tol);
    let area = ctx.model.grid().cell_area();
    let h_norm = |v: &[f64]| sum_sq(v).sqrt() * area.sqrt();

    let mut cur = ctx.initial();
    let e_start = cur.augmented();
    let mut budget = ROUNDING_BUDGET * (1.0 + e_start.abs());
    let (mut g, mut w_norm) = ctx.gradient(&cur);
    let mut d = vec![0.0; g.len()];
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>, f64)> = None;
    let mut iters = 0;

    loop {
        let g_norm = h_norm(&g);
        let residual = g_norm / (1.0 + w_norm);
        if residual <= cfg.grad_tol || iters >= cfg.max_inner {
            let converged = residual <= cfg.grad_tol;
            let report = ctx.model.report(&cur.eval, cur.penalty);
            return Ok(Outcome::Done(StepResult {
                phi: cur.eval.phi.clone(),
                state: cur.state,
                report,
                inner_iters: iters,
                accepted_tau: ctx.tau,
                residual,
                converged,
                w_norm,
                eval: cur.eval,
            }));
        }
        pre.apply(&g, &mut d)?;
        let slope = dot(&g, &d) * area;
        if !(slope > 0.0) {
            // the preconditioner lost positivity in rounding: fall back to g
            d.copy_from_slice(&g);
        }
        let slope = dot(&g, &d) * area;

        let mut s = match &prev {
            Some((d_prev, g_prev, dg, s_prev)) => bb_step(d_prev, g_prev, dg, *s_prev),
            None => 1.0,
        };
        let e_cur = cur.augmented();
        let accepted = loop {
            let trial = ctx.evaluate(ctx.shifted(&cur.state, &d, s), &cur)?;
            let e_trial = trial.augmented();
            let floor = (ROUNDING_FLOOR * (1.0 + trial.eval.magnitude() + trial.penalty)).min(budget);
            if e_trial.is_finite() && e_trial <= e_cur - cfg.armijo_c * s * slope + floor {
                if e_trial > e_cur {
                    budget -= e_trial - e_cur;
                }
                break Some(trial);
            }
            s *= cfg.backtrack;
            if s < MIN_STEP {
                break None;
            }
        };
        let Some(next) = accepted else {
            return Ok(Outcome::Stalled);
        };
        let (g_next, w_next) = ctx.gradient(&next);
        let dg: Vec<f64> = g_next.iter().zip(&g).map(|(a, b)| a - b).collect();
        prev = Some((d.clone(), g, dg, s));
        cur = next;
        g = g_next;
        w_norm = w_next;
        iters += 1;
    }
}

/// Preconditioned Barzilai-Borwein step. With `d = K g` the metric term
/// `<dv, K^-1 dv>` is `s^2 <d, g>`, so no inverse is needed.
fn bb_step(d: &[f64], g_prev: &[f64], dg: &[f64], s: f64) -> f64 {
    let curv = -dot(d, dg);
    let num = s * dot(d, g_prev);
    if curv > 0.0 && num > 0.0 {
        (num / curv).clamp(1e-4, 1e2)
    } else {
        1.0
    }
}

/// Advances one step from `c_prev`, whose evaluation is `prev_eval`.
pub fn step_from(
    model: &Model,
    c_prev: &PhaseState,
    prev_eval: &Evaluation,
    cfg: &StepConfig,
) -> Result<StepResult, StepError> {
    let mut tau = cfg.tau;
    loop {
        let ctx = StepContext::new(model, c_prev, prev_eval, tau);
        match minimize(&ctx, cfg)? {
            Outcome::Done(r) => return Ok(r),
            Outcome::Stalled => {
                tau *= 0.5;
                if tau < cfg.tau_min {
                    return Err(StepError::TauUnderflow { tau_min: cfg.tau_min });
                }
            }
        }
    }
}

/// One step from `c_prev` without a cached evaluation.
pub fn step(model: &Model, c_prev: &PhaseState, cfg: &StepConfig) -> Result<StepResult, StepError> {
    let eval = model.evaluate(c_prev, None)?;
    step_from(model, c_prev, &eval, cfg)
}

/// Final state of a fixed-horizon run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub state: PhaseState,
    pub eval: Evaluation,
    pub time: f64,
    pub steps: usize,
}

/// Steps from `c0` until `t_end`, calling `on_step(index, time, result)`
/// after every accepted step. `t_end = 0` returns `c0` untouched.
pub fn run<F>(
    model: &Model,
    c0: &PhaseState,
    cfg: &StepConfig,
    t_end: f64,
    mut on_step: F,
) -> Result<RunOutcome, StepError>
where
    F: FnMut(usize, f64, &StepResult),
{
    let mut state = c0.clone();
    let mut eval = model.evaluate(c0, None)?;
    let mut time = 0.0;
    let mut steps = 0;
    let mut cfg = *cfg;
    // guard against a last step of rounding size
    while time < t_end * (1.0 - 1e-12) {
        let remaining = t_end - time;
        if remaining < cfg.tau * (1.0 - 1e-9) {
            cfg.tau = remaining.max(cfg.tau_min);
        }
        let r = step_from(model, &state, &eval, &cfg)?;
        time += r.accepted_tau;
        steps += 1;
        cfg.tau = r.accepted_tau;
        on_step(steps, time, &r);
        state = r.state;
        eval = r.eval;
    }
    Ok(RunOutcome { state, eval, time, steps })
}

/// `|w - mean w|_H / (1 + |w|_H)`
pub fn relative_stationarity(model: &Model, c: &PhaseState, eval: &Evaluation) -> f64 {
    let w = model.chem_potential(c, eval).w;
    let flat = flatten(w.fields());
    let area = model.grid().cell_area();
    let w_norm = sum_sq(&flat).sqrt() * area.sqrt();
    model.stationarity_residual(c, eval) / (1.0 + w_norm)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryConfig {
    pub stat_tol: f64,
    pub max_steps: usize,
}

impl Default for StationaryConfig {
    fn default() -> Self {
        Self { stat_tol: 1e-6, max_steps: 100_000 }
    }
}

#[derive(Debug, Clone)]
pub struct StationaryOutcome {
    pub state: PhaseState,
    pub eval: Evaluation,
    pub report: EnergyReport,
    pub steps: usize,
    pub time: f64,
    pub residual: f64,
    pub converged: bool,
}

/// Steps until the relative stationarity residual drops below `stat_tol`.
/// The residual is checked before each step, so a stationary input returns
/// after zero steps.
pub fn run_to_stationary<F>(
    model: &Model,
    c0: &PhaseState,
    cfg: &StepConfig,
    stat: &StationaryConfig,
    mut on_step: F,
) -> Result<StationaryOutcome, StepError>
where
    F: FnMut(usize, f64, &StepResult),
{
    let mut state = c0.clone();
    let mut eval = model.evaluate(c0, None)?;
    let mut time = 0.0;
    let mut steps = 0;
    let mut cfg = *cfg;
    loop {
        let residual = relative_stationarity(model, &state, &eval);
        if residual <= stat.stat_tol || steps >= stat.max_steps {
            let report = model.report(&eval, 0.0);
            return Ok(StationaryOutcome {
                state,
                eval,
                report,
                steps,
                time,
                residual,
                converged: residual <= stat.stat_tol,
            });
        }
        let r = step_from(model, &state, &eval, &cfg)?;
        time += r.accepted_tau;
        steps += 1;
        cfg.tau = r.accepted_tau;
        if r.converged && r.inner_iters <= 5 {
            cfg.tau = (cfg.tau * cfg.tau_growth).min(cfg.tau_max.max(cfg.tau));
        }
        on_step(steps, time, &r);
        state = r.state;
        eval = r.eval;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::FieldSpec;
    use crate::physics::{ModelParams, Permittivity};

    fn perturbed(g: GridSpec, amp: f64) -> PhaseState {
        let ca = ScalarField::from_fn(g, |x, y| 0.3 + amp * (std::f64::consts::PI * x).cos() * (0.5 + y));
        let cb = ScalarField::from_fn(g, |x, y| 0.3 - 0.5 * amp * (2.0 * std::f64::consts::PI * y).cos() * (1.0 - x));
        PhaseState::from_ab(ca, cb).unwrap()
    }

    fn model(n: usize, params: ModelParams) -> Model {
        let g = GridSpec::unit_square(n).unwrap();
        Model::new(g, params, FieldSpec::default().cell_field(g), 1e-12).unwrap()
    }

    #[test]
    fn first_trial_reproduces_previous_energy_exactly() {
        let m = model(12, ModelParams::default());
        let c = perturbed(*m.grid(), 0.05);
        let eval = m.evaluate(&c, None).unwrap();
        let ctx = StepContext::new(&m, &c, &eval, 1e-3);
        assert_eq!(ctx.initial().augmented(), eval.total());
        // a re-evaluation from the same state also gives zero penalty
        let again = ctx.evaluate(c.clone(), &ctx.initial()).unwrap();
        assert_eq!(again.penalty, 0.0);
    }

    #[test]
    fn step_decreases_energy_and_preserves_constraints() {
        let m = model(16, ModelParams::default());
        let c = perturbed(*m.grid(), 0.05);
        let e_prev = m.evaluate(&c, None).unwrap().total();
        let r = step(&m, &c, &StepConfig::default()).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        assert!(r.report.total + r.report.dissipation <= e_prev + 1e-10 * (1.0 + e_prev.abs()));
        assert!(r.report.dissipation > 0.0);
        assert!(r.state.max_sum_deviation() < 1e-12);
        let means = r.state.means();
        for i in 0..3 {
            assert!((means[i] - c.target_mean()[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn stationary_state_does_not_move() {
        let m = model(12, ModelParams::default());
        let c = PhaseState::uniform(*m.grid(), [0.3, 0.3, 0.4]).unwrap();
        let r = step(&m, &c, &StepConfig::default()).unwrap();
        assert_eq!(r.inner_iters, 0);
        assert_eq!(r.report.dissipation, 0.0);
        let out =
            run_to_stationary(&m, &c, &StepConfig::default(), &StationaryConfig::default(), |_, _, _| {}).unwrap();
        assert_eq!(out.steps, 0);
        assert!(out.converged);
    }

    #[test]
    fn general_metric_agrees_with_projector_fast_path() {
        // the constant projector given as a matrix must reproduce the fast path
        let mut p = ModelParams::default();
        let fast = model(12, p.clone());
        p.mobility = MobilitySpec::ConstantMatrix(crate::physics::projector_matrix());
        let slow = model(12, p);
        let c = perturbed(*fast.grid(), 0.05);
        let cfg = StepConfig::default();
        let a = step(&fast, &c, &cfg).unwrap();
        let b = step(&slow, &c, &cfg).unwrap();
        assert!((a.report.total - b.report.total).abs() < 1e-10);
        assert!((a.report.dissipation - b.report.dissipation).abs() < 1e-9 * a.report.dissipation.max(1e-12));
    }

    #[test]
    fn state_dependent_mobility_steps() {
        let mut p = ModelParams::default();
        p.mobility = MobilitySpec::StateDependent { kappa: 0.3 };
        let m = model(12, p);
        let c = perturbed(*m.grid(), 0.05);
        let e_prev = m.evaluate(&c, None).unwrap().total();
        let r = step(&m, &c, &StepConfig::default()).unwrap();
        assert!(r.converged);
        assert!(r.report.total + r.report.dissipation <= e_prev + 1e-10 * (1.0 + e_prev.abs()));
    }

    #[test]
    fn run_with_zero_horizon_returns_initial_state() {
        let m = model(8, ModelParams::default());
        let c = perturbed(*m.grid(), 0.02);
        let mut calls = 0;
        let out = run(&m, &c, &StepConfig::default(), 0.0, |_, _, _| calls += 1).unwrap();
        assert_eq!((out.steps, calls), (0, 0));
        assert_eq!(out.state.component(0).values(), c.component(0).values());
    }

    #[test]
    fn run_hits_the_horizon() {
        let m = model(8, ModelParams::default());
        let c = perturbed(*m.grid(), 0.02);
        let mut times = vec![];
        let out = run(&m, &c, &StepConfig::default(), 5e-3, |_, t, _| times.push(t)).unwrap();
        assert_eq!(out.steps, 5);
        assert!((out.time - 5e-3).abs() < 1e-15);
        assert!((times[4] - 5e-3).abs() < 1e-15);
        assert!(times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn relaxation_reaches_stationarity() {
        let mut p = ModelParams::default();
        p.permittivity = Permittivity::constant(2.0).unwrap();
        let m = model(12, p);
        let c = perturbed(*m.grid(), 0.05);
        let cfg = StepConfig { tau_growth: 2.0, tau_max: 0.1, ..StepConfig::default() };
        let out = run_to_stationary(&m, &c, &cfg, &StationaryConfig { stat_tol: 1e-7, max_steps: 2000 }, |_, _, _| {})
            .unwrap();
        assert!(out.converged, "residual {} after {} steps", out.residual, out.steps);
    }

    #[test]
    fn config_validation() {
        assert!(StepConfig::default().validate().is_ok());
        assert!(StepConfig { tau: 0.0, ..Default::default() }.validate().is_err());
        assert!(StepConfig { backtrack: 1.0, ..Default::default() }.validate().is_err());
        assert!(StepConfig { tau_growth: 0.5, ..Default::default() }.validate().is_err());
    }
}
