//! Run monitoring: per-step records, offline checks over recorded series and
//! trajectory-level estimates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::electrostatics::ElectroState;
use crate::energy::{assemble_w, EnergyReport, Evaluation, Model};
use crate::error::{PhysicsError, SolverError, StepError};
use crate::grid::{face_inner, gradient, sum_sq, BoundaryCondition, ScalarField};
use crate::operators::{flatten, inv_neumann_laplacian, project_block, PhaseState};
use crate::physics::{ModelParams, Vec3};
use crate::stepper::{step_from, StepConfig, StepResult};

/// Exponent of the integrability surrogate `sum_i int |Psi_delta'(c_i)|^{q/2}`.
pub const SURROGATE_Q: f64 = 4.0;

/// One row of a [`DiagnosticsSeries`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    pub mass: Vec3,
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub total: f64,
    pub augmented: f64,
    pub dissipation: f64,
    pub min: Vec3,
    pub max: Vec3,
    /// max pointwise `|c_A + c_B + c_S - 1|`
    pub sum_dev: f64,
    pub w_norm: f64,
    pub w_mean: Vec3,
    pub psi_prime: f64,
    pub stationarity: f64,
    /// relative metric-gradient norm reported by the step
    pub grad_residual: f64,
    pub inner_iters: usize,
    pub tau: f64,
    /// `|c^n - c^{n-1}|_H`
    pub increment: f64,
}

/// Column names, in the order of [`DiagnosticsRecord::to_row`].
pub const COLUMNS: [&str; 29] = [
    "step",
    "time",
    "mass_a",
    "mass_b",
    "mass_s",
    "e1",
    "e2",
    "e3",
    "e4",
    "total",
    "augmented",
    "dissipation",
    "min_a",
    "min_b",
    "min_s",
    "max_a",
    "max_b",
    "max_s",
    "sum_dev",
    "w_norm",
    "w_mean_a",
    "w_mean_b",
    "w_mean_s",
    "psi_prime",
    "stationarity",
    "grad_residual",
    "inner_iters",
    "tau",
    "increment",
];

impl DiagnosticsRecord {
    pub fn to_row(&self) -> Vec<f64> {
        let mut r = vec![self.step as f64, self.time];
        r.extend(self.mass);
        r.extend([self.e1, self.e2, self.e3, self.e4, self.total, self.augmented, self.dissipation]);
        r.extend(self.min);
        r.extend(self.max);
        r.push(self.sum_dev);
        r.push(self.w_norm);
        r.extend(self.w_mean);
        r.extend([self.psi_prime, self.stationarity, self.grad_residual, self.inner_iters as f64, self.tau]);
        r.push(self.increment);
        r
    }

    pub fn from_row(row: &[f64]) -> Option<Self> {
        if row.len() != COLUMNS.len() {
            return None;
        }
        let v3 = |k: usize| [row[k], row[k + 1], row[k + 2]];
        let count = |x: f64| (x >= 0.0 && x.fract() == 0.0).then_some(x as usize);
        Some(Self {
            step: count(row[0])?,
            time: row[1],
            mass: v3(2),
            e1: row[5],
            e2: row[6],
            e3: row[7],
            e4: row[8],
            total: row[9],
            augmented: row[10],
            dissipation: row[11],
            min: v3(12),
            max: v3(15),
            sum_dev: row[18],
            w_norm: row[19],
            w_mean: v3(20),
            psi_prime: row[23],
            stationarity: row[24],
            grad_residual: row[25],
            inner_iters: count(row[26])?,
            tau: row[27],
            increment: row[28],
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsSeries {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends the record of `c`. `step` is `None` for the initial state.
    pub fn record(
        &mut self,
        model: &Model,
        index: usize,
        time: f64,
        c: &PhaseState,
        eval: &Evaluation,
        step: Option<&StepResult>,
        prev: Option<&PhaseState>,
    ) {
        self.records.push(make_record(model, index, time, c, eval, step, prev));
    }

    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total).collect()
    }
}

fn make_record(
    model: &Model,
    index: usize,
    time: f64,
    c: &PhaseState,
    eval: &Evaluation,
    step: Option<&StepResult>,
    prev: Option<&PhaseState>,
) -> DiagnosticsRecord {
    let g = model.grid();
    let w = model.chem_potential(c, eval).w;
    let wf = w.fields();
    let flat = flatten(wf);
    let w_norm = sum_sq(&flat).sqrt() * g.cell_area().sqrt();
    let report = match step {
        Some(s) => s.report,
        None => model.report(eval, 0.0),
    };
    let pot = model.potential_fn();
    let psi_prime = (0..3)
        .map(|i| c.component(i).values().iter().map(|&s| pot.d1(s).abs().powf(SURROGATE_Q / 2.0)).sum::<f64>())
        .sum::<f64>()
        * g.cell_area();
    let increment = prev
        .map(|p| {
            let d: f64 = (0..3)
                .map(|i| {
                    let a = c.component(i).values();
                    let b = p.component(i).values();
                    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()
                })
                .sum();
            (d * g.cell_area()).sqrt()
        })
        .unwrap_or(0.0);
    DiagnosticsRecord {
        step: index,
        time,
        mass: c.means(),
        e1: report.e1,
        e2: report.e2,
        e3: report.e3,
        e4: report.e4,
        total: report.total,
        augmented: report.augmented,
        dissipation: report.dissipation,
        min: [0, 1, 2].map(|i| c.component(i).min()),
        max: [0, 1, 2].map(|i| c.component(i).max()),
        sum_dev: c.max_sum_deviation(),
        w_norm,
        w_mean: [0, 1, 2].map(|i| wf[i].mean()),
        psi_prime,
        stationarity: model.stationarity_residual(c, eval) / (1.0 + w_norm),
        grad_residual: step.map_or(0.0, |s| s.residual),
        inner_iters: step.map_or(0, |s| s.inner_iters),
        tau: step.map_or(0.0, |s| s.accepted_tau),
        increment,
    }
}

/// Outcome of one check; `worst` is compared against `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub worst: f64,
    pub threshold: f64,
    pub pass: bool,
    /// first offending record, if any
    pub index: Option<usize>,
}

impl CheckReport {
    fn from_values(name: &str, values: impl Iterator<Item = f64>, threshold: f64) -> Self {
        Self::from_indexed(name, values.enumerate(), threshold)
    }

    fn from_indexed(name: &str, values: impl Iterator<Item = (usize, f64)>, threshold: f64) -> Self {
        let mut worst = f64::NEG_INFINITY;
        let mut index = None;
        for (k, v) in values {
            // NaN counts as a violation
            if !(v <= threshold) && index.is_none() {
                index = Some(k);
            }
            if v > worst || v.is_nan() {
                worst = v;
            }
        }
        if worst == f64::NEG_INFINITY {
            worst = 0.0;
        }
        Self { name: name.to_string(), worst, threshold, pass: index.is_none(), index }
    }

    /// `name,worst,threshold,PASS|FAIL`
    pub fn line(&self) -> String {
        format!("{},{:.6e},{:.6e},{}", self.name, self.worst, self.threshold, if self.pass { "PASS" } else { "FAIL" })
    }
}

/// Slack of the energy inequality, relative to `1 + |E|`.
pub const ENERGY_SLACK: f64 = 1e-10;

/// Per-step and cumulative energy inequality. The value at index `n` is the
/// larger of `(E_n + D_n - E_{n-1}) / (1 + |E_{n-1}|)` and the cumulative
/// excess `(E_n + sum D - E_0) / (n (1 + |E_0|))`.
pub fn check_energy_inequality(series: &DiagnosticsSeries) -> CheckReport {
    let r = &series.records;
    let mut vals = Vec::with_capacity(r.len());
    let mut acc = 0.0;
    for n in 1..r.len() {
        acc += r[n].dissipation;
        let step = (r[n].total + r[n].dissipation - r[n - 1].total) / (1.0 + r[n - 1].total.abs());
        let cum = (r[n].total + acc - r[0].total) / (n as f64 * (1.0 + r[0].total.abs()));
        vals.push((n, step.max(cum)));
    }
    CheckReport::from_indexed("energy_inequality", vals.into_iter(), ENERGY_SLACK)
}

/// Largest deviation of the mass columns from the first record.
pub fn check_mass(series: &DiagnosticsSeries, tol: f64) -> CheckReport {
    let m0 = series.records.first().map(|r| r.mass).unwrap_or_default();
    let vals = series.records.iter().map(|r| (0..3).map(|i| (r.mass[i] - m0[i]).abs()).fold(0.0, f64::max));
    CheckReport::from_values("mass_conservation", vals, tol)
}

pub fn check_sum_constraint(series: &DiagnosticsSeries, tol: f64) -> CheckReport {
    CheckReport::from_values("sum_constraint", series.records.iter().map(|r| r.sum_dev), tol)
}

/// `-min_i min_x c_i` against `floor` (a floor of -0.05 is passed as 0.05).
pub fn check_confinement(series: &DiagnosticsSeries, floor: f64) -> CheckReport {
    let vals = series.records.iter().map(|r| -r.min.iter().copied().fold(f64::INFINITY, f64::min));
    CheckReport::from_values("simplex_confinement", vals, floor)
}

pub fn check_step_residual(series: &DiagnosticsSeries, tol: f64) -> CheckReport {
    CheckReport::from_values("euler_lagrange_residual", series.records.iter().map(|r| r.grad_residual), tol)
}

/// Largest adjacent-pair Hoelder quotient `increment / dt^{1/4}`.
pub fn series_holder(series: &DiagnosticsSeries) -> f64 {
    series
        .records
        .windows(2)
        .map(|w| {
            let dt = w[1].time - w[0].time;
            if dt > 0.0 {
                w[1].increment / dt.powf(0.25)
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

/// The checks that only need the recorded series.
pub fn series_checks(series: &DiagnosticsSeries) -> Vec<CheckReport> {
    let mut out = vec![
        check_energy_inequality(series),
        check_mass(series, 1e-10),
        check_sum_constraint(series, 1e-10),
        check_confinement(series, 0.05),
        check_step_residual(series, 1e-8),
    ];
    let h = series_holder(series);
    out.push(CheckReport {
        name: "holder_quotient".into(),
        worst: h,
        threshold: f64::INFINITY,
        pass: h.is_finite(),
        index: None,
    });
    out
}

/// Verdict file body, one check per line.
pub fn verdict_lines(checks: &[CheckReport]) -> String {
    let mut s = String::from("check,worst,threshold,verdict\n");
    for c in checks {
        s.push_str(&c.line());
        s.push('\n');
    }
    s
}

/// `sup |c(t1) - c(t2)|_H / |t1 - t2|^{1/4}` over all adjacent node pairs
/// plus `pairs` random pairs of times on the piecewise linear interpolant.
pub fn holder_quotient(times: &[f64], states: &[PhaseState], pairs: usize, seed: u64) -> f64 {
    assert_eq!(times.len(), states.len(), "one time per state");
    if states.len() < 2 {
        return 0.0;
    }
    let flat: Vec<Vec<f64>> = states.iter().map(|s| flatten(s.fields())).collect();
    let area = states[0].grid().cell_area();
    let at = |t: f64| -> Vec<f64> {
        let k = match times.partition_point(|&x| x <= t) {
            0 => 0,
            k if k >= times.len() => times.len() - 2,
            k => k - 1,
        };
        let (t0, t1) = (times[k], times[k + 1]);
        let lam = if t1 > t0 { ((t - t0) / (t1 - t0)).clamp(0.0, 1.0) } else { 0.0 };
        flat[k].iter().zip(&flat[k + 1]).map(|(a, b)| a + lam * (b - a)).collect()
    };
    let quotient = |a: &[f64], b: &[f64], dt: f64| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        (d * area).sqrt() / dt.abs().powf(0.25)
    };
    let mut best: f64 = 0.0;
    for k in 0..states.len() - 1 {
        let dt = times[k + 1] - times[k];
        if dt > 0.0 {
            best = best.max(quotient(&flat[k], &flat[k + 1], dt));
        }
    }
    let (lo, hi) = (times[0], times[times.len() - 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..pairs {
        let t1 = rng.gen_range(lo..=hi);
        let t2 = rng.gen_range(lo..=hi);
        if t1 != t2 {
            best = best.max(quotient(&at(t1), &at(t2), t2 - t1));
        }
    }
    best
}

/// Dual norm of one scalar field: `|grad N (f - mean f)|_H` combined with
/// the mean part `|Omega|^{1/2} |mean f|`.
pub fn star_norm(f: &ScalarField, tol: f64) -> Result<f64, SolverError> {
    let m = f.mean();
    let dev = f.map(|v| v - m);
    let u = inv_neumann_laplacian(&dev, tol)?;
    let energy = crate::grid::dot(u.values(), dev.values()) * f.grid().cell_area();
    Ok((energy.max(0.0) + f.grid().area() * m * m).sqrt())
}

fn star_norm_state(a: &PhaseState, b: &PhaseState, tol: f64) -> Result<f64, SolverError> {
    let d = a.difference_fields(b)?;
    let mut s = 0.0;
    for f in &d {
        s += star_norm(f, tol)?.powi(2);
    }
    Ok(s.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousDependence {
    /// `|c1 - c2|_*` at every recorded time, starting at t = 0
    pub lhs_curve: Vec<f64>,
    /// `sup_t |c1 - c2|_* + |c1 - c2|_{L2(V)} + |grad(phi1 - phi2)|_{L2(H)}`
    pub lhs: f64,
    /// `|c01 - c02|_* + |mean c01 - mean c02|^{1/2}`
    pub rhs: f64,
}

impl ContinuousDependence {
    pub fn ratio(&self) -> f64 {
        if self.rhs == 0.0 {
            0.0
        } else {
            self.lhs / self.rhs
        }
    }
}

/// Runs both initial states for `steps` steps and compares the trajectories.
pub fn continuous_dependence(
    model: &Model,
    c0a: &PhaseState,
    c0b: &PhaseState,
    cfg: &StepConfig,
    steps: usize,
) -> Result<ContinuousDependence, StepError> {
    if !model.params().mobility.is_constant() {
        return Err(PhysicsError::Invalid("continuous dependence needs a constant mobility".into()).into());
    }
    if c0a.grid() != model.grid() || c0b.grid() != model.grid() {
        return Err(SolverError::Grid(crate::error::GridError::GridMismatch).into());
    }
    let tol = model.tol();
    let g = *model.grid();
    let ma = c0a.means();
    let mb = c0b.means();
    let mean_gap = (0..3).map(|i| (ma[i] - mb[i]).powi(2)).sum::<f64>().sqrt();
    let rhs = star_norm_state(c0a, c0b, tol)? + mean_gap.sqrt();

    let (mut a, mut b) = (c0a.clone(), c0b.clone());
    let mut ea = model.evaluate(&a, None)?;
    let mut eb = model.evaluate(&b, None)?;
    let mut curve = vec![star_norm_state(&a, &b, tol)?];
    let (mut l2_v, mut l2_phi) = (0.0, 0.0);
    for _ in 0..steps {
        let ra = step_from(model, &a, &ea, cfg)?;
        let rb = step_from(model, &b, &eb, cfg)?;
        let dt = ra.accepted_tau.min(rb.accepted_tau);
        a = ra.state;
        b = rb.state;
        ea = ra.eval;
        eb = rb.eval;
        curve.push(star_norm_state(&a, &b, tol)?);
        let d = a.difference_fields(&b).map_err(SolverError::from)?;
        for f in &d {
            let gf = gradient(f, BoundaryCondition::NeumannZero);
            l2_v += dt * (face_inner(&g, &gf, &gf) + sum_sq(f.values()) * g.cell_area());
        }
        let dphi = ea.phi.zip_map(&eb.phi, |x, y| x - y);
        let gp = gradient(&dphi, BoundaryCondition::DirichletZero);
        l2_phi += dt * face_inner(&g, &gp, &gp);
    }
    let sup = curve.iter().copied().fold(0.0, f64::max);
    Ok(ContinuousDependence { lhs: sup + l2_v.sqrt() + l2_phi.sqrt(), lhs_curve: curve, rhs })
}

/// `|w - componentwise mean w|_H` from an explicit potential.
pub fn stationarity_residual(
    c: &PhaseState,
    es: &ElectroState,
    params: &ModelParams,
    tol: f64,
) -> Result<f64, SolverError> {
    let w = assemble_w(c, es, params, tol)?.w;
    let mut flat = flatten(w.fields());
    project_block(&mut flat);
    Ok(sum_sq(&flat).sqrt() * c.grid().cell_area().sqrt())
}

/// Re-evaluates the report of a stored state.
pub fn report_of(model: &Model, c: &PhaseState) -> Result<EnergyReport, SolverError> {
    let e = model.evaluate(c, None)?;
    Ok(model.report(&e, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::FieldSpec;
    use crate::grid::GridSpec;
    use crate::stepper::run;

    fn model(n: usize) -> Model {
        let g = GridSpec::unit_square(n).unwrap();
        Model::new(g, ModelParams::default(), FieldSpec::default().cell_field(g), 1e-12).unwrap()
    }

    fn bumpy(g: GridSpec, amp: f64) -> PhaseState {
        let ca = ScalarField::from_fn(g, |x, y| 0.3 + amp * (3.0 * x).cos() * (2.0 * y).sin());
        let cb = ScalarField::from_fn(g, |x, _| 0.3 + amp * (std::f64::consts::PI * x).cos());
        PhaseState::from_ab(ca, cb).unwrap()
    }

    fn short_series() -> DiagnosticsSeries {
        let m = model(10);
        let c0 = bumpy(*m.grid(), 0.05);
        let mut series = DiagnosticsSeries::new();
        series.record(&m, 0, 0.0, &c0, &m.evaluate(&c0, None).unwrap(), None, None);
        let mut prev = c0.clone();
        run(&m, &c0, &StepConfig::default(), 4e-3, |k, t, r| {
            series.record(&m, k, t, &r.state, &r.eval, Some(r), Some(&prev));
            prev = r.state.clone();
        })
        .unwrap();
        series
    }

    #[test]
    fn accepted_run_passes_every_series_check() {
        let s = short_series();
        assert_eq!(s.len(), 5);
        for c in series_checks(&s) {
            assert!(c.pass, "{}", c.line());
        }
        assert!(s.totals().windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn detectors_flag_corrupted_series() {
        let s = short_series();
        let mut bumped = s.clone();
        bumped.records[3].total += 1.0;
        let r = check_energy_inequality(&bumped);
        assert!(!r.pass);
        assert_eq!(r.index, Some(3));

        let mut leak = s.clone();
        leak.records[2].mass[1] += 1e-8;
        assert_eq!(check_mass(&leak, 1e-10).index, Some(2));

        let mut sum = s.clone();
        sum.records[4].sum_dev = 1e-6;
        assert_eq!(check_sum_constraint(&sum, 1e-10).index, Some(4));

        let mut neg = s.clone();
        neg.records[1].min[2] = -0.2;
        assert_eq!(check_confinement(&neg, 0.05).index, Some(1));

        let mut res = s.clone();
        res.records[2].grad_residual = 1e-3;
        assert_eq!(check_step_residual(&res, 1e-8).index, Some(2));

        let mut nan = s;
        nan.records[1].total = f64::NAN;
        assert!(!check_energy_inequality(&nan).pass);
    }

    #[test]
    fn single_step_series_is_the_per_step_inequality() {
        let s = short_series();
        let two = DiagnosticsSeries { records: s.records[..2].to_vec() };
        let r = check_energy_inequality(&two);
        let direct = (two.records[1].total + two.records[1].dissipation - two.records[0].total)
            / (1.0 + two.records[0].total.abs());
        assert_eq!(r.worst, direct);
    }

    #[test]
    fn rows_round_trip() {
        let s = short_series();
        for r in &s.records {
            let row = r.to_row();
            assert_eq!(row.len(), COLUMNS.len());
            assert_eq!(DiagnosticsRecord::from_row(&row).unwrap(), *r);
        }
        assert!(DiagnosticsRecord::from_row(&[0.0; 3]).is_none());
    }

    #[test]
    fn holder_of_trivial_trajectories() {
        let g = GridSpec::unit_square(6).unwrap();
        let c = PhaseState::uniform(g, [0.3, 0.3, 0.4]).unwrap();
        assert_eq!(holder_quotient(&[0.0, 1.0, 2.0], &[c.clone(), c.clone(), c.clone()], 50, 1), 0.0);
        let d = PhaseState::uniform(g, [0.4, 0.2, 0.4]).unwrap();
        // constant difference 0.1 in two components over a unit area, dt = 16
        let q = holder_quotient(&[0.0, 16.0], &[c, d], 0, 1);
        assert!((q - (0.02f64).sqrt() / 2.0).abs() < 1e-12);
    }

    #[test]
    fn holder_interpolant_never_beats_adjacent_pairs_for_linear_motion() {
        let g = GridSpec::unit_square(6).unwrap();
        let states: Vec<_> = (0..5)
            .map(|k| PhaseState::uniform(g, [0.3 + 0.01 * k as f64, 0.3, 0.4 - 0.01 * k as f64]).unwrap())
            .collect();
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.1).collect();
        let adjacent = holder_quotient(&times, &states, 0, 3);
        let sampled = holder_quotient(&times, &states, 500, 3);
        // |dc| grows linearly in dt, so the quotient is largest at the longest gap
        assert!(sampled >= adjacent);
        let whole = 0.04 * 2f64.sqrt() / 0.4f64.powf(0.25);
        assert!(sampled <= whole + 1e-12);
    }

    #[test]
    fn continuous_dependence_structure() {
        let m = model(8);
        let c = bumpy(*m.grid(), 0.04);
        let cfg = StepConfig::default();
        let same = continuous_dependence(&m, &c, &c, &cfg, 3).unwrap();
        assert_eq!(same.lhs, 0.0);
        assert_eq!(same.rhs, 0.0);

        // a pure mean shift carries the square-root term
        let g = *m.grid();
        let shifted = PhaseState::from_ab(c.component(0).map(|v| v + 1e-4), c.component(1).clone()).unwrap();
        let r = continuous_dependence(&m, &c, &shifted, &cfg, 1).unwrap();
        let star = (2.0 * 1e-8 * g.area()).sqrt();
        assert!((r.rhs - star - (2e-8f64).sqrt().sqrt()).abs() < 1e-9);
    }

    #[test]
    fn continuous_dependence_shrinks_with_the_perturbation() {
        let m = model(8);
        let c = bumpy(*m.grid(), 0.04);
        let g = *m.grid();
        let mut lhs = vec![];
        for eps in [4e-3, 2e-3, 1e-3] {
            let p = ScalarField::from_fn(g, |x, y| {
                eps * (std::f64::consts::PI * x).cos() * (std::f64::consts::PI * y).cos()
            });
            let d = PhaseState::from_ab(c.component(0).zip_map(&p, |a, b| a + b), c.component(1).clone()).unwrap();
            lhs.push(continuous_dependence(&m, &c, &d, &StepConfig::default(), 3).unwrap().lhs);
        }
        assert!(lhs[0] > lhs[1] && lhs[1] > lhs[2], "{lhs:?}");
    }

    #[test]
    fn continuous_dependence_rejects_varying_mobility() {
        let g = GridSpec::unit_square(6).unwrap();
        let mut p = ModelParams::default();
        p.mobility = crate::physics::MobilitySpec::StateDependent { kappa: 0.2 };
        let m = Model::new(g, p, FieldSpec::default().cell_field(g), 1e-12).unwrap();
        let c = PhaseState::uniform(g, [0.3, 0.3, 0.4]).unwrap();
        assert!(continuous_dependence(&m, &c, &c, &StepConfig::default(), 1).is_err());
    }

    #[test]
    fn uniform_state_without_field_is_stationary() {
        let g = GridSpec::unit_square(8).unwrap();
        let mut p = ModelParams::default();
        p.alpha = [[0.0; 2]; 2];
        let c = PhaseState::uniform(g, [0.2, 0.5, 0.3]).unwrap();
        let es =
            ElectroState { phi: ScalarField::zeros(g), e0: FieldSpec::Constant { ex: 0.0, ey: 0.0 }.cell_field(g) };
        assert!(stationarity_residual(&c, &es, &p, 1e-12).unwrap() < 1e-13);
        // a bumpy state is not
        let es = ElectroState { phi: ScalarField::zeros(g), e0: es.e0 };
        assert!(stationarity_residual(&bumpy(g, 0.05), &es, &p, 1e-12).unwrap() > 1e-3);
    }

    #[test]
    fn verdict_format() {
        let r = CheckReport { name: "x".into(), worst: 0.5, threshold: 1.0, pass: true, index: None };
        assert_eq!(verdict_lines(&[r]), "check,worst,threshold,verdict\nx,5.000000e-1,1.000000e0,PASS\n");
    }
}
