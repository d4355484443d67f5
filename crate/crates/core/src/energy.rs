//! Discrete energy functionals and the chemical potentials they induce.
//!
//! Gradient terms use face quadrature consistent with
//! [`crate::grid::apply_elliptic`], pointwise terms use cell quadrature, so
//! the assembled potentials are exact derivatives of the discrete energy.

use crate::electrostatics::{field_to_faces, permittivity_faces, solve_potential_faces, ElectroState};
use crate::error::{GridError, SolverError};
use crate::grid::{
    compensated_sum, elliptic_kernel, gradient_into, BoundaryCondition, FaceCoefficients, GridSpec, ScalarField,
};
use crate::operators::{flatten, inv_neumann_projected, project_block, MobilityOperator, PhaseState, TangentField};
use crate::physics::{ModelParams, Permittivity, RegularizedPsi};

/// Default tolerance of the inner linear solves.
pub const SOLVE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyReport {
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
    pub total: f64,
    /// `total + dissipation`
    pub augmented: f64,
    /// `|c - c_prev|^2_{*,M(c_prev)} / (2 tau)`
    pub dissipation: f64,
}

impl EnergyReport {
    pub fn new(e1: f64, e2: f64, e3: f64, e4: f64, dissipation: f64) -> Self {
        let total = e1 + e2 + e3 + e4;
        Self { e1, e2, e3, e4, total, augmented: total + dissipation, dissipation }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChemPotential {
    pub w: TangentField,
    pub mu_tilde: [ScalarField; 3],
}

/// Gradient part `sum gamma_i / 2 |grad c_i|^2` with zero-flux closure.
fn gradient_energy(grid: &GridSpec, gamma: &[f64; 3], c: &[ScalarField; 3]) -> f64 {
    let mut gx = vec![0.0; grid.n_xfaces()];
    let mut gy = vec![0.0; grid.n_yfaces()];
    let mut total = 0.0;
    for i in 0..3 {
        gradient_into(grid, c[i].values(), BoundaryCondition::NeumannZero, &mut gx, &mut gy);
        // boundary faces carry zero gradient, interior weights are uniform
        let s = compensated_sum(gx.iter().chain(&gy).map(|v| v * v));
        total += 0.5 * gamma[i] * s * grid.cell_area();
    }
    total
}

fn potential_energy(grid: &GridSpec, params: &ModelParams, pot: &RegularizedPsi, c: &[ScalarField; 3]) -> f64 {
    let terms = (0..3)
        .flat_map(|i| c[i].values().iter().map(move |&v| params.theta[i] * pot.value(v) + params.delta * v.powi(4)));
    compensated_sum(terms) * grid.cell_area()
}

/// `E1 = sum int gamma_i/2 |grad c_i|^2 + theta_i psi_delta(c_i) + delta c_i^4`
pub fn energy_e1(c: &PhaseState, params: &ModelParams) -> Result<f64, SolverError> {
    let pot = params.potential()?;
    Ok(gradient_energy(c.grid(), &params.gamma, c.fields()) + potential_energy(c.grid(), params, &pot, c.fields()))
}

/// `E2 = int I(c)`
pub fn energy_e2(c: &PhaseState, params: &ModelParams) -> f64 {
    let n = c.grid().cells();
    compensated_sum((0..n).map(|k| params.interaction.value(c.at(k)))) * c.grid().cell_area()
}

fn nonlocal_energy(grid: &GridSpec, alpha: &[[f64; 2]; 2], dev: &[ScalarField; 2], n: &[ScalarField; 2]) -> f64 {
    let dot = |a: &[f64], b: &[f64]| compensated_sum(a.iter().zip(b).map(|(x, y)| x * y));
    // (n_i, d_j) + (n_j, d_i) - (L n_i, n_j) is off from (N d_i, d_j) only at
    // second order in the solver error
    let ln = n.clone().map(|u| {
        let mut out = vec![0.0; grid.cells()];
        crate::grid::neg_laplace_into(grid, u.values(), BoundaryCondition::NeumannZero, &mut out);
        out
    });
    let mut s = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            if alpha[i][j] != 0.0 {
                let form = dot(n[i].values(), dev[j].values()) + dot(n[j].values(), dev[i].values())
                    - dot(&ln[i], n[j].values());
                s += 0.5 * alpha[i][j] * form;
            }
        }
    }
    s * grid.cell_area()
}

/// `N(c_A - mean c_A)` and `N(c_B - mean c_B)`.
fn nonlocal_potentials(
    c: &PhaseState,
    tol: f64,
    warm: Option<&[ScalarField; 2]>,
) -> Result<([ScalarField; 2], [ScalarField; 2]), SolverError> {
    let g = *c.grid();
    let m = c.target_mean();
    let dev = [0, 1].map(|i| c.component(i).map(|v| v - m[i]));
    let mut n = match warm {
        Some(w) => w.clone(),
        None => [ScalarField::zeros(g), ScalarField::zeros(g)],
    };
    for i in 0..2 {
        inv_neumann_projected(&dev[i], tol, &mut n[i])?;
    }
    Ok((dev, n))
}

/// `E3 = sum_{i,j in A,B} alpha_ij / 2 (N(c_i - m_i), c_j - m_j)`
pub fn energy_e3(c: &PhaseState, params: &ModelParams, tol: f64) -> Result<f64, SolverError> {
    if params.alpha.iter().flatten().all(|&a| a == 0.0) {
        return Ok(0.0);
    }
    let (dev, n) = nonlocal_potentials(c, tol, None)?;
    Ok(nonlocal_energy(c.grid(), &params.alpha, &dev, &n))
}

/// `E4 = 1/2 int eps(c_A, c_B) |E0 - grad phi|^2`
pub fn energy_e4(c: &PhaseState, es: &ElectroState, perm: &Permittivity) -> Result<f64, SolverError> {
    let g = c.grid();
    if es.phi.grid() != g || es.e0[0].grid() != g {
        return Err(GridError::GridMismatch.into());
    }
    let eps = permittivity_faces(c.component(0), c.component(1), perm);
    Ok(crate::electrostatics::electric_energy(g, &eps, &field_to_faces(&es.e0), &es.phi))
}

/// `|v - c_prev|^2_{*,M(c_prev)} / (2 tau)`
pub fn metric_penalty(
    v: &PhaseState,
    c_prev: &PhaseState,
    params: &ModelParams,
    tau: f64,
    tol: f64,
) -> Result<f64, SolverError> {
    for i in 0..3 {
        if (v.target_mean()[i] - c_prev.target_mean()[i]).abs() > 1e-12 {
            return Err(SolverError::Constraint("v and c_prev have different means".into()));
        }
    }
    let eta = TangentField::project(v.difference_fields(c_prev)?)?;
    let op = MobilityOperator::new(c_prev, &params.mobility);
    let u = op.solve(&eta, tol)?;
    Ok(u.inner(&eta) / (2.0 * tau))
}

/// Total energy at `(v, es.phi)` plus the metric penalty towards `c_prev`.
pub fn augmented_energy(
    v: &PhaseState,
    c_prev: &PhaseState,
    es: &ElectroState,
    params: &ModelParams,
    tau: f64,
    tol: f64,
) -> Result<f64, SolverError> {
    let total = energy_e1(v, params)?
        + energy_e2(v, params)
        + energy_e3(v, params, tol)?
        + energy_e4(v, es, &params.permittivity)?;
    Ok(total + metric_penalty(v, c_prev, params, tau, tol)?)
}

/// Cell average of `|E0 - grad phi|^2` over the four faces of each cell,
/// weighted so that `1/2 d eps/ds * field_sq` is the exact derivative of the
/// face-quadrature electric energy.
fn cell_field_sq(grid: &GridSpec, e: &FaceCoefficients) -> Vec<f64> {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut out = vec![0.0; grid.cells()];
    for j in 0..ny {
        for i in 0..nx {
            let fx = j * (nx + 1) + i;
            let fy = j * nx + i;
            let s =
                e.x_faces[fx].powi(2) + e.x_faces[fx + 1].powi(2) + e.y_faces[fy].powi(2) + e.y_faces[fy + nx].powi(2);
            out[j * nx + i] = 0.5 * s;
        }
    }
    out
}

fn electric_field_faces(grid: &GridSpec, e0f: &FaceCoefficients, phi: &ScalarField) -> FaceCoefficients {
    let mut d = FaceCoefficients::zeros(grid);
    gradient_into(grid, phi.values(), BoundaryCondition::DirichletZero, &mut d.x_faces, &mut d.y_faces);
    e0f.zip_map(&d, |a, b| a - b)
}

fn mu_tilde_from_parts(
    c: &PhaseState,
    params: &ModelParams,
    pot: &RegularizedPsi,
    n: &[ScalarField; 2],
    field_sq: &[f64],
) -> [ScalarField; 3] {
    let g = *c.grid();
    let cells = g.cells();
    let mut mu = [vec![0.0; cells], vec![0.0; cells], vec![0.0; cells]];
    let a = &params.alpha;
    for k in 0..cells {
        let s = c.at(k);
        let gf = params.grad_f_delta_with(pot, s);
        let de = params.permittivity.grad(s[0], s[1]);
        let (na, nb) = (n[0].values()[k], n[1].values()[k]);
        mu[0][k] = gf[0] + a[0][0] * na + a[0][1] * nb + 0.5 * de[0] * field_sq[k];
        mu[1][k] = gf[1] + a[1][0] * na + a[1][1] * nb + 0.5 * de[1] * field_sq[k];
        mu[2][k] = gf[2];
    }
    mu.map(|v| ScalarField::from_vec_unchecked(g, v))
}

fn w_from_mu(c: &PhaseState, params: &ModelParams, mu: &[ScalarField; 3]) -> TangentField {
    let g = *c.grid();
    let n = g.cells();
    let mut flat = vec![0.0; 3 * n];
    for i in 0..3 {
        let out = &mut flat[i * n..(i + 1) * n];
        elliptic_kernel(&g, |_| 1.0, |_| 1.0, c.component(i).values(), BoundaryCondition::NeumannZero, out);
        for (o, m) in out.iter_mut().zip(mu[i].values()) {
            *o = params.gamma[i] * *o + m;
        }
    }
    crate::operators::project_pointwise(&mut flat);
    TangentField::from_flat(g, flat)
}

/// Unprojected potentials `mu~` at `c` for the potential `es.phi`.
pub fn assemble_mu_tilde(
    c: &PhaseState,
    es: &ElectroState,
    params: &ModelParams,
    tol: f64,
) -> Result<[ScalarField; 3], SolverError> {
    let g = *c.grid();
    let pot = params.potential()?;
    let (_, n) = nonlocal_potentials(c, tol, None)?;
    let e = electric_field_faces(&g, &field_to_faces(&es.e0), &es.phi);
    Ok(mu_tilde_from_parts(c, params, &pot, &n, &cell_field_sq(&g, &e)))
}

/// `w = P(-Gamma lap c + mu~)` together with `mu~`. The projection is
/// pointwise, so `w` sums to zero in every cell but keeps its spatial mean.
pub fn assemble_w(
    c: &PhaseState,
    es: &ElectroState,
    params: &ModelParams,
    tol: f64,
) -> Result<ChemPotential, SolverError> {
    let mu_tilde = assemble_mu_tilde(c, es, params, tol)?;
    let w = w_from_mu(c, params, &mu_tilde);
    Ok(ChemPotential { w, mu_tilde })
}

/// Discretized model with the applied field fixed.
#[derive(Debug, Clone)]
pub struct Model {
    grid: GridSpec,
    params: ModelParams,
    pot: RegularizedPsi,
    e0: [ScalarField; 2],
    e0_faces: FaceCoefficients,
    tol: f64,
}

/// Everything derived from one state: potential, nonlocal fields and the
/// energy parts.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub phi: ScalarField,
    /// `N(c_A - m_A)`, `N(c_B - m_B)`
    pub nonlocal: [ScalarField; 2],
    pub e1: f64,
    pub e2: f64,
    pub e3: f64,
    pub e4: f64,
}

impl Evaluation {
    pub fn total(&self) -> f64 {
        self.e1 + self.e2 + self.e3 + self.e4
    }

    /// Sum of absolute parts, a scale for rounding estimates.
    pub fn magnitude(&self) -> f64 {
        self.e1.abs() + self.e2.abs() + self.e3.abs() + self.e4.abs()
    }
}

impl Model {
    pub fn new(grid: GridSpec, params: ModelParams, e0: [ScalarField; 2], tol: f64) -> Result<Self, SolverError> {
        params.validate()?;
        if e0[0].grid() != &grid || e0[1].grid() != &grid {
            return Err(GridError::GridMismatch.into());
        }
        let pot = params.potential()?;
        let e0_faces = field_to_faces(&e0);
        Ok(Self { grid, params, pot, e0, e0_faces, tol })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn e0(&self) -> &[ScalarField; 2] {
        &self.e0
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn potential_fn(&self) -> &RegularizedPsi {
        &self.pot
    }

    /// Solves for the potential and nonlocal fields at `c`, warm-starting from
    /// `warm` when given.
    pub fn evaluate(&self, c: &PhaseState, warm: Option<&Evaluation>) -> Result<Evaluation, SolverError> {
        if c.grid() != &self.grid {
            return Err(GridError::GridMismatch.into());
        }
        let g = self.grid;
        let eps = permittivity_faces(c.component(0), c.component(1), &self.params.permittivity);
        let mut phi = warm.map(|w| w.phi.clone()).unwrap_or_else(|| ScalarField::zeros(g));
        solve_potential_faces(&g, &eps, &self.e0_faces, phi.values_mut(), self.tol)?;
        let e4 = crate::electrostatics::electric_energy(&g, &eps, &self.e0_faces, &phi);

        let (dev, nonlocal) = nonlocal_potentials(c, self.tol, warm.map(|w| &w.nonlocal))?;
        let e3 = nonlocal_energy(&g, &self.params.alpha, &dev, &nonlocal);
        let e1 = gradient_energy(&g, &self.params.gamma, c.fields())
            + potential_energy(&g, &self.params, &self.pot, c.fields());
        let e2 = energy_e2(c, &self.params);
        Ok(Evaluation { phi, nonlocal, e1, e2, e3, e4 })
    }

    pub fn electro_state(&self, eval: &Evaluation) -> ElectroState {
        ElectroState { phi: eval.phi.clone(), e0: self.e0.clone() }
    }

    /// `mu~` and `w` at an evaluated state.
    pub fn chem_potential(&self, c: &PhaseState, eval: &Evaluation) -> ChemPotential {
        let e = electric_field_faces(&self.grid, &self.e0_faces, &eval.phi);
        let mu_tilde = mu_tilde_from_parts(c, &self.params, &self.pot, &eval.nonlocal, &cell_field_sq(&self.grid, &e));
        let w = w_from_mu(c, &self.params, &mu_tilde);
        ChemPotential { w, mu_tilde }
    }

    /// `|w - componentwise mean w|_H`
    pub fn stationarity_residual(&self, c: &PhaseState, eval: &Evaluation) -> f64 {
        let w = self.chem_potential(c, eval).w;
        let mut flat = flatten(w.fields());
        project_block(&mut flat);
        crate::grid::sum_sq(&flat).sqrt() * self.grid.cell_area().sqrt()
    }

    pub fn report(&self, eval: &Evaluation, dissipation: f64) -> EnergyReport {
        EnergyReport::new(eval.e1, eval.e2, eval.e3, eval.e4, dissipation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::electrostatics::{solve_potential, FieldSpec};
    use crate::physics::Interaction;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    fn cosine_state(g: GridSpec, a: f64) -> PhaseState {
        let ca = ScalarField::from_fn(g, |x, _| 0.3 + a * (PI * x).cos());
        let cb = ScalarField::constant(g, 0.3);
        PhaseState::from_ab(ca, cb).unwrap()
    }

    #[test]
    fn uniform_state_energy_is_pointwise() {
        let g = grid(8);
        let p = ModelParams::default();
        let c = PhaseState::uniform(g, [0.3, 0.3, 0.4]).unwrap();
        let pot = p.potential().unwrap();
        let expect: f64 = [0.3, 0.3, 0.4].iter().map(|&m| pot.value(m) + p.delta * m.powi(4)).sum();
        assert!((energy_e1(&c, &p).unwrap() - expect).abs() < 1e-12);
        assert_eq!(energy_e3(&c, &p, 1e-12).unwrap(), 0.0);
    }

    #[test]
    fn gradient_part_matches_analytic_integral() {
        let a = 0.05;
        let mut errs = vec![];
        for n in [16, 32, 64] {
            let g = grid(n);
            let c = cosine_state(g, a);
            // c_S carries the opposite mode
            let exact = 2.0 * 1e-3 * a * a * PI * PI / 4.0;
            let got = gradient_energy(&g, &[1e-3; 3], c.fields());
            errs.push((got - exact).abs() / exact);
        }
        assert!(errs[2] < 1e-3 && errs[0] > errs[2], "{errs:?}");
    }

    #[test]
    fn nonlocal_energy_of_single_mode() {
        let a = 0.05;
        let mut p = ModelParams::default();
        p.alpha = [[2.0, 0.0], [0.0, 0.0]];
        let exact = 0.5 * 2.0 * a * a / (PI * PI) * 0.5;
        let mut errs = vec![];
        for n in [16, 32, 64] {
            let c = cosine_state(grid(n), a);
            errs.push((energy_e3(&c, &p, 1e-12).unwrap() - exact).abs() / exact);
        }
        assert!(errs[2] < 1e-3 && errs[0] > 3.0 * errs[2], "{errs:?}");
    }

    #[test]
    fn electric_energy_of_uniform_field() {
        let g = grid(8);
        let c = PhaseState::uniform(g, [0.3, 0.3, 0.4]).unwrap();
        let es =
            ElectroState { phi: ScalarField::zeros(g), e0: FieldSpec::Constant { ex: 0.5, ey: 1.0 }.cell_field(g) };
        let perm = Permittivity::constant(3.0).unwrap();
        let e4 = energy_e4(&c, &es, &perm).unwrap();
        assert!((e4 - 1.5 * 1.25).abs() < 1e-12);
        let zero =
            ElectroState { phi: ScalarField::zeros(g), e0: FieldSpec::Constant { ex: 0.0, ey: 0.0 }.cell_field(g) };
        assert_eq!(energy_e4(&c, &zero, &perm).unwrap(), 0.0);
    }

    #[test]
    fn penalty_vanishes_at_previous_state_and_scales_with_tau() {
        let g = grid(12);
        let p = ModelParams::default();
        let c0 = cosine_state(g, 0.05);
        let c1 = cosine_state(g, 0.02);
        assert_eq!(metric_penalty(&c0, &c0, &p, 1e-3, 1e-12).unwrap(), 0.0);
        let a = metric_penalty(&c1, &c0, &p, 1e-3, 1e-12).unwrap();
        let b = metric_penalty(&c1, &c0, &p, 5e-4, 1e-12).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12 * b);
        let d = crate::operators::dual_norm(&c0, &c1.difference(&c0).unwrap(), &p.mobility, 1e-12).unwrap();
        assert!((a - d * d / 2e-3).abs() < 1e-8 * a);
    }

    #[test]
    fn mu_tilde_isolates_pointwise_terms() {
        let g = grid(8);
        let mut p = ModelParams::default();
        p.alpha = [[0.0; 2]; 2];
        p.interaction = Interaction::zero();
        let c = cosine_state(g, 0.1);
        let es =
            ElectroState { phi: ScalarField::zeros(g), e0: FieldSpec::Constant { ex: 0.0, ey: 0.0 }.cell_field(g) };
        let mu = assemble_mu_tilde(&c, &es, &p, 1e-12).unwrap();
        let pot = p.potential().unwrap();
        for i in 0..3 {
            for (m, &s) in mu[i].values().iter().zip(c.component(i).values()) {
                let e = pot.d1(s) + 4.0 * p.delta * s.powi(3);
                assert!((m - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn w_is_tangent_pointwise() {
        let g = grid(10);
        let p = ModelParams::default();
        let c = cosine_state(g, 0.1);
        let e0 = FieldSpec::default().cell_field(g);
        let phi = solve_potential(c.component(0), c.component(1), &e0, &p.permittivity, 1e-12).unwrap();
        let w = assemble_w(&c, &ElectroState { phi, e0 }, &p, 1e-12).unwrap().w;
        for k in 0..g.cells() {
            let s: f64 = (0..3).map(|i| w.fields()[i].values()[k]).sum();
            assert!(s.abs() < 1e-12);
        }
    }

    #[test]
    fn model_gradient_matches_energy_differences() {
        let g = grid(12);
        let p = ModelParams::default();
        let model = Model::new(g, p, FieldSpec::default().cell_field(g), 1e-13).unwrap();
        let ca = ScalarField::from_fn(g, |x, y| 0.3 + 0.08 * (PI * x).cos() * (2.0 * PI * y).cos());
        let cb = ScalarField::from_fn(g, |x, y| 0.3 + 0.06 * (3.0 * PI * y).cos() * x);
        let c = PhaseState::from_ab(ca, cb).unwrap();
        let eval = model.evaluate(&c, None).unwrap();
        let w = model.chem_potential(&c, &eval).w;
        let h = TangentField::project([
            ScalarField::from_fn(g, |x, y| (5.0 * x * y).sin()),
            ScalarField::from_fn(g, |x, y| (x - 0.5) * (y + 0.2)),
            ScalarField::zeros(g),
        ])
        .unwrap();
        let shift = |t: f64| {
            let f = [0, 1, 2].map(|i| c.component(i).zip_map(&h.fields()[i], |a, b| a + t * b));
            PhaseState::new(f, c.target_mean()).unwrap()
        };
        let e = |t: f64| model.evaluate(&shift(t), None).unwrap().total();
        let t = 1e-3;
        let fd = (e(-2.0 * t) - 8.0 * e(-t) + 8.0 * e(t) - e(2.0 * t)) / (12.0 * t);
        let an = w.inner(&h);
        assert!((fd - an).abs() <= 1e-7 * an.abs(), "fd={fd} an={an}");
    }

    #[test]
    fn e3_is_symmetric_in_indices() {
        let g = grid(10);
        let mut p = ModelParams::default();
        p.alpha = [[1.0, 0.7], [0.7, 2.0]];
        let ca = ScalarField::from_fn(g, |x, y| 0.3 + 0.05 * (PI * x).cos() * y);
        let cb = ScalarField::from_fn(g, |x, y| 0.3 + 0.04 * (PI * y).cos() * x);
        let c = PhaseState::from_ab(ca.clone(), cb.clone()).unwrap();
        let swapped = PhaseState::from_ab(cb, ca).unwrap();
        let mut q = p.clone();
        q.alpha = [[2.0, 0.7], [0.7, 1.0]];
        let a = energy_e3(&c, &p, 1e-12).unwrap();
        let b = energy_e3(&swapped, &q, 1e-12).unwrap();
        assert!((a - b).abs() < 1e-12 * a.abs().max(1e-12));
    }
}
