//! Variable-permittivity potential problem
//! `-div(eps(c_A, c_B) (E0 - grad phi)) = 0` with `phi = 0` on the boundary,
//! and the first two derivatives of its solution map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{GridError, SolverError};
use crate::grid::{
    elliptic_kernel, face_inner, gradient, gradient_into, neg_divergence_into, BoundaryCondition, FaceCoefficients,
    GridSpec, ScalarField,
};
use crate::physics::Permittivity;
use crate::solver::{conjugate_gradient, no_projection, CgOptions};

/// Electric potential together with the applied field it was solved for.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectroState {
    pub phi: ScalarField,
    pub e0: [ScalarField; 2],
}

/// Applied field configurations.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldSpec {
    Constant {
        ex: f64,
        ey: f64,
    },
    /// Gradient of `sum a x^p y^q` over the listed `(a, p, q)` terms.
    PolynomialGradient {
        terms: Vec<(f64, u32, u32)>,
    },
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Constant { ex: 1.0, ey: 0.0 }
    }
}

impl FieldSpec {
    /// Cell-centered field components.
    pub fn cell_field(&self, grid: GridSpec) -> [ScalarField; 2] {
        match self {
            FieldSpec::Constant { ex, ey } => [ScalarField::constant(grid, *ex), ScalarField::constant(grid, *ey)],
            FieldSpec::PolynomialGradient { terms } => {
                let dx = |x: f64, y: f64| {
                    terms
                        .iter()
                        .filter(|t| t.1 > 0)
                        .map(|&(a, p, q)| a * p as f64 * x.powi(p as i32 - 1) * y.powi(q as i32))
                        .sum::<f64>()
                };
                let dy = |x: f64, y: f64| {
                    terms
                        .iter()
                        .filter(|t| t.2 > 0)
                        .map(|&(a, p, q)| a * q as f64 * x.powi(p as i32) * y.powi(q as i32 - 1))
                        .sum::<f64>()
                };
                [ScalarField::from_fn(grid, dx), ScalarField::from_fn(grid, dy)]
            }
        }
    }

    /// The potential `sum a x^p y^q` itself, for gradient fields.
    pub fn potential(&self, grid: GridSpec) -> Option<ScalarField> {
        match self {
            FieldSpec::Constant { .. } => None,
            FieldSpec::PolynomialGradient { terms } => Some(ScalarField::from_fn(grid, |x, y| {
                terms.iter().map(|&(a, p, q)| a * x.powi(p as i32) * y.powi(q as i32)).sum()
            })),
        }
    }
}

/// Interpolates a cell-centered vector field to the normal components on
/// x- and y-faces.
pub fn field_to_faces(e0: &[ScalarField; 2]) -> FaceCoefficients {
    let fx = FaceCoefficients::from_cells(&e0[0]);
    let fy = FaceCoefficients::from_cells(&e0[1]);
    FaceCoefficients { x_faces: fx.x_faces, y_faces: fy.y_faces }
}

fn check_grids(ca: &ScalarField, cb: &ScalarField, e0: &[ScalarField; 2]) -> Result<GridSpec, GridError> {
    let g = *ca.grid();
    if cb.grid() != &g || e0[0].grid() != &g || e0[1].grid() != &g {
        return Err(GridError::GridMismatch);
    }
    Ok(g)
}

/// Face-averaged permittivity of a composition.
pub fn permittivity_faces(ca: &ScalarField, cb: &ScalarField, perm: &Permittivity) -> FaceCoefficients {
    let cells = ca.zip_map(cb, |a, b| perm.value(a, b));
    FaceCoefficients::from_cells(&cells)
}

/// Solves `A_eps x = -div q` with homogeneous Dirichlet data, warm-starting
/// from `x`.
pub(crate) fn solve_flux(
    grid: &GridSpec,
    eps: &FaceCoefficients,
    q: &FaceCoefficients,
    x: &mut [f64],
    tol: f64,
) -> Result<(), SolverError> {
    let mut rhs = vec![0.0; grid.cells()];
    neg_divergence_into(grid, &q.x_faces, &q.y_faces, &mut rhs);
    let g = *grid;
    conjugate_gradient(
        |u, out| elliptic_kernel(&g, |f| eps.x_faces[f], |f| eps.y_faces[f], u, BoundaryCondition::DirichletZero, out),
        no_projection,
        &rhs,
        x,
        CgOptions::with_tol(tol),
    )?;
    Ok(())
}

/// Potential for given face permittivity and face field, warm-started from
/// `phi`.
pub(crate) fn solve_potential_faces(
    grid: &GridSpec,
    eps: &FaceCoefficients,
    e0f: &FaceCoefficients,
    phi: &mut [f64],
    tol: f64,
) -> Result<(), SolverError> {
    let q = eps.zip_map(e0f, |a, b| a * b);
    solve_flux(grid, eps, &q, phi, tol)
}

/// `phi` with `(eps grad phi, grad v) = (eps E0, grad v)` for all `v`.
pub fn solve_potential(
    ca: &ScalarField,
    cb: &ScalarField,
    e0: &[ScalarField; 2],
    perm: &Permittivity,
    tol: f64,
) -> Result<ScalarField, SolverError> {
    let g = check_grids(ca, cb, e0)?;
    let eps = permittivity_faces(ca, cb, perm);
    let mut phi = ScalarField::zeros(g);
    solve_potential_faces(&g, &eps, &field_to_faces(e0), phi.values_mut(), tol)?;
    Ok(phi)
}

/// Discrete `H^1_0` norm `|grad u|` with the Dirichlet closure.
pub fn v0_norm(u: &ScalarField) -> f64 {
    let d = gradient(u, BoundaryCondition::DirichletZero);
    face_inner(u.grid(), &d, &d).sqrt()
}

/// Solution map linearized at a fixed composition.
pub struct Linearization {
    grid: GridSpec,
    perm: Permittivity,
    eta: [ScalarField; 2],
    eps: FaceCoefficients,
    /// `E0 - grad phi` on faces
    field: FaceCoefficients,
    phi: ScalarField,
    tol: f64,
}

impl Linearization {
    pub fn new(
        ca: &ScalarField,
        cb: &ScalarField,
        e0: &[ScalarField; 2],
        perm: &Permittivity,
        tol: f64,
    ) -> Result<Self, SolverError> {
        let grid = check_grids(ca, cb, e0)?;
        let eps = permittivity_faces(ca, cb, perm);
        let e0f = field_to_faces(e0);
        let mut phi = ScalarField::zeros(grid);
        solve_potential_faces(&grid, &eps, &e0f, phi.values_mut(), tol)?;
        let dphi = gradient(&phi, BoundaryCondition::DirichletZero);
        let field = e0f.zip_map(&dphi, |a, b| a - b);
        Ok(Self { grid, perm: perm.clone(), eta: [ca.clone(), cb.clone()], eps, field, phi, tol })
    }

    pub fn potential(&self) -> &ScalarField {
        &self.phi
    }

    /// Face average of `grad eps(eta) . h`.
    fn d_eps(&self, h: &[ScalarField; 2]) -> FaceCoefficients {
        let n = self.grid.cells();
        let (a, b) = (self.eta[0].values(), self.eta[1].values());
        let vals: Vec<f64> = (0..n)
            .map(|k| {
                let g = self.perm.grad(a[k], b[k]);
                g[0] * h[0].values()[k] + g[1] * h[1].values()[k]
            })
            .collect();
        FaceCoefficients::from_cells(&ScalarField::from_vec_unchecked(self.grid, vals))
    }

    /// Face average of `h^T hess eps(eta) k`.
    fn d2_eps(&self, h: &[ScalarField; 2], k: &[ScalarField; 2]) -> FaceCoefficients {
        let n = self.grid.cells();
        let (a, b) = (self.eta[0].values(), self.eta[1].values());
        let vals: Vec<f64> = (0..n)
            .map(|c| {
                let m = self.perm.hess(a[c], b[c]);
                let (h0, h1) = (h[0].values()[c], h[1].values()[c]);
                let (k0, k1) = (k[0].values()[c], k[1].values()[c]);
                h0 * (m[0][0] * k0 + m[0][1] * k1) + h1 * (m[1][0] * k0 + m[1][1] * k1)
            })
            .collect();
        FaceCoefficients::from_cells(&ScalarField::from_vec_unchecked(self.grid, vals))
    }

    fn check(&self, h: &[ScalarField; 2]) -> Result<(), GridError> {
        if h[0].grid() != &self.grid || h[1].grid() != &self.grid {
            return Err(GridError::GridMismatch);
        }
        Ok(())
    }

    /// `DS(eta)[h]`
    pub fn ds(&self, h: &[ScalarField; 2]) -> Result<ScalarField, SolverError> {
        self.check(h)?;
        let q = self.d_eps(h).zip_map(&self.field, |a, b| a * b);
        let mut u = ScalarField::zeros(self.grid);
        solve_flux(&self.grid, &self.eps, &q, u.values_mut(), self.tol)?;
        Ok(u)
    }

    /// `D^2 S(eta)[h, k]`
    pub fn d2s(&self, h: &[ScalarField; 2], k: &[ScalarField; 2]) -> Result<ScalarField, SolverError> {
        self.check(h)?;
        self.check(k)?;
        let uh = gradient(&self.ds(h)?, BoundaryCondition::DirichletZero);
        let uk = gradient(&self.ds(k)?, BoundaryCondition::DirichletZero);
        let dh = self.d_eps(h);
        let dk = self.d_eps(k);
        let d2 = self.d2_eps(h, k);
        let mut q = FaceCoefficients::zeros(&self.grid);
        for f in 0..q.x_faces.len() {
            q.x_faces[f] =
                d2.x_faces[f] * self.field.x_faces[f] - dh.x_faces[f] * uk.x_faces[f] - dk.x_faces[f] * uh.x_faces[f];
        }
        for f in 0..q.y_faces.len() {
            q.y_faces[f] =
                d2.y_faces[f] * self.field.y_faces[f] - dh.y_faces[f] * uk.y_faces[f] - dk.y_faces[f] * uh.y_faces[f];
        }
        let mut u = ScalarField::zeros(self.grid);
        solve_flux(&self.grid, &self.eps, &q, u.values_mut(), self.tol)?;
        Ok(u)
    }
}

pub fn ds_map(
    ca: &ScalarField,
    cb: &ScalarField,
    e0: &[ScalarField; 2],
    perm: &Permittivity,
    h: &[ScalarField; 2],
    tol: f64,
) -> Result<ScalarField, SolverError> {
    Linearization::new(ca, cb, e0, perm, tol)?.ds(h)
}

pub fn d2s_map(
    ca: &ScalarField,
    cb: &ScalarField,
    e0: &[ScalarField; 2],
    perm: &Permittivity,
    h: &[ScalarField; 2],
    k: &[ScalarField; 2],
    tol: f64,
) -> Result<ScalarField, SolverError> {
    Linearization::new(ca, cb, e0, perm, tol)?.d2s(h, k)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `|S(eta1) - S(eta2)|_{V0}`
    pub dist_solutions: f64,
    /// `max_x |eta1(x) - eta2(x)|`
    pub dist_inputs: f64,
}

impl StabilityReport {
    pub fn ratio(&self) -> f64 {
        if self.dist_inputs == 0.0 {
            0.0
        } else {
            self.dist_solutions / self.dist_inputs
        }
    }
}

pub fn stability_check(
    eta1: &[ScalarField; 2],
    eta2: &[ScalarField; 2],
    e0: &[ScalarField; 2],
    perm: &Permittivity,
    tol: f64,
) -> Result<StabilityReport, SolverError> {
    let s1 = solve_potential(&eta1[0], &eta1[1], e0, perm, tol)?;
    let s2 = solve_potential(&eta2[0], &eta2[1], e0, perm, tol)?;
    let diff = s1.zip_map(&s2, |a, b| a - b);
    let n = eta1[0].values().len();
    let dist_inputs = (0..n)
        .map(|k| {
            let d0 = eta1[0].values()[k] - eta2[0].values()[k];
            let d1 = eta1[1].values()[k] - eta2[1].values()[k];
            d0.hypot(d1)
        })
        .fold(0.0, f64::max);
    Ok(StabilityReport { dist_solutions: v0_norm(&diff), dist_inputs })
}

/// `2 eps^* eps_*^-2 (1 + eps^*/eps_*) |E0|^2 sup|grad eps|`.
pub fn stability_constant(perm: &Permittivity, e0: &[ScalarField; 2]) -> f64 {
    let (lo, hi) = perm.bounds();
    let e0_sq = e0[0].norm().powi(2) + e0[1].norm().powi(2);
    2.0 * hi / (lo * lo) * (1.0 + hi / lo) * e0_sq * perm.grad_sup()
}

/// Step sizes of the Taylor remainder checks.
pub const TAYLOR_STEPS: [f64; 3] = [1e-2, 5e-3, 2.5e-3];

/// Accepted range of successive remainder ratios.
pub const TAYLOR_WINDOW: (f64, f64) = (3.6, 4.4);

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorCase {
    pub ds_ratios: [f64; 2],
    pub d2s_ratios: [f64; 2],
    pub symmetry_gap: f64,
    pub stability_ratio: f64,
}

impl TaylorCase {
    pub fn passes(&self, stability_bound: f64) -> bool {
        let inside = |r: f64| r >= TAYLOR_WINDOW.0 && r <= TAYLOR_WINDOW.1;
        self.ds_ratios.iter().chain(&self.d2s_ratios).all(|&r| inside(r))
            && self.symmetry_gap <= 1e-8
            && self.stability_ratio <= 1.1 * stability_bound
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeReport {
    pub cases: Vec<TaylorCase>,
    pub stability_bound: f64,
}

impl DerivativeReport {
    pub fn all_pass(&self) -> bool {
        self.cases.iter().all(|c| c.passes(self.stability_bound))
    }
}

fn random_smooth(grid: GridSpec, rng: &mut ChaCha8Rng, amplitude: f64) -> ScalarField {
    use std::f64::consts::PI;
    let modes: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1..4) as f64,
                rng.gen_range(1..4) as f64,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let (lx, ly) = (grid.lx, grid.ly);
    ScalarField::from_fn(grid, |x, y| {
        let s: f64 =
            modes.iter().map(|&(a, p, q, ph)| a * (p * PI * x / lx + ph).sin() * (q * PI * y / ly).cos()).sum();
        amplitude * s / 3.0
    })
}

/// Random composition pair and directions for the Taylor checks. Every
/// third case sits inside the lower clamp band of the permittivity, the rest
/// inside the physical range.
fn random_case(grid: GridSpec, rng: &mut ChaCha8Rng, index: usize) -> ([ScalarField; 2], [[ScalarField; 2]; 2]) {
    let (center, spread) = if index % 3 == 2 { (-0.25, 0.15) } else { (0.5, 0.4) };
    let eta = [0, 1].map(|_| random_smooth(grid, rng, spread).map(|v| center + v));
    let h = [0, 1].map(|_| random_smooth(grid, rng, 1.0));
    let k = [0, 1].map(|_| random_smooth(grid, rng, 1.0));
    (eta, [h, k])
}

fn shifted(eta: &[ScalarField; 2], h: &[ScalarField; 2], t: f64) -> [ScalarField; 2] {
    [0, 1].map(|i| eta[i].zip_map(&h[i], |a, b| a + t * b))
}

fn ratios(errs: &[f64; 3]) -> [f64; 2] {
    [errs[0] / errs[1], errs[1] / errs[2]]
}

/// Taylor remainder, symmetry and stability checks on `cases` random inputs.
pub fn derivative_suite(
    grid: GridSpec,
    perm: &Permittivity,
    e0: &[ScalarField; 2],
    cases: usize,
    seed: u64,
    tol: f64,
) -> Result<DerivativeReport, SolverError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(cases);
    for index in 0..cases {
        let (eta, [h, k]) = random_case(grid, &mut rng, index);
        let lin = Linearization::new(&eta[0], &eta[1], e0, perm, tol)?;
        let s0 = lin.potential().clone();
        let ds_h = lin.ds(&h)?;
        let d2_hk = lin.d2s(&h, &k)?;
        let d2_kh = lin.d2s(&k, &h)?;

        let mut ds_err = [0.0; 3];
        let mut d2_err = [0.0; 3];
        for (n, &t) in TAYLOR_STEPS.iter().enumerate() {
            let et = shifted(&eta, &h, t);
            let st = solve_potential(&et[0], &et[1], e0, perm, tol)?;
            ds_err[n] = v0_norm(&st.zip_map(&s0, |a, b| a - b).zip_map(&ds_h, |a, b| a - t * b));
            let ek = shifted(&eta, &k, t);
            let dk = ds_map(&ek[0], &ek[1], e0, perm, &h, tol)?;
            d2_err[n] = v0_norm(&dk.zip_map(&ds_h, |a, b| a - b).zip_map(&d2_hk, |a, b| a - t * b));
        }
        let gap = v0_norm(&d2_hk.zip_map(&d2_kh, |a, b| a - b));
        let symmetry_gap = gap / (v0_norm(&d2_hk) + 1.0);

        let eta2 = shifted(&eta, &h, 0.05);
        let stab = stability_check(&eta, &eta2, e0, perm, tol)?;
        out.push(TaylorCase {
            ds_ratios: ratios(&ds_err),
            d2s_ratios: ratios(&d2_err),
            symmetry_gap,
            stability_ratio: stab.ratio(),
        });
    }
    Ok(DerivativeReport { cases: out, stability_bound: stability_constant(perm, e0) })
}

/// `(1/2) sum_f w_f eps_f (E0_f - grad phi_f)^2`
pub fn electric_energy(grid: &GridSpec, eps: &FaceCoefficients, e0f: &FaceCoefficients, phi: &ScalarField) -> f64 {
    let mut dphi = FaceCoefficients::zeros(grid);
    gradient_into(grid, phi.values(), BoundaryCondition::DirichletZero, &mut dphi.x_faces, &mut dphi.y_faces);
    let e = e0f.zip_map(&dphi, |a, b| a - b);
    let weighted = e.zip_map(eps, |a, b| a * b);
    0.5 * face_inner(grid, &weighted, &e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> GridSpec {
        GridSpec::unit_square(n).unwrap()
    }

    fn perm() -> Permittivity {
        Permittivity::new(3.0, 1.0, 2.0, 2.0).unwrap()
    }

    fn comp(g: GridSpec) -> (ScalarField, ScalarField) {
        (
            ScalarField::from_fn(g, |x, y| 0.3 + 0.2 * (PI * x).cos() * (PI * y).sin()),
            ScalarField::from_fn(g, |x, y| 0.4 + 0.2 * (2.0 * PI * x * y).sin()),
        )
    }

    #[test]
    fn zero_field_gives_zero_potential() {
        let g = grid(16);
        let (a, b) = comp(g);
        let e0 = [ScalarField::zeros(g), ScalarField::zeros(g)];
        let phi = solve_potential(&a, &b, &e0, &perm(), 1e-12).unwrap();
        assert_eq!(phi.max_abs(), 0.0);
    }

    #[test]
    fn gradient_field_is_reproduced_with_constant_permittivity() {
        let spec = FieldSpec::PolynomialGradient { terms: vec![(1.0, 1, 1), (-1.0, 2, 1), (-1.0, 1, 2), (1.0, 2, 2)] };
        let mut errs = vec![];
        for n in [16, 32, 64] {
            let g = grid(n);
            let (a, b) = comp(g);
            let e0 = spec.cell_field(g);
            let phi = solve_potential(&a, &b, &e0, &Permittivity::constant(2.0).unwrap(), 1e-12).unwrap();
            let exact = spec.potential(g).unwrap();
            errs.push(phi.zip_map(&exact, |x, y| x - y).max_abs());
        }
        assert!(errs[2] < 1e-3, "{errs:?}");
        assert!(errs[0] / errs[2] > 10.0, "{errs:?}");
    }

    #[test]
    fn potential_respects_a_priori_bound() {
        let g = grid(24);
        let (a, b) = comp(g);
        let p = perm();
        let e0 = FieldSpec::default().cell_field(g);
        let phi = solve_potential(&a, &b, &e0, &p, 1e-12).unwrap();
        let (lo, hi) = p.bounds();
        let e0n = (e0[0].norm().powi(2) + e0[1].norm().powi(2)).sqrt();
        assert!(v0_norm(&phi) <= hi / lo * e0n);
    }

    #[test]
    fn ds_vanishes_for_zero_direction_or_constant_permittivity() {
        let g = grid(12);
        let (a, b) = comp(g);
        let e0 = FieldSpec::default().cell_field(g);
        let zero = [ScalarField::zeros(g), ScalarField::zeros(g)];
        assert_eq!(ds_map(&a, &b, &e0, &perm(), &zero, 1e-12).unwrap().max_abs(), 0.0);
        let h = [a.clone(), b.clone()];
        let c = Permittivity::constant(1.5).unwrap();
        assert_eq!(ds_map(&a, &b, &e0, &c, &h, 1e-12).unwrap().max_abs(), 0.0);
        assert_eq!(d2s_map(&a, &b, &e0, &perm(), &zero, &h, 1e-12).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn ds_is_linear() {
        let g = grid(12);
        let (a, b) = comp(g);
        let e0 = FieldSpec::default().cell_field(g);
        let lin = Linearization::new(&a, &b, &e0, &perm(), 1e-12).unwrap();
        let h1 = [ScalarField::from_fn(g, |x, _| x), ScalarField::from_fn(g, |_, y| y * y)];
        let h2 = [ScalarField::from_fn(g, |x, y| x * y), ScalarField::from_fn(g, |x, _| (3.0 * x).cos())];
        let comb = [0, 1].map(|i| h1[i].zip_map(&h2[i], |p, q| 2.0 * p - 0.5 * q));
        let lhs = lin.ds(&comb).unwrap();
        let r1 = lin.ds(&h1).unwrap();
        let r2 = lin.ds(&h2).unwrap();
        let rhs = r1.zip_map(&r2, |p, q| 2.0 * p - 0.5 * q);
        assert!(v0_norm(&lhs.zip_map(&rhs, |p, q| p - q)) < 1e-9 * (1.0 + v0_norm(&lhs)));
    }

    #[test]
    fn derivative_suite_passes_on_small_grid() {
        let g = grid(16);
        let e0 = FieldSpec::default().cell_field(g);
        let report = derivative_suite(g, &perm(), &e0, 3, 7, 1e-12).unwrap();
        for c in &report.cases {
            assert!(c.passes(report.stability_bound), "{c:?}");
        }
    }

    #[test]
    fn potential_minimizes_electric_energy() {
        let g = grid(12);
        let (a, b) = comp(g);
        let p = perm();
        let e0 = FieldSpec::default().cell_field(g);
        let phi = solve_potential(&a, &b, &e0, &p, 1e-12).unwrap();
        let eps = permittivity_faces(&a, &b, &p);
        let e0f = field_to_faces(&e0);
        let base = electric_energy(&g, &eps, &e0f, &phi);
        for s in 0..10 {
            let v = ScalarField::from_fn(g, |x, y| ((s as f64 + 1.0) * x + y * y).sin());
            let mut pert = phi.clone();
            pert.add_scaled(1e-3, &v);
            assert!(electric_energy(&g, &eps, &e0f, &pert) >= base - 1e-12);
        }
    }
}
