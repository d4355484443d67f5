//! Constrained phase states and the operators acting on them: the tangent
//! projector, the inverse Neumann Laplacian `N`, and its mobility-weighted
//! counterpart `N_phi` with the dual norm it induces.

use crate::error::{GridError, PhysicsError, SolverError};
use crate::grid::{dot, elliptic_kernel, gradient_into, neg_divergence_into, BoundaryCondition, GridSpec, ScalarField};
use crate::physics::{mat_vec, MobilitySpec, Vec3};
use crate::solver::{conjugate_gradient, remove_mean, CgOptions};

/// Pointwise tolerance on `c_A + c_B + c_S = 1`.
pub const SUM_TOL: f64 = 1e-10;

/// Three composition fields with unit pointwise sum and prescribed means.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    c: [ScalarField; 3],
    target_mean: Vec3,
}

impl PhaseState {
    pub fn new(c: [ScalarField; 3], target_mean: Vec3) -> Result<Self, SolverError> {
        check_same_grid(&c)?;
        let total: f64 = target_mean.iter().sum();
        if (total - 1.0).abs() > 1e-12 || target_mean.iter().any(|m| !m.is_finite()) {
            return Err(SolverError::Constraint(format!("target means {target_mean:?} must sum to 1")));
        }
        let n = c[0].values().len();
        for k in 0..n {
            let s = c[0].values()[k] + c[1].values()[k] + c[2].values()[k];
            if (s - 1.0).abs() > SUM_TOL {
                return Err(SolverError::Constraint(format!("components sum to {s} at cell {k}")));
            }
        }
        for i in 0..3 {
            let m = c[i].mean();
            if (m - target_mean[i]).abs() > 1e-9 {
                return Err(SolverError::Constraint(format!(
                    "component {i} has mean {m}, expected {}",
                    target_mean[i]
                )));
            }
        }
        Ok(Self { c, target_mean })
    }

    /// Builds a state from `c_A` and `c_B`; `c_S` is `1 - c_A - c_B` and the
    /// target means are taken from the data.
    pub fn from_ab(ca: ScalarField, cb: ScalarField) -> Result<Self, SolverError> {
        if ca.grid() != cb.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let cs = ca.zip_map(&cb, |a, b| 1.0 - a - b);
        let ma = ca.mean();
        let mb = cb.mean();
        Self::new([ca, cb, cs], [ma, mb, 1.0 - ma - mb])
    }

    pub fn uniform(grid: GridSpec, m: Vec3) -> Result<Self, SolverError> {
        Self::new(
            [
                ScalarField::constant(grid, m[0]),
                ScalarField::constant(grid, m[1]),
                ScalarField::constant(grid, 1.0 - m[0] - m[1]),
            ],
            m,
        )
    }

    pub(crate) fn from_parts_unchecked(c: [ScalarField; 3], target_mean: Vec3) -> Self {
        Self { c, target_mean }
    }

    pub fn grid(&self) -> &GridSpec {
        self.c[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField; 3] {
        &self.c
    }

    pub fn component(&self, i: usize) -> &ScalarField {
        &self.c[i]
    }

    pub fn target_mean(&self) -> Vec3 {
        self.target_mean
    }

    pub fn into_fields(self) -> [ScalarField; 3] {
        self.c
    }

    /// Composition triple at cell `k`.
    #[inline]
    pub fn at(&self, k: usize) -> Vec3 {
        [self.c[0].values()[k], self.c[1].values()[k], self.c[2].values()[k]]
    }

    pub fn means(&self) -> Vec3 {
        [self.c[0].mean(), self.c[1].mean(), self.c[2].mean()]
    }

    /// `self - other`, which is tangent when both share their means.
    pub fn difference(&self, other: &PhaseState) -> Result<TangentField, SolverError> {
        if self.grid() != other.grid() {
            return Err(GridError::GridMismatch.into());
        }
        let d = [0, 1, 2].map(|i| self.c[i].zip_map(&other.c[i], |a, b| a - b));
        TangentField::new(d)
    }

    /// Componentwise `self - other` without any constraint check.
    pub fn difference_fields(&self, other: &PhaseState) -> Result<[ScalarField; 3], GridError> {
        if self.grid() != other.grid() {
            return Err(GridError::GridMismatch);
        }
        Ok([0, 1, 2].map(|i| self.c[i].zip_map(&other.c[i], |a, b| a - b)))
    }

    pub fn max_sum_deviation(&self) -> f64 {
        (0..self.c[0].values().len()).map(|k| (self.at(k).iter().sum::<f64>() - 1.0).abs()).fold(0.0, f64::max)
    }
}

/// Three mean-zero fields summing to zero pointwise.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentField {
    v: [ScalarField; 3],
}

impl TangentField {
    pub fn new(v: [ScalarField; 3]) -> Result<Self, SolverError> {
        check_same_grid(&v)?;
        let scale = v.iter().map(|f| f.max_abs()).fold(1.0, f64::max);
        let n = v[0].values().len();
        for k in 0..n {
            let s = v[0].values()[k] + v[1].values()[k] + v[2].values()[k];
            if s.abs() > SUM_TOL * scale {
                return Err(SolverError::NotTangent(format!("components sum to {s:.3e} at cell {k}")));
            }
        }
        for (i, f) in v.iter().enumerate() {
            let m = f.mean();
            if m.abs() > 1e-12 * scale {
                return Err(SolverError::NotTangent(format!("component {i} has mean {m:.3e}")));
            }
        }
        Ok(Self { v })
    }

    /// Projects arbitrary fields onto tangent fields.
    pub fn project(v: [ScalarField; 3]) -> Result<Self, SolverError> {
        check_same_grid(&v)?;
        let grid = *v[0].grid();
        let mut flat = flatten(&v);
        project_block(&mut flat);
        Ok(Self { v: unflatten(grid, flat) })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self { v: [ScalarField::zeros(grid), ScalarField::zeros(grid), ScalarField::zeros(grid)] }
    }

    pub(crate) fn from_flat(grid: GridSpec, flat: Vec<f64>) -> Self {
        Self { v: unflatten(grid, flat) }
    }

    pub fn grid(&self) -> &GridSpec {
        self.v[0].grid()
    }

    pub fn fields(&self) -> &[ScalarField; 3] {
        &self.v
    }

    pub fn into_fields(self) -> [ScalarField; 3] {
        self.v
    }

    pub fn scaled(&self, a: f64) -> Self {
        Self { v: self.v.clone().map(|f| f.map(|x| a * x)) }
    }

    /// Summed L2 product of the three components.
    pub fn inner(&self, other: &TangentField) -> f64 {
        (0..3).map(|i| dot(self.v[i].values(), other.v[i].values())).sum::<f64>() * self.grid().cell_area()
    }

    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub(crate) fn flat(&self) -> Vec<f64> {
        flatten(&self.v)
    }
}

fn check_same_grid(v: &[ScalarField; 3]) -> Result<(), GridError> {
    if v[0].grid() != v[1].grid() || v[0].grid() != v[2].grid() {
        return Err(GridError::GridMismatch);
    }
    Ok(())
}

pub(crate) fn flatten(v: &[ScalarField; 3]) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * v[0].values().len());
    for f in v {
        out.extend_from_slice(f.values());
    }
    out
}

pub(crate) fn unflatten(grid: GridSpec, flat: Vec<f64>) -> [ScalarField; 3] {
    let n = grid.cells();
    debug_assert_eq!(flat.len(), 3 * n);
    [0, 1, 2].map(|i| ScalarField::from_vec_unchecked(grid, flat[i * n..(i + 1) * n].to_vec()))
}

/// `v - (v1 + v2 + v3) / 3` componentwise.
pub fn project_tangent(v: Vec3) -> Vec3 {
    crate::physics::project_triple(v)
}

/// Pointwise tangent projection of three fields.
pub fn project_tangent_fields(v: &[ScalarField; 3]) -> Result<[ScalarField; 3], GridError> {
    check_same_grid(v)?;
    let grid = *v[0].grid();
    let mut flat = flatten(v);
    project_pointwise(&mut flat);
    Ok(unflatten(grid, flat))
}

pub(crate) fn project_pointwise(flat: &mut [f64]) {
    let n = flat.len() / 3;
    let (a, rest) = flat.split_at_mut(n);
    let (b, s) = rest.split_at_mut(n);
    for k in 0..n {
        let m = (a[k] + b[k] + s[k]) / 3.0;
        a[k] -= m;
        b[k] -= m;
        s[k] -= m;
    }
}

/// Pointwise tangent projection followed by mean removal per component.
pub(crate) fn project_block(flat: &mut [f64]) {
    project_pointwise(flat);
    let n = flat.len() / 3;
    for chunk in flat.chunks_mut(n) {
        remove_mean(chunk);
    }
}

fn neumann_cg(grid: &GridSpec, rhs: &[f64], x: &mut [f64], tol: f64) -> Result<(), SolverError> {
    let g = *grid;
    conjugate_gradient(
        |u, out| elliptic_kernel(&g, |_| 1.0, |_| 1.0, u, BoundaryCondition::NeumannZero, out),
        remove_mean,
        rhs,
        x,
        CgOptions::with_tol(tol),
    )?;
    Ok(())
}

/// `N f`: the mean-zero solution of `-lap u = f` with zero-flux boundaries.
pub fn inv_neumann_laplacian(f: &ScalarField, tol: f64) -> Result<ScalarField, SolverError> {
    let mut guess = ScalarField::zeros(*f.grid());
    inv_neumann_laplacian_warm(f, tol, &mut guess)?;
    Ok(guess)
}

/// As [`inv_neumann_laplacian`], starting from and overwriting `x`.
pub fn inv_neumann_laplacian_warm(f: &ScalarField, tol: f64, x: &mut ScalarField) -> Result<(), SolverError> {
    if f.grid() != x.grid() {
        return Err(GridError::GridMismatch.into());
    }
    let rms = f.norm() / f.grid().area().sqrt();
    let mean = f.mean();
    if mean.abs() > 1e-10 * rms + 64.0 * f64::EPSILON * f.max_abs() {
        return Err(SolverError::NonZeroMean { mean });
    }
    let grid = *f.grid();
    neumann_cg(&grid, f.values(), x.values_mut(), tol)
}

/// Solves on the mean-zero part of `f` without checking its mean.
pub(crate) fn inv_neumann_projected(f: &ScalarField, tol: f64, x: &mut ScalarField) -> Result<(), SolverError> {
    let grid = *f.grid();
    neumann_cg(&grid, f.values(), x.values_mut(), tol)
}

/// Per-face mobility matrices evaluated at face-averaged compositions.
#[derive(Debug, Clone)]
pub struct MobilityOperator {
    grid: GridSpec,
    faces: FaceMobility,
}

#[derive(Debug, Clone)]
enum FaceMobility {
    /// The projector acts as the identity on tangent gradients.
    Identity,
    Constant([[f64; 3]; 3]),
    Varying {
        x: Vec<[[f64; 3]; 3]>,
        y: Vec<[[f64; 3]; 3]>,
    },
}

impl MobilityOperator {
    pub fn new(phi: &PhaseState, mobility: &MobilitySpec) -> Self {
        let grid = *phi.grid();
        let faces = match mobility {
            MobilitySpec::ConstantProjector => FaceMobility::Identity,
            MobilitySpec::ConstantMatrix(m) => FaceMobility::Constant(*m),
            MobilitySpec::StateDependent { .. } => {
                let (nx, ny) = (grid.nx, grid.ny);
                let avg = |a: usize, b: usize| {
                    let (pa, pb) = (phi.at(a), phi.at(b));
                    [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1]), 0.5 * (pa[2] + pb[2])]
                };
                let mut x = Vec::with_capacity(grid.n_xfaces());
                for j in 0..ny {
                    for i in 0..=nx {
                        let l = grid.idx(i.saturating_sub(1), j);
                        let r = grid.idx(i.min(nx - 1), j);
                        x.push(mobility.matrix(avg(l, r)));
                    }
                }
                let mut y = Vec::with_capacity(grid.n_yfaces());
                for j in 0..=ny {
                    for i in 0..nx {
                        let b = grid.idx(i, j.saturating_sub(1));
                        let t = grid.idx(i, j.min(ny - 1));
                        y.push(mobility.matrix(avg(b, t)));
                    }
                }
                FaceMobility::Varying { x, y }
            }
        };
        Self { grid, faces }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.faces, FaceMobility::Identity)
    }

    /// `A_phi u = -div(M grad u)` on a flattened tangent field.
    pub(crate) fn apply_flat(&self, u: &[f64], out: &mut [f64], scratch: &mut FluxScratch) {
        let g = &self.grid;
        let n = g.cells();
        if let FaceMobility::Identity = self.faces {
            for i in 0..3 {
                elliptic_kernel(
                    g,
                    |_| 1.0,
                    |_| 1.0,
                    &u[i * n..(i + 1) * n],
                    BoundaryCondition::NeumannZero,
                    &mut out[i * n..(i + 1) * n],
                );
            }
            return;
        }
        let (nfx, nfy) = (g.n_xfaces(), g.n_yfaces());
        for i in 0..3 {
            let (gx, gy) = (&mut scratch.gx[i * nfx..(i + 1) * nfx], &mut scratch.gy[i * nfy..(i + 1) * nfy]);
            gradient_into(g, &u[i * n..(i + 1) * n], BoundaryCondition::NeumannZero, gx, gy);
        }
        let mix = |m: &[[f64; 3]; 3], gv: &mut [f64], nf: usize, f: usize| {
            let v = [gv[f], gv[nf + f], gv[2 * nf + f]];
            let w = mat_vec(m, &v);
            gv[f] = w[0];
            gv[nf + f] = w[1];
            gv[2 * nf + f] = w[2];
        };
        match &self.faces {
            FaceMobility::Constant(m) => {
                for f in 0..nfx {
                    mix(m, &mut scratch.gx, nfx, f);
                }
                for f in 0..nfy {
                    mix(m, &mut scratch.gy, nfy, f);
                }
            }
            FaceMobility::Varying { x, y } => {
                for f in 0..nfx {
                    mix(&x[f], &mut scratch.gx, nfx, f);
                }
                for f in 0..nfy {
                    mix(&y[f], &mut scratch.gy, nfy, f);
                }
            }
            FaceMobility::Identity => unreachable!(),
        }
        for i in 0..3 {
            neg_divergence_into(
                g,
                &scratch.gx[i * nfx..(i + 1) * nfx],
                &scratch.gy[i * nfy..(i + 1) * nfy],
                &mut out[i * n..(i + 1) * n],
            );
        }
    }

    /// `A_phi u` for a tangent field `u`.
    pub fn apply(&self, u: &TangentField) -> TangentField {
        let mut out = vec![0.0; 3 * self.grid.cells()];
        let mut scratch = FluxScratch::new(&self.grid);
        self.apply_flat(&u.flat(), &mut out, &mut scratch);
        project_block(&mut out);
        TangentField::from_flat(self.grid, out)
    }

    /// Solves `A_phi u = eta` on tangent fields, starting from `x`.
    pub(crate) fn solve_flat(&self, eta: &[f64], x: &mut [f64], tol: f64) -> Result<(), SolverError> {
        let mut scratch = FluxScratch::new(&self.grid);
        conjugate_gradient(
            |u, out| self.apply_flat(u, out, &mut scratch),
            project_block,
            eta,
            x,
            CgOptions::with_tol(tol),
        )?;
        Ok(())
    }

    pub fn solve(&self, eta: &TangentField, tol: f64) -> Result<TangentField, SolverError> {
        if eta.grid() != &self.grid {
            return Err(GridError::GridMismatch.into());
        }
        let mut x = vec![0.0; 3 * self.grid.cells()];
        self.solve_flat(&eta.flat(), &mut x, tol)?;
        Ok(TangentField::from_flat(self.grid, x))
    }

    /// `(M grad u, grad u)` with face quadrature.
    pub fn energy(&self, u: &TangentField) -> f64 {
        let mut au = vec![0.0; 3 * self.grid.cells()];
        let mut scratch = FluxScratch::new(&self.grid);
        let flat = u.flat();
        self.apply_flat(&flat, &mut au, &mut scratch);
        dot(&au, &flat) * self.grid.cell_area()
    }
}

pub(crate) struct FluxScratch {
    gx: Vec<f64>,
    gy: Vec<f64>,
}

impl FluxScratch {
    pub(crate) fn new(g: &GridSpec) -> Self {
        Self { gx: vec![0.0; 3 * g.n_xfaces()], gy: vec![0.0; 3 * g.n_yfaces()] }
    }
}

/// `N_phi eta`, the tangent solution of `(M(phi) grad u, grad v) = (eta, v)`.
pub fn weighted_inverse(
    phi: &PhaseState,
    eta: &TangentField,
    mobility: &MobilitySpec,
    tol: f64,
) -> Result<TangentField, SolverError> {
    MobilityOperator::new(phi, mobility).solve(eta, tol)
}

/// `||eta||_{*,phi}`
pub fn dual_norm(phi: &PhaseState, eta: &TangentField, mobility: &MobilitySpec, tol: f64) -> Result<f64, SolverError> {
    let op = MobilityOperator::new(phi, mobility);
    let u = op.solve(eta, tol)?;
    Ok(op.energy(&u).max(0.0).sqrt())
}

/// Both sides of the estimate
/// `|grad(N_1 - N_2) eta| <= (L / lambda) |phi_1 - phi_2|_4 |grad N_2 eta|_4`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub lhs: f64,
    pub rhs: f64,
}

pub fn mobility_lipschitz_check(
    phi1: &PhaseState,
    phi2: &PhaseState,
    eta: &TangentField,
    mobility: &MobilitySpec,
    tol: f64,
) -> Result<LipschitzCheck, SolverError> {
    if mobility.is_constant() {
        return Err(PhysicsError::ConstantMobility.into());
    }
    let g = *phi1.grid();
    if phi2.grid() != &g || eta.grid() != &g {
        return Err(GridError::GridMismatch.into());
    }
    let u1 = weighted_inverse(phi1, eta, mobility, tol)?;
    let u2 = weighted_inverse(phi2, eta, mobility, tol)?;
    let diff = [0, 1, 2].map(|i| u1.fields()[i].zip_map(&u2.fields()[i], |a, b| a - b));

    let face_grads = |f: &[ScalarField; 3]| {
        let (nfx, nfy) = (g.n_xfaces(), g.n_yfaces());
        let mut gx = vec![[0.0; 3]; nfx];
        let mut gy = vec![[0.0; 3]; nfy];
        let mut bx = vec![0.0; nfx];
        let mut by = vec![0.0; nfy];
        for i in 0..3 {
            gradient_into(&g, f[i].values(), BoundaryCondition::NeumannZero, &mut bx, &mut by);
            for k in 0..nfx {
                gx[k][i] = bx[k];
            }
            for k in 0..nfy {
                gy[k][i] = by[k];
            }
        }
        (gx, gy)
    };
    let face_avg = |p: &PhaseState| {
        let avg = [0, 1, 2].map(|i| crate::grid::FaceCoefficients::from_cells(p.component(i)));
        let gx: Vec<Vec3> = (0..g.n_xfaces()).map(|k| [0, 1, 2].map(|i| avg[i].x_faces[k])).collect();
        let gy: Vec<Vec3> = (0..g.n_yfaces()).map(|k| [0, 1, 2].map(|i| avg[i].y_faces[k])).collect();
        (gx, gy)
    };
    // sum_f w_f |v_f|^p over both face families
    let face_sum = |x: &[Vec3], y: &[Vec3], p: i32| {
        let norm = |v: &Vec3| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let mut s = 0.0;
        for j in 0..g.ny {
            for i in 0..=g.nx {
                s += g.xface_weight(i) * norm(&x[j * (g.nx + 1) + i]).powi(p);
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                s += g.yface_weight(j) * norm(&y[j * g.nx + i]).powi(p);
            }
        }
        s
    };

    let (dx, dy) = face_grads(&diff);
    let lhs = face_sum(&dx, &dy, 2).sqrt();
    let (ax, ay) = face_avg(phi1);
    let (bx, by) = face_avg(phi2);
    let sub = |a: &[Vec3], b: &[Vec3]| -> Vec<Vec3> {
        a.iter().zip(b).map(|(p, q)| [p[0] - q[0], p[1] - q[1], p[2] - q[2]]).collect()
    };
    let (px, py) = (sub(&ax, &bx), sub(&ay, &by));
    let (ux, uy) = face_grads(u2.fields());
    let rhs = mobility.lipschitz() / mobility.coercivity()
        * face_sum(&px, &py, 4).powf(0.25)
        * face_sum(&ux, &uy, 4).powf(0.25);
    Ok(LipschitzCheck { lhs, rhs })
}
