//! Cell-centered rectangular grids, scalar fields and the flux-form
//! difference operators built on them.
//!
//! Cells are stored row-major (`j * nx + i`). Fluxes live on faces:
//! x-faces are indexed `j * (nx + 1) + i` (face `i` sits between cells
//! `i - 1` and `i`), y-faces `j * nx + i` (face `j` sits between rows
//! `j - 1` and `j`). Every operator is written as `-div(k grad u)` with a
//! ghost-cell closure at the boundary, so the discrete divergence theorem
//! and self-adjointness hold exactly.

use crate::error::GridError;

/// Default upper bound on `nx * ny`.
pub const DEFAULT_MAX_CELLS: usize = 1 << 22;

/// Boundary closure for [`apply_elliptic`] and [`gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryCondition {
    /// Mirrored ghost cell: zero normal flux.
    NeumannZero,
    /// Ghost value `-u`: the field vanishes on the boundary face.
    DirichletZero,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub hx: f64,
    pub hy: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        Self::with_max_cells(nx, ny, lx, ly, DEFAULT_MAX_CELLS)
    }

    pub fn with_max_cells(nx: usize, ny: usize, lx: f64, ly: f64, max_cells: usize) -> Result<Self, GridError> {
        if nx < 4 || ny < 4 {
            return Err(GridError::TooSmall { nx, ny });
        }
        let cells = nx.checked_mul(ny).unwrap_or(usize::MAX);
        if cells > max_cells {
            return Err(GridError::TooLarge { cells, max: max_cells });
        }
        if !(lx.is_finite() && ly.is_finite() && lx > 0.0 && ly > 0.0) {
            return Err(GridError::BadLength { lx, ly });
        }
        Ok(Self { nx, ny, lx, ly, hx: lx / nx as f64, hy: ly / ny as f64 })
    }

    /// Unit square with `n x n` cells.
    pub fn unit_square(n: usize) -> Result<Self, GridError> {
        Self::new(n, n, 1.0, 1.0)
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        j * self.nx + i
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.hx * self.hy
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx
    }

    #[inline]
    pub fn y_center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy
    }

    #[inline]
    pub fn n_xfaces(&self) -> usize {
        (self.nx + 1) * self.ny
    }

    #[inline]
    pub fn n_yfaces(&self) -> usize {
        self.nx * (self.ny + 1)
    }

    /// Quadrature weight of x-face `i`: half a cell on the boundary.
    #[inline]
    pub fn xface_weight(&self, i: usize) -> f64 {
        if i == 0 || i == self.nx {
            0.5 * self.cell_area()
        } else {
            self.cell_area()
        }
    }

    #[inline]
    pub fn yface_weight(&self, j: usize) -> f64 {
        if j == 0 || j == self.ny {
            0.5 * self.cell_area()
        } else {
            self.cell_area()
        }
    }
}

/// A scalar quantity sampled at cell centers.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: GridSpec) -> Self {
        Self { grid, values: vec![0.0; grid.cells()] }
    }

    pub fn constant(grid: GridSpec, value: f64) -> Self {
        Self { grid, values: vec![value; grid.cells()] }
    }

    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.cells() {
            return Err(GridError::LengthMismatch { expected: grid.cells(), got: values.len() });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index });
        }
        Ok(Self { grid, values })
    }

    pub(crate) fn from_vec_unchecked(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.cells());
        Self { grid, values }
    }

    /// Samples `f(x, y)` at cell centers.
    pub fn from_fn(grid: GridSpec, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.cells());
        for j in 0..grid.ny {
            let y = grid.y_center(j);
            for i in 0..grid.nx {
                values.push(f(grid.x_center(i), y));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// `self += a * other`
    pub fn add_scaled(&mut self, a: f64, other: &Self) {
        for (x, y) in self.values.iter_mut().zip(&other.values) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    pub fn shift(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v += a);
    }

    pub fn mean(&self) -> f64 {
        mean(self)
    }

    /// Copy with the spatial mean removed.
    pub fn deviation(&self) -> Self {
        let m = self.mean();
        self.map(|v| v - m)
    }

    /// Discrete L2 norm.
    pub fn norm(&self) -> f64 {
        sum_sq(&self.values).sqrt() * self.grid.cell_area().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Discrete L^p norm, `p >= 1`.
    pub fn lp_norm(&self, p: f64) -> f64 {
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * self.grid.cell_area()).powf(1.0 / p)
    }
}

/// Flux coefficients (or any face-centered quantity) on the staggered faces.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceCoefficients {
    pub x_faces: Vec<f64>,
    pub y_faces: Vec<f64>,
}

impl FaceCoefficients {
    pub fn zeros(grid: &GridSpec) -> Self {
        Self { x_faces: vec![0.0; grid.n_xfaces()], y_faces: vec![0.0; grid.n_yfaces()] }
    }

    pub fn constant(grid: &GridSpec, value: f64) -> Self {
        Self { x_faces: vec![value; grid.n_xfaces()], y_faces: vec![value; grid.n_yfaces()] }
    }

    /// Arithmetic average of the two adjacent cells; boundary faces take the
    /// value of their single neighbour.
    pub fn from_cells(f: &ScalarField) -> Self {
        let g = f.grid();
        let v = f.values();
        let mut out = Self::zeros(g);
        for j in 0..g.ny {
            for i in 0..=g.nx {
                out.x_faces[j * (g.nx + 1) + i] = if i == 0 {
                    v[g.idx(0, j)]
                } else if i == g.nx {
                    v[g.idx(g.nx - 1, j)]
                } else {
                    0.5 * (v[g.idx(i - 1, j)] + v[g.idx(i, j)])
                };
            }
        }
        for j in 0..=g.ny {
            for i in 0..g.nx {
                out.y_faces[j * g.nx + i] = if j == 0 {
                    v[g.idx(i, 0)]
                } else if j == g.ny {
                    v[g.idx(i, g.ny - 1)]
                } else {
                    0.5 * (v[g.idx(i, j - 1)] + v[g.idx(i, j)])
                };
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.x_faces.iter().chain(&self.y_faces).all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.x_faces.iter().chain(&self.y_faces).copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.x_faces.iter().chain(&self.y_faces).copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self {
            x_faces: self.x_faces.iter().zip(&other.x_faces).map(|(&a, &b)| f(a, b)).collect(),
            y_faces: self.y_faces.iter().zip(&other.y_faces).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            x_faces: self.x_faces.iter().map(|&a| f(a)).collect(),
            y_faces: self.y_faces.iter().map(|&a| f(a)).collect(),
        }
    }
}

#[inline]
pub(crate) fn sum_sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Neumaier-compensated sum; energy differences rely on it.
pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for v in values {
        let t = s + v;
        c += if s.abs() >= v.abs() { (s - t) + v } else { (v - t) + s };
        s = t;
    }
    s + c
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Cell-average of a field.
pub fn mean(f: &ScalarField) -> f64 {
    let g = f.grid();
    let s: f64 = f.values().iter().sum();
    s * g.cell_area() / g.area()
}

/// Discrete L2 product `hx hy sum f g`.
pub fn inner(f: &ScalarField, g: &ScalarField) -> Result<f64, GridError> {
    if f.grid() != g.grid() {
        return Err(GridError::GridMismatch);
    }
    Ok(dot(f.values(), g.values()) * f.grid().cell_area())
}

/// Face quadrature `sum_f w_f a_f b_f` over x- and y-faces.
pub fn face_inner(grid: &GridSpec, a: &FaceCoefficients, b: &FaceCoefficients) -> f64 {
    let nx = grid.nx;
    let xs = (0..grid.ny).flat_map(|j| (0..=nx).map(move |i| (i, j * (nx + 1) + i)));
    let x = xs.map(|(i, k)| grid.xface_weight(i) * a.x_faces[k] * b.x_faces[k]);
    let ys = (0..=grid.ny).flat_map(|j| (0..nx).map(move |i| (j, j * nx + i)));
    let y = ys.map(|(j, k)| grid.yface_weight(j) * a.y_faces[k] * b.y_faces[k]);
    compensated_sum(x.chain(y))
}

/// Face gradient with the ghost-cell closure of `bc`.
pub fn gradient(f: &ScalarField, bc: BoundaryCondition) -> FaceCoefficients {
    let g = f.grid();
    let mut out = FaceCoefficients::zeros(g);
    gradient_into(g, f.values(), bc, &mut out.x_faces, &mut out.y_faces);
    out
}

pub(crate) fn gradient_into(g: &GridSpec, u: &[f64], bc: BoundaryCondition, gx: &mut [f64], gy: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let dirichlet = bc == BoundaryCondition::DirichletZero;
    let (ihx, ihy) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..ny {
        let row = j * nx;
        let frow = j * (nx + 1);
        gx[frow] = if dirichlet { 2.0 * u[row] * ihx } else { 0.0 };
        for i in 1..nx {
            gx[frow + i] = (u[row + i] - u[row + i - 1]) * ihx;
        }
        gx[frow + nx] = if dirichlet { -2.0 * u[row + nx - 1] * ihx } else { 0.0 };
    }
    for i in 0..nx {
        gy[i] = if dirichlet { 2.0 * u[i] * ihy } else { 0.0 };
        gy[ny * nx + i] = if dirichlet { -2.0 * u[(ny - 1) * nx + i] * ihy } else { 0.0 };
    }
    for j in 1..ny {
        for i in 0..nx {
            gy[j * nx + i] = (u[j * nx + i] - u[(j - 1) * nx + i]) * ihy;
        }
    }
}

/// `-div q` for a face flux `q`. Boundary face entries are used as given, so
/// callers zero them for Neumann problems.
pub fn neg_divergence(grid: &GridSpec, q: &FaceCoefficients) -> ScalarField {
    let mut out = ScalarField::zeros(*grid);
    neg_divergence_into(grid, &q.x_faces, &q.y_faces, out.values_mut());
    out
}

pub(crate) fn neg_divergence_into(g: &GridSpec, qx: &[f64], qy: &[f64], out: &mut [f64]) {
    let (nx, ny) = (g.nx, g.ny);
    let (ihx, ihy) = (1.0 / g.hx, 1.0 / g.hy);
    for j in 0..ny {
        for i in 0..nx {
            let fx = j * (nx + 1) + i;
            let fy = j * nx + i;
            out[j * nx + i] = -((qx[fx + 1] - qx[fx]) * ihx + (qy[fy + nx] - qy[fy]) * ihy);
        }
    }
}

/// Fused `out = -div(k grad u)`; `kx`/`ky` give the face coefficients.
#[inline]
pub(crate) fn elliptic_kernel<KX, KY>(g: &GridSpec, kx: KX, ky: KY, u: &[f64], bc: BoundaryCondition, out: &mut [f64])
where
    KX: Fn(usize) -> f64,
    KY: Fn(usize) -> f64,
{
    let (nx, ny) = (g.nx, g.ny);
    let dirichlet = bc == BoundaryCondition::DirichletZero;
    let ihx2 = 1.0 / (g.hx * g.hx);
    let ihy2 = 1.0 / (g.hy * g.hy);
    for j in 0..ny {
        for i in 0..nx {
            let id = j * nx + i;
            let c = u[id];
            let fx = j * (nx + 1) + i;
            let fy = j * nx + i;
            // face gradients times hx (resp. hy)
            let west = if i > 0 {
                c - u[id - 1]
            } else if dirichlet {
                2.0 * c
            } else {
                0.0
            };
            let east = if i + 1 < nx {
                u[id + 1] - c
            } else if dirichlet {
                -2.0 * c
            } else {
                0.0
            };
            let south = if j > 0 {
                c - u[id - nx]
            } else if dirichlet {
                2.0 * c
            } else {
                0.0
            };
            let north = if j + 1 < ny {
                u[id + nx] - c
            } else if dirichlet {
                -2.0 * c
            } else {
                0.0
            };
            out[id] = -((kx(fx + 1) * east - kx(fx) * west) * ihx2 + (ky(fy + nx) * north - ky(fy) * south) * ihy2);
        }
    }
}

/// `-div(k grad u)` in flux form.
pub fn apply_elliptic(k: &FaceCoefficients, u: &ScalarField, bc: BoundaryCondition) -> ScalarField {
    let g = *u.grid();
    let mut out = ScalarField::zeros(g);
    elliptic_kernel(&g, |f| k.x_faces[f], |f| k.y_faces[f], u.values(), bc, out.values_mut());
    out
}

/// Five-point Laplacian with zero-flux (mirrored) boundaries.
pub fn laplace_neumann(f: &ScalarField) -> ScalarField {
    let g = *f.grid();
    let mut out = ScalarField::zeros(g);
    elliptic_kernel(&g, |_| 1.0, |_| 1.0, f.values(), BoundaryCondition::NeumannZero, out.values_mut());
    out.scale(-1.0);
    out
}

pub(crate) fn neg_laplace_into(g: &GridSpec, u: &[f64], bc: BoundaryCondition, out: &mut [f64]) {
    elliptic_kernel(g, |_| 1.0, |_| 1.0, u, bc, out);
}
