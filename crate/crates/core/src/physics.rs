//! Pointwise material laws: the logarithmic potential and its quartic
//! regularization, the interaction polynomial, permittivity and mobility.

use crate::error::PhysicsError;

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

const INV_E: f64 = 0.367_879_441_171_442_33;

/// Largest admissible regularization parameter for the logarithmic potential.
pub const DELTA_CAP: f64 = 1.0 / 3.0;

/// Lower bound of `psi_delta(2, s, delta)` over the real line.
pub const PSI_CONVEXITY_FLOOR: f64 = 1.0;

/// Lower bound of the fourth derivative of `psi` on `(0, 1)`.
pub const PSI_FOURTH_FLOOR: f64 = 2.0;

/// `k`-th derivative of `s ln s + 1/e`.
///
/// For `s > 1` the potential continues as its second-order Taylor polynomial
/// at `s = 1`, which keeps it convex and twice differentiable.
pub fn psi_d(k: usize, s: f64) -> Result<f64, PhysicsError> {
    if k > 4 {
        return Err(PhysicsError::Order(k));
    }
    if s.is_nan() || (k == 0 && s < 0.0) || (k > 0 && s <= 0.0) {
        return Err(PhysicsError::Domain { s, order: k });
    }
    if s > 1.0 {
        let d = s - 1.0;
        return Ok(match k {
            0 => INV_E + d + 0.5 * d * d,
            1 => 1.0 + d,
            2 => 1.0,
            _ => 0.0,
        });
    }
    Ok(match k {
        0 if s == 0.0 => INV_E,
        0 => s * s.ln() + INV_E,
        1 => 1.0 + s.ln(),
        2 => 1.0 / s,
        3 => -1.0 / (s * s),
        _ => 2.0 / (s * s * s),
    })
}

pub fn psi(s: f64) -> Result<f64, PhysicsError> {
    psi_d(0, s)
}

/// The logarithmic potential with its singular part replaced by the quartic
/// Taylor polynomial at `delta` below `delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularizedPsi {
    delta: f64,
    at_delta: [f64; 5],
}

impl RegularizedPsi {
    pub fn new(delta: f64) -> Result<Self, PhysicsError> {
        if !(delta > 0.0 && delta < DELTA_CAP) {
            return Err(PhysicsError::Invalid(format!("delta must lie in (0, {DELTA_CAP:.4}), got {delta}")));
        }
        let mut at_delta = [0.0; 5];
        for (k, v) in at_delta.iter_mut().enumerate() {
            *v = psi_d(k, delta)?;
        }
        Ok(Self { delta, at_delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    #[inline]
    fn taylor(&self, k: usize, s: f64) -> f64 {
        let r = s - self.delta;
        let t = &self.at_delta;
        match k {
            0 => t[0] + r * (t[1] + r * (t[2] / 2.0 + r * (t[3] / 6.0 + r * t[4] / 24.0))),
            1 => t[1] + r * (t[2] + r * (t[3] / 2.0 + r * t[4] / 6.0)),
            2 => t[2] + r * (t[3] + r * t[4] / 2.0),
            3 => t[3] + r * t[4],
            _ => t[4],
        }
    }

    /// Derivative of order `k <= 4`; panics on larger orders.
    #[inline]
    pub fn d(&self, k: usize, s: f64) -> f64 {
        assert!(k <= 4, "derivative order {k} > 4");
        if s < self.delta {
            self.taylor(k, s)
        } else {
            psi_d(k, s).expect("s >= delta > 0")
        }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        self.d(0, s)
    }

    #[inline]
    pub fn d1(&self, s: f64) -> f64 {
        self.d(1, s)
    }

    #[inline]
    pub fn d2(&self, s: f64) -> f64 {
        self.d(2, s)
    }

    /// `C_0` with `psi_delta(r) >= c r^4 / 48 - C_0` for `r < delta`, where
    /// `c` is [`PSI_FOURTH_FLOOR`].
    pub fn quartic_floor_constant(&self) -> f64 {
        let h = |r: f64| PSI_FOURTH_FLOOR * r.powi(4) / 48.0 - self.value(r);
        // h is a quartic with negative leading coefficient: its supremum is
        // attained on a bounded interval.
        let (lo, hi) = (-10.0, self.delta);
        let n = 20_000;
        let mut best = (lo, h(lo));
        for i in 0..=n {
            let r = lo + (hi - lo) * i as f64 / n as f64;
            let v = h(r);
            if v > best.1 {
                best = (r, v);
            }
        }
        let step = (hi - lo) / n as f64;
        let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
        for _ in 0..100 {
            let m1 = a + (b - a) / 3.0;
            let m2 = b - (b - a) / 3.0;
            if h(m1) < h(m2) {
                a = m1;
            } else {
                b = m2;
            }
        }
        best.1.max(h(0.5 * (a + b))).max(0.0)
    }
}

/// `k`-th derivative of the regularized potential.
pub fn psi_delta(k: usize, s: f64, delta: f64) -> Result<f64, PhysicsError> {
    if k > 4 {
        return Err(PhysicsError::Order(k));
    }
    Ok(RegularizedPsi::new(delta)?.d(k, s))
}

/// Quadratic interaction `I(s) = s^T Q s / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub q: Mat3,
}

impl Default for Interaction {
    /// `s1 s2 + s2 s3 + s1 s3`
    fn default() -> Self {
        Self { q: [[0.0, 1.0, 1.0], [1.0, 0.0, 1.0], [1.0, 1.0, 0.0]] }
    }
}

impl Interaction {
    pub fn new(q: Mat3) -> Result<Self, PhysicsError> {
        if !is_symmetric(&q, 1e-14) || q.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PhysicsError::Invalid("interaction matrix must be finite and symmetric".into()));
        }
        Ok(Self { q })
    }

    pub fn zero() -> Self {
        Self { q: [[0.0; 3]; 3] }
    }

    #[inline]
    pub fn value(&self, s: Vec3) -> f64 {
        0.5 * dot3(&s, &mat_vec(&self.q, &s))
    }

    #[inline]
    pub fn grad(&self, s: Vec3) -> Vec3 {
        mat_vec(&self.q, &s)
    }

    pub fn hess(&self, _s: Vec3) -> Mat3 {
        self.q
    }

    /// `C` with `|I(s)| <= C (1 + |s|^2)`.
    pub fn growth_constant(&self) -> f64 {
        0.5 * spectral_radius_sym(&self.q)
    }
}

/// Smooth clamp: identity on `[0, 1]`, constant outside `[-0.5, 1.5]`.
///
/// Returns value and first two derivatives.
#[inline]
pub fn clamp_sigma(x: f64) -> [f64; 3] {
    #[inline]
    fn lower(x: f64) -> [f64; 3] {
        let t = 2.0 * x + 1.0;
        let t2 = t * t;
        [
            -0.3 + t2 * t * (1.0 - t + 0.3 * t2),
            2.0 * t2 * (3.0 - 4.0 * t + 1.5 * t2),
            4.0 * t * (6.0 - 12.0 * t + 6.0 * t2),
        ]
    }
    if x <= -0.5 {
        [-0.3, 0.0, 0.0]
    } else if x < 0.0 {
        lower(x)
    } else if x <= 1.0 {
        [x, 1.0, 0.0]
    } else if x < 1.5 {
        let [v, d, dd] = lower(1.0 - x);
        [1.0 - v, d, -dd]
    } else {
        [1.3, 0.0, 0.0]
    }
}

/// Range of [`clamp_sigma`].
pub const SIGMA_RANGE: (f64, f64) = (-0.3, 1.3);

/// Phase-dependent permittivity `eps(s1, s2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Permittivity {
    eps_a: f64,
    eps_b: f64,
    eps_s: f64,
    cutoff_radius: f64,
    bounds: (f64, f64),
    grad_sup: f64,
}

/// Smallest admissible lower permittivity bound.
pub const PERMITTIVITY_FLOOR: f64 = 1e-3;

impl Permittivity {
    pub fn new(eps_a: f64, eps_b: f64, eps_s: f64, cutoff_radius: f64) -> Result<Self, PhysicsError> {
        for (name, v) in [("eps_a", eps_a), ("eps_b", eps_b), ("eps_s", eps_s)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PhysicsError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(cutoff_radius.is_finite() && 0.75 * cutoff_radius > std::f64::consts::SQRT_2) {
            return Err(PhysicsError::Invalid(format!(
                "cutoff_radius must exceed {:.4} so eps is affine on the unit square, got {cutoff_radius}",
                std::f64::consts::SQRT_2 / 0.75
            )));
        }
        let mut lo = eps_s;
        let mut hi = eps_s;
        for a in [SIGMA_RANGE.0, SIGMA_RANGE.1] {
            for b in [SIGMA_RANGE.0, SIGMA_RANGE.1] {
                let g = eps_s + (eps_a - eps_s) * a + (eps_b - eps_s) * b;
                lo = lo.min(g);
                hi = hi.max(g);
            }
        }
        if lo < PERMITTIVITY_FLOOR {
            return Err(PhysicsError::Invalid(format!(
                "permittivity would drop to {lo:.4} on the clamp range; reduce the contrast between eps_a, eps_b and eps_s"
            )));
        }
        let mut out = Self { eps_a, eps_b, eps_s, cutoff_radius, bounds: (lo, hi), grad_sup: 0.0 };
        out.grad_sup = out.sample_grad_sup();
        Ok(out)
    }

    pub fn constant(eps: f64) -> Result<Self, PhysicsError> {
        Self::new(eps, eps, eps, 2.0)
    }

    /// `(eps_a, eps_b, eps_s)`
    pub fn values(&self) -> (f64, f64, f64) {
        (self.eps_a, self.eps_b, self.eps_s)
    }

    pub fn cutoff_radius(&self) -> f64 {
        self.cutoff_radius
    }

    /// `(eps_*, eps^*)`
    pub fn bounds(&self) -> (f64, f64) {
        self.bounds
    }

    /// Sampled `sup |grad eps|`.
    pub fn grad_sup(&self) -> f64 {
        self.grad_sup
    }

    pub fn is_constant(&self) -> bool {
        self.eps_a == self.eps_s && self.eps_b == self.eps_s
    }

    fn sample_grad_sup(&self) -> f64 {
        let n = 400;
        let r = self.cutoff_radius;
        let mut sup: f64 = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let s1 = -r + 2.0 * r * i as f64 / n as f64;
                let s2 = -r + 2.0 * r * j as f64 / n as f64;
                let g = self.grad(s1, s2);
                sup = sup.max(g[0].hypot(g[1]));
            }
        }
        sup
    }

    #[inline]
    fn inner_radius(&self) -> f64 {
        0.75 * self.cutoff_radius
    }

    /// Radial cutoff and its first two derivatives.
    #[inline]
    fn chi(&self, r: f64) -> [f64; 3] {
        let r0 = self.inner_radius();
        if r <= r0 {
            return [1.0, 0.0, 0.0];
        }
        if r >= self.cutoff_radius {
            return [0.0, 0.0, 0.0];
        }
        let w = self.cutoff_radius - r0;
        let u = (r - r0) / w;
        let u2 = u * u;
        [
            1.0 - u2 * u * (10.0 - 15.0 * u + 6.0 * u2),
            -30.0 * u2 * (1.0 - u) * (1.0 - u) / w,
            -60.0 * u * (1.0 - u) * (1.0 - 2.0 * u) / (w * w),
        ]
    }

    /// Value, gradient and Hessian in one pass.
    #[inline]
    pub fn eval(&self, s1: f64, s2: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
        let [a, da, dda] = clamp_sigma(s1);
        let [b, db, ddb] = clamp_sigma(s2);
        let ka = self.eps_a - self.eps_s;
        let kb = self.eps_b - self.eps_s;
        let g = ka * a + kb * b;
        let dg = [ka * da, kb * db];
        let hg = [[ka * dda, 0.0], [0.0, kb * ddb]];
        let r = s1.hypot(s2);
        if r <= self.inner_radius() {
            return (self.eps_s + g, dg, hg);
        }
        if r >= self.cutoff_radius {
            return (self.eps_s, [0.0; 2], [[0.0; 2]; 2]);
        }
        let [c, dc, ddc] = self.chi(r);
        let n = [s1 / r, s2 / r];
        let mut grad = [0.0; 2];
        let mut hess = [[0.0; 2]; 2];
        for i in 0..2 {
            grad[i] = dc * n[i] * g + c * dg[i];
            for j in 0..2 {
                let delta_ij = if i == j { 1.0 } else { 0.0 };
                hess[i][j] = g * (ddc * n[i] * n[j] + dc / r * (delta_ij - n[i] * n[j]))
                    + dc * (n[i] * dg[j] + dg[i] * n[j])
                    + c * hg[i][j];
            }
        }
        (self.eps_s + c * g, grad, hess)
    }

    #[inline]
    pub fn value(&self, s1: f64, s2: f64) -> f64 {
        self.eval(s1, s2).0
    }

    #[inline]
    pub fn grad(&self, s1: f64, s2: f64) -> [f64; 2] {
        self.eval(s1, s2).1
    }

    #[inline]
    pub fn hess(&self, s1: f64, s2: f64) -> [[f64; 2]; 2] {
        self.eval(s1, s2).2
    }
}

/// Mobility matrix `M(s)` acting on composition triples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MobilitySpec {
    /// `M = I - xi xi^T / 3`
    ConstantProjector,
    ConstantMatrix(Mat3),
    /// `M(s) = P diag(1 + kappa tanh s_k) P` with `0 <= kappa < 1`.
    StateDependent {
        kappa: f64,
    },
}

impl Default for MobilitySpec {
    fn default() -> Self {
        MobilitySpec::ConstantProjector
    }
}

const TANGENT_BASIS: [Vec3; 2] = [
    [std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2, 0.0],
    [0.408_248_290_463_863, 0.408_248_290_463_863, -0.816_496_580_927_726],
];

impl MobilitySpec {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        match self {
            MobilitySpec::ConstantProjector => Ok(()),
            MobilitySpec::ConstantMatrix(m) => {
                if m.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(PhysicsError::Invalid("mobility matrix has non-finite entries".into()));
                }
                if !is_symmetric(m, 1e-12) {
                    return Err(PhysicsError::Invalid("mobility matrix must be symmetric".into()));
                }
                let k = mat_vec(m, &[1.0, 1.0, 1.0]);
                if k.iter().any(|v| v.abs() > 1e-12) {
                    return Err(PhysicsError::Invalid("mobility matrix rows must sum to zero".into()));
                }
                let (lmin, _) = tangent_eigenvalues(m);
                if !(lmin > 0.0) {
                    return Err(PhysicsError::Invalid(format!(
                        "mobility matrix must be positive definite on tangent vectors (smallest eigenvalue {lmin:.3e})"
                    )));
                }
                Ok(())
            }
            MobilitySpec::StateDependent { kappa } => {
                if !(kappa.is_finite() && *kappa >= 0.0 && *kappa < 1.0) {
                    return Err(PhysicsError::Invalid(format!("mobility kappa must lie in [0, 1), got {kappa}")));
                }
                Ok(())
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, MobilitySpec::StateDependent { kappa } if *kappa != 0.0)
    }

    #[inline]
    pub fn matrix(&self, s: Vec3) -> Mat3 {
        match self {
            MobilitySpec::ConstantProjector => projector_matrix(),
            MobilitySpec::ConstantMatrix(m) => *m,
            MobilitySpec::StateDependent { kappa } => {
                let d = [1.0 + kappa * s[0].tanh(), 1.0 + kappa * s[1].tanh(), 1.0 + kappa * s[2].tanh()];
                let p = projector_matrix();
                let mut out = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        out[i][j] = (0..3).map(|k| p[i][k] * d[k] * p[k][j]).sum();
                    }
                }
                out
            }
        }
    }

    /// Uniform coercivity constant on tangent vectors.
    pub fn coercivity(&self) -> f64 {
        match self {
            MobilitySpec::ConstantProjector => 1.0,
            MobilitySpec::ConstantMatrix(m) => tangent_eigenvalues(m).0,
            MobilitySpec::StateDependent { kappa } => 1.0 - kappa,
        }
    }

    /// Lipschitz constant of `s -> M(s)` in the spectral norm.
    pub fn lipschitz(&self) -> f64 {
        match self {
            MobilitySpec::StateDependent { kappa } => *kappa,
            _ => 0.0,
        }
    }

    /// Bound on the entries of `M`.
    pub fn entry_bound(&self) -> f64 {
        match self {
            MobilitySpec::ConstantProjector => 2.0 / 3.0,
            MobilitySpec::ConstantMatrix(m) => m.iter().flatten().fold(0.0, |a: f64, v| a.max(v.abs())),
            MobilitySpec::StateDependent { kappa } => 1.0 + kappa,
        }
    }
}

/// Eigenvalues of `M` restricted to the plane `s1 + s2 + s3 = 0`, ascending.
pub fn tangent_eigenvalues(m: &Mat3) -> (f64, f64) {
    let mut r = [[0.0; 2]; 2];
    for a in 0..2 {
        let mv = mat_vec(m, &TANGENT_BASIS[a]);
        for b in 0..2 {
            r[b][a] = dot3(&TANGENT_BASIS[b], &mv);
        }
    }
    let tr = r[0][0] + r[1][1];
    let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}

/// `I - xi xi^T / 3`
pub fn projector_matrix() -> Mat3 {
    let a = 2.0 / 3.0;
    let b = -1.0 / 3.0;
    [[a, b, b], [b, a, b], [b, b, a]]
}

/// Projection onto triples summing to zero.
#[inline]
pub fn project_triple(v: Vec3) -> Vec3 {
    let m = (v[0] + v[1] + v[2]) / 3.0;
    [v[0] - m, v[1] - m, v[2] - m]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub gamma: Vec3,
    pub theta: Vec3,
    /// `[[a_AA, a_AB], [a_BA, a_BB]]`
    pub alpha: [[f64; 2]; 2],
    pub delta: f64,
    pub mobility: MobilitySpec,
    pub permittivity: Permittivity,
    pub interaction: Interaction,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gamma: [1e-3; 3],
            theta: [1.0; 3],
            alpha: [[100.0, 0.0], [0.0, 100.0]],
            delta: 1e-4,
            mobility: MobilitySpec::ConstantProjector,
            permittivity: Permittivity::new(3.0, 1.0, 2.0, 2.0).expect("default permittivity"),
            interaction: Interaction::default(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        for (name, v) in [("gamma", &self.gamma), ("theta", &self.theta)] {
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(PhysicsError::Invalid(format!("{name} entries must be positive, got {x}")));
            }
        }
        if self.alpha.iter().flatten().any(|v| !v.is_finite()) {
            return Err(PhysicsError::Invalid("alpha entries must be finite".into()));
        }
        if self.alpha[0][1] != self.alpha[1][0] {
            return Err(PhysicsError::Invalid("alpha must be symmetric".into()));
        }
        RegularizedPsi::new(self.delta)?;
        self.mobility.validate()?;
        Interaction::new(self.interaction.q)?;
        Ok(())
    }

    pub fn potential(&self) -> Result<RegularizedPsi, PhysicsError> {
        RegularizedPsi::new(self.delta)
    }

    /// Regularized free-energy density.
    pub fn f_delta(&self, s: Vec3) -> Result<f64, PhysicsError> {
        let p = self.potential()?;
        Ok(self.f_delta_with(&p, s))
    }

    pub fn grad_f_delta(&self, s: Vec3) -> Result<Vec3, PhysicsError> {
        let p = self.potential()?;
        Ok(self.grad_f_delta_with(&p, s))
    }

    #[inline]
    pub(crate) fn f_delta_with(&self, p: &RegularizedPsi, s: Vec3) -> f64 {
        let mut v = self.interaction.value(s);
        for i in 0..3 {
            v += self.theta[i] * p.value(s[i]) + self.delta * s[i].powi(4);
        }
        v
    }

    #[inline]
    pub(crate) fn grad_f_delta_with(&self, p: &RegularizedPsi, s: Vec3) -> Vec3 {
        let mut g = self.interaction.grad(s);
        for i in 0..3 {
            g[i] += self.theta[i] * p.d1(s[i]) + 4.0 * self.delta * s[i].powi(3);
        }
        g
    }

    /// `C_1` in `f_delta(s) >= delta/2 |s|^4 - C_1`.
    pub fn lower_bound_constant(&self) -> Result<f64, PhysicsError> {
        let p = self.potential()?;
        let theta_max = self.theta.iter().copied().fold(0.0, f64::max);
        let ci = self.interaction.growth_constant();
        Ok(3.0 * theta_max * p.quartic_floor_constant() + ci + 2.0 * ci * ci / self.delta)
    }
}

#[inline]
pub(crate) fn mat_vec(m: &Mat3, v: &Vec3) -> Vec3 {
    [dot3(&m[0], v), dot3(&m[1], v), dot3(&m[2], v)]
}

#[inline]
pub(crate) fn dot3(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn is_symmetric(m: &Mat3, tol: f64) -> bool {
    (0..3).all(|i| (0..3).all(|j| (m[i][j] - m[j][i]).abs() <= tol * (1.0 + m[i][j].abs())))
}

/// Largest absolute eigenvalue of a symmetric 3x3 matrix.
fn spectral_radius_sym(m: &Mat3) -> f64 {
    // Closed-form eigenvalues of a symmetric 3x3 matrix.
    let p1 = m[0][1].powi(2) + m[0][2].powi(2) + m[1][2].powi(2);
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        return m[0][0].abs().max(m[1][1].abs()).max(m[2][2].abs());
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1]) - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
        + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
    let phi = (det_b / 2.0).clamp(-1.0, 1.0).acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    e1.abs().max(e2.abs()).max(e3.abs())
}
