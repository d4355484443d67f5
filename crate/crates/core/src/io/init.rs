//! Seeded initial conditions.

use crate::error::SolverError;
use crate::grid::{GridSpec, ScalarField};
use crate::io::config::InitialSpec;
use crate::io::snapshot::{read_snapshot, SnapshotError};
use crate::operators::PhaseState;
use crate::physics::Vec3;

/// Multiplier and increment of the 64-bit linear congruential generator.
pub const LCG_A: u64 = 6364136223846793005;
pub const LCG_C: u64 = 1442695040888963407;

/// `x <- a x + c mod 2^64`; samples are the top 53 bits mapped to [-1, 1).
#[derive(Debug, Clone)]
pub struct Lcg {
    state: u64,
}

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_mul(LCG_A).wrapping_add(LCG_C);
        self.state
    }

    pub fn next_symmetric(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 - 1.0
    }
}

#[derive(Debug, thiserror::Error)]
pub enum InitError {
    #[error("initial state leaves [{margin}, {}] (component {component} reaches {value}); lower the amplitude or move the mean inward", 1.0 - margin)]
    OutOfRange { component: usize, value: f64, margin: f64 },
    #[error("snapshot {nx}x{ny} does not match the configured {gx}x{gy} grid")]
    GridMismatch { nx: usize, ny: usize, gx: usize, gy: usize },
    #[error("snapshot lacks field '{0}'")]
    MissingField(String),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error(transparent)]
    State(#[from] SolverError),
}

/// Uniform state at `mean` plus zero-mean noise of the given amplitude in
/// `c_A` and `c_B`; `c_S` closes the sum.
pub fn noise_state(
    grid: GridSpec,
    mean: Vec3,
    amplitude: f64,
    seed: u64,
    margin: f64,
) -> Result<PhaseState, InitError> {
    let n = grid.cells();
    let mut rng = Lcg::new(seed);
    let mut comps = [0, 1].map(|i| {
        let u: Vec<f64> = (0..n).map(|_| rng.next_symmetric()).collect();
        let ubar = u.iter().sum::<f64>() / n as f64;
        ScalarField::from_vec_unchecked(grid, u.iter().map(|v| mean[i] + amplitude * (v - ubar)).collect())
    });
    for (i, c) in comps.iter_mut().enumerate() {
        let shift = c.mean() - mean[i];
        c.shift(-shift);
    }
    let cs = comps[0].zip_map(&comps[1], |a, b| 1.0 - a - b);
    let [ca, cb] = comps;
    let state = PhaseState::new([ca, cb, cs], mean)?;
    for i in 0..3 {
        let f = state.component(i);
        for value in [f.min(), f.max()] {
            if value < margin || value > 1.0 - margin {
                return Err(InitError::OutOfRange { component: i, value, margin });
            }
        }
    }
    Ok(state)
}

/// Builds the initial state described by `spec` on `grid`.
pub fn init_state(grid: GridSpec, spec: &InitialSpec) -> Result<PhaseState, InitError> {
    match spec {
        InitialSpec::UniformPlusNoise { mean, amplitude, seed, margin } => {
            noise_state(grid, *mean, *amplitude, *seed, *margin)
        }
        InitialSpec::FromFile { path } => {
            let snap = read_snapshot(path)?;
            if (snap.nx, snap.ny) != (grid.nx, grid.ny) {
                return Err(InitError::GridMismatch { nx: snap.nx, ny: snap.ny, gx: grid.nx, gy: grid.ny });
            }
            let field = |name: &str| {
                snap.field(name)
                    .map(|v| ScalarField::from_values(grid, v.to_vec()))
                    .ok_or_else(|| InitError::MissingField(name.into()))
            };
            let ca = field("c_a")?.map_err(SolverError::from)?;
            let cb = field("c_b")?.map_err(SolverError::from)?;
            Ok(PhaseState::from_ab(ca, cb)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_amplitude_is_exactly_uniform() {
        let g = GridSpec::unit_square(8).unwrap();
        let c = noise_state(g, [0.3, 0.3, 0.4], 0.0, 5, 1e-3).unwrap();
        for i in 0..3 {
            assert!(c.component(i).values().iter().all(|&v| v == c.component(i).values()[0]));
            assert!((c.component(i).values()[0] - [0.3, 0.3, 0.4][i]).abs() < 1e-15);
        }
    }

    #[test]
    fn seeded_noise_is_reproducible_and_centered() {
        let g = GridSpec::new(12, 9, 1.0, 0.75).unwrap();
        let a = noise_state(g, [0.3, 0.3, 0.4], 0.05, 42, 1e-3).unwrap();
        let b = noise_state(g, [0.3, 0.3, 0.4], 0.05, 42, 1e-3).unwrap();
        let c = noise_state(g, [0.3, 0.3, 0.4], 0.05, 43, 1e-3).unwrap();
        for i in 0..3 {
            let (va, vb) = (a.component(i).values(), b.component(i).values());
            assert!(va.iter().zip(vb).all(|(x, y)| x.to_bits() == y.to_bits()));
            assert!((a.component(i).mean() - [0.3, 0.3, 0.4][i]).abs() < 1e-14);
        }
        assert_ne!(a.component(0).values(), c.component(0).values());
        assert!(a.max_sum_deviation() < 1e-15);
        assert!(a.component(0).max() - a.component(0).min() > 0.05);
    }

    #[test]
    fn generator_matches_reference_recurrence() {
        let mut r = Lcg::new(1);
        assert_eq!(r.next_u64(), LCG_A.wrapping_add(LCG_C));
        let mut r = Lcg::new(0);
        assert_eq!(r.next_u64(), LCG_C);
        let mut r = Lcg::new(9);
        for _ in 0..1000 {
            let x = r.next_symmetric();
            assert!((-1.0..1.0).contains(&x));
        }
    }

    #[test]
    fn out_of_range_noise_is_rejected() {
        let g = GridSpec::unit_square(8).unwrap();
        let e = noise_state(g, [0.02, 0.48, 0.5], 0.05, 1, 1e-3).unwrap_err();
        assert!(matches!(e, InitError::OutOfRange { component: 0, .. }), "{e}");
    }
}
