pub mod diagnostics;
pub mod electrostatics;
pub mod energy;
pub mod error;
pub mod grid;
pub mod io;
pub mod operators;
pub mod physics;
pub mod solver;
pub mod stepper;
