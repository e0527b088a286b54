//! Pilot-wave trajectories of a perturbed two-dimensional harmonic oscillator.
//!
//! The crate evaluates the guidance field of a ground state with small
//! excited-state admixtures, integrates trajectories over thousands of
//! periods, and measures how much of the Born density they explore:
//! bounding-box growth, occupancy grids, neighbor cohorts, angular drift,
//! and the coarse-grained H-function of particle ensembles.

pub mod diagnostics;
pub mod ensemble;
pub mod experiments;
pub mod fmt;
pub mod integrator;
pub mod io;
pub mod par;
pub mod plot;
pub mod wavefunction;

pub use integrator::{
    advance, integrate_trajectory, verify_convergence, ConvergenceReport, IntegrateError, IntegratorConfig,
    Sample, Trajectory,
};
pub use wavefunction::{Mode, WaveFunctionSpec, PERIOD};
