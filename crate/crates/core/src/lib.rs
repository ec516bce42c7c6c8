//! Nonautonomous lattice dynamical systems
//!
//! ```text
//! u_i' = ν (u_{i-1} - 2u_i + u_{i+1}) - λ u_i + F(u_i) + f_i(t),   i ∈ ℤ
//! ```
//!
//! with a monotone nonlinearity `F` and almost periodic forcing `f`. The crate
//! integrates the cocycle on a truncated lattice, computes the unique almost
//! periodic solution by pull-back, and provides the checks used to corroborate
//! contraction, dissipativity and almost periodicity numerically.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, configuration
//! and the command-line driver live in the `aplat` companion crate.
//!
//! # Modules
//! - [`lattice`]: truncated `ℓ₂` windows and the difference operators.
//! - [`nonlinearity`]: monotone scalar laws and their Nemytskii lift.
//! - [`forcing`]: quasi-periodic forcing with certified tail bounds.
//! - [`integrator`]: Dormand–Prince integration of the cocycle.
//! - [`pullback`]: invariant section and almost periodic trajectory.
//! - [`analysis`]: decay fits, absorbing balls, almost-period scans.
#![no_std]
#![deny(unsafe_code)]
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

mod math;

pub mod analysis;
pub mod forcing;
pub mod integrator;
pub mod lattice;
pub mod nonlinearity;
pub mod pullback;
pub mod rng;

pub use analysis::{AbsorbingReport, AlmostPeriodReport, AnalysisError, SingletonReport, TauDefect};
pub use forcing::{AmplitudeRule, ForcingError, ForcingModel, ForcingTerm, FrequencyRule, QuasiPeriodicForcing};
pub use integrator::{
    IntegrationError, IntegratorConfig, LatticeSystem, Sampling, SemiflowParams, TrajectorySample,
};
pub use lattice::{LatticeError, LatticeWindow};
pub use nonlinearity::{MonotoneScalarFunction, NonlinearityError};
pub use pullback::{ApTrajectory, PullbackResult};
pub use rng::SeededRng;
