//! Multibody dynamics for tensegrity structures in Cartesian coordinates.
//!
//! The crate assembles Lagrangian equations of motion directly from bar and
//! string connectivity, integrates the resulting index-1 DAE with an
//! embedded Dormand–Prince 5(4) pair (or an implicit trapezoidal rule for
//! stiff elastic bars), and removes holonomic-constraint and energy drift
//! after every accepted step with a minimum-norm linear correction. Analytic
//! linearization about an operating point and an axially compressible bar
//! formulation are included.
//!
//! All numerics are generic over the scalar type through [`real::Real`]
//! (`f32` or `f64`); the concrete aliases below fix `f64`, the precision at
//! which the shipped tolerances are meaningful.

pub mod builtins;
pub mod compressible;
pub mod correction;
pub mod fd;
pub mod integrator;
pub mod linearization;
pub mod modelfile;
pub mod real;
pub mod rigid;
pub mod state;
pub mod topology;

pub use real::Real;
pub use rigid::DynamicsError;
pub use state::{ExternalForce, ForceInputs, SystemState};
pub use topology::{build_structure, member_lengths, AssembledModel, TensegrityStructure};

/// Double-precision aliases for the main types.
pub type TensegrityStructure64 = topology::TensegrityStructure<f64>;
pub type AssembledModel64 = topology::AssembledModel<f64>;
pub type SystemState64 = state::SystemState<f64>;
pub type ForceInputs64 = state::ForceInputs<f64>;
pub type Trajectory64 = integrator::Trajectory<f64>;
pub type LinearModel64 = linearization::LinearModel<f64>;
pub type CorrectionReport64 = correction::CorrectionReport<f64>;
