//! Dynamic state and force inputs.

use std::sync::Arc;

use nalgebra::DVector;

use crate::real::Real;
use crate::topology::AssembledModel;

/// Coordinates, velocities and accumulated non-conservative work at a time
/// instant. The work term is carried as an extra state variable so the
/// energy balance `E(t) = E(t0) + W_f(t)` can be enforced by the corrector.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemState<T: Real> {
    pub t: T,
    pub q: DVector<T>,
    pub qdot: DVector<T>,
    pub w_f: T,
}

impl<T: Real> SystemState<T> {
    /// State at rest in the model's initial configuration.
    pub fn at_rest(model: &AssembledModel<T>) -> Self {
        Self {
            t: T::zero(),
            q: model.q0.clone(),
            qdot: DVector::zeros(model.dim()),
            w_f: T::zero(),
        }
    }

    pub fn new(t: T, q: DVector<T>, qdot: DVector<T>, w_f: T) -> Self {
        assert_eq!(q.len(), qdot.len(), "q and qdot dimensions differ");
        Self { t, q, qdot, w_f }
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.w_f.is_finite()
            && self.q.iter().all(|v| v.is_finite())
            && self.qdot.iter().all(|v| v.is_finite())
    }
}

/// External nodal force, evaluated at stage times during integration.
#[derive(Clone)]
pub enum ExternalForce<T: Real> {
    None,
    Constant(DVector<T>),
    TimeVarying(Arc<dyn Fn(T) -> DVector<T> + Send + Sync>),
}

impl<T: Real> ExternalForce<T> {
    pub fn eval(&self, t: T, dim: usize) -> DVector<T> {
        match self {
            ExternalForce::None => DVector::zeros(dim),
            ExternalForce::Constant(f) => f.clone(),
            ExternalForce::TimeVarying(f) => f(t),
        }
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ExternalForce::None)
    }
}

impl<T: Real> std::fmt::Debug for ExternalForce<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExternalForce::None => write!(f, "ExternalForce::None"),
            ExternalForce::Constant(v) => write!(f, "ExternalForce::Constant(dim {})", v.len()),
            ExternalForce::TimeVarying(_) => write!(f, "ExternalForce::TimeVarying(..)"),
        }
    }
}

/// String force densities and external forces fed to a derivative
/// evaluation. By default the force densities come from the elastic law
/// (with the slack clamp) at every evaluation; a fixed override treats them
/// as a control input instead.
#[derive(Debug, Clone)]
pub struct ForceInputs<T: Real> {
    /// `None`: evaluate sigma from the string spring law each call.
    /// `Some`: hold these force densities fixed (control input); entries
    /// must be non-negative, strings cannot push.
    pub sigma_override: Option<DVector<T>>,
    pub f_ext: ExternalForce<T>,
}

impl<T: Real> ForceInputs<T> {
    pub fn free() -> Self {
        Self {
            sigma_override: None,
            f_ext: ExternalForce::None,
        }
    }

    pub fn with_force(f_ext: ExternalForce<T>) -> Self {
        Self {
            sigma_override: None,
            f_ext,
        }
    }
}

impl<T: Real> Default for ForceInputs<T> {
    fn default() -> Self {
        Self::free()
    }
}
