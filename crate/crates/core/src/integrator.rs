//! Time integration of the augmented state `(q, qdot, W_f)`.
//!
//! The default method is the embedded Dormand–Prince 5(4) pair with the
//! FSAL optimization and a PI step-size controller. For stiff systems
//! (compressible bars with large axial stiffness) a fixed-step implicit
//! trapezoidal rule with functional iteration is provided.
//!
//! After every accepted step the minimum-norm correction is applied to the
//! solution point (never to internal stages); the trajectory records
//! post-correction states and residual series.

use nalgebra::DVector;
use thiserror::Error;

use crate::correction::{
    self, ConstraintSet, CorrectionReport, CorrectionSettings, EnergyModel, RigidEnergy,
};
use crate::real::{lit, Real};
use crate::rigid::{self, DynamicsError};
use crate::state::{ForceInputs, SystemState};
use crate::topology::AssembledModel;

/// Integration scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Adaptive explicit Dormand–Prince 5(4).
    Dp54,
    /// Fixed-step implicit trapezoidal rule (A-stable), for stiff cases.
    ImplicitTrapezoidal,
}

/// Integrator configuration.
#[derive(Debug, Clone)]
pub struct IntegratorSettings<T: Real> {
    pub rel_tol: T,
    pub abs_tol: T,
    pub h_init: T,
    pub h_min: T,
    pub h_max: T,
    pub method: Method,
    /// Step size for the implicit trapezoidal method.
    pub fixed_step: T,
    pub correction: CorrectionSettings<T>,
    /// Record every n-th accepted step (summary maxima still cover all).
    pub record_stride: usize,
    /// Times the integrator must land on exactly (sorted ascending).
    pub forced_times: Vec<T>,
}

impl<T: Real> Default for IntegratorSettings<T> {
    fn default() -> Self {
        Self {
            rel_tol: lit(1e-10),
            abs_tol: lit(1e-10),
            h_init: lit(1e-3),
            h_min: lit(1e-13),
            h_max: lit(0.1),
            method: Method::Dp54,
            fixed_step: lit(1e-5),
            correction: CorrectionSettings::default(),
            record_stride: 1,
            forced_times: Vec::new(),
        }
    }
}

impl<T: Real> IntegratorSettings<T> {
    fn validate(&self) -> Result<(), IntegrationError<T>> {
        if !(self.rel_tol > T::zero()) || !(self.abs_tol > T::zero()) {
            return Err(IntegrationError::InvalidSettings(
                "tolerances must be positive".into(),
            ));
        }
        if !(self.h_min > T::zero()) || self.h_min > self.h_max {
            return Err(IntegrationError::InvalidSettings(
                "need 0 < h_min <= h_max".into(),
            ));
        }
        if self.record_stride == 0 {
            return Err(IntegrationError::InvalidSettings(
                "record_stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum IntegrationError<T: Real> {
    #[error("invalid integrator settings: {0}")]
    InvalidSettings(String),
    #[error("t_end must not precede the state time")]
    BadTimeSpan,
    #[error("step size underflow at t = {t}: h = {h:e} below h_min with failing error test")]
    StepSizeUnderflow { t: T, h: T },
    #[error(
        "correction did not converge at t = {t}: constraint norm {constraint_norm:e}, \
         energy residual {energy_residual:e} after {iterations} iterations"
    )]
    CorrectionFailed {
        t: T,
        constraint_norm: T,
        energy_residual: T,
        iterations: usize,
    },
    #[error("state became non-finite at t = {t}")]
    NonFiniteState { t: T },
    #[error("implicit solve did not converge at t = {t} (step {h:e})")]
    ImplicitSolveFailed { t: T, h: T },
    #[error("dynamics failure at t = {t}: {source}")]
    Dynamics { t: T, source: DynamicsError },
}

/// A dynamical system the integrator can drive: second-order dynamics in
/// `q` plus the work state, with the constraint set and energy model the
/// per-step correction needs.
pub trait OdeSystem<T: Real> {
    fn model(&self) -> &AssembledModel<T>;
    fn constraint_set(&self) -> ConstraintSet;
    fn energy_model(&self) -> &dyn EnergyModel<T>;
    /// Acceleration and work rate at `(t, q, qdot)`.
    fn accel(
        &self,
        t: T,
        q: &DVector<T>,
        qdot: &DVector<T>,
    ) -> Result<(DVector<T>, T), DynamicsError>;
}

/// Rigid-bar system: bar lengths are constraints, force densities follow
/// the elastic law unless overridden.
pub struct RigidSystem<'a, T: Real> {
    pub model: &'a AssembledModel<T>,
    pub inputs: &'a ForceInputs<T>,
    energy: RigidEnergy<'a, T>,
}

impl<'a, T: Real> RigidSystem<'a, T> {
    pub fn new(model: &'a AssembledModel<T>, inputs: &'a ForceInputs<T>) -> Self {
        Self {
            model,
            inputs,
            energy: RigidEnergy { model },
        }
    }
}

impl<T: Real> OdeSystem<T> for RigidSystem<'_, T> {
    fn model(&self) -> &AssembledModel<T> {
        self.model
    }

    fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet::Full
    }

    fn energy_model(&self) -> &dyn EnergyModel<T> {
        &self.energy
    }

    fn accel(
        &self,
        t: T,
        q: &DVector<T>,
        qdot: &DVector<T>,
    ) -> Result<(DVector<T>, T), DynamicsError> {
        let sigma = match &self.inputs.sigma_override {
            Some(s) => s.clone(),
            None => rigid::string_force_densities(self.model, q)?,
        };
        let mut f_nc = rigid::damper_forces(self.model, q, qdot)?;
        if !self.inputs.f_ext.is_none() {
            f_nc += self.inputs.f_ext.eval(t, self.model.dim());
        }
        let res = rigid::eom_rhs_with_forces(self.model, q, qdot, &sigma, &f_nc)?;
        let wdot = f_nc.dot(qdot);
        Ok((res.qddot, wdot))
    }
}

/// Time derivative of `(q, qdot, W_f)` for the rigid case; the work rate
/// uses the full non-conservative force including dampers.
pub fn derivative<T: Real>(
    model: &AssembledModel<T>,
    state: &SystemState<T>,
    inputs: &ForceInputs<T>,
) -> Result<(DVector<T>, DVector<T>, T), DynamicsError> {
    let system = RigidSystem::new(model, inputs);
    let (qddot, wdot) = system.accel(state.t, &state.q, &state.qdot)?;
    Ok((state.qdot.clone(), qddot, wdot))
}

/// One recorded point of a trajectory: the (post-correction) state, the
/// correction report and the residuals evaluated at that state.
#[derive(Debug, Clone)]
pub struct TrajectoryPoint<T: Real> {
    pub state: SystemState<T>,
    pub report: CorrectionReport<T>,
    pub constraint_norm: T,
    pub energy_residual: T,
    /// Rigid case: `| |b_k|^2 - l_bk^2 |` per bar. Empty for systems whose
    /// bars are not constrained.
    pub bar_residuals: Vec<T>,
}

/// Recorded simulation output plus summary maxima taken over every
/// accepted step (also the ones skipped by the record stride).
#[derive(Debug, Clone)]
pub struct Trajectory<T: Real> {
    pub points: Vec<TrajectoryPoint<T>>,
    /// Reference energy `E(q0, qdot0) - W_f(t0)` of the run.
    pub e_ref: T,
    pub max_constraint_norm: T,
    pub max_energy_residual: T,
    pub max_bar_residuals: Vec<T>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub derivative_evals: usize,
}

impl<T: Real> Trajectory<T> {
    pub fn last_state(&self) -> &SystemState<T> {
        &self.points.last().expect("trajectory has points").state
    }

    /// State at a forced/recorded time, if present.
    pub fn state_at(&self, t: T, tol: T) -> Option<&SystemState<T>> {
        self.points
            .iter()
            .find(|p| (p.state.t - t).abs() <= tol)
            .map(|p| &p.state)
    }
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const C: [f64; 6] = [1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
/// Error coefficients (5th order minus embedded 4th order), k7 included.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Result of a single raw Dormand-Prince step.
pub struct Dp54Step<T: Real> {
    pub y_new: DVector<T>,
    /// Scaled RMS error estimate of the embedded pair.
    pub error: T,
    /// Derivative at `(t + h, y_new)` (FSAL stage).
    pub k_last: DVector<T>,
}

/// One raw DP54 step from `(t, y)` with derivative `k1 = f(t, y)` already
/// evaluated. Exposed for order studies and reuse by `simulate`.
pub fn dp54_step<T: Real, E2, F>(
    f: &mut F,
    t: T,
    y: &DVector<T>,
    k1: &DVector<T>,
    h: T,
    rel_tol: T,
    abs_tol: T,
) -> Result<Dp54Step<T>, E2>
where
    F: FnMut(T, &DVector<T>) -> Result<DVector<T>, E2>,
{
    let n = y.len();
    let mut k: Vec<DVector<T>> = Vec::with_capacity(7);
    k.push(k1.clone());
    for stage in 0..6 {
        let mut yi = y.clone();
        for (j, kj) in k.iter().enumerate() {
            let a = lit::<T>(A[stage][j]);
            if a != T::zero() {
                yi.axpy(h * a, kj, T::one());
            }
        }
        let ti = t + lit::<T>(C[stage]) * h;
        k.push(f(ti, &yi)?);
    }
    // Stage 7 input is the 5th-order solution itself (row 6 of A = b).
    let y_new = {
        let mut y5 = y.clone();
        for (j, kj) in k.iter().enumerate().take(6) {
            let a = lit::<T>(A[5][j]);
            if a != T::zero() {
                y5.axpy(h * a, kj, T::one());
            }
        }
        y5
    };
    let k_last = k.pop().expect("seven stages");
    let k6 = k.pop().expect("six stages");
    k.push(k6);
    k.push(k_last.clone());

    // Weighted RMS of the embedded error, scale from max(|y|, |y_new|).
    let mut err_acc = T::zero();
    for i in 0..n {
        let mut e_i = T::zero();
        for (j, kj) in k.iter().enumerate() {
            let c = lit::<T>(E[j]);
            if c != T::zero() {
                e_i += c * kj[i];
            }
        }
        e_i *= h;
        let scale = abs_tol + rel_tol * y[i].abs().max(y_new[i].abs());
        err_acc += (e_i / scale) * (e_i / scale);
    }
    let error = (err_acc / T::from_usize(n).unwrap()).sqrt();

    Ok(Dp54Step {
        y_new,
        error,
        k_last,
    })
}

struct Recorder<T: Real> {
    points: Vec<TrajectoryPoint<T>>,
    max_constraint_norm: T,
    max_energy_residual: T,
    max_bar_residuals: Vec<T>,
    stride: usize,
    since_recorded: usize,
}

impl<T: Real> Recorder<T> {
    fn new(n_bars: usize, stride: usize) -> Self {
        Self {
            points: Vec::new(),
            max_constraint_norm: T::zero(),
            max_energy_residual: T::zero(),
            max_bar_residuals: vec![T::zero(); n_bars],
            stride,
            since_recorded: 0,
        }
    }

    fn observe<S: OdeSystem<T>>(
        &mut self,
        system: &S,
        state: &SystemState<T>,
        report: CorrectionReport<T>,
        e_ref: T,
        force_record: bool,
    ) -> Result<(), DynamicsError> {
        let model = system.model();
        let set = system.constraint_set();
        let constraint_norm = set.residual(model, &state.q).norm();
        let energy = system.energy_model().energy(&state.q, &state.qdot)?;
        let energy_residual = energy - e_ref - state.w_f;

        let bar_residuals: Vec<T> = if set == ConstraintSet::Full {
            (0..model.num_bars())
                .map(|k| {
                    let l0 = model.bar_rest_lengths[k];
                    (model.bar_vector(&state.q, k).norm_squared() - l0 * l0).abs()
                })
                .collect()
        } else {
            Vec::new()
        };

        self.max_constraint_norm = self.max_constraint_norm.max(constraint_norm);
        self.max_energy_residual = self.max_energy_residual.max(energy_residual.abs());
        for (m, r) in self.max_bar_residuals.iter_mut().zip(&bar_residuals) {
            *m = (*m).max(*r);
        }

        self.since_recorded += 1;
        if force_record || self.since_recorded >= self.stride {
            self.points.push(TrajectoryPoint {
                state: state.clone(),
                report,
                constraint_norm,
                energy_residual,
                bar_residuals,
            });
            self.since_recorded = 0;
        }
        Ok(())
    }
}

/// Splits `(q, qdot, w)` out of the stacked integration vector.
fn unstack<T: Real>(dim: usize, y: &DVector<T>) -> (DVector<T>, DVector<T>, T) {
    (
        y.rows(0, dim).clone_owned(),
        y.rows(dim, dim).clone_owned(),
        y[2 * dim],
    )
}

fn stack<T: Real>(q: &DVector<T>, qdot: &DVector<T>, w: T) -> DVector<T> {
    let dim = q.len();
    let mut y = DVector::zeros(2 * dim + 1);
    y.rows_mut(0, dim).copy_from(q);
    y.rows_mut(dim, dim).copy_from(qdot);
    y[2 * dim] = w;
    y
}

/// A failed integration together with the trajectory up to the last good
/// state, so callers can dump it.
#[derive(Debug)]
pub struct SimulationFailure<T: Real> {
    pub error: IntegrationError<T>,
    pub partial: Trajectory<T>,
}

impl<T: Real> std::fmt::Display for SimulationFailure<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.error.fmt(f)
    }
}

impl<T: Real> std::error::Error for SimulationFailure<T> {}

/// Integrates the system from `state0` to `t_end`, applying the per-step
/// correction from `settings.correction`. The final time is hit exactly
/// (the last step is clipped), as is every entry of `forced_times`. On
/// failure the returned [`SimulationFailure`] carries the partial
/// trajectory up to the last good state.
pub fn simulate<T: Real, S: OdeSystem<T>>(
    system: &S,
    state0: &SystemState<T>,
    settings: &IntegratorSettings<T>,
    t_end: T,
) -> Result<Trajectory<T>, Box<SimulationFailure<T>>> {
    let empty_failure = |error: IntegrationError<T>| {
        Box::new(SimulationFailure {
            error,
            partial: Trajectory {
                points: Vec::new(),
                e_ref: T::zero(),
                max_constraint_norm: T::zero(),
                max_energy_residual: T::zero(),
                max_bar_residuals: Vec::new(),
                accepted_steps: 0,
                rejected_steps: 0,
                derivative_evals: 0,
            },
        })
    };
    settings.validate().map_err(&empty_failure)?;
    if t_end < state0.t {
        return Err(empty_failure(IntegrationError::BadTimeSpan));
    }
    let model = system.model();
    let dim = model.dim();
    assert_eq!(state0.dim(), dim, "state dimension mismatch");

    let dyn_err = |t: T| move |source: DynamicsError| IntegrationError::Dynamics { t, source };

    let e_ref = system
        .energy_model()
        .energy(&state0.q, &state0.qdot)
        .map_err(dyn_err(state0.t))
        .map_err(&empty_failure)?
        - state0.w_f;

    let mut recorder = Recorder::new(model.num_bars(), settings.record_stride);
    let init_norm = system.constraint_set().residual(model, &state0.q).norm();
    recorder
        .observe(
            system,
            state0,
            CorrectionReport::untouched(init_norm, T::zero()),
            e_ref,
            true,
        )
        .map_err(dyn_err(state0.t))
        .map_err(&empty_failure)?;

    let mut evals = 0usize;
    let mut accepted = 0usize;
    let mut rejected = 0usize;

    if t_end == state0.t {
        return Ok(Trajectory {
            points: recorder.points,
            e_ref,
            max_constraint_norm: recorder.max_constraint_norm,
            max_energy_residual: recorder.max_energy_residual,
            max_bar_residuals: recorder.max_bar_residuals,
            accepted_steps: 0,
            rejected_steps: 0,
            derivative_evals: 0,
        });
    }

    // Forced landing times, strictly inside (t0, t_end), ascending.
    let mut targets: Vec<T> = settings
        .forced_times
        .iter()
        .cloned()
        .filter(|&t| t > state0.t && t < t_end)
        .collect();
    targets.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    targets.dedup();
    targets.push(t_end);
    let mut target_idx = 0usize;

    let mut state = state0.clone();
    let mut y = stack(&state.q, &state.qdot, state.w_f);

    // Run the stepping loop through a closure so a failure still hands the
    // recorded trajectory back to the caller.
    let run_result: Result<(), IntegrationError<T>> = (|| {
        let mut f = |t: T, yv: &DVector<T>| -> Result<DVector<T>, DynamicsError> {
            let (q, qdot, _) = unstack(dim, yv);
            let (qddot, wdot) = system.accel(t, &q, &qdot)?;
            Ok(stack(&qdot, &qddot, wdot))
        };

        match settings.method {
            Method::Dp54 => {
                // PI controller constants following the classic dopri5 driver.
                let beta = lit::<T>(0.04);
                let expo1 = lit::<T>(0.2) - beta * lit::<T>(0.75);
                let safe = lit::<T>(0.9);
                let fac_min = lit::<T>(0.2);
                let fac_max = lit::<T>(10.0);
                let mut fac_old = lit::<T>(1e-4);

                let mut h = settings.h_init.min(settings.h_max).max(settings.h_min);
                let mut k1 = f(state.t, &y).map_err(dyn_err(state.t))?;
                evals += 1;

                while state.t < t_end {
                    let target = targets[target_idx];
                    let remaining = target - state.t;
                    let mut hitting_target = false;
                    if h >= remaining - remaining * lit::<T>(1e-12) {
                        h = remaining;
                        hitting_target = true;
                    }

                    let step = dp54_step(
                        &mut f,
                        state.t,
                        &y,
                        &k1,
                        h,
                        settings.rel_tol,
                        settings.abs_tol,
                    )
                    .map_err(dyn_err(state.t))?;
                    evals += 6;

                    let err = step.error;
                    if err <= T::one() {
                        accepted += 1;
                        let t_new = if hitting_target { target } else { state.t + h };
                        if hitting_target {
                            target_idx = (target_idx + 1).min(targets.len() - 1);
                        }
                        let (q, qdot, w) = unstack(dim, &step.y_new);
                        let mut new_state = SystemState::new(t_new, q, qdot, w);
                        if !new_state.is_finite() {
                            return Err(IntegrationError::NonFiniteState { t: t_new });
                        }

                        let report = if settings.correction.enabled() {
                            let (corrected, report) = correction::correct_state(
                                model,
                                system.constraint_set(),
                                system.energy_model(),
                                &new_state,
                                e_ref,
                                &settings.correction,
                            )
                            .map_err(dyn_err(t_new))?;
                            if !report.converged {
                                return Err(IntegrationError::CorrectionFailed {
                                    t: t_new,
                                    constraint_norm: report.post_constraint_norm,
                                    energy_residual: report.post_energy_residual,
                                    iterations: report.iterations,
                                });
                            }
                            new_state = corrected;
                            report
                        } else {
                            CorrectionReport::untouched(T::zero(), T::zero())
                        };

                        let at_end = new_state.t >= t_end;
                        recorder
                            .observe(
                                system,
                                &new_state,
                                report.clone(),
                                e_ref,
                                at_end || hitting_target,
                            )
                            .map_err(dyn_err(t_new))?;

                        y = stack(&new_state.q, &new_state.qdot, new_state.w_f);
                        // FSAL: reuse the last stage unless the correction moved
                        // the solution point.
                        if report.changed() {
                            k1 = f(new_state.t, &y).map_err(dyn_err(new_state.t))?;
                            evals += 1;
                        } else {
                            k1 = step.k_last;
                        }
                        state = new_state;

                        // PI step-size update.
                        let err_clamped = err.max(lit(1e-30));
                        let fac11 = err_clamped.powf(expo1);
                        let fac = (fac11 / fac_old.powf(beta) / safe)
                            .max(T::one() / fac_max)
                            .min(T::one() / fac_min);
                        h = (h / fac).min(settings.h_max);
                        fac_old = err_clamped.max(lit(1e-4));
                    } else {
                        rejected += 1;
                        let fac11 = err.powf(expo1);
                        h /= (fac11 / safe).min(T::one() / fac_min);
                        if h < settings.h_min {
                            return Err(IntegrationError::StepSizeUnderflow { t: state.t, h });
                        }
                    }
                }
            }
            Method::ImplicitTrapezoidal => {
                let h_fixed = settings.fixed_step;
                if !(h_fixed > T::zero()) {
                    return Err(IntegrationError::InvalidSettings(
                        "fixed_step must be positive".into(),
                    ));
                }
                let mut f0 = f(state.t, &y).map_err(dyn_err(state.t))?;
                evals += 1;
                let half = lit::<T>(0.5);
                let iter_tol = lit::<T>(1e-13);
                let max_iters = 25;

                while state.t < t_end {
                    let target = targets[target_idx];
                    let remaining = target - state.t;
                    let mut h = h_fixed;
                    let mut hitting_target = false;
                    if h >= remaining - remaining * lit::<T>(1e-12) {
                        h = remaining;
                        hitting_target = true;
                    }
                    let t_new = if hitting_target { target } else { state.t + h };
                    if hitting_target {
                        target_idx = (target_idx + 1).min(targets.len() - 1);
                    }

                    // Functional iteration on y1 = y + h/2 (f0 + f(t1, y1)).
                    let base = &y + &f0 * (h * half);
                    let mut y1 = &y + &f0 * h;
                    let mut f1 = f(t_new, &y1).map_err(dyn_err(t_new))?;
                    evals += 1;
                    let mut converged = false;
                    for _ in 0..max_iters {
                        let y_next = &base + &f1 * (h * half);
                        let delta = (&y_next - &y1).norm();
                        y1 = y_next;
                        f1 = f(t_new, &y1).map_err(dyn_err(t_new))?;
                        evals += 1;
                        if delta <= iter_tol * (T::one() + y1.norm()) {
                            converged = true;
                            break;
                        }
                    }
                    if !converged {
                        return Err(IntegrationError::ImplicitSolveFailed { t: state.t, h });
                    }

                    accepted += 1;
                    let (q, qdot, w) = unstack(dim, &y1);
                    let mut new_state = SystemState::new(t_new, q, qdot, w);
                    if !new_state.is_finite() {
                        return Err(IntegrationError::NonFiniteState { t: t_new });
                    }

                    let report = if settings.correction.enabled() {
                        let (corrected, report) = correction::correct_state(
                            model,
                            system.constraint_set(),
                            system.energy_model(),
                            &new_state,
                            e_ref,
                            &settings.correction,
                        )
                        .map_err(dyn_err(t_new))?;
                        if !report.converged {
                            return Err(IntegrationError::CorrectionFailed {
                                t: t_new,
                                constraint_norm: report.post_constraint_norm,
                                energy_residual: report.post_energy_residual,
                                iterations: report.iterations,
                            });
                        }
                        new_state = corrected;
                        report
                    } else {
                        CorrectionReport::untouched(T::zero(), T::zero())
                    };

                    let at_end = new_state.t >= t_end;
                    recorder
                        .observe(
                            system,
                            &new_state,
                            report.clone(),
                            e_ref,
                            at_end || hitting_target,
                        )
                        .map_err(dyn_err(t_new))?;

                    y = stack(&new_state.q, &new_state.qdot, new_state.w_f);
                    if report.changed() {
                        f0 = f(new_state.t, &y).map_err(dyn_err(new_state.t))?;
                        evals += 1;
                    } else {
                        f0 = f1;
                    }
                    state = new_state;
                }
            }
        }

        Ok(())
    })();

    let trajectory = Trajectory {
        points: recorder.points,
        e_ref,
        max_constraint_norm: recorder.max_constraint_norm,
        max_energy_residual: recorder.max_energy_residual,
        max_bar_residuals: recorder.max_bar_residuals,
        accepted_steps: accepted,
        rejected_steps: rejected,
        derivative_evals: evals,
    };
    match run_result {
        Ok(()) => Ok(trajectory),
        Err(error) => Err(Box::new(SimulationFailure {
            error,
            partial: trajectory,
        })),
    }
}

/// Convenience wrapper: simulate a rigid model under the given inputs.
pub fn simulate_rigid<T: Real>(
    model: &AssembledModel<T>,
    state0: &SystemState<T>,
    inputs: &ForceInputs<T>,
    settings: &IntegratorSettings<T>,
    t_end: T,
) -> Result<Trajectory<T>, Box<SimulationFailure<T>>> {
    let system = RigidSystem::new(model, inputs);
    simulate(&system, state0, settings, t_end)
}
