//! Post-step elimination of constraint and energy drift.
//!
//! Integrating acceleration-level constraints leaves position, velocity and
//! energy residuals that grow with time. After every accepted step the state
//! is projected back by solving the linearized system
//!
//! ```text
//! [ R_q     0      0 ] [dq ]   [ -R           ]
//! [ Q       R_q    0 ] [dqd] = [ -R_q qdot    ]
//! [ dE/dq  dE/dqd -1 ] [dW ]   [ E0 - E + W_f ]
//! ```
//!
//! in the minimum-norm sense, iterated until both the constraint norm and
//! the work-energy residual fall below the threshold `gamma`.
//!
//! A note on units: `gamma` bounds a mixed vector (bar rows are length
//! squared, boundary rows are lengths, the energy row is joules). No
//! dimensional re-weighting is applied across rows; in practice the
//! violations of the differently scaled rows stay in the same order
//! either way.

use nalgebra::{DMatrix, DVector};

use crate::real::Real;
use crate::rigid::{self, DynamicsError};
use crate::state::SystemState;
use crate::topology::AssembledModel;

/// Which holonomic constraints participate in the correction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintSet {
    /// Boundary rows and bar-length rows (rigid bars).
    Full,
    /// Boundary rows only (compressible bars).
    BoundaryOnly,
}

impl ConstraintSet {
    pub fn rows<T: Real>(self, model: &AssembledModel<T>) -> usize {
        match self {
            ConstraintSet::Full => model.num_constraints(),
            ConstraintSet::BoundaryOnly => model.num_boundary_rows(),
        }
    }

    pub fn residual<T: Real>(self, model: &AssembledModel<T>, q: &DVector<T>) -> DVector<T> {
        match self {
            ConstraintSet::Full => rigid::constraints(model, q),
            ConstraintSet::BoundaryOnly => &model.boundary_a * q - &model.boundary_b,
        }
    }

    pub fn jacobian<T: Real>(self, model: &AssembledModel<T>, q: &DVector<T>) -> DMatrix<T> {
        match self {
            ConstraintSet::Full => rigid::constraint_jacobian(model, q),
            ConstraintSet::BoundaryOnly => model.boundary_a.clone(),
        }
    }
}

/// Thresholds and toggles for the per-step correction.
#[derive(Debug, Clone)]
pub struct CorrectionSettings<T: Real> {
    /// Shared threshold for the constraint 2-norm and the energy residual.
    pub gamma: T,
    /// Cap on the correction loop; turns pathological non-convergence into
    /// a diagnosable report instead of a hang.
    pub max_iterations: usize,
    pub energy_correction_enabled: bool,
    pub geometric_correction_enabled: bool,
}

impl<T: Real> Default for CorrectionSettings<T> {
    fn default() -> Self {
        Self {
            gamma: T::from_f64_lossy(1e-10),
            max_iterations: 10,
            energy_correction_enabled: true,
            geometric_correction_enabled: true,
        }
    }
}

impl<T: Real> CorrectionSettings<T> {
    pub fn disabled() -> Self {
        Self {
            energy_correction_enabled: false,
            geometric_correction_enabled: false,
            ..Self::default()
        }
    }

    pub fn enabled(&self) -> bool {
        self.energy_correction_enabled || self.geometric_correction_enabled
    }
}

/// Outcome of one post-step correction.
#[derive(Debug, Clone)]
pub struct CorrectionReport<T: Real> {
    pub iterations: usize,
    pub pre_constraint_norm: T,
    pub post_constraint_norm: T,
    pub pre_energy_residual: T,
    pub post_energy_residual: T,
    pub delta_q_norm: T,
    pub delta_qdot_norm: T,
    pub delta_wf_abs: T,
    /// False when the loop hit `max_iterations` with residuals above gamma.
    pub converged: bool,
    /// True when any minimum-norm solve needed the rank-revealing fallback.
    pub degraded_rank: bool,
}

impl<T: Real> CorrectionReport<T> {
    pub fn untouched(constraint_norm: T, energy_residual: T) -> Self {
        Self {
            iterations: 0,
            pre_constraint_norm: constraint_norm,
            post_constraint_norm: constraint_norm,
            pre_energy_residual: energy_residual,
            post_energy_residual: energy_residual,
            delta_q_norm: T::zero(),
            delta_qdot_norm: T::zero(),
            delta_wf_abs: T::zero(),
            converged: true,
            degraded_rank: false,
        }
    }

    pub fn changed(&self) -> bool {
        self.iterations > 0
    }
}

/// Mechanical energy and its state gradients, abstracted so the same
/// correction machinery serves the rigid case and the compressible case
/// (where the kinetic energy has an extra term and bars store elastic
/// potential).
pub trait EnergyModel<T: Real> {
    fn energy(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<T, DynamicsError>;
    /// Column form of `dE/dq`.
    fn grad_q(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError>;
    /// Column form of `dE/dqdot`.
    fn grad_qdot(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError>;
}

/// Rigid-case energy: `E = 1/2 qd^T M qd + V_s(q) + V_g(q)`.
pub struct RigidEnergy<'a, T: Real> {
    pub model: &'a AssembledModel<T>,
}

impl<T: Real> EnergyModel<T> for RigidEnergy<'_, T> {
    fn energy(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<T, DynamicsError> {
        Ok(rigid::kinetic_energy(self.model, qdot)
            + rigid::string_potential(self.model, q)
            + rigid::gravity_potential(self.model, q))
    }

    fn grad_q(&self, q: &DVector<T>, _qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError> {
        Ok(rigid::string_potential_gradient(self.model, q)? - &self.model.gravity_vec)
    }

    fn grad_qdot(&self, _q: &DVector<T>, qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError> {
        Ok(&self.model.mass * qdot)
    }
}

/// The velocity-level coupling matrix `Q`: zero rows for linear boundary
/// constraints, `2 qdot^T X_k^T X_k` for bar row `k`. It satisfies the
/// defining identity `(dR_q/dq . dq) qdot = Q dq` for all `dq`.
pub fn q_rate_matrix<T: Real>(
    model: &AssembledModel<T>,
    set: ConstraintSet,
    qdot: &DVector<T>,
) -> DMatrix<T> {
    let m = set.rows(model);
    let mut q_mat = DMatrix::zeros(m, model.dim());
    if set == ConstraintSet::Full {
        let m_a = model.num_boundary_rows();
        let two = T::from_f64_lossy(2.0);
        for k in 0..model.num_bars() {
            let pair = model.structure.bars[k];
            for r in 0..3 {
                let bdot_r = qdot[3 * pair.to + r] - qdot[3 * pair.from + r];
                q_mat[(m_a + k, 3 * pair.from + r)] = -two * bdot_r;
                q_mat[(m_a + k, 3 * pair.to + r)] = two * bdot_r;
            }
        }
    }
    q_mat
}

/// Assembles the correction system `A_c x = b_c` for the current state.
///
/// With both corrections on, `A_c` is `(2m+1) x (6n+1)` over
/// `x = (dq, dqdot, dW_f)`. Disabling the energy correction drops the last
/// row and the `dW_f` column; disabling the geometric correction keeps only
/// the energy row.
pub fn assemble_correction_system<T: Real>(
    model: &AssembledModel<T>,
    set: ConstraintSet,
    energy: &dyn EnergyModel<T>,
    state: &SystemState<T>,
    e0: T,
    settings: &CorrectionSettings<T>,
) -> Result<(DMatrix<T>, DVector<T>), DynamicsError> {
    let dim = model.dim();
    let m = set.rows(model);
    let geo = settings.geometric_correction_enabled;
    let en = settings.energy_correction_enabled;
    let nrows = if geo { 2 * m } else { 0 } + usize::from(en);
    let ncols = 2 * dim + usize::from(en);

    let mut a_c = DMatrix::zeros(nrows, ncols);
    let mut b_c = DVector::zeros(nrows);

    if geo {
        let r = set.residual(model, &state.q);
        let r_q = set.jacobian(model, &state.q);
        let q_mat = q_rate_matrix(model, set, &state.qdot);
        a_c.view_mut((0, 0), (m, dim)).copy_from(&r_q);
        a_c.view_mut((m, 0), (m, dim)).copy_from(&q_mat);
        a_c.view_mut((m, dim), (m, dim)).copy_from(&r_q);
        b_c.rows_mut(0, m).copy_from(&(-&r));
        b_c.rows_mut(m, m).copy_from(&(-(&r_q * &state.qdot)));
    }
    if en {
        let row = nrows - 1;
        let ge = energy.grad_q(&state.q, &state.qdot)?;
        let gd = energy.grad_qdot(&state.q, &state.qdot)?;
        for i in 0..dim {
            a_c[(row, i)] = ge[i];
            a_c[(row, dim + i)] = gd[i];
        }
        a_c[(row, 2 * dim)] = -T::one();
        b_c[row] = e0 - energy.energy(&state.q, &state.qdot)? + state.w_f;
    }
    Ok((a_c, b_c))
}

/// Result metadata from a minimum-norm solve.
#[derive(Debug, Clone, Copy)]
pub struct MinNormInfo {
    pub rank: usize,
    /// True when the normal-equation route was abandoned for the
    /// rank-revealing pseudoinverse.
    pub degraded: bool,
}

/// Minimum-norm solution of the underdetermined system `A x = b`:
/// `x = A^T (A A^T)^-1 b`. Falls back to a rank-revealing least-squares
/// pseudoinverse (singular values below `1e-12 * s_max` truncated) when
/// `A A^T` is singular or severely ill-conditioned.
pub fn min_norm_solve<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> (DVector<T>, MinNormInfo) {
    let m = a.nrows();
    let gram = a * a.transpose();
    if let Some(chol) = nalgebra::Cholesky::new(gram) {
        let diag = chol.l_dirty().diagonal();
        let d_min = diag.iter().cloned().fold(T::max_value().unwrap(), T::min);
        let d_max = diag.iter().cloned().fold(T::zero(), T::max);
        if d_max > T::zero() && (d_min / d_max) * (d_min / d_max) >= T::from_f64_lossy(1e-12) {
            let y = chol.solve(b);
            return (
                a.transpose() * y,
                MinNormInfo {
                    rank: m,
                    degraded: false,
                },
            );
        }
    }
    // Rank-revealing fallback through the SVD of A itself.
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(T::zero(), T::max);
    let tol = T::from_f64_lossy(1e-12) * s_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut x = DVector::zeros(a.ncols());
    let mut rank = 0;
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > tol {
            rank += 1;
            let coeff = u.column(i).dot(b) / s;
            x += v_t.row(i).transpose() * coeff;
        }
    }
    (
        x,
        MinNormInfo {
            rank,
            degraded: true,
        },
    )
}

/// Applies the iterated minimum-norm correction of the state (positions,
/// velocities and accumulated work) until `|R|_2 <= gamma` and
/// `|E - E0 - W_f| <= gamma`, or `max_iterations` is reached. Returns the
/// corrected (or best-effort) state and a per-step report; non-convergence
/// is flagged in the report rather than raised, the caller decides.
pub fn correct_state<T: Real>(
    model: &AssembledModel<T>,
    set: ConstraintSet,
    energy: &dyn EnergyModel<T>,
    state: &SystemState<T>,
    e0: T,
    settings: &CorrectionSettings<T>,
) -> Result<(SystemState<T>, CorrectionReport<T>), DynamicsError> {
    let dim = model.dim();
    let geo = settings.geometric_correction_enabled;
    let en = settings.energy_correction_enabled;

    let constraint_norm = |q: &DVector<T>| set.residual(model, q).norm();
    let energy_residual = |s: &SystemState<T>| -> Result<T, DynamicsError> {
        Ok(energy.energy(&s.q, &s.qdot)? - e0 - s.w_f)
    };

    let mut current = state.clone();
    let mut r_norm = constraint_norm(&current.q);
    let mut e_res = energy_residual(&current)?;

    let violated = |r: T, e: T| (geo && r > settings.gamma) || (en && e.abs() > settings.gamma);
    if !settings.enabled() || !violated(r_norm, e_res) {
        return Ok((current, CorrectionReport::untouched(r_norm, e_res)));
    }

    let pre_constraint_norm = r_norm;
    let pre_energy_residual = e_res;
    let mut total_dq = DVector::zeros(dim);
    let mut total_dqd = DVector::zeros(dim);
    let mut total_dwf = T::zero();
    let mut degraded = false;
    let mut iterations = 0;

    while violated(r_norm, e_res) && iterations < settings.max_iterations {
        let (a_c, b_c) = assemble_correction_system(model, set, energy, &current, e0, settings)?;
        let (x, info) = min_norm_solve(&a_c, &b_c);
        degraded |= info.degraded;

        let dq = x.rows(0, dim).clone_owned();
        let dqd = x.rows(dim, dim).clone_owned();
        current.q += &dq;
        current.qdot += &dqd;
        total_dq += dq;
        total_dqd += dqd;
        if en {
            let dwf = x[2 * dim];
            current.w_f += dwf;
            total_dwf += dwf;
        }

        r_norm = constraint_norm(&current.q);
        e_res = energy_residual(&current)?;
        iterations += 1;
    }

    let report = CorrectionReport {
        iterations,
        pre_constraint_norm,
        post_constraint_norm: r_norm,
        pre_energy_residual,
        post_energy_residual: e_res,
        delta_q_norm: total_dq.norm(),
        delta_qdot_norm: total_dqd.norm(),
        delta_wf_abs: total_dwf.abs(),
        converged: !violated(r_norm, e_res),
        degraded_rank: degraded,
    };
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_structure, NodePair, TensegrityStructure};
    use nalgebra::Vector3;

    /// Pinned bar plus a string to a point mass: boundary rows and one bar
    /// row.
    fn test_model() -> AssembledModel<f64> {
        let mut s = TensegrityStructure::with_nodes(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 2.0),
        ]);
        s.bars.push(NodePair::new(0, 1));
        s.bar_masses.push(4.0);
        s.bar_radii.push(0.05);
        s.strings.push(NodePair::new(1, 2));
        s.string_stiffness.push(100.0);
        s.string_rest_lengths.push(1.8);
        s.point_mass_nodes.push(2);
        s.point_masses.push(1.5);
        s.fixed_nodes.push(0);
        build_structure(s).unwrap()
    }

    #[test]
    fn q_matrix_identities() {
        let model = test_model();
        let qdot = DVector::from_fn(9, |i, _| 0.1 * i as f64 - 0.4);

        assert_eq!(
            q_rate_matrix(&model, ConstraintSet::Full, &DVector::zeros(9)).norm(),
            0.0
        );
        assert_eq!(
            q_rate_matrix(&model, ConstraintSet::BoundaryOnly, &qdot).norm(),
            0.0
        );

        // Directional derivative of R_q along dq, applied to qdot, equals
        // Q dq.
        let q = model.q0.clone();
        let q_mat = q_rate_matrix(&model, ConstraintSet::Full, &qdot);
        let dq = DVector::from_fn(9, |i, _| ((i * 7 + 3) % 5) as f64 * 0.01 - 0.02);
        let eps = 1e-7;
        let j_plus = ConstraintSet::Full.jacobian(&model, &(&q + &dq * eps));
        let j_minus = ConstraintSet::Full.jacobian(&model, &(&q - &dq * eps));
        let lhs = ((j_plus - j_minus) / (2.0 * eps)) * &qdot;
        let rhs = &q_mat * &dq;
        assert!((lhs - rhs).norm() < 1e-7);
    }

    #[test]
    fn assembled_system_vanishes_on_manifold() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let state = SystemState::at_rest(&model);
        let e0 = energy.energy(&state.q, &state.qdot).unwrap();
        let settings = CorrectionSettings::default();
        let (a_c, b_c) =
            assemble_correction_system(&model, ConstraintSet::Full, &energy, &state, e0, &settings)
                .unwrap();
        assert_eq!(a_c.nrows(), 2 * model.num_constraints() + 1);
        assert_eq!(a_c.ncols(), 2 * model.dim() + 1);
        assert!(b_c.norm() == 0.0);
    }

    #[test]
    fn energy_row_matches_finite_differences() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let mut state = SystemState::at_rest(&model);
        state.q[5] += 0.05;
        state.q[7] += 0.02;
        state.qdot = DVector::from_fn(9, |i, _| 0.05 * i as f64);

        let gq = energy.grad_q(&state.q, &state.qdot).unwrap();
        let gd = energy.grad_qdot(&state.q, &state.qdot).unwrap();
        let fd_q = crate::fd::gradient(|q| energy.energy(q, &state.qdot).unwrap(), &state.q, 1e-6);
        let fd_d =
            crate::fd::gradient(|qd| energy.energy(&state.q, qd).unwrap(), &state.qdot, 1e-6);
        assert!((gq - fd_q).norm() < 1e-6);
        assert!((gd - fd_d).norm() < 1e-7);
    }

    #[test]
    fn boundary_only_top_left_block_is_a() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let state = SystemState::at_rest(&model);
        let settings = CorrectionSettings {
            energy_correction_enabled: false,
            ..Default::default()
        };
        let (a_c, _) = assemble_correction_system(
            &model,
            ConstraintSet::BoundaryOnly,
            &energy,
            &state,
            0.0,
            &settings,
        )
        .unwrap();
        let m = model.num_boundary_rows();
        assert_eq!(a_c.nrows(), 2 * m);
        assert_eq!(a_c.ncols(), 2 * model.dim());
        assert_eq!(
            a_c.view((0, 0), (m, model.dim())),
            model.boundary_a.view((0, 0), (m, model.dim()))
        );
    }

    #[test]
    fn min_norm_simple_cases() {
        // b = 0 gives x = 0.
        let a = DMatrix::<f64>::from_row_slice(2, 4, &[1.0, 2.0, 0.0, 1.0, 0.0, 1.0, 3.0, 0.0]);
        let (x, info) = min_norm_solve(&a, &DVector::zeros(2));
        assert_eq!(x.norm(), 0.0);
        assert!(!info.degraded);

        // Single unit row: solution is the projection.
        let a = DMatrix::<f64>::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
        let b = DVector::from_vec(vec![1e-3]);
        let (x, _) = min_norm_solve(&a, &b);
        assert!((x[0] - 1e-3).abs() < 1e-18 && x[1] == 0.0 && x[2] == 0.0);
    }

    #[test]
    fn min_norm_solution_lies_in_row_space() {
        let a = DMatrix::<f64>::from_fn(3, 7, |i, j| ((i * 7 + j * 3 + 1) % 11) as f64 - 5.0);
        let b = DVector::from_fn(3, |i, _| i as f64 + 0.5);
        let (x, info) = min_norm_solve(&a, &b);
        assert!(!info.degraded);
        assert!((&a * &x - &b).norm() <= 1e-12 * b.norm());
        // Row-space membership: x = A^T y for some y.
        let gram = &a * a.transpose();
        let y = gram.lu().solve(&(&a * &x)).unwrap();
        assert!((a.transpose() * y - &x).norm() < 1e-10);
    }

    #[test]
    fn min_norm_rank_deficient_falls_back() {
        // Two identical rows.
        let a = DMatrix::<f64>::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 1.0, 1.0, 0.0]);
        let b = DVector::from_vec(vec![2.0, 2.0]);
        let (x, info) = min_norm_solve(&a, &b);
        assert!(info.degraded);
        assert_eq!(info.rank, 1);
        assert!((&a * &x - &b).norm() < 1e-12);
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn correct_state_is_identity_on_valid_states() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let state = SystemState::at_rest(&model);
        let e0 = energy.energy(&state.q, &state.qdot).unwrap();
        let settings = CorrectionSettings::default();
        let (out, report) =
            correct_state(&model, ConstraintSet::Full, &energy, &state, e0, &settings).unwrap();
        assert_eq!(report.iterations, 0);
        assert!(report.converged);
        assert_eq!(out.q, state.q);
        assert_eq!(out.qdot, state.qdot);
    }

    #[test]
    fn bar_endpoint_perturbation_is_projected_back() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let settings = CorrectionSettings::default();

        let mut state = SystemState::at_rest(&model);
        let e0 = energy.energy(&state.q, &state.qdot).unwrap();
        // Perturb the free bar endpoint along the bar axis.
        state.q[3] += 1e-6;
        let (out, report) =
            correct_state(&model, ConstraintSet::Full, &energy, &state, e0, &settings).unwrap();
        assert!(report.converged);
        assert!(report.post_constraint_norm <= settings.gamma);

        // Bar length restored; with the other end held by boundary rows,
        // the analytic projection sends the free node back to x = 2.
        let l = model.bar_vector(&out.q, 0).norm();
        assert!((l - 2.0).abs() < 1e-9);
        assert!((out.q[3] - 2.0).abs() < 1e-9);
        // The fixed end stays put.
        assert!(out.q.rows(0, 3).norm() < 1e-12);
    }

    #[test]
    fn iteration_reduces_constraint_norm() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let settings = CorrectionSettings {
            max_iterations: 1,
            ..Default::default()
        };

        let mut state = SystemState::at_rest(&model);
        let e0 = energy.energy(&state.q, &state.qdot).unwrap();
        state.q[3] += 5e-5;
        state.q[4] -= 3e-5;
        state.qdot[5] += 1e-4;

        let r0 = ConstraintSet::Full.residual(&model, &state.q).norm();
        let (out, _) =
            correct_state(&model, ConstraintSet::Full, &energy, &state, e0, &settings).unwrap();
        let r1 = ConstraintSet::Full.residual(&model, &out.q).norm();
        assert!(
            r1 < r0,
            "one iteration must strictly reduce |R| ({r1} vs {r0})"
        );
    }

    #[test]
    fn geometric_only_leaves_energy_violated() {
        let model = test_model();
        let energy = RigidEnergy { model: &model };
        let mut settings = CorrectionSettings::<f64>::default();
        settings.energy_correction_enabled = false;

        let mut state = SystemState::at_rest(&model);
        let e0 = energy.energy(&state.q, &state.qdot).unwrap();
        // Velocity perturbation on the string-only node: no constraint sees
        // it, but the kinetic energy changes.
        state.qdot[6] += 1e-3;
        state.q[3] += 1e-6;
        let (out, report) =
            correct_state(&model, ConstraintSet::Full, &energy, &state, e0, &settings).unwrap();
        assert!(report.converged);
        let e_res = energy.energy(&out.q, &out.qdot).unwrap() - e0 - out.w_f;
        assert!(
            e_res.abs() > 1e-10,
            "geometric-only correction is not expected to fix the energy"
        );

        // With energy correction back on, the residual is eliminated.
        settings.energy_correction_enabled = true;
        let (out, report) =
            correct_state(&model, ConstraintSet::Full, &energy, &state, e0, &settings).unwrap();
        assert!(report.converged);
        let e_res = energy.energy(&out.q, &out.qdot).unwrap() - e0 - out.w_f;
        assert!(e_res.abs() <= 1e-10);
    }
}
