//! Rigid-bar equations of motion.
//!
//! The dynamics are written in Cartesian nodal coordinates with holonomic
//! constraints (boundary rows `A q = b` and fixed bar lengths) imposed at
//! the acceleration level. Each derivative evaluation solves the
//! saddle-point system
//!
//! ```text
//! [ M   -R_q^T ] [q̈]   [xi1]
//! [-R_q   0    ] [λ]  = [xi2]
//! ```
//!
//! through its Schur complement: the mass matrix is factored once at build
//! time, `R_q M^-1 R_q^T` is factored per evaluation.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::real::Real;
use crate::state::SystemState;
use crate::topology::AssembledModel;

/// Reciprocal-condition threshold under which the constraint Schur
/// complement is treated as singular (redundant constraints).
pub const RCOND_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("string {0} has zero length (degenerate)")]
    DegenerateString(usize),
    #[error("bar {0} has zero length (degenerate)")]
    DegenerateBar(usize),
    #[error(
        "constraint system singular or near-singular (rcond est {rcond:.3e}); \
         suspect redundant rows: {rows}"
    )]
    RedundantConstraints { rcond: f64, rows: String },
    #[error("saddle-point system is singular")]
    SingularSaddle,
    #[error("operating point is not an equilibrium (residual {0:.3e})")]
    NotAnEquilibrium(f64),
    #[error("analytic linearization deviates from finite differences (relative error {0:.3e})")]
    LinearizationMismatch(f64),
    #[error("Newton iteration did not converge within {0} iterations")]
    NewtonDidNotConverge(usize),
}

/// Acceleration and constraint multipliers from one derivative evaluation.
#[derive(Debug, Clone)]
pub struct RigidEomResult<T: Real> {
    pub qddot: DVector<T>,
    /// One multiplier per constraint row (boundary rows first, then bars).
    pub lambda: DVector<T>,
}

/// String force densities from the elastic law,
/// `sigma_k = K_k (1 - l_sk / |s_k|)`, clamped to zero for slack strings.
pub fn string_force_densities<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let mut sigma = DVector::zeros(model.num_strings());
    for k in 0..model.num_strings() {
        let len = model.string_vector(q, k).norm();
        if len <= T::zero() {
            return Err(DynamicsError::DegenerateString(k));
        }
        let rest = model.structure.string_rest_lengths[k];
        if len >= rest {
            sigma[k] = model.structure.string_stiffness[k] * (T::one() - rest / len);
        }
    }
    Ok(sigma)
}

/// Elastic potential of the strings; slack strings contribute zero.
pub fn string_potential<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> T {
    let half = T::from_f64_lossy(0.5);
    let mut v = T::zero();
    for k in 0..model.num_strings() {
        let len = model.string_vector(q, k).norm();
        let rest = model.structure.string_rest_lengths[k];
        if len >= rest {
            let stretch = len - rest;
            v += half * model.structure.string_stiffness[k] * stretch * stretch;
        }
    }
    v
}

/// Gradient of the string potential as a column vector,
/// `(dV_s/dq)^T = sum_k sigma_k Y_k^T Y_k q`.
pub fn string_potential_gradient<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let sigma = string_force_densities(model, q)?;
    let mut g = DVector::zeros(model.dim());
    for k in 0..model.num_strings() {
        if sigma[k] != T::zero() {
            let s = model.string_vector(q, k);
            model.scatter_pair(model.structure.strings[k], &s, sigma[k], &mut g);
        }
    }
    Ok(g)
}

/// Nodal damper forces `f_d = sum_k Y_k^T f_dk` with
/// `f_dk = -c (sdot^T s / s^T s) s`; slack strings contribute nothing.
pub fn damper_forces<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let c = model.structure.damping_coefficient;
    let mut f = DVector::zeros(model.dim());
    if c == T::zero() {
        return Ok(f);
    }
    for k in 0..model.num_strings() {
        let s = model.string_vector(q, k);
        let len2 = s.norm_squared();
        if len2 <= T::zero() {
            return Err(DynamicsError::DegenerateString(k));
        }
        let len = len2.sqrt();
        if len < model.structure.string_rest_lengths[k] {
            continue;
        }
        let sdot = {
            let pair = model.structure.strings[k];
            Vector3::new(
                qdot[3 * pair.to] - qdot[3 * pair.from],
                qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
                qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
            )
        };
        // f_dk = -c (sdot . s) s / (s . s); applied via Y_k^T.
        let coeff = -c * sdot.dot(&s) / len2;
        model.scatter_pair(model.structure.strings[k], &s, coeff, &mut f);
    }
    Ok(f)
}

/// Analytic Jacobians of the total damper force with respect to positions
/// and velocities. Slack strings contribute nothing (and introduce the
/// usual switching-surface kink, where these derivatives are one-sided).
pub fn damper_jacobians<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> Result<(DMatrix<T>, DMatrix<T>), DynamicsError> {
    let dim = model.dim();
    let c = model.structure.damping_coefficient;
    let mut d_q = DMatrix::zeros(dim, dim);
    let mut d_qd = DMatrix::zeros(dim, dim);
    if c == T::zero() {
        return Ok((d_q, d_qd));
    }
    for k in 0..model.num_strings() {
        let pair = model.structure.strings[k];
        let s = model.string_vector(q, k);
        let len = s.norm();
        if len <= T::zero() {
            return Err(DynamicsError::DegenerateString(k));
        }
        if len < model.structure.string_rest_lengths[k] {
            continue;
        }
        let sdot = Vector3::new(
            qdot[3 * pair.to] - qdot[3 * pair.from],
            qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
            qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
        );
        let ldot = s.dot(&sdot) / len;

        // Row vectors through Y_k are handled as 3-vectors acting on the
        // (from, to) blocks with signs (-, +).
        let dl_dq = s / len; // row p^T Y_k with p = s/len
        let dld_dq = sdot / len - (s / len) * (ldot / len);
        let dld_dqd = s / len;

        // d f_dk/dq = -c [ (s/l) dld_dq + (ldot/l) Y_k - (ldot/l^2) s dl_dq ]
        // Everything lands in d_q through Y_k^T on the left.
        let a1 = s * (-c / len); // pairs with dld_dq
        let a2 = s * (c * ldot / (len * len)); // pairs with dl_dq
        add_scattered_outer(model, pair, &a1, &dld_dq, &mut d_q);
        add_scattered_outer(model, pair, &a2, &dl_dq, &mut d_q);
        model.add_pair_outer(pair, -c * ldot / len, &mut d_q);

        // d f_dk/dqd = -c (s/l) dld_dqd
        add_scattered_outer(model, pair, &a1, &dld_dqd, &mut d_qd);
    }
    Ok((d_q, d_qd))
}

/// Adds `Y_k^T a (Y_k^T w)^T`-style rank-one blocks: the 3-vectors `a`
/// (left) and `w` (right) both expand over the (from, to) node blocks with
/// signs (-, +).
pub(crate) fn add_scattered_outer<T: Real>(
    model: &AssembledModel<T>,
    pair: crate::topology::NodePair,
    a: &Vector3<T>,
    w: &Vector3<T>,
    out: &mut DMatrix<T>,
) {
    let _ = model;
    let blocks = [(pair.from, -T::one()), (pair.to, T::one())];
    for (bi, si) in blocks {
        for (bj, sj) in blocks {
            let scale = si * sj;
            for r in 0..3 {
                for cidx in 0..3 {
                    out[(3 * bi + r, 3 * bj + cidx)] += scale * a[r] * w[cidx];
                }
            }
        }
    }
}

/// `d xi2 / d qdot`: zero rows for boundary constraints, `4 qdot^T X_k^T
/// X_k` per bar row.
pub fn accel_rhs_velocity_jacobian<T: Real>(
    model: &AssembledModel<T>,
    qdot: &DVector<T>,
) -> DMatrix<T> {
    let m_a = model.num_boundary_rows();
    let four = T::from_f64_lossy(4.0);
    let mut j = DMatrix::zeros(model.num_constraints(), model.dim());
    for k in 0..model.num_bars() {
        let pair = model.structure.bars[k];
        for r in 0..3 {
            let bdot_r = qdot[3 * pair.to + r] - qdot[3 * pair.from + r];
            j[(m_a + k, 3 * pair.from + r)] = -four * bdot_r;
            j[(m_a + k, 3 * pair.to + r)] = four * bdot_r;
        }
    }
    j
}

/// Constraint residual `R(q)`: boundary rows `A q - b`, then one row
/// `q^T X_k^T X_k q - l_bk^2` per bar.
pub fn constraints<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> DVector<T> {
    let m_a = model.num_boundary_rows();
    let mut r = DVector::zeros(model.num_constraints());
    let boundary = &model.boundary_a * q - &model.boundary_b;
    r.rows_mut(0, m_a).copy_from(&boundary);
    for k in 0..model.num_bars() {
        let l = model.bar_rest_lengths[k];
        r[m_a + k] = model.bar_vector(q, k).norm_squared() - l * l;
    }
    r
}

/// Constraint Jacobian `R_q`: boundary rows are `A`, bar rows are
/// `2 q^T X_k^T X_k`.
pub fn constraint_jacobian<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> DMatrix<T> {
    let m_a = model.num_boundary_rows();
    let dim = model.dim();
    let two = T::from_f64_lossy(2.0);
    let mut j = DMatrix::zeros(model.num_constraints(), dim);
    j.rows_mut(0, m_a).copy_from(&model.boundary_a);
    for k in 0..model.num_bars() {
        let pair = model.structure.bars[k];
        let b = model.bar_vector(q, k);
        for r in 0..3 {
            j[(m_a + k, 3 * pair.from + r)] = -two * b[r];
            j[(m_a + k, 3 * pair.to + r)] = two * b[r];
        }
    }
    j
}

/// Acceleration-level right-hand side `xi2`: zero rows for the linear
/// boundary constraints, `2 q̇^T X_k^T X_k q̇` per bar.
pub fn constraint_accel_rhs<T: Real>(model: &AssembledModel<T>, qdot: &DVector<T>) -> DVector<T> {
    let m_a = model.num_boundary_rows();
    let two = T::from_f64_lossy(2.0);
    let mut xi2 = DVector::zeros(model.num_constraints());
    for k in 0..model.num_bars() {
        let pair = model.structure.bars[k];
        let bdot = Vector3::new(
            qdot[3 * pair.to] - qdot[3 * pair.from],
            qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
            qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
        );
        xi2[m_a + k] = two * bdot.norm_squared();
    }
    xi2
}

/// Bar angular velocity `omega_k = (b_k x b_k_dot) / l^2`.
pub fn bar_angular_velocity<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
    k: usize,
) -> Vector3<T> {
    let b = model.bar_vector(q, k);
    let pair = model.structure.bars[k];
    let bdot = Vector3::new(
        qdot[3 * pair.to] - qdot[3 * pair.from],
        qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
        qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
    );
    b.cross(&bdot) / b.norm_squared()
}

/// `xi1 = -(sigma^T (x) I) Y^T q + G + f`, with the damper force folded
/// into the non-conservative force `f`.
pub fn force_vector<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
    sigma: &DVector<T>,
    f_ext: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    assert_eq!(sigma.len(), model.num_strings());
    assert_eq!(f_ext.len(), model.dim());
    let mut xi1 = &model.gravity_vec + f_ext + damper_forces(model, q, qdot)?;
    for k in 0..model.num_strings() {
        if sigma[k] != T::zero() {
            let s = model.string_vector(q, k);
            model.scatter_pair(model.structure.strings[k], &s, -sigma[k], &mut xi1);
        }
    }
    Ok(xi1)
}

/// Factorization of the constraint Schur complement `R_q M^-1 R_q^T`,
/// reused by the acceleration solve and the linearization.
pub(crate) struct ConstraintSolve<T: Real> {
    pub r_q: DMatrix<T>,
    /// `M^-1 R_q^T`.
    pub z: DMatrix<T>,
    chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
}

impl<T: Real> ConstraintSolve<T> {
    pub fn new(model: &AssembledModel<T>, q: &DVector<T>) -> Result<Self, DynamicsError> {
        let r_q = constraint_jacobian(model, q);
        let z = model.mass_solve_mat(&r_q.transpose());
        let s = &r_q * &z;
        let chol = match nalgebra::Cholesky::new(s.clone()) {
            Some(c) => c,
            None => return Err(singular_constraints(model, &s)),
        };
        if s.nrows() > 0 {
            // Cheap conditioning estimate from the Cholesky diagonal; for
            // an SPD matrix cond >= (d_max / d_min)^2.
            let diag = chol.l_dirty().diagonal();
            let d_min = diag.iter().cloned().fold(T::max_value().unwrap(), T::min);
            let d_max = diag.iter().cloned().fold(T::zero(), T::max);
            let rcond = (d_min / d_max) * (d_min / d_max);
            if rcond < T::from_f64_lossy(RCOND_THRESHOLD) {
                return Err(singular_constraints(model, &s));
            }
        }
        Ok(Self { r_q, z, chol })
    }

    /// Solves `(R_q M^-1 R_q^T) x = rhs`.
    pub fn schur_solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.chol.solve(rhs)
    }

    pub fn schur_solve_mat(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        self.chol.solve(rhs)
    }
}

fn singular_constraints<T: Real>(model: &AssembledModel<T>, s: &DMatrix<T>) -> DynamicsError {
    let svd = s.clone().svd(false, true);
    let sv = &svd.singular_values;
    let max_sv = sv.iter().cloned().fold(T::zero(), T::max);
    let min_sv = sv.iter().cloned().fold(max_sv, T::min);
    let rcond = if max_sv > T::zero() {
        (min_sv / max_sv).to_f64().unwrap_or(0.0)
    } else {
        0.0
    };
    // The right-singular vector of the smallest singular value points at the
    // near-dependent rows.
    let rows = match &svd.v_t {
        Some(v_t) => {
            let null_dir = v_t.row(v_t.nrows() - 1);
            let max_entry = null_dir.iter().fold(T::zero(), |a, &b| a.max(b.abs()));
            let threshold = max_entry * T::from_f64_lossy(0.3);
            let m_a = model.num_boundary_rows();
            let mut names = Vec::new();
            for (i, &v) in null_dir.iter().enumerate() {
                if v.abs() >= threshold {
                    if i < m_a {
                        names.push(format!("boundary row {i}"));
                    } else {
                        names.push(format!("bar {}", i - m_a));
                    }
                }
            }
            names.join(", ")
        }
        None => String::from("unknown"),
    };
    DynamicsError::RedundantConstraints { rcond, rows }
}

/// Solves the index-1 DAE for accelerations and multipliers:
/// `q̈ = M^-1 [xi1 - R_q^T (R_q M^-1 R_q^T)^-1 (xi2 + R_q M^-1 xi1)]`.
///
/// `sigma` is taken as given (control form); the caller decides whether it
/// came from the elastic law. The damper force is computed internally from
/// the structure's damping coefficient and folded into the force vector.
pub fn eom_rhs<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
    sigma: &DVector<T>,
    f_ext: &DVector<T>,
) -> Result<RigidEomResult<T>, DynamicsError> {
    let f_nc = f_ext + damper_forces(model, q, qdot)?;
    eom_rhs_with_forces(model, q, qdot, sigma, &f_nc)
}

/// Same as [`eom_rhs`], but `f_nc` is the complete non-conservative force
/// (dampers already summed in). Used by the integrator, which needs the
/// same force vector for the work rate `Wdot = f_nc^T qdot`.
pub fn eom_rhs_with_forces<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
    sigma: &DVector<T>,
    f_nc: &DVector<T>,
) -> Result<RigidEomResult<T>, DynamicsError> {
    assert_eq!(sigma.len(), model.num_strings());
    let mut xi1 = &model.gravity_vec + f_nc;
    for k in 0..model.num_strings() {
        if sigma[k] != T::zero() {
            let s = model.string_vector(q, k);
            model.scatter_pair(model.structure.strings[k], &s, -sigma[k], &mut xi1);
        }
    }
    let xi2 = constraint_accel_rhs(model, qdot);
    let solve = ConstraintSolve::new(model, q)?;
    let w = model.mass_solve(&xi1);
    let lambda = -solve.schur_solve(&(&xi2 + &solve.r_q * &w));
    let qddot = &w + &solve.z * &lambda;
    Ok(RigidEomResult { qddot, lambda })
}

/// Kinetic energy `T = 1/2 q̇^T M q̇`.
pub fn kinetic_energy<T: Real>(model: &AssembledModel<T>, qdot: &DVector<T>) -> T {
    T::from_f64_lossy(0.5) * qdot.dot(&(&model.mass * qdot))
}

/// Gravitational potential `V_g = -G^T q`.
pub fn gravity_potential<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> T {
    -model.gravity_vec.dot(q)
}

/// Total mechanical energy `E = T + V_s + V_g`.
pub fn total_energy<T: Real>(model: &AssembledModel<T>, state: &SystemState<T>) -> T {
    kinetic_energy(model, &state.qdot)
        + string_potential(model, &state.q)
        + gravity_potential(model, &state.q)
}
