//! Analytic linearization of the rigid dynamics about an operating point,
//! and equilibrium machinery (Newton refinement and pre-stress solves).
//!
//! The state-space model is
//!
//! ```text
//! d/dt [dq; dqd] = A [dq; dqd] + B_sigma dsigma + B_f df
//! ```
//!
//! with force densities treated as the control input (held fixed inside
//! `d xi/dq`) and the external nodal force as the disturbance. The
//! third-order tensor terms in `d xi/dq` are assembled column by column;
//! at these problem sizes clarity wins over vectorization. Because these
//! expressions are easy to get wrong, [`verify_linearization`] checks every
//! block against central finite differences of the nonlinear right-hand
//! side; the `*_checked` entry point runs it for you.

use nalgebra::{DMatrix, DVector};

use crate::fd;
use crate::real::{lit, Real};
use crate::rigid::{
    self, accel_rhs_velocity_jacobian, constraint_accel_rhs, constraint_jacobian, damper_jacobians,
    DynamicsError,
};
use crate::topology::AssembledModel;

/// Point the dynamics are linearized about.
#[derive(Debug, Clone)]
pub struct OperatingPoint<T: Real> {
    pub q: DVector<T>,
    pub qdot: DVector<T>,
    pub sigma: DVector<T>,
    pub f: DVector<T>,
}

impl<T: Real> OperatingPoint<T> {
    /// Rest state at the model's initial configuration with elastic-law
    /// force densities and no external load.
    pub fn rest(model: &AssembledModel<T>) -> Result<Self, DynamicsError> {
        Ok(Self {
            q: model.q0.clone(),
            qdot: DVector::zeros(model.dim()),
            sigma: rigid::string_force_densities(model, &model.q0)?,
            f: DVector::zeros(model.dim()),
        })
    }
}

/// State-space matrices at an operating point. The upper blocks of `A` are
/// `[0 I]` by construction; the model is not a minimal realization because
/// the algebraic constraints still act on `dq`.
#[derive(Debug, Clone)]
pub struct LinearModel<T: Real> {
    pub a: DMatrix<T>,
    pub b_sigma: DMatrix<T>,
    pub b_f: DMatrix<T>,
    pub operating_point: OperatingPoint<T>,
}

/// Worst relative Frobenius error per block against finite differences.
#[derive(Debug, Clone)]
pub struct LinearizationCheck<T: Real> {
    pub err_wrt_q: T,
    pub err_wrt_qdot: T,
    pub err_wrt_sigma: T,
    pub err_wrt_f: T,
}

impl<T: Real> LinearizationCheck<T> {
    pub fn max(&self) -> T {
        self.err_wrt_q
            .max(self.err_wrt_qdot)
            .max(self.err_wrt_sigma)
            .max(self.err_wrt_f)
    }
}

/// The matrix `Yhat` with `vec(Yhat) = Y^T q`: column `k` is
/// `Y_k^T Y_k q = Y_k^T s_k`, so that `(sigma^T (x) I) Y^T q = Yhat sigma`.
pub fn sigma_input_matrix<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> DMatrix<T> {
    let mut yhat = DMatrix::zeros(model.dim(), model.num_strings());
    for k in 0..model.num_strings() {
        yhat.set_column(k, &model.string_weighted_gradient(q, k));
    }
    yhat
}

/// The analogous matrix for bars: column `k` is `X_k^T X_k q`.
pub fn bar_input_matrix<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> DMatrix<T> {
    let mut xhat = DMatrix::zeros(model.dim(), model.num_bars());
    for k in 0..model.num_bars() {
        xhat.set_column(k, &model.bar_weighted_gradient(q, k));
    }
    xhat
}

/// Analytic linearization of the rigid constrained dynamics.
pub fn linearize_rigid<T: Real>(
    model: &AssembledModel<T>,
    op: &OperatingPoint<T>,
) -> Result<LinearModel<T>, DynamicsError> {
    let dim = model.dim();
    let m = model.num_constraints();
    let m_a = model.num_boundary_rows();

    // Shared factorizations and vectors at the operating point.
    let solve = rigid::ConstraintSolve::new(model, &op.q)?;
    let r_q = &solve.r_q;
    let z = &solve.z; // M^-1 R_q^T

    let f_nc = &op.f + rigid::damper_forces(model, &op.q, &op.qdot)?;
    let xi1 = {
        let mut v = &model.gravity_vec + &f_nc;
        for k in 0..model.num_strings() {
            if op.sigma[k] != T::zero() {
                let s = model.string_vector(&op.q, k);
                model.scatter_pair(model.structure.strings[k], &s, -op.sigma[k], &mut v);
            }
        }
        v
    };
    let xi2 = constraint_accel_rhs(model, &op.qdot);
    let w = model.mass_solve(&xi1); // M^-1 xi1
    let xi_tilde = &xi2 + r_q * &w;
    let v_mult = solve.schur_solve(&xi_tilde); // Mtilde * xi_tilde

    let (fd_q, fd_qd) = damper_jacobians(model, &op.q, &op.qdot)?;

    // d xi1/dq holding sigma fixed: -sum_k sigma_k Y_k^T Y_k plus damper.
    let mut dxi1_dq = fd_q.clone();
    for k in 0..model.num_strings() {
        if op.sigma[k] != T::zero() {
            model.add_pair_outer(model.structure.strings[k], -op.sigma[k], &mut dxi1_dq);
        }
    }

    // Assemble d xi/dq column by column over coordinate directions.
    let two = lit::<T>(2.0);
    let mut dxi_dq = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let node_i = i / 3;

        let c1 = dxi1_dq.column(i).clone_owned();

        // Bars touching coordinate i: column of X_k^T X_k e_i.
        let mut bar_cols: Vec<(usize, DVector<T>)> = Vec::new();
        for k in 0..model.num_bars() {
            let pair = model.structure.bars[k];
            if pair.from == node_i || pair.to == node_i {
                let mut u = DVector::zeros(dim);
                let r = i % 3;
                let sign = if pair.from == node_i {
                    T::one()
                } else {
                    -T::one()
                };
                u[3 * pair.from + r] = sign;
                u[3 * pair.to + r] = -sign;
                bar_cols.push((k, u));
            }
        }

        // c2 = (dR_q^T/dq_i)(Mtilde xi_tilde) = sum_k 2 v_row(k) X_k^T X_k e_i.
        let mut c2 = DVector::zeros(dim);
        // dR_q/dq_i as sparse bar rows: 2 (X_k^T X_k e_i)^T.
        let mut drq_rows: Vec<(usize, DVector<T>)> = Vec::new();
        for (k, u) in &bar_cols {
            c2.axpy(two * v_mult[m_a + *k], u, T::one());
            drq_rows.push((m_a + *k, u * two));
        }

        // c3 = -R_q^T Mtilde D_i (Mtilde xi_tilde), D_i = P_i + P_i^T with
        // P_i = dR_q/dq_i Z.
        // c4 = R_q^T Mtilde d xi_tilde/dq_i.
        let mut p_i = DMatrix::zeros(m, m);
        let mut dxit = r_q * model.mass_solve(&c1);
        for (row, rvec) in &drq_rows {
            for col in 0..m {
                p_i[(*row, col)] = rvec.dot(&z.column(col));
            }
            dxit[*row] += rvec.dot(&w);
        }
        let d_i = &p_i + p_i.transpose();
        let c3 = -(r_q.transpose() * solve.schur_solve(&(&d_i * &v_mult)));
        let c4 = r_q.transpose() * solve.schur_solve(&dxit);

        let col = model.mass_solve(&(c1 - c2 - c3 - c4));
        dxi_dq.set_column(i, &col);
    }

    // d xi/dqdot = M^-1 [dfd/dqd - R_q^T Mtilde (dxi2/dqd + R_q M^-1 dfd/dqd)].
    let dxi2_dqd = accel_rhs_velocity_jacobian(model, &op.qdot);
    let m_inv_fdqd = model.mass_solve_mat(&fd_qd);
    let inner = &dxi2_dqd + r_q * &m_inv_fdqd;
    let dxi_dqd = model.mass_solve_mat(&(&fd_qd - r_q.transpose() * solve.schur_solve_mat(&inner)));

    // d xi/dsigma = -(M^-1 - M^-1 R_q^T Mtilde R_q M^-1) Yhat.
    let yhat = sigma_input_matrix(model, &op.q);
    let m_inv_yhat = model.mass_solve_mat(&yhat);
    let dxi_dsigma = -(&m_inv_yhat - z * solve.schur_solve_mat(&(r_q * &m_inv_yhat)));

    // d xi/df = M^-1 - M^-1 R_q^T Mtilde R_q M^-1, applied to the identity.
    let m_inv = model.mass_solve_mat(&DMatrix::identity(dim, dim));
    let dxi_df = &m_inv - z * solve.schur_solve_mat(&(r_q * &m_inv));

    Ok(LinearModel {
        a: assemble_state_matrix(dim, &dxi_dq, &dxi_dqd),
        b_sigma: stack_zero_block(dim, &dxi_dsigma),
        b_f: stack_zero_block(dim, &dxi_df),
        operating_point: op.clone(),
    })
}

pub(crate) fn assemble_state_matrix<T: Real>(
    dim: usize,
    dxi_dq: &DMatrix<T>,
    dxi_dqd: &DMatrix<T>,
) -> DMatrix<T> {
    let mut a = DMatrix::zeros(2 * dim, 2 * dim);
    a.view_mut((0, dim), (dim, dim))
        .copy_from(&DMatrix::identity(dim, dim));
    a.view_mut((dim, 0), (dim, dim)).copy_from(dxi_dq);
    a.view_mut((dim, dim), (dim, dim)).copy_from(dxi_dqd);
    a
}

pub(crate) fn stack_zero_block<T: Real>(dim: usize, lower: &DMatrix<T>) -> DMatrix<T> {
    let mut b = DMatrix::zeros(2 * dim, lower.ncols());
    b.view_mut((dim, 0), (dim, lower.ncols())).copy_from(lower);
    b
}

/// Checks every block of a linear model against central finite differences
/// of the nonlinear acceleration (with sigma and f held as explicit
/// inputs). `h` is the absolute perturbation step.
pub fn verify_linearization<T: Real>(
    model: &AssembledModel<T>,
    lin: &LinearModel<T>,
    h: T,
) -> Result<LinearizationCheck<T>, DynamicsError> {
    let op = &lin.operating_point;
    let dim = model.dim();

    let xi_of_q = |q: &DVector<T>| -> DVector<T> {
        rigid::eom_rhs(model, q, &op.qdot, &op.sigma, &op.f)
            .expect("eom at perturbed q")
            .qddot
    };
    let xi_of_qd = |qd: &DVector<T>| -> DVector<T> {
        rigid::eom_rhs(model, &op.q, qd, &op.sigma, &op.f)
            .expect("eom at perturbed qdot")
            .qddot
    };
    let xi_of_sigma = |s: &DVector<T>| -> DVector<T> {
        rigid::eom_rhs(model, &op.q, &op.qdot, s, &op.f)
            .expect("eom at perturbed sigma")
            .qddot
    };
    let xi_of_f = |f: &DVector<T>| -> DVector<T> {
        rigid::eom_rhs(model, &op.q, &op.qdot, &op.sigma, f)
            .expect("eom at perturbed f")
            .qddot
    };

    let a_q = lin.a.view((dim, 0), (dim, dim)).clone_owned();
    let a_qd = lin.a.view((dim, dim), (dim, dim)).clone_owned();
    let b_s = lin
        .b_sigma
        .view((dim, 0), (dim, model.num_strings()))
        .clone_owned();
    let b_f = lin.b_f.view((dim, 0), (dim, dim)).clone_owned();

    Ok(LinearizationCheck {
        err_wrt_q: fd::relative_error(&fd::jacobian(xi_of_q, &op.q, h), &a_q),
        err_wrt_qdot: fd::relative_error(&fd::jacobian(xi_of_qd, &op.qdot, h), &a_qd),
        err_wrt_sigma: fd::relative_error(&fd::jacobian(xi_of_sigma, &op.sigma, h), &b_s),
        err_wrt_f: fd::relative_error(&fd::jacobian(xi_of_f, &op.f, h), &b_f),
    })
}

/// Linearizes and verifies in one call, failing when any block deviates
/// from finite differences by more than `rel_tol`.
pub fn linearize_rigid_checked<T: Real>(
    model: &AssembledModel<T>,
    op: &OperatingPoint<T>,
    rel_tol: T,
) -> Result<LinearModel<T>, DynamicsError> {
    let lin = linearize_rigid(model, op)?;
    let check = verify_linearization(model, &lin, lit(1e-6))?;
    if check.max() > rel_tol {
        return Err(DynamicsError::LinearizationMismatch(
            check.max().to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(lin)
}

/// Newton solve for a configuration where the structure is in static
/// equilibrium under fixed force densities `sigma` and load `f0`:
/// `xi1(q; sigma, f0) + R_q^T mu = 0`, `R(q) = 0`.
pub fn find_equilibrium<T: Real>(
    model: &AssembledModel<T>,
    q_guess: &DVector<T>,
    sigma: &DVector<T>,
    f0: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    const MAX_ITERS: usize = 50;
    let dim = model.dim();
    let m = model.num_constraints();
    let tol = lit::<T>(1e-11);
    let two = lit::<T>(2.0);

    let xi1_at = |q: &DVector<T>| -> DVector<T> {
        let mut v = &model.gravity_vec + f0;
        for k in 0..model.num_strings() {
            if sigma[k] != T::zero() {
                let s = model.string_vector(q, k);
                model.scatter_pair(model.structure.strings[k], &s, -sigma[k], &mut v);
            }
        }
        v
    };

    let mut q = q_guess.clone();
    // Initial multipliers from least squares on the force balance.
    let mut mu = {
        let r_q = constraint_jacobian(model, &q);
        let rhs = -(&r_q * xi1_at(&q));
        let gram = &r_q * r_q.transpose();
        gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(m))
    };

    for _ in 0..MAX_ITERS {
        let r_q = constraint_jacobian(model, &q);
        let residual_force = xi1_at(&q) + r_q.transpose() * &mu;
        let residual_cons = rigid::constraints(model, &q);
        if residual_force.norm() <= tol && residual_cons.norm() <= tol {
            return Ok(q);
        }

        // Jacobian of the KKT residual.
        let mut j = DMatrix::zeros(dim + m, dim + m);
        let mut h_block = DMatrix::zeros(dim, dim);
        for k in 0..model.num_strings() {
            if sigma[k] != T::zero() {
                model.add_pair_outer(model.structure.strings[k], -sigma[k], &mut h_block);
            }
        }
        let m_a = model.num_boundary_rows();
        for k in 0..model.num_bars() {
            model.add_pair_outer(model.structure.bars[k], two * mu[m_a + k], &mut h_block);
        }
        j.view_mut((0, 0), (dim, dim)).copy_from(&h_block);
        j.view_mut((0, dim), (dim, m)).copy_from(&r_q.transpose());
        j.view_mut((dim, 0), (m, dim)).copy_from(&r_q);

        let mut rhs = DVector::zeros(dim + m);
        rhs.rows_mut(0, dim).copy_from(&(-&residual_force));
        rhs.rows_mut(dim, m).copy_from(&(-&residual_cons));
        let delta = j.lu().solve(&rhs).ok_or(DynamicsError::SingularSaddle)?;
        q += delta.rows(0, dim);
        mu += delta.rows(dim, m);
    }
    Err(DynamicsError::NewtonDidNotConverge(MAX_ITERS))
}

/// Newton settle of the full elastic structure: finds `q` near `q_guess`
/// where the structure balances under gravity and `f0` with force
/// densities following the elastic law (slack clamp included), subject to
/// `R(q) = 0`. Used to put pre-stressed structures into equilibrium when
/// the designed geometry excites inextensional mechanisms that only
/// stiffen through deformation.
pub fn settle_equilibrium<T: Real>(
    model: &AssembledModel<T>,
    q_guess: &DVector<T>,
    f0: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    const MAX_ITERS: usize = 200;
    let dim = model.dim();
    let m = model.num_constraints();
    let tol = lit::<T>(1e-11);
    let two = lit::<T>(2.0);

    let force_residual = |q: &DVector<T>| -> Result<DVector<T>, DynamicsError> {
        Ok(&model.gravity_vec + f0 - rigid::string_potential_gradient(model, q)?)
    };

    let mut q = q_guess.clone();
    let mut mu = {
        let r_q = constraint_jacobian(model, &q);
        let rhs = -(&r_q * force_residual(&q)?);
        let gram = &r_q * r_q.transpose();
        gram.lu().solve(&rhs).unwrap_or_else(|| DVector::zeros(m))
    };

    let merit = |q: &DVector<T>, mu: &DVector<T>| -> Result<T, DynamicsError> {
        let r_q = constraint_jacobian(model, q);
        let f = force_residual(q)? + r_q.transpose() * mu;
        Ok(f.norm() + rigid::constraints(model, q).norm())
    };

    let mut current_merit = merit(&q, &mu)?;
    for _ in 0..MAX_ITERS {
        let r_q = constraint_jacobian(model, &q);
        let residual_force = force_residual(&q)? + r_q.transpose() * &mu;
        let residual_cons = rigid::constraints(model, &q);
        if residual_force.norm() <= tol && residual_cons.norm() <= tol {
            return Ok(q);
        }

        // Tangent: minus the string-potential Hessian plus the bar
        // constraint curvature.
        let mut h_block = DMatrix::zeros(dim, dim);
        for k in 0..model.num_strings() {
            let s = model.string_vector(&q, k);
            let len = s.norm();
            if len <= T::zero() {
                return Err(DynamicsError::DegenerateString(k));
            }
            let rest = model.structure.string_rest_lengths[k];
            if len < rest {
                continue;
            }
            let k_s = model.structure.string_stiffness[k];
            let sigma = k_s * (T::one() - rest / len);
            model.add_pair_outer(model.structure.strings[k], -sigma, &mut h_block);
            let c = k_s * rest / (len * len * len);
            rigid::add_scattered_outer(
                model,
                model.structure.strings[k],
                &(s * (-c)),
                &s,
                &mut h_block,
            );
        }
        let m_a = model.num_boundary_rows();
        for k in 0..model.num_bars() {
            model.add_pair_outer(model.structure.bars[k], two * mu[m_a + k], &mut h_block);
        }

        let mut j = DMatrix::zeros(dim + m, dim + m);
        j.view_mut((0, 0), (dim, dim)).copy_from(&h_block);
        j.view_mut((0, dim), (dim, m)).copy_from(&r_q.transpose());
        j.view_mut((dim, 0), (m, dim)).copy_from(&r_q);
        let mut rhs = DVector::zeros(dim + m);
        rhs.rows_mut(0, dim).copy_from(&(-&residual_force));
        rhs.rows_mut(dim, m).copy_from(&(-&residual_cons));
        let delta = j.lu().solve(&rhs).ok_or(DynamicsError::SingularSaddle)?;

        // Backtracking on the merit so large mechanism motions cannot
        // derail the iteration.
        let dq = delta.rows(0, dim).clone_owned();
        let dmu = delta.rows(dim, m).clone_owned();
        let mut step = T::one();
        let mut accepted = false;
        for _ in 0..30 {
            let q_try = &q + &dq * step;
            let mu_try = &mu + &dmu * step;
            let m_try = merit(&q_try, &mu_try)?;
            if m_try < current_merit {
                q = q_try;
                mu = mu_try;
                current_merit = m_try;
                accepted = true;
                break;
            }
            step *= lit::<T>(0.5);
        }
        if !accepted {
            return Err(DynamicsError::NewtonDidNotConverge(MAX_ITERS));
        }
    }
    Err(DynamicsError::NewtonDidNotConverge(MAX_ITERS))
}

/// Solves for force densities that put the structure in static equilibrium
/// at its initial configuration under gravity and `f0`, staying as close
/// as possible to `sigma_target`. The equilibrium condition is that the
/// projected force `Pi (G + f0 - Yhat sigma)` vanishes, with
/// `Pi = I - R_q^T (R_q M^-1 R_q^T)^-1 R_q M^-1` the annihilator of
/// admissible constraint reactions at `q0`.
pub fn prestress_for_equilibrium<T: Real>(
    model: &AssembledModel<T>,
    sigma_target: &DVector<T>,
    f0: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let solve = rigid::ConstraintSolve::new(model, &model.q0)?;
    let project = |v: &DVector<T>| -> DVector<T> {
        let tmp = solve.schur_solve(&(&solve.r_q * model.mass_solve(v)));
        v - solve.r_q.transpose() * tmp
    };

    let yhat = sigma_input_matrix(model, &model.q0);
    let mut a = DMatrix::zeros(model.dim(), model.num_strings());
    for k in 0..model.num_strings() {
        a.set_column(k, &project(&yhat.column(k).clone_owned()));
    }
    let b = project(&(&model.gravity_vec + f0));

    // Minimum-deviation solution via the pseudoinverse of the projected
    // string matrix: sigma = target + A^+ (b - A target).
    let svd = a.clone().svd(true, true);
    let s_max = svd.singular_values.iter().cloned().fold(T::zero(), T::max);
    let tol = lit::<T>(1e-10) * s_max;
    let u = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let resid0 = &b - &a * sigma_target;
    let mut sigma = sigma_target.clone();
    for i in 0..svd.singular_values.len() {
        let s = svd.singular_values[i];
        if s > tol {
            let coeff = u.column(i).dot(&resid0) / s;
            sigma += v_t.row(i).transpose() * coeff;
        }
    }

    let final_resid = (&a * &sigma - &b).norm();
    if final_resid > lit::<T>(1e-9) * (T::one() + b.norm()) {
        return Err(DynamicsError::NotAnEquilibrium(
            final_resid.to_f64().unwrap_or(f64::NAN),
        ));
    }
    Ok(sigma)
}

/// Writes a matrix as a plain-text file body: a comment header, a
/// `rows cols` line, then one whitespace-separated row per line with full
/// round-trip precision.
pub fn matrix_to_text<T: Real>(name: &str, m: &DMatrix<T>) -> String {
    let mut out = String::new();
    out.push_str(&format!("# {name}: row-major dense matrix\n"));
    out.push_str(&format!("{} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:.17e}", m[(i, j)]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_structure, NodePair, TensegrityStructure};
    use nalgebra::Vector3;

    /// Pinned bar, a string to a point mass, damping on; rich enough to
    /// exercise every Jacobian family.
    fn damped_model() -> AssembledModel<f64> {
        let mut s = TensegrityStructure::with_nodes(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
            Vector3::new(2.0, 0.5, 1.5),
        ]);
        s.bars.push(NodePair::new(0, 1));
        s.bar_masses.push(4.0);
        s.bar_radii.push(0.05);
        s.strings.push(NodePair::new(1, 2));
        s.string_stiffness.push(90.0);
        s.string_rest_lengths.push(1.0);
        s.point_mass_nodes.push(2);
        s.point_masses.push(1.2);
        s.fixed_nodes.push(0);
        s.damping_coefficient = 0.4;
        s.gravity = Vector3::new(0.0, 0.0, -9.806);
        build_structure(s).unwrap()
    }

    #[test]
    fn point_mass_disturbance_block_is_inverse_mass() {
        let mut s = TensegrityStructure::<f64>::with_nodes(vec![Vector3::new(0.0, 0.0, 0.0)]);
        s.point_mass_nodes.push(0);
        s.point_masses.push(2.5);
        let model = build_structure(s).unwrap();
        let op = OperatingPoint::rest(&model).unwrap();
        let lin = linearize_rigid(&model, &op).unwrap();
        let lower = lin.b_f.view((3, 0), (3, 3)).clone_owned();
        assert!((lower - DMatrix::identity(3, 3) / 2.5).norm() < 1e-14);
        // Structural blocks of A.
        assert_eq!(lin.a.view((0, 0), (3, 3)).norm(), 0.0);
        assert!((lin.a.view((0, 3), (3, 3)) - DMatrix::identity(3, 3)).norm() == 0.0);
    }

    #[test]
    fn sigma_matrix_reshaping_identity() {
        let model = damped_model();
        let q = &model.q0;
        let yhat = sigma_input_matrix(&model, q);
        // Columns are the stacked pieces of Y^T q.
        for k in 0..model.num_strings() {
            let col = model.string_weighted_gradient(q, k);
            assert_eq!(yhat.column(k), col.column(0));
        }
        // And Yhat * sigma reproduces the string force sum.
        let sigma = DVector::from_vec(vec![3.7]);
        let direct = &yhat * &sigma;
        let mut byhand = DVector::zeros(model.dim());
        let s = model.string_vector(q, 0);
        model.scatter_pair(model.structure.strings[0], &s, sigma[0], &mut byhand);
        assert!((direct - byhand).norm() < 1e-14);
    }

    #[test]
    fn all_blocks_match_finite_differences() {
        let model = damped_model();
        // Perturbed operating point away from slack switches, with motion
        // so the damper terms are active.
        let mut op = OperatingPoint::rest(&model).unwrap();
        op.q[5] += 0.07;
        op.q[7] -= 0.04;
        op.qdot = DVector::from_fn(9, |i, _| if i < 3 { 0.0 } else { 0.15 * (i as f64) - 0.6 });
        op.sigma = rigid::string_force_densities(&model, &op.q).unwrap();
        op.f = DVector::from_fn(9, |i, _| 0.3 * ((i % 4) as f64) - 0.2);
        assert!(model.string_vector(&op.q, 0).norm() > 1.05);

        let lin = linearize_rigid(&model, &op).unwrap();
        let check = verify_linearization(&model, &lin, 1e-6).unwrap();
        assert!(check.err_wrt_q < 1e-5, "dxi/dq err {:e}", check.err_wrt_q);
        assert!(
            check.err_wrt_qdot < 1e-5,
            "dxi/dqd err {:e}",
            check.err_wrt_qdot
        );
        assert!(
            check.err_wrt_sigma < 1e-5,
            "dxi/dsigma err {:e}",
            check.err_wrt_sigma
        );
        assert!(check.err_wrt_f < 1e-5, "dxi/df err {:e}", check.err_wrt_f);
    }

    #[test]
    fn checked_entry_point_accepts_good_points() {
        let model = damped_model();
        let mut op = OperatingPoint::rest(&model).unwrap();
        op.q[6] += 0.02;
        op.sigma = rigid::string_force_densities(&model, &op.q).unwrap();
        assert!(linearize_rigid_checked(&model, &op, 1e-5).is_ok());
    }

    #[test]
    fn free_bar_any_configuration_is_equilibrium() {
        let mut s = TensegrityStructure::<f64>::with_nodes(vec![
            Vector3::new(0.3, -0.2, 0.0),
            Vector3::new(1.9, 0.4, 0.7),
        ]);
        s.bars.push(NodePair::new(0, 1));
        s.bar_masses.push(1.0);
        s.bar_radii.push(0.02);
        let model = build_structure(s).unwrap();
        let sigma = DVector::zeros(0);
        let f0 = DVector::zeros(6);
        let q_eq = find_equilibrium(&model, &model.q0, &sigma, &f0).unwrap();
        assert!((q_eq - &model.q0).norm() < 1e-12);
    }

    #[test]
    fn pendulum_settles_to_hanging_configuration() {
        let l = 1.5;
        let mut s = TensegrityStructure::<f64>::with_nodes(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(l, 0.0, 0.0),
        ]);
        s.bars.push(NodePair::new(0, 1));
        s.bar_masses.push(2.0);
        s.bar_radii.push(0.02);
        s.fixed_nodes.push(0);
        s.gravity = Vector3::new(0.0, 0.0, -9.806);
        let model = build_structure(s).unwrap();

        // Guess tilted 30 degrees below horizontal.
        let mut q_guess = model.q0.clone();
        q_guess[3] = l * 0.5;
        q_guess[5] = -l * 0.866;
        let sigma = DVector::zeros(0);
        let f0 = DVector::zeros(6);
        let q_eq = find_equilibrium(&model, &q_guess, &sigma, &f0).unwrap();
        // Hanging straight down.
        assert!(q_eq[3].abs() < 1e-9);
        assert!(q_eq[4].abs() < 1e-9);
        assert!((q_eq[5] + l).abs() < 1e-9);

        // The found point really is an equilibrium of the full dynamics.
        let out = rigid::eom_rhs(&model, &q_eq, &DVector::zeros(6), &sigma, &f0).unwrap();
        assert!(out.qddot.amax() <= 1e-10);
    }

    #[test]
    fn matrix_text_round_trips() {
        let m = DMatrix::<f64>::from_row_slice(2, 3, &[1.5, -2.25, 3.0e-17, 0.0, 7.0, -1.0 / 3.0]);
        let text = matrix_to_text("test", &m);
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with('#'));
        assert_eq!(lines.next().unwrap(), "2 3");
        let parsed: Vec<f64> = lines
            .flat_map(|l| l.split_whitespace())
            .map(|tok| tok.parse().unwrap())
            .collect();
        let back = DMatrix::from_row_slice(2, 3, &parsed);
        assert_eq!(m, back);
    }
}
