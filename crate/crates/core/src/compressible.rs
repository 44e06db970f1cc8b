//! Axially compressible bars.
//!
//! Bar-length constraints are released and replaced by an elastic axial
//! potential; the transverse radius follows the Poisson effect. With the
//! length rate no longer zero, the kinetic energy picks up a correction
//! `T_f` and the mass side of the equations of motion splits into
//! configuration- and velocity-dependent pieces:
//!
//! ```text
//! d/dt (dT/dqd) = qdd^T M_qdd + qd^T M_qd + q^T M_q
//! M_qdd qdd - A^T lambda = xi3,     A qdd = 0
//! ```
//!
//! Only the linear boundary rows remain as holonomic constraints. The
//! radius is reconstructed algebraically from the current length through
//! the integrated Poisson relation `r(l) = r0 (l0/l)^nu`, which is exact
//! for the rate law `rdot = -nu r ldot / l` and avoids growing the state.

use nalgebra::{DMatrix, DVector};

use crate::correction::{ConstraintSet, EnergyModel};
use crate::fd;
use crate::integrator::OdeSystem;
use crate::linearization::{
    assemble_state_matrix, bar_input_matrix, sigma_input_matrix, stack_zero_block, OperatingPoint,
};
use crate::real::{lit, Real};
use crate::rigid::{self, damper_jacobians, DynamicsError};
use crate::state::ForceInputs;
use crate::topology::AssembledModel;

/// Bar material for the compressible formulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Material<T: Real> {
    pub density: T,
    pub youngs_modulus: T,
    pub poisson_ratio: T,
}

impl<T: Real> Material<T> {
    /// High-density polyethylene, the soft pneumatic-strut class.
    pub fn hdpe() -> Self {
        Self {
            density: lit(960.0),
            youngs_modulus: lit(1.0e9),
            poisson_ratio: lit(0.46),
        }
    }

    /// Aluminium, the metallic reference.
    pub fn aluminium() -> Self {
        Self {
            density: lit(2700.0),
            youngs_modulus: lit(68.0e9),
            poisson_ratio: lit(0.33),
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "hdpe" => Some(Self::hdpe()),
            "aluminium" | "aluminum" => Some(Self::aluminium()),
            _ => None,
        }
    }
}

/// Per-bar elastic properties.
#[derive(Debug, Clone)]
pub struct CompressibleBarProps<T: Real> {
    /// Axial stiffness `K_b = E A / l(0)`, N/m.
    pub stiffness: T,
    /// Rest length `l(0)`, m.
    pub rest_length: T,
    /// Rest radius `r(0)`, m.
    pub rest_radius: T,
    /// Poisson ratio, `0 <= nu < 0.5`.
    pub poisson_ratio: T,
}

impl<T: Real> CompressibleBarProps<T> {
    /// Radius at the current length from the integrated Poisson relation.
    pub fn radius_at(&self, l: T) -> T {
        self.rest_radius * (self.rest_length / l).powf(self.poisson_ratio)
    }

    /// Moment of inertia `m/12 (3 r(l)^2 + l^2)` at the current length.
    fn inertia_at(&self, mass: T, l: T) -> T {
        let r = self.radius_at(l);
        let twelfth = lit::<T>(1.0 / 12.0);
        mass * twelfth * (lit::<T>(3.0) * r * r + l * l)
    }

    /// `dI/dl`, using `dr/dl = -nu r / l`.
    fn inertia_slope(&self, mass: T, l: T) -> T {
        let r = self.radius_at(l);
        let dr_dl = -self.poisson_ratio * r / l;
        let twelfth = lit::<T>(1.0 / 12.0);
        mass * twelfth * (lit::<T>(6.0) * r * dr_dl + lit::<T>(2.0) * l)
    }
}

/// Derives per-bar props from a built model and a bar material. The bar
/// masses inside the model must already match the material density (use
/// [`with_bar_material`] on the structure first).
pub fn props_from_material<T: Real>(
    model: &AssembledModel<T>,
    material: &Material<T>,
) -> Vec<CompressibleBarProps<T>> {
    let pi = T::pi();
    (0..model.num_bars())
        .map(|k| {
            let r = model.structure.bar_radii[k];
            let l0 = model.bar_rest_lengths[k];
            CompressibleBarProps {
                stiffness: material.youngs_modulus * pi * r * r / l0,
                rest_length: l0,
                rest_radius: r,
                poisson_ratio: material.poisson_ratio,
            }
        })
        .collect()
}

/// Returns a copy of the structure with bar masses recomputed for the
/// material density (solid cylinders at the initial lengths).
pub fn with_bar_material<T: Real>(
    structure: &crate::topology::TensegrityStructure<T>,
    material: &Material<T>,
) -> crate::topology::TensegrityStructure<T> {
    let mut s = structure.clone();
    let pi = T::pi();
    for (k, pair) in s.bars.iter().enumerate() {
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        let r = s.bar_radii[k];
        s.bar_masses[k] = material.density * pi * r * r * l;
    }
    s
}

/// Length rate of bar `k`: `ldot = q^T X_k^T X_k qdot / l`.
pub fn bar_length_rate<T: Real>(
    model: &AssembledModel<T>,
    q: &DVector<T>,
    qdot: &DVector<T>,
    k: usize,
) -> Result<T, DynamicsError> {
    let b = model.bar_vector(q, k);
    let l = b.norm();
    if l <= T::zero() {
        return Err(DynamicsError::DegenerateBar(k));
    }
    let pair = model.structure.bars[k];
    let bdot = nalgebra::Vector3::new(
        qdot[3 * pair.to] - qdot[3 * pair.from],
        qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
        qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
    );
    Ok(b.dot(&bdot) / l)
}

/// Per-bar kinematic scalars shared by every assembly routine.
struct BarState<T: Real> {
    l: T,
    ldot: T,
    bdot_sq: T,
    inertia: T,
    d_inertia_dt: T,
    /// `I / l^2`.
    phi: T,
}

fn bar_state<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
    qdot: &DVector<T>,
    k: usize,
) -> Result<BarState<T>, DynamicsError> {
    let b = model.bar_vector(q, k);
    let l = b.norm();
    if l <= T::zero() {
        return Err(DynamicsError::DegenerateBar(k));
    }
    let pair = model.structure.bars[k];
    let bdot = nalgebra::Vector3::new(
        qdot[3 * pair.to] - qdot[3 * pair.from],
        qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
        qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
    );
    let ldot = b.dot(&bdot) / l;
    let mass = model.structure.bar_masses[k];
    let inertia = props[k].inertia_at(mass, l);
    let d_inertia_dt = props[k].inertia_slope(mass, l) * ldot;
    Ok(BarState {
        l,
        ldot,
        bdot_sq: bdot.norm_squared(),
        inertia,
        d_inertia_dt,
        phi: inertia / (l * l),
    })
}

/// Configuration-dependent mass matrix (bar inertias at current lengths).
pub fn mass_matrix<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
) -> Result<DMatrix<T>, DynamicsError> {
    let dim = model.dim();
    let quarter = lit::<T>(0.25);
    let mut m = DMatrix::zeros(dim, dim);
    for k in 0..model.num_bars() {
        let b = model.bar_vector(q, k);
        let l = b.norm();
        if l <= T::zero() {
            return Err(DynamicsError::DegenerateBar(k));
        }
        let mass = model.structure.bar_masses[k];
        let phi = props[k].inertia_at(mass, l) / (l * l);
        let pair = model.structure.bars[k];
        let (i, j) = (pair.from, pair.to);
        for r in 0..3 {
            m[(3 * i + r, 3 * i + r)] += mass * quarter + phi;
            m[(3 * j + r, 3 * j + r)] += mass * quarter + phi;
            m[(3 * i + r, 3 * j + r)] += mass * quarter - phi;
            m[(3 * j + r, 3 * i + r)] += mass * quarter - phi;
        }
    }
    for (k, &node) in model.structure.point_mass_nodes.iter().enumerate() {
        for r in 0..3 {
            m[(3 * node + r, 3 * node + r)] += model.structure.point_masses[k];
        }
    }
    Ok(m)
}

/// The assembled mass-side terms of the compressible equations.
#[derive(Debug, Clone)]
pub struct CompressibleEomTerms<T: Real> {
    /// Effective mass matrix on accelerations.
    pub m_qdd: DMatrix<T>,
    /// Velocity-coupling matrix.
    pub m_qd: DMatrix<T>,
    /// Configuration-coupling matrix.
    pub m_q: DMatrix<T>,
    /// Bar force densities `Psi_k = K_bk (1 - l(0)/l)`.
    pub psi: DVector<T>,
    /// Kinetic correction `T_f = 1/2 sum (I/l^2) ldot^2`.
    pub t_f: T,
}

/// Assembles `M_qdd`, `M_qd`, `M_q`, the bar force densities and `T_f`.
///
/// The three matrices satisfy (and are tested against)
/// `d/dt (dT/dqd) = qdd^T M_qdd + qd^T M_qd + q^T M_q` along any smooth
/// trajectory.
pub fn kinetic_terms<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
    qdot: &DVector<T>,
) -> Result<CompressibleEomTerms<T>, DynamicsError> {
    assert_eq!(props.len(), model.num_bars(), "one props entry per bar");
    let dim = model.dim();
    let half = lit::<T>(0.5);
    let three = lit::<T>(3.0);

    let mut m_qdd = mass_matrix(model, props, q)?;
    let mut m_qd = DMatrix::zeros(dim, dim);
    let mut m_q = DMatrix::zeros(dim, dim);
    let mut psi = DVector::zeros(model.num_bars());
    let mut t_f = T::zero();

    for k in 0..model.num_bars() {
        let st = bar_state(model, props, q, qdot, k)?;
        let pair = model.structure.bars[k];
        psi[k] = props[k].stiffness * (T::one() - props[k].rest_length / st.l);
        t_f += half * st.phi * st.ldot * st.ldot;

        // Axial rank-one correction: -(I/l^4) u u^T with u = X^T X q.
        let b = model.bar_vector(q, k);
        let l4 = st.l * st.l * st.l * st.l;
        rigid::add_scattered_outer(model, pair, &(b * (-st.inertia / l4)), &b, &mut m_qdd);

        // M_qd = sum [ dI/dt / l^2 - 3 I ldot / l^3 ] X^T X.
        let c_qd =
            st.d_inertia_dt / (st.l * st.l) - three * st.inertia * st.ldot / (st.l * st.l * st.l);
        model.add_pair_outer(pair, c_qd, &mut m_qd);

        // M_q = -sum [ dI/dt ldot / l^3 - 3 I ldot^2 / l^4
        //              + (|bdot|^2 - ldot^2) I / l^4 ] X^T X.
        let l3 = st.l * st.l * st.l;
        let c_q = st.d_inertia_dt * st.ldot / l3 - three * st.inertia * st.ldot * st.ldot / l4
            + (st.bdot_sq - st.ldot * st.ldot) * st.inertia / l4;
        model.add_pair_outer(pair, -c_q, &mut m_q);
    }

    Ok(CompressibleEomTerms {
        m_qdd,
        m_qd,
        m_q,
        psi,
        t_f,
    })
}

/// Bar force densities from the elastic law (negative in compression).
pub fn bar_force_densities<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let mut psi = DVector::zeros(model.num_bars());
    for k in 0..model.num_bars() {
        let l = model.bar_vector(q, k).norm();
        if l <= T::zero() {
            return Err(DynamicsError::DegenerateBar(k));
        }
        psi[k] = props[k].stiffness * (T::one() - props[k].rest_length / l);
    }
    Ok(psi)
}

/// Elastic potential stored in the bars.
pub fn bar_potential<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
) -> Result<T, DynamicsError> {
    let half = lit::<T>(0.5);
    let mut v = T::zero();
    for k in 0..model.num_bars() {
        let l = model.bar_vector(q, k).norm();
        if l <= T::zero() {
            return Err(DynamicsError::DegenerateBar(k));
        }
        let stretch = l - props[k].rest_length;
        v += half * props[k].stiffness * stretch * stretch;
    }
    Ok(v)
}

/// Gradient of the bar potential as a column vector,
/// `sum_k Psi_k X_k^T X_k q`.
pub fn bar_potential_gradient<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
) -> Result<DVector<T>, DynamicsError> {
    let psi = bar_force_densities(model, props, q)?;
    let mut g = DVector::zeros(model.dim());
    for k in 0..model.num_bars() {
        if psi[k] != T::zero() {
            let b = model.bar_vector(q, k);
            model.scatter_pair(model.structure.bars[k], &b, psi[k], &mut g);
        }
    }
    Ok(g)
}

/// Acceleration and multipliers of the compressible system under explicit
/// force densities (string `sigma`, bar `psi`) and external force. The
/// damper force is folded in from the structure's damping coefficient.
pub fn eom_rhs<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
    qdot: &DVector<T>,
    sigma: &DVector<T>,
    psi: &DVector<T>,
    f_ext: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>), DynamicsError> {
    let f_nc = f_ext + rigid::damper_forces(model, q, qdot)?;
    eom_rhs_with_forces(model, props, q, qdot, sigma, psi, &f_nc)
}

/// Same with the non-conservative force pre-summed (dampers included).
pub fn eom_rhs_with_forces<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q: &DVector<T>,
    qdot: &DVector<T>,
    sigma: &DVector<T>,
    psi: &DVector<T>,
    f_nc: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>), DynamicsError> {
    let terms = kinetic_terms(model, props, q, qdot)?;

    // xi3 = -[M_q^T + (Psi^T (x) I) X^T + (sigma^T (x) I) Y^T] q
    //       - M_qd^T qdot + G + f.  (M_q, M_qd are symmetric.)
    let mut xi3 = &model.gravity_vec + f_nc;
    xi3 -= &terms.m_q * q;
    xi3 -= &terms.m_qd * qdot;
    for k in 0..model.num_bars() {
        if psi[k] != T::zero() {
            let b = model.bar_vector(q, k);
            model.scatter_pair(model.structure.bars[k], &b, -psi[k], &mut xi3);
        }
    }
    for k in 0..model.num_strings() {
        if sigma[k] != T::zero() {
            let s = model.string_vector(q, k);
            model.scatter_pair(model.structure.strings[k], &s, -sigma[k], &mut xi3);
        }
    }

    solve_saddle(model, &terms.m_qdd, &xi3)
}

/// Solves `[M_qdd, -A^T; -A, 0] [qdd; lambda] = [xi3; 0]`.
fn solve_saddle<T: Real>(
    model: &AssembledModel<T>,
    m_qdd: &DMatrix<T>,
    xi3: &DVector<T>,
) -> Result<(DVector<T>, DVector<T>), DynamicsError> {
    let dim = model.dim();
    let m_a = model.num_boundary_rows();
    let mut kkt = DMatrix::zeros(dim + m_a, dim + m_a);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(m_qdd);
    kkt.view_mut((0, dim), (dim, m_a))
        .copy_from(&(-model.boundary_a.transpose()));
    kkt.view_mut((dim, 0), (m_a, dim))
        .copy_from(&(-&model.boundary_a));
    let mut rhs = DVector::zeros(dim + m_a);
    rhs.rows_mut(0, dim).copy_from(xi3);

    let sol = kkt.lu().solve(&rhs).ok_or(DynamicsError::SingularSaddle)?;
    if !sol.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::SingularSaddle);
    }
    Ok((
        sol.rows(0, dim).clone_owned(),
        sol.rows(dim, m_a).clone_owned(),
    ))
}

/// Tangent structural stiffness at an equilibrium: curvature of the string
/// and bar potentials. Slack strings contribute nothing; `sigma` and `psi`
/// are taken as given for the force-density terms.
pub fn structural_stiffness<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q_eq: &DVector<T>,
    sigma: &DVector<T>,
    psi: &DVector<T>,
) -> Result<DMatrix<T>, DynamicsError> {
    let dim = model.dim();
    let mut k_sys = DMatrix::zeros(dim, dim);
    for k in 0..model.num_strings() {
        let s = model.string_vector(q_eq, k);
        let len = s.norm();
        if len <= T::zero() {
            return Err(DynamicsError::DegenerateString(k));
        }
        if len < model.structure.string_rest_lengths[k] {
            continue;
        }
        let pair = model.structure.strings[k];
        model.add_pair_outer(pair, sigma[k], &mut k_sys);
        let c = model.structure.string_stiffness[k] * model.structure.string_rest_lengths[k]
            / (len * len * len);
        rigid::add_scattered_outer(model, pair, &(s * c), &s, &mut k_sys);
    }
    for k in 0..model.num_bars() {
        let b = model.bar_vector(q_eq, k);
        let l = b.norm();
        if l <= T::zero() {
            return Err(DynamicsError::DegenerateBar(k));
        }
        let pair = model.structure.bars[k];
        model.add_pair_outer(pair, psi[k], &mut k_sys);
        let c = props[k].stiffness * props[k].rest_length / (l * l * l);
        rigid::add_scattered_outer(model, pair, &(b * c), &b, &mut k_sys);
    }
    Ok(k_sys)
}

/// Energy of the compressible system:
/// `E = 1/2 qd^T M(q) qd - T_f + V_s + V_g + V_b`.
pub struct CompressibleEnergy<'a, T: Real> {
    pub model: &'a AssembledModel<T>,
    pub props: &'a [CompressibleBarProps<T>],
}

impl<T: Real> CompressibleEnergy<'_, T> {
    fn kinetic(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<T, DynamicsError> {
        let half = lit::<T>(0.5);
        let m = mass_matrix(self.model, self.props, q)?;
        let mut t = half * qdot.dot(&(&m * qdot));
        for k in 0..self.model.num_bars() {
            let st = bar_state(self.model, self.props, q, qdot, k)?;
            t -= half * st.phi * st.ldot * st.ldot;
        }
        Ok(t)
    }
}

impl<T: Real> EnergyModel<T> for CompressibleEnergy<'_, T> {
    fn energy(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<T, DynamicsError> {
        Ok(self.kinetic(q, qdot)?
            + rigid::string_potential(self.model, q)
            + rigid::gravity_potential(self.model, q)
            + bar_potential(self.model, self.props, q)?)
    }

    fn grad_q(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError> {
        let model = self.model;
        let half = lit::<T>(0.5);
        let two = lit::<T>(2.0);
        let mut g = rigid::string_potential_gradient(model, q)? - &model.gravity_vec;
        g += bar_potential_gradient(model, self.props, q)?;

        // Kinetic part: d/dq [ 1/2 qd^T M(q) qd - T_f ].
        for k in 0..model.num_bars() {
            let st = bar_state(model, self.props, q, qdot, k)?;
            let pair = model.structure.bars[k];
            let b = model.bar_vector(q, k);
            let mass = model.structure.bar_masses[k];
            // phi'(l) = dI/dl / l^2 - 2 I / l^3.
            let phi_slope = self.props[k].inertia_slope(mass, st.l) / (st.l * st.l)
                - two * st.inertia / (st.l * st.l * st.l);
            // d l/dq = u / l, d ldot/dq = v / l - (ldot/l^2) u, where
            // u = X^T X q (scatter of b) and v = X^T X qd (scatter of bdot).
            let bdot = nalgebra::Vector3::new(
                qdot[3 * pair.to] - qdot[3 * pair.from],
                qdot[3 * pair.to + 1] - qdot[3 * pair.from + 1],
                qdot[3 * pair.to + 2] - qdot[3 * pair.from + 2],
            );
            // 1/2 phi' (|bdot|^2 - ldot^2) u/l  - phi ldot v/l + phi ldot^2 u/l^2
            let coeff_u = half * phi_slope * (st.bdot_sq - st.ldot * st.ldot) / st.l
                + st.phi * st.ldot * st.ldot / (st.l * st.l);
            let coeff_v = -st.phi * st.ldot / st.l;
            model.scatter_pair(pair, &(b * coeff_u), T::one(), &mut g);
            model.scatter_pair(pair, &(bdot * coeff_v), T::one(), &mut g);
        }
        Ok(g)
    }

    fn grad_qdot(&self, q: &DVector<T>, qdot: &DVector<T>) -> Result<DVector<T>, DynamicsError> {
        let model = self.model;
        let m = mass_matrix(model, self.props, q)?;
        let mut g = &m * qdot;
        for k in 0..model.num_bars() {
            let st = bar_state(model, self.props, q, qdot, k)?;
            let b = model.bar_vector(q, k);
            // - phi ldot u/l
            model.scatter_pair(
                model.structure.bars[k],
                &(b * (-st.phi * st.ldot / st.l)),
                T::one(),
                &mut g,
            );
        }
        Ok(g)
    }
}

/// Compressible system driven by the shared integrator: boundary-only
/// constraints, elastic force densities (unless overridden for strings).
pub struct CompressibleSystem<'a, T: Real> {
    pub model: &'a AssembledModel<T>,
    pub props: &'a [CompressibleBarProps<T>],
    pub inputs: &'a ForceInputs<T>,
    energy: CompressibleEnergy<'a, T>,
}

impl<'a, T: Real> CompressibleSystem<'a, T> {
    pub fn new(
        model: &'a AssembledModel<T>,
        props: &'a [CompressibleBarProps<T>],
        inputs: &'a ForceInputs<T>,
    ) -> Self {
        Self {
            model,
            props,
            inputs,
            energy: CompressibleEnergy { model, props },
        }
    }
}

impl<T: Real> OdeSystem<T> for CompressibleSystem<'_, T> {
    fn model(&self) -> &AssembledModel<T> {
        self.model
    }

    fn constraint_set(&self) -> ConstraintSet {
        ConstraintSet::BoundaryOnly
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
        let psi = bar_force_densities(self.model, self.props, q)?;
        let mut f_nc = rigid::damper_forces(self.model, q, qdot)?;
        if !self.inputs.f_ext.is_none() {
            f_nc += self.inputs.f_ext.eval(t, self.model.dim());
        }
        let (qddot, _) = eom_rhs_with_forces(self.model, self.props, q, qdot, &sigma, &psi, &f_nc)?;
        Ok((qddot, f_nc.dot(qdot)))
    }
}

/// State-space model of the compressible dynamics at a static equilibrium;
/// the control matrix covers `[dsigma; dpsi]`.
#[derive(Debug, Clone)]
pub struct CompressibleLinearModel<T: Real> {
    pub a: DMatrix<T>,
    /// Columns: string force densities first, then bar force densities.
    pub b_u: DMatrix<T>,
    pub b_f: DMatrix<T>,
    pub operating_point: OperatingPoint<T>,
    pub psi0: DVector<T>,
}

/// Linearizes the compressible dynamics about a static equilibrium
/// (`qdot = 0`, `qddot = 0`; both are checked). At such a point the
/// velocity-coupling terms vanish and the `dM_qdd/dq qdd` term drops,
/// leaving `dqdd = M_beta xi4` with `M_beta` the upper-left block of the
/// inverted saddle matrix.
pub fn linearize_compressible<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    q0: &DVector<T>,
    sigma0: &DVector<T>,
    psi0: &DVector<T>,
    f0: &DVector<T>,
) -> Result<CompressibleLinearModel<T>, DynamicsError> {
    let dim = model.dim();
    let m_a = model.num_boundary_rows();
    let zero_qd = DVector::zeros(dim);

    let (qddot, _) = eom_rhs(model, props, q0, &zero_qd, sigma0, psi0, f0)?;
    let resid = qddot.amax();
    if resid > lit::<T>(1e-6) {
        return Err(DynamicsError::NotAnEquilibrium(
            resid.to_f64().unwrap_or(f64::NAN),
        ));
    }

    // M_beta: upper-left 3n x 3n block of the inverted saddle matrix.
    let terms = kinetic_terms(model, props, q0, &zero_qd)?;
    let mut kkt = DMatrix::zeros(dim + m_a, dim + m_a);
    kkt.view_mut((0, 0), (dim, dim)).copy_from(&terms.m_qdd);
    kkt.view_mut((0, dim), (dim, m_a))
        .copy_from(&(-model.boundary_a.transpose()));
    kkt.view_mut((dim, 0), (m_a, dim))
        .copy_from(&(-&model.boundary_a));
    let m_alpha = kkt.try_inverse().ok_or(DynamicsError::SingularSaddle)?;
    let m_beta = m_alpha.view((0, 0), (dim, dim)).clone_owned();

    // d xi3/dq at equilibrium, force densities held fixed:
    // -(sum sigma_k Y_k^T Y_k + sum Psi_k X_k^T X_k). The M_q and M_qd
    // terms are quadratic in qdot and vanish identically here.
    let mut dxi3_dq = DMatrix::zeros(dim, dim);
    for k in 0..model.num_strings() {
        if sigma0[k] != T::zero() {
            model.add_pair_outer(model.structure.strings[k], -sigma0[k], &mut dxi3_dq);
        }
    }
    for k in 0..model.num_bars() {
        if psi0[k] != T::zero() {
            model.add_pair_outer(model.structure.bars[k], -psi0[k], &mut dxi3_dq);
        }
    }

    // d xi3/dqdot at equilibrium: only the damper survives.
    let (_, dfd_dqd) = damper_jacobians(model, q0, &zero_qd)?;

    let a_q = &m_beta * &dxi3_dq;
    let a_qd = &m_beta * &dfd_dqd;

    // d xi3/dsigma = -Yhat and d xi3/dpsi = -Xhat (both force sums enter
    // xi3 with a minus sign); d xi3/df = I.
    let yhat = sigma_input_matrix(model, q0);
    let xhat = bar_input_matrix(model, q0);
    let mut b_lower = DMatrix::zeros(dim, model.num_strings() + model.num_bars());
    b_lower
        .view_mut((0, 0), (dim, model.num_strings()))
        .copy_from(&(-(&m_beta * &yhat)));
    b_lower
        .view_mut((0, model.num_strings()), (dim, model.num_bars()))
        .copy_from(&(-(&m_beta * &xhat)));

    Ok(CompressibleLinearModel {
        a: assemble_state_matrix(dim, &a_q, &a_qd),
        b_u: stack_zero_block(dim, &b_lower),
        b_f: stack_zero_block(dim, &m_beta),
        operating_point: OperatingPoint {
            q: q0.clone(),
            qdot: zero_qd,
            sigma: sigma0.clone(),
            f: f0.clone(),
        },
        psi0: psi0.clone(),
    })
}

/// Worst relative block error of a compressible linear model against
/// central finite differences of the nonlinear right-hand side.
pub fn verify_compressible_linearization<T: Real>(
    model: &AssembledModel<T>,
    props: &[CompressibleBarProps<T>],
    lin: &CompressibleLinearModel<T>,
    h: T,
) -> Result<T, DynamicsError> {
    let op = &lin.operating_point;
    let psi0 = &lin.psi0;
    let dim = model.dim();
    let n_s = model.num_strings();
    let n_b = model.num_bars();

    let xi = |q: &DVector<T>, qd: &DVector<T>, s: &DVector<T>, p: &DVector<T>, f: &DVector<T>| {
        eom_rhs(model, props, q, qd, s, p, f)
            .expect("eom at perturbed point")
            .0
    };

    let a_q = lin.a.view((dim, 0), (dim, dim)).clone_owned();
    let a_qd = lin.a.view((dim, dim), (dim, dim)).clone_owned();
    let b_s = lin.b_u.view((dim, 0), (dim, n_s)).clone_owned();
    let b_p = lin.b_u.view((dim, n_s), (dim, n_b)).clone_owned();
    let b_f = lin.b_f.view((dim, 0), (dim, dim)).clone_owned();

    let fd_q = fd::jacobian(|q| xi(q, &op.qdot, &op.sigma, psi0, &op.f), &op.q, h);
    let fd_qd = fd::jacobian(|qd| xi(&op.q, qd, &op.sigma, psi0, &op.f), &op.qdot, h);
    let fd_s = fd::jacobian(|s| xi(&op.q, &op.qdot, s, psi0, &op.f), &op.sigma, h);
    let fd_p = fd::jacobian(|p| xi(&op.q, &op.qdot, &op.sigma, p, &op.f), psi0, h);
    let fd_f = fd::jacobian(|f| xi(&op.q, &op.qdot, &op.sigma, psi0, f), &op.f, h);

    let err = fd::relative_error(&fd_q, &a_q)
        .max(fd::relative_error(&fd_qd, &a_qd))
        .max(fd::relative_error(&fd_s, &b_s))
        .max(fd::relative_error(&fd_p, &b_p))
        .max(fd::relative_error(&fd_f, &b_f));
    Ok(err)
}
