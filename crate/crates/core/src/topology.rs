//! Structure definition and connectivity machinery.
//!
//! A tensegrity structure is described by nodal positions plus connectivity
//! of bars, strings and point masses. Everything downstream (mass matrix,
//! forces, constraints) is assembled from per-member selector matrices that
//! pick member vectors out of the stacked coordinate vector `q`:
//!
//! - `b_k = X_k q` (bar vector), `b̄_k = X̄_k q` (bar midpoint),
//! - `s_k = Y_k q` (string vector), `p_k = P_k q` (point-mass position).
//!
//! Coordinates are always 3D. Planar structures are embedded in 3D with the
//! out-of-plane coordinate pinned by extra boundary rows. Node indices are
//! 0-based throughout the API; the text file format and CSV headers are
//! 1-based.

use nalgebra::{DMatrix, DVector, Vector3};
use thiserror::Error;

use crate::real::Real;

/// Coordinate axis, used to pin single coordinates of otherwise free nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// A connectivity row: the member vector points from `from` (the -1 entry)
/// to `to` (the +1 entry).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodePair {
    pub from: usize,
    pub to: usize,
}

impl NodePair {
    pub fn new(from: usize, to: usize) -> Self {
        Self { from, to }
    }

    fn unordered(&self) -> (usize, usize) {
        if self.from <= self.to {
            (self.from, self.to)
        } else {
            (self.to, self.from)
        }
    }
}

/// Immutable topology and material description of a tensegrity structure.
#[derive(Debug, Clone)]
pub struct TensegrityStructure<T: Real> {
    /// Initial nodal positions `n_i`, meters.
    pub nodes: Vec<Vector3<T>>,
    /// Bar connectivity rows (one per bar).
    pub bars: Vec<NodePair>,
    /// String connectivity rows (one per string).
    pub strings: Vec<NodePair>,
    /// Nodes carrying point masses. Only legal on nodes no bar touches.
    pub point_mass_nodes: Vec<usize>,
    /// Bar masses, kg.
    pub bar_masses: Vec<T>,
    /// Bar radii, m (solid cylinders).
    pub bar_radii: Vec<T>,
    /// Point masses, kg.
    pub point_masses: Vec<T>,
    /// String stiffnesses `K_k`, N/m.
    pub string_stiffness: Vec<T>,
    /// String natural lengths `l_sk`, m.
    pub string_rest_lengths: Vec<T>,
    /// Damping coefficient shared by all string dampers, N·s/m.
    pub damping_coefficient: T,
    /// Nodes pinned to their initial position (three boundary rows each).
    pub fixed_nodes: Vec<usize>,
    /// Single coordinates pinned to their initial value (one row each);
    /// used to embed planar structures in 3D.
    pub pinned_coords: Vec<(usize, Axis)>,
    /// Gravity vector, m/s^2.
    pub gravity: Vector3<T>,
}

impl<T: Real> TensegrityStructure<T> {
    /// An empty structure with `nodes` and zero gravity; members are pushed
    /// by the caller. Intended for tests and builtin models.
    pub fn with_nodes(nodes: Vec<Vector3<T>>) -> Self {
        Self {
            nodes,
            bars: Vec::new(),
            strings: Vec::new(),
            point_mass_nodes: Vec::new(),
            bar_masses: Vec::new(),
            bar_radii: Vec::new(),
            point_masses: Vec::new(),
            string_stiffness: Vec::new(),
            string_rest_lengths: Vec::new(),
            damping_coefficient: T::zero(),
            fixed_nodes: Vec::new(),
            pinned_coords: Vec::new(),
            gravity: Vector3::zeros(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Bar connectivity matrix with entries in {-1, 0, +1}.
    pub fn bar_connectivity(&self) -> DMatrix<i8> {
        connectivity_matrix(&self.bars, self.nodes.len())
    }

    /// String connectivity matrix with entries in {-1, 0, +1}.
    pub fn string_connectivity(&self) -> DMatrix<i8> {
        connectivity_matrix(&self.strings, self.nodes.len())
    }
}

fn connectivity_matrix(rows: &[NodePair], n: usize) -> DMatrix<i8> {
    let mut c = DMatrix::zeros(rows.len(), n);
    for (k, pair) in rows.iter().enumerate() {
        c[(k, pair.from)] = -1;
        c[(k, pair.to)] = 1;
    }
    c
}

/// Per-member selector matrices (dense form).
#[derive(Debug, Clone)]
pub struct SelectorSet<T: Real> {
    /// `X_k`, one 3 x 3n matrix per bar: `b_k = X_k q`.
    pub x: Vec<DMatrix<T>>,
    /// `X̄_k`: `b̄_k = X̄_k q` is the bar midpoint.
    pub xbar: Vec<DMatrix<T>>,
    /// `Y_k`, one per string: `s_k = Y_k q`.
    pub y: Vec<DMatrix<T>>,
    /// `P_k`, one per point mass: `p_k = P_k q`.
    pub p: Vec<DMatrix<T>>,
}

fn pair_selector<T: Real>(pair: NodePair, n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(3, 3 * n);
    for r in 0..3 {
        m[(r, 3 * pair.from + r)] = -T::one();
        m[(r, 3 * pair.to + r)] = T::one();
    }
    m
}

fn midpoint_selector<T: Real>(pair: NodePair, n: usize) -> DMatrix<T> {
    let half = T::from_f64_lossy(0.5);
    let mut m = DMatrix::zeros(3, 3 * n);
    for r in 0..3 {
        m[(r, 3 * pair.from + r)] = half;
        m[(r, 3 * pair.to + r)] = half;
    }
    m
}

fn point_selector<T: Real>(node: usize, n: usize) -> DMatrix<T> {
    let mut m = DMatrix::zeros(3, 3 * n);
    for r in 0..3 {
        m[(r, 3 * node + r)] = T::one();
    }
    m
}

/// Validation failures raised by [`build_structure`].
#[derive(Debug, Error)]
pub enum BuildError {
    #[error("structure has no nodes")]
    NoNodes,
    #[error("node {0} has a non-finite coordinate")]
    NonFiniteNode(usize),
    #[error("gravity vector is not finite")]
    NonFiniteGravity,
    #[error("{kind} {member}: node index {index} out of range (0..{count})")]
    MemberIndexOutOfRange {
        kind: &'static str,
        member: usize,
        index: usize,
        count: usize,
    },
    #[error("{kind} {member}: connects node {node} to itself")]
    SelfLoop {
        kind: &'static str,
        member: usize,
        node: usize,
    },
    #[error("bars {first} and {second} connect the same node pair")]
    DuplicateBar { first: usize, second: usize },
    #[error("{kind} property list has {got} entries, expected {expected}")]
    PropertyLengthMismatch {
        kind: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("{kind} {member}: {quantity} must be strictly positive")]
    NonPositiveProperty {
        kind: &'static str,
        member: usize,
        quantity: &'static str,
    },
    #[error("damping coefficient must be non-negative")]
    NegativeDamping,
    #[error("point mass {member} sits on node {node}, which is an endpoint of a bar")]
    PointMassOnBarNode { member: usize, node: usize },
    #[error("fixed node index {0} out of range")]
    FixedNodeOutOfRange(usize),
    #[error("node {0} is fixed more than once")]
    DuplicateFixedNode(usize),
    #[error("pinned coordinate (node {node}, axis {axis}) out of range or duplicated")]
    BadPinnedCoordinate { node: usize, axis: usize },
    #[error("{kind} {member} has zero length in the initial configuration")]
    ZeroInitialLength { kind: &'static str, member: usize },
    #[error(
        "node {0} carries no mass: every node must be a bar endpoint or carry a point mass, \
         otherwise the mass matrix is singular"
    )]
    MasslessNode(usize),
}

/// Precomputed model for the rigid-bar case: selectors, vectorized initial
/// coordinates, rest lengths, boundary rows `A q = b`, mass matrix and
/// gravity vector. Immutable after construction and safe to share across
/// threads.
#[derive(Debug, Clone)]
pub struct AssembledModel<T: Real> {
    pub structure: TensegrityStructure<T>,
    pub selectors: SelectorSet<T>,
    /// `q0 = vec(N)`: node coordinates stacked node-major.
    pub q0: DVector<T>,
    /// Rest bar lengths `l_bk = |X_k q0|`.
    pub bar_rest_lengths: Vec<T>,
    /// Bar moments of inertia about the mid-perpendicular axes,
    /// `I_bk = m/12 (3 r^2 + l^2)`, at the rest length.
    pub bar_inertias: Vec<T>,
    /// Boundary-condition rows: `A q = b` (fixed nodes, then pinned coords).
    pub boundary_a: DMatrix<T>,
    pub boundary_b: DVector<T>,
    /// Constant mass matrix of the rigid case.
    pub mass: DMatrix<T>,
    /// Gravity vector `G` with `V_g(q) = -G^T q`.
    pub gravity_vec: DVector<T>,
    mass_chol: nalgebra::Cholesky<T, nalgebra::Dyn>,
}

impl<T: Real> AssembledModel<T> {
    /// Coordinate dimension `3n`.
    pub fn dim(&self) -> usize {
        3 * self.structure.nodes.len()
    }

    pub fn num_bars(&self) -> usize {
        self.structure.bars.len()
    }

    pub fn num_strings(&self) -> usize {
        self.structure.strings.len()
    }

    /// Number of boundary rows (fixed-node rows plus pinned coordinates).
    pub fn num_boundary_rows(&self) -> usize {
        self.boundary_a.nrows()
    }

    /// Total number of constraint rows: boundary rows plus one per bar.
    pub fn num_constraints(&self) -> usize {
        self.num_boundary_rows() + self.num_bars()
    }

    /// Position of node `i` read out of a coordinate vector.
    pub fn node_position(&self, q: &DVector<T>, i: usize) -> Vector3<T> {
        Vector3::new(q[3 * i], q[3 * i + 1], q[3 * i + 2])
    }

    /// Bar vector `b_k = X_k q`.
    pub fn bar_vector(&self, q: &DVector<T>, k: usize) -> Vector3<T> {
        let pair = self.structure.bars[k];
        self.node_position(q, pair.to) - self.node_position(q, pair.from)
    }

    /// String vector `s_k = Y_k q`.
    pub fn string_vector(&self, q: &DVector<T>, k: usize) -> Vector3<T> {
        let pair = self.structure.strings[k];
        self.node_position(q, pair.to) - self.node_position(q, pair.from)
    }

    /// Bar midpoint `b̄_k = X̄_k q`.
    pub fn bar_midpoint(&self, q: &DVector<T>, k: usize) -> Vector3<T> {
        let pair = self.structure.bars[k];
        let half = T::from_f64_lossy(0.5);
        (self.node_position(q, pair.to) + self.node_position(q, pair.from)) * half
    }

    /// `X_k^T X_k q`, assembled without forming the matrix: `-b_k` scattered
    /// at the tail block and `+b_k` at the head block.
    pub fn bar_weighted_gradient(&self, q: &DVector<T>, k: usize) -> DVector<T> {
        let pair = self.structure.bars[k];
        let b = self.bar_vector(q, k);
        let mut out = DVector::zeros(self.dim());
        for r in 0..3 {
            out[3 * pair.from + r] = -b[r];
            out[3 * pair.to + r] = b[r];
        }
        out
    }

    /// `Y_k^T Y_k q` for string `k`.
    pub fn string_weighted_gradient(&self, q: &DVector<T>, k: usize) -> DVector<T> {
        let pair = self.structure.strings[k];
        let s = self.string_vector(q, k);
        let mut out = DVector::zeros(self.dim());
        for r in 0..3 {
            out[3 * pair.from + r] = -s[r];
            out[3 * pair.to + r] = s[r];
        }
        out
    }

    /// Adds `scale * Y_k^T v` (or `X_k^T v` for bars) into `out`.
    pub(crate) fn scatter_pair(
        &self,
        pair: NodePair,
        v: &Vector3<T>,
        scale: T,
        out: &mut DVector<T>,
    ) {
        for r in 0..3 {
            out[3 * pair.from + r] -= scale * v[r];
            out[3 * pair.to + r] += scale * v[r];
        }
    }

    /// Adds `scale * X_k^T X_k` into the square matrix `out`.
    pub(crate) fn add_pair_outer(&self, pair: NodePair, scale: T, out: &mut DMatrix<T>) {
        let (i, j) = (pair.from, pair.to);
        for r in 0..3 {
            out[(3 * i + r, 3 * i + r)] += scale;
            out[(3 * j + r, 3 * j + r)] += scale;
            out[(3 * i + r, 3 * j + r)] -= scale;
            out[(3 * j + r, 3 * i + r)] -= scale;
        }
    }

    /// Solves `M x = rhs` using the cached factorization of the mass matrix.
    pub fn mass_solve(&self, rhs: &DVector<T>) -> DVector<T> {
        self.mass_chol.solve(rhs)
    }

    /// Solves `M X = RHS` column-wise.
    pub fn mass_solve_mat(&self, rhs: &DMatrix<T>) -> DMatrix<T> {
        self.mass_chol.solve(rhs)
    }
}

/// Validates the structure description and precomputes the assembled model.
pub fn build_structure<T: Real>(
    spec: TensegrityStructure<T>,
) -> Result<AssembledModel<T>, BuildError> {
    let n = spec.nodes.len();
    if n == 0 {
        return Err(BuildError::NoNodes);
    }
    for (i, node) in spec.nodes.iter().enumerate() {
        if !node.iter().all(|c| c.is_finite()) {
            return Err(BuildError::NonFiniteNode(i));
        }
    }
    if !spec.gravity.iter().all(|c| c.is_finite()) {
        return Err(BuildError::NonFiniteGravity);
    }

    check_members("bar", &spec.bars, n)?;
    check_members("string", &spec.strings, n)?;

    let mut seen = std::collections::HashMap::new();
    for (k, pair) in spec.bars.iter().enumerate() {
        if let Some(&first) = seen.get(&pair.unordered()) {
            return Err(BuildError::DuplicateBar { first, second: k });
        }
        seen.insert(pair.unordered(), k);
    }

    check_property_len("bar mass", spec.bar_masses.len(), spec.bars.len())?;
    check_property_len("bar radius", spec.bar_radii.len(), spec.bars.len())?;
    check_property_len(
        "string stiffness",
        spec.string_stiffness.len(),
        spec.strings.len(),
    )?;
    check_property_len(
        "string rest length",
        spec.string_rest_lengths.len(),
        spec.strings.len(),
    )?;
    check_property_len(
        "point mass",
        spec.point_masses.len(),
        spec.point_mass_nodes.len(),
    )?;

    check_positive("bar", "mass", &spec.bar_masses)?;
    check_positive("bar", "radius", &spec.bar_radii)?;
    check_positive("string", "stiffness", &spec.string_stiffness)?;
    check_positive("string", "rest length", &spec.string_rest_lengths)?;
    check_positive("point mass", "mass", &spec.point_masses)?;
    if spec.damping_coefficient < T::zero() {
        return Err(BuildError::NegativeDamping);
    }

    let mut on_bar = vec![false; n];
    for pair in &spec.bars {
        on_bar[pair.from] = true;
        on_bar[pair.to] = true;
    }
    let mut has_mass = on_bar.clone();
    for (k, &node) in spec.point_mass_nodes.iter().enumerate() {
        if node >= n {
            return Err(BuildError::MemberIndexOutOfRange {
                kind: "point mass",
                member: k,
                index: node,
                count: n,
            });
        }
        if on_bar[node] {
            return Err(BuildError::PointMassOnBarNode { member: k, node });
        }
        has_mass[node] = true;
    }
    if let Some(node) = has_mass.iter().position(|&m| !m) {
        return Err(BuildError::MasslessNode(node));
    }

    let mut fixed_seen = vec![false; n];
    for &node in &spec.fixed_nodes {
        if node >= n {
            return Err(BuildError::FixedNodeOutOfRange(node));
        }
        if fixed_seen[node] {
            return Err(BuildError::DuplicateFixedNode(node));
        }
        fixed_seen[node] = true;
    }
    let mut pinned_seen = std::collections::HashSet::new();
    for &(node, axis) in &spec.pinned_coords {
        // A pin on an already-fixed node would duplicate a boundary row and
        // make the constraint Jacobian rank deficient.
        if node >= n || fixed_seen[node] || !pinned_seen.insert((node, axis.index())) {
            return Err(BuildError::BadPinnedCoordinate {
                node,
                axis: axis.index(),
            });
        }
    }

    // Vectorize initial coordinates: q0 = vec(N), node-major.
    let mut q0 = DVector::zeros(3 * n);
    for (i, node) in spec.nodes.iter().enumerate() {
        for r in 0..3 {
            q0[3 * i + r] = node[r];
        }
    }

    let mut bar_rest_lengths = Vec::with_capacity(spec.bars.len());
    for (k, pair) in spec.bars.iter().enumerate() {
        let l = (spec.nodes[pair.to] - spec.nodes[pair.from]).norm();
        if l <= T::zero() {
            return Err(BuildError::ZeroInitialLength {
                kind: "bar",
                member: k,
            });
        }
        bar_rest_lengths.push(l);
    }
    for (k, pair) in spec.strings.iter().enumerate() {
        let l = (spec.nodes[pair.to] - spec.nodes[pair.from]).norm();
        if l <= T::zero() {
            return Err(BuildError::ZeroInitialLength {
                kind: "string",
                member: k,
            });
        }
    }

    // Solid cylinder: I = m/12 (3 r^2 + l^2).
    let twelfth = T::from_f64_lossy(1.0 / 12.0);
    let three = T::from_f64_lossy(3.0);
    let bar_inertias: Vec<T> = spec
        .bars
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let m = spec.bar_masses[k];
            let r = spec.bar_radii[k];
            let l = bar_rest_lengths[k];
            m * twelfth * (three * r * r + l * l)
        })
        .collect();

    // Boundary rows: three per fixed node, then one per pinned coordinate.
    let m_a = 3 * spec.fixed_nodes.len() + spec.pinned_coords.len();
    let mut a = DMatrix::zeros(m_a, 3 * n);
    let mut b = DVector::zeros(m_a);
    let mut row = 0;
    for &node in &spec.fixed_nodes {
        for r in 0..3 {
            a[(row, 3 * node + r)] = T::one();
            b[row] = q0[3 * node + r];
            row += 1;
        }
    }
    for &(node, axis) in &spec.pinned_coords {
        a[(row, 3 * node + axis.index())] = T::one();
        b[row] = q0[3 * node + axis.index()];
        row += 1;
    }

    let selectors = SelectorSet {
        x: spec.bars.iter().map(|&p| pair_selector(p, n)).collect(),
        xbar: spec.bars.iter().map(|&p| midpoint_selector(p, n)).collect(),
        y: spec.strings.iter().map(|&p| pair_selector(p, n)).collect(),
        p: spec
            .point_mass_nodes
            .iter()
            .map(|&i| point_selector(i, n))
            .collect(),
    };

    let quarter = T::from_f64_lossy(0.25);
    let mut mass = DMatrix::zeros(3 * n, 3 * n);
    for (k, pair) in spec.bars.iter().enumerate() {
        let m_b = spec.bar_masses[k];
        let rot = bar_inertias[k] / (bar_rest_lengths[k] * bar_rest_lengths[k]);
        let (i, j) = (pair.from, pair.to);
        for r in 0..3 {
            mass[(3 * i + r, 3 * i + r)] += m_b * quarter + rot;
            mass[(3 * j + r, 3 * j + r)] += m_b * quarter + rot;
            mass[(3 * i + r, 3 * j + r)] += m_b * quarter - rot;
            mass[(3 * j + r, 3 * i + r)] += m_b * quarter - rot;
        }
    }
    for (k, &node) in spec.point_mass_nodes.iter().enumerate() {
        for r in 0..3 {
            mass[(3 * node + r, 3 * node + r)] += spec.point_masses[k];
        }
    }

    let mut gravity_vec = DVector::zeros(3 * n);
    let half = T::from_f64_lossy(0.5);
    for (k, pair) in spec.bars.iter().enumerate() {
        let w = spec.bar_masses[k] * half;
        for r in 0..3 {
            gravity_vec[3 * pair.from + r] += w * spec.gravity[r];
            gravity_vec[3 * pair.to + r] += w * spec.gravity[r];
        }
    }
    for (k, &node) in spec.point_mass_nodes.iter().enumerate() {
        for r in 0..3 {
            gravity_vec[3 * node + r] += spec.point_masses[k] * spec.gravity[r];
        }
    }

    let mass_chol = nalgebra::Cholesky::new(mass.clone())
        .expect("mass matrix is positive definite for validated structures");

    Ok(AssembledModel {
        structure: spec,
        selectors,
        q0,
        bar_rest_lengths,
        bar_inertias,
        boundary_a: a,
        boundary_b: b,
        mass,
        gravity_vec,
        mass_chol,
    })
}

fn check_members(kind: &'static str, rows: &[NodePair], n: usize) -> Result<(), BuildError> {
    for (k, pair) in rows.iter().enumerate() {
        for index in [pair.from, pair.to] {
            if index >= n {
                return Err(BuildError::MemberIndexOutOfRange {
                    kind,
                    member: k,
                    index,
                    count: n,
                });
            }
        }
        if pair.from == pair.to {
            return Err(BuildError::SelfLoop {
                kind,
                member: k,
                node: pair.from,
            });
        }
    }
    Ok(())
}

fn check_property_len(kind: &'static str, got: usize, expected: usize) -> Result<(), BuildError> {
    if got != expected {
        return Err(BuildError::PropertyLengthMismatch {
            kind,
            got,
            expected,
        });
    }
    Ok(())
}

fn check_positive<T: Real>(
    kind: &'static str,
    quantity: &'static str,
    values: &[T],
) -> Result<(), BuildError> {
    for (k, &v) in values.iter().enumerate() {
        if !(v > T::zero()) {
            return Err(BuildError::NonPositiveProperty {
                kind,
                member: k,
                quantity,
            });
        }
    }
    Ok(())
}

/// Evaluates member lengths `(|X_k q|, |Y_k q|)` at an arbitrary
/// configuration. Zero is a valid (degenerate) return.
pub fn member_lengths<T: Real>(model: &AssembledModel<T>, q: &DVector<T>) -> (Vec<T>, Vec<T>) {
    assert_eq!(q.len(), model.dim(), "coordinate vector has wrong length");
    let bars = (0..model.num_bars())
        .map(|k| model.bar_vector(q, k).norm())
        .collect();
    let strings = (0..model.num_strings())
        .map(|k| model.string_vector(q, k).norm())
        .collect();
    (bars, strings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn two_node_bar() -> TensegrityStructure<f64> {
        let mut s = TensegrityStructure::with_nodes(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(2.0, 0.0, 0.0),
        ]);
        s.bars.push(NodePair::new(0, 1));
        s.bar_masses.push(3.0);
        s.bar_radii.push(0.05);
        s
    }

    #[test]
    fn single_bar_selectors_match_definition() {
        let model = build_structure(two_node_bar()).unwrap();
        // X_1 = [-I3, +I3], Xbar_1 = 1/2 [I3, I3].
        let x = &model.selectors.x[0];
        let xbar = &model.selectors.xbar[0];
        for r in 0..3 {
            for c in 0..6 {
                let expect_x = if c == r {
                    -1.0
                } else if c == r + 3 {
                    1.0
                } else {
                    0.0
                };
                let expect_xbar = if c == r || c == r + 3 { 0.5 } else { 0.0 };
                assert_eq!(x[(r, c)], expect_x);
                assert_eq!(xbar[(r, c)], expect_xbar);
            }
        }
    }

    #[test]
    fn string_row_evaluates_by_hand() {
        // String row with +1 at node 0 and -1 at node 1 gives s = n0 - n1.
        let mut s = TensegrityStructure::<f64>::with_nodes(vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ]);
        s.strings.push(NodePair::new(1, 0));
        s.string_stiffness.push(1.0);
        s.string_rest_lengths.push(1.0);
        s.point_mass_nodes = vec![0, 1, 2];
        s.point_masses = vec![1.0, 1.0, 1.0];
        let model = build_structure(s).unwrap();
        let sv = model.string_vector(&model.q0, 0);
        assert_eq!(sv, Vector3::new(-1.0, 0.0, 0.0));
        assert_eq!(sv.norm(), 1.0);
    }

    #[test]
    fn rest_lengths_and_boundary_rows() {
        let mut s = two_node_bar();
        s.fixed_nodes.push(0);
        s.pinned_coords.push((1, Axis::Y));
        let model = build_structure(s).unwrap();
        assert_eq!(model.bar_rest_lengths, vec![2.0]);
        assert_eq!(model.num_boundary_rows(), 4);
        // A q0 = b by construction.
        let r = &model.boundary_a * &model.q0 - &model.boundary_b;
        assert!(r.norm() == 0.0);
    }

    #[test]
    fn member_lengths_at_q0_and_translated() {
        let model = build_structure(two_node_bar()).unwrap();
        let (bars, _) = member_lengths(&model, &model.q0);
        assert_eq!(bars, vec![2.0]);
        let shift = dvector![0.3, -0.7, 1.1, 0.3, -0.7, 1.1];
        let (bars_t, _) = member_lengths(&model, &(&model.q0 + shift));
        assert!((bars_t[0] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_malformed_input() {
        let mut s = two_node_bar();
        s.bars.push(NodePair::new(0, 0));
        s.bar_masses.push(1.0);
        s.bar_radii.push(0.1);
        assert!(matches!(
            build_structure(s),
            Err(BuildError::SelfLoop { .. })
        ));

        let mut s = two_node_bar();
        s.fixed_nodes.push(7);
        assert!(matches!(
            build_structure(s),
            Err(BuildError::FixedNodeOutOfRange(7))
        ));

        let mut s = two_node_bar();
        s.bars.push(NodePair::new(1, 0));
        s.bar_masses.push(1.0);
        s.bar_radii.push(0.1);
        assert!(matches!(
            build_structure(s),
            Err(BuildError::DuplicateBar { .. })
        ));

        // Zero-length string in the initial configuration.
        let mut s = two_node_bar();
        s.nodes.push(Vector3::new(0.0, 0.0, 0.0));
        s.point_mass_nodes.push(2);
        s.point_masses.push(1.0);
        s.strings.push(NodePair::new(0, 2));
        s.string_stiffness.push(10.0);
        s.string_rest_lengths.push(1.0);
        assert!(matches!(
            build_structure(s),
            Err(BuildError::ZeroInitialLength { kind: "string", .. })
        ));

        // Point mass on a bar node.
        let mut s = two_node_bar();
        s.point_mass_nodes.push(1);
        s.point_masses.push(1.0);
        assert!(matches!(
            build_structure(s),
            Err(BuildError::PointMassOnBarNode { .. })
        ));
    }

    #[test]
    fn point_mass_gravity_block() {
        let mut s = TensegrityStructure::<f64>::with_nodes(vec![Vector3::new(1.0, 2.0, 3.0)]);
        s.point_mass_nodes.push(0);
        s.point_masses.push(2.5);
        s.gravity = Vector3::new(0.0, 0.0, -9.806);
        let model = build_structure(s).unwrap();
        assert_eq!(model.gravity_vec.as_slice(), &[0.0, 0.0, -9.806 * 2.5]);
        // M = m I3 for a single point mass.
        assert_eq!(model.mass, DMatrix::identity(3, 3) * 2.5);
    }
}
