//! The three benchmark structures: a planar two-bar unit, a planar robotic
//! arm, and a six-bar ball with payload.
//!
//! The arm and ball geometries are reconstructions: node counts, member
//! counts, materials and loading are fixed, exact nodal coordinates and
//! string routing are design choices. They are validated through
//! invariants (build checks, member counts, static equilibrium under
//! gravity) rather than coordinate listings.
//!
//! Benchmark constants are defined in double precision.

use std::sync::Arc;

use nalgebra::{DVector, Rotation3, Vector3};

use crate::linearization::prestress_for_equilibrium;
use crate::state::{ExternalForce, ForceInputs};
use crate::topology::{build_structure, Axis, NodePair, TensegrityStructure};

/// Names accepted by the CLI for `--model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    TBar,
    Arm,
    Ball,
}

impl Builtin {
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "tbar" => Some(Self::TBar),
            "arm" => Some(Self::Arm),
            "ball" => Some(Self::Ball),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TBar => "tbar",
            Self::Arm => "arm",
            Self::Ball => "ball",
        }
    }

    pub fn structure(self) -> TensegrityStructure<f64> {
        match self {
            Self::TBar => tbar(),
            Self::Arm => arm(),
            Self::Ball => ball(),
        }
    }

    /// The benchmark forcing profile for this model.
    pub fn inputs(self) -> ForceInputs<f64> {
        match self {
            Self::TBar => ForceInputs::free(),
            Self::Arm => {
                // 300 sin(t) N vertically at the arm tip (node 11,
                // 1-based), the top-right corner of the outer square.
                let force = move |t: f64| {
                    let mut f = DVector::zeros(36);
                    f[3 * 10 + 2] = 300.0 * t.sin();
                    f
                };
                ForceInputs::with_force(ExternalForce::TimeVarying(Arc::new(force)))
            }
            Self::Ball => {
                // 300 sin(t) N on the three top-face nodes, along x, y, z
                // respectively in order of numbering.
                let force = move |t: f64| {
                    let mut f = DVector::zeros(39);
                    let a = 300.0 * t.sin();
                    f[0] = a;
                    f[3 + 1] = a;
                    f[6 + 2] = a;
                    f
                };
                ForceInputs::with_force(ExternalForce::TimeVarying(Arc::new(force)))
            }
        }
    }
}

fn cylinder_mass(density: f64, radius: f64, length: f64) -> f64 {
    density * std::f64::consts::PI * radius * radius * length
}

/// String stiffness from the axial rule `K = E A / l`.
fn string_stiffness_ea(youngs_modulus: f64, radius: f64, length: f64) -> f64 {
    youngs_modulus * std::f64::consts::PI * radius * radius / length
}

/// The planar two-bar unit: a square of side `5/sqrt(2)` m in the x-z
/// plane, crossing diagonal bars of length 5 m, four perimeter springs of
/// 100 N/m. The bottom nodes are fixed, the vertical (left and right)
/// springs are pre-stressed to 90% of their initial length, gravity is
/// zero. Released from rest it oscillates.
pub fn tbar() -> TensegrityStructure<f64> {
    tbar_prestressed(0.9, false)
}

/// T-bar variant with a custom rest-length fraction for the vertical
/// springs; `all_strings` extends the pre-stress to the top and bottom
/// springs, which makes the initial configuration a symmetric equilibrium.
pub fn tbar_prestressed(rest_fraction: f64, all_strings: bool) -> TensegrityStructure<f64> {
    let a = 5.0 / 2.0f64.sqrt();
    let mut s = TensegrityStructure::with_nodes(vec![
        Vector3::new(0.0, 0.0, 0.0), // bottom left (fixed)
        Vector3::new(a, 0.0, 0.0),   // bottom right (fixed)
        Vector3::new(0.0, 0.0, a),   // top left
        Vector3::new(a, 0.0, a),     // top right
    ]);
    // Crossing diagonals, length 5 m exactly.
    s.bars = vec![NodePair::new(0, 3), NodePair::new(1, 2)];
    let m_bar = cylinder_mass(500.0, 0.05, 5.0);
    s.bar_masses = vec![m_bar; 2];
    s.bar_radii = vec![0.05; 2];
    // Perimeter springs: left, right (vertical), top, bottom.
    s.strings = vec![
        NodePair::new(0, 2),
        NodePair::new(1, 3),
        NodePair::new(2, 3),
        NodePair::new(0, 1),
    ];
    s.string_stiffness = vec![100.0; 4];
    let horizontal_fraction = if all_strings { rest_fraction } else { 1.0 };
    s.string_rest_lengths = vec![
        rest_fraction * a,
        rest_fraction * a,
        horizontal_fraction * a,
        horizontal_fraction * a,
    ];
    s.fixed_nodes = vec![0, 1];
    s.pinned_coords = vec![(2, Axis::Y), (3, Axis::Y)];
    s
}

/// The planar robotic arm: three squares of 1 m bars chained along x in
/// the x-z plane, joined by top and bottom connector bars across two 1 m
/// gaps; 16 bars in total. The base square is braced by a diagonal bar (a
/// full square on the fixed wall would duplicate boundary rows); the other
/// cells and both gaps are braced by crossed nylon strings. Strings are
/// pre-stressed so the structure is in equilibrium under gravity.
pub fn arm() -> TensegrityStructure<f64> {
    // Node k of square j is 4j + k: bl, br, tr, tl, with squares at
    // x = 0, 2, 4.
    let mut nodes = Vec::with_capacity(12);
    for j in 0..3 {
        let x = 2.0 * j as f64;
        nodes.push(Vector3::new(x, 0.0, 0.0));
        nodes.push(Vector3::new(x + 1.0, 0.0, 0.0));
        nodes.push(Vector3::new(x + 1.0, 0.0, 1.0));
        nodes.push(Vector3::new(x, 0.0, 1.0));
    }
    let mut s = TensegrityStructure::with_nodes(nodes);

    // Base square: bottom, right, top and the bracing diagonal (the left
    // side would join the two fixed nodes).
    s.bars = vec![
        NodePair::new(0, 1),
        NodePair::new(1, 2),
        NodePair::new(2, 3),
        NodePair::new(0, 2),
    ];
    // Middle and outer squares: all four sides.
    for j in [1usize, 2] {
        let b = 4 * j;
        s.bars.push(NodePair::new(b, b + 1));
        s.bars.push(NodePair::new(b + 1, b + 2));
        s.bars.push(NodePair::new(b + 2, b + 3));
        s.bars.push(NodePair::new(b + 3, b));
    }
    // Connectors across the gaps, bottom and top.
    s.bars.push(NodePair::new(1, 4));
    s.bars.push(NodePair::new(2, 7));
    s.bars.push(NodePair::new(5, 8));
    s.bars.push(NodePair::new(6, 11));
    assert_eq!(s.bars.len(), 16);

    let density = 1300.0;
    let radius = 0.01;
    for pair in &s.bars {
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        s.bar_masses.push(cylinder_mass(density, radius, l));
        s.bar_radii.push(radius);
    }

    // Crossed diagonal strings: anti-diagonal of the base square, both
    // diagonals of the other squares and of both gaps.
    s.strings = vec![
        NodePair::new(1, 3),
        NodePair::new(4, 6),
        NodePair::new(5, 7),
        NodePair::new(8, 10),
        NodePair::new(9, 11),
        NodePair::new(1, 7),
        NodePair::new(2, 4),
        NodePair::new(5, 11),
        NodePair::new(6, 8),
    ];
    let nylon_e = 2.0e9;
    let nylon_r = 0.001;
    for pair in &s.strings {
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        s.string_stiffness
            .push(string_stiffness_ea(nylon_e, nylon_r, l));
        // Provisional; replaced by the pre-stress solve below.
        s.string_rest_lengths.push(l);
    }

    s.fixed_nodes = vec![0, 3];
    for node in [1usize, 2, 4, 5, 6, 7, 8, 9, 10, 11] {
        s.pinned_coords.push((node, Axis::Y));
    }
    s.gravity = Vector3::new(0.0, 0.0, -9.806);

    apply_prestress(s, |_| 60.0)
}

/// The six-bar ball: the classic three-orthogonal-pairs construction
/// (Jessen's icosahedron) with 1 m bars at half-length pair separation, so
/// the 24 shell strings all have length `sqrt(3/8)` m and uniform shell
/// tension is a self-stress. A 1 kg payload node near the center hangs on
/// six strings to the upper nodes; two further strings to bottom-face
/// nodes ride along slack, bringing the string count to 32. Oriented to
/// rest on a string triangle; the bottom face is fixed.
///
/// A center payload loads the shell's inextensional mechanisms, which
/// carry no first-order string stiffness, so no equilibrium exists at the
/// ideal geometry. The builtin therefore designs uniform shell pre-stress
/// plus light payload tension and settles the elastic structure under
/// gravity with a Newton solve; the settled configuration is returned as
/// the initial state.
pub fn ball() -> TensegrityStructure<f64> {
    let mut s = ball_geometry();
    // Designed force densities at the ideal geometry: the uniform shell
    // self-stress and mild payload tension.
    for k in 0..s.strings.len() {
        let pair = s.strings[k];
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        let sigma = if k < 24 {
            100.0
        } else if k < 30 {
            25.0
        } else {
            // Slack companions to the bottom face.
            -0.02 * s.string_stiffness[k]
        };
        s.string_rest_lengths[k] = l * (1.0 - sigma / s.string_stiffness[k]);
    }
    settle(s)
}

/// Settles a structure into static equilibrium under gravity with the
/// elastic string laws and re-bases it there.
fn settle(structure: TensegrityStructure<f64>) -> TensegrityStructure<f64> {
    let model = build_structure(structure).expect("builtin structure is valid");
    let f0 = DVector::zeros(model.dim());
    let q_eq = crate::linearization::settle_equilibrium(&model, &model.q0, &f0)
        .expect("builtin structure settles into equilibrium");
    let mut s = model.structure;
    for (i, node) in s.nodes.iter_mut().enumerate() {
        *node = Vector3::new(q_eq[3 * i], q_eq[3 * i + 1], q_eq[3 * i + 2]);
    }
    s
}

fn ball_geometry() -> TensegrityStructure<f64> {
    let l = 1.0; // strut length
    let d = 0.5; // separation of a parallel strut pair
    let (hl, hd) = (l / 2.0, d / 2.0);
    // Strut pairs parallel to x, y, z; offsets cycle z, x, y.
    let raw = [
        Vector3::new(-hl, 0.0, hd),
        Vector3::new(hl, 0.0, hd),
        Vector3::new(-hl, 0.0, -hd),
        Vector3::new(hl, 0.0, -hd),
        Vector3::new(hd, -hl, 0.0),
        Vector3::new(hd, hl, 0.0),
        Vector3::new(-hd, -hl, 0.0),
        Vector3::new(-hd, hl, 0.0),
        Vector3::new(0.0, hd, -hl),
        Vector3::new(0.0, hd, hl),
        Vector3::new(0.0, -hd, -hl),
        Vector3::new(0.0, -hd, hl),
    ];
    let raw_bars = [(0, 1), (2, 3), (4, 5), (6, 7), (8, 9), (10, 11)];
    // All 24 strings have squared length (l-d)^2/4 + l^2/4 + d^2/4.
    let string_len_sq = (l - d) * (l - d) / 4.0 + l * l / 4.0 + d * d / 4.0;

    // Rotate the string-triangle face with normal (1,1,1) to the top and
    // rest the antipodal face on z = 0.
    let up = Vector3::new(1.0, 1.0, 1.0).normalize();
    let rot = Rotation3::rotation_between(&up, &Vector3::z()).expect("rotation exists");
    let mut verts: Vec<Vector3<f64>> = raw.iter().map(|v| rot * v).collect();
    let z_min = verts.iter().map(|v| v.z).fold(f64::INFINITY, f64::min);
    for v in &mut verts {
        v.z -= z_min;
    }

    // Renumber by descending height (ties broken by polar angle): the top
    // face comes first, then the two middle layers, then the fixed bottom
    // face.
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| {
        let zi = -verts[i].z;
        let zj = -verts[j].z;
        zi.partial_cmp(&zj).unwrap().then_with(|| {
            let ai = verts[i].y.atan2(verts[i].x);
            let aj = verts[j].y.atan2(verts[j].x);
            ai.partial_cmp(&aj).unwrap()
        })
    });
    let mut new_index = [0usize; 12];
    for (new, &old) in order.iter().enumerate() {
        new_index[old] = new;
    }
    let mut nodes: Vec<Vector3<f64>> = order.iter().map(|&old| verts[old]).collect();

    // Payload at the geometric center.
    let center = nodes.iter().sum::<Vector3<f64>>() / 12.0;
    nodes.push(center);
    let payload_index = 12;

    let mut s = TensegrityStructure::with_nodes(nodes);
    for (a, b) in raw_bars {
        s.bars.push(NodePair::new(new_index[a], new_index[b]));
    }
    let density = 1300.0;
    let radius = 0.01;
    for _ in 0..6 {
        s.bar_masses.push(cylinder_mass(density, radius, l));
        s.bar_radii.push(radius);
    }

    // Shell strings: exactly the node pairs at the common string length.
    for i in 0..12 {
        for j in (i + 1)..12 {
            let d2 = (s.nodes[j] - s.nodes[i]).norm_squared();
            if (d2 - string_len_sq).abs() < 1e-9 {
                s.strings.push(NodePair::new(i, j));
            }
        }
    }
    assert_eq!(s.strings.len(), 24, "six-bar shell has 24 strings");

    // Payload suspension: the six upper free nodes and two bottom-face
    // nodes, 8 strings. The bottom pair stays slack; a taut routing to
    // any 8 anchors has no positive equilibrium pre-stress.
    for node in [0usize, 1, 2, 3, 4, 5, 9, 10] {
        s.strings.push(NodePair::new(node, payload_index));
    }

    let nylon_e = 2.0e9;
    let nylon_r = 0.001;
    for pair in &s.strings {
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        s.string_stiffness
            .push(string_stiffness_ea(nylon_e, nylon_r, l));
        s.string_rest_lengths.push(l);
    }

    s.point_mass_nodes = vec![payload_index];
    s.point_masses = vec![1.0];
    s.fixed_nodes = vec![9, 10, 11];
    s.gravity = Vector3::new(0.0, 0.0, -9.806);
    s
}

/// Raw ball geometry before the pre-stress solve; test/diagnostic hook.
#[doc(hidden)]
pub fn ball_raw_for_diagnostics() -> TensegrityStructure<f64> {
    ball_geometry()
}

/// Solves for equilibrium force densities near the target profile and
/// bakes them into the string rest lengths (`l0 = l (1 - sigma/K)`).
fn apply_prestress(
    structure: TensegrityStructure<f64>,
    target: impl Fn(usize) -> f64,
) -> TensegrityStructure<f64> {
    let model = build_structure(structure).expect("builtin structure is valid");
    let sigma_target = DVector::from_fn(model.num_strings(), |k, _| target(k));
    let f0 = DVector::zeros(model.dim());
    let sigma = prestress_for_equilibrium(&model, &sigma_target, &f0)
        .expect("builtin structure admits an equilibrium pre-stress");

    let mut s = model.structure;
    for k in 0..s.strings.len() {
        assert!(
            sigma[k] > 0.0,
            "pre-stress must be strictly positive (string {k}: {})",
            sigma[k]
        );
        let pair = s.strings[k];
        let l = (s.nodes[pair.to] - s.nodes[pair.from]).norm();
        s.string_rest_lengths[k] = l * (1.0 - sigma[k] / s.string_stiffness[k]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rigid;
    use crate::state::SystemState;
    use crate::topology::build_structure;
    use nalgebra::DVector;

    #[test]
    fn tbar_matches_benchmark_parameters() {
        let s = tbar();
        let model = build_structure(s).unwrap();
        assert_eq!(model.structure.nodes.len(), 4);
        assert_eq!(model.num_bars(), 2);
        assert_eq!(model.num_strings(), 4);
        // Fixed bottom nodes contribute six boundary rows; the planar
        // embedding adds two out-of-plane pins.
        assert_eq!(model.num_boundary_rows(), 8);

        // Without the planar pins, the two fixed nodes alone give A
        // exactly six rows.
        let mut unpinned = tbar();
        unpinned.pinned_coords.clear();
        let unpinned_model = build_structure(unpinned).unwrap();
        assert_eq!(unpinned_model.num_boundary_rows(), 6);

        // rho pi r^2 l for the benchmark values.
        assert!((model.structure.bar_masses[0] - 19.634954).abs() < 1e-5);
        assert!((model.bar_rest_lengths[0] - 5.0).abs() < 1e-12);
        assert!((model.bar_rest_lengths[1] - 5.0).abs() < 1e-12);

        // Constraints hold to machine precision at the initial
        // configuration (sqrt-then-square roundoff at scale l^2 = 25).
        assert!(rigid::constraints(&model, &model.q0).norm() < 1e-13);

        // Initial energy is the pre-stress spring energy alone: two
        // vertical springs stretched by 10% of a = 5/sqrt(2), K = 100:
        // 2 * 1/2 * 100 * (0.1 a)^2 = 12.5 J.
        let state = SystemState::at_rest(&model);
        let e0 = rigid::total_energy(&model, &state);
        assert!((e0 - 12.5).abs() < 1e-10, "{e0}");

        // Not an equilibrium: it oscillates.
        let sigma = rigid::string_force_densities(&model, &model.q0).unwrap();
        assert!((sigma[0] - 10.0).abs() < 1e-12);
        let out = rigid::eom_rhs(
            &model,
            &model.q0,
            &DVector::zeros(12),
            &sigma,
            &DVector::zeros(12),
        )
        .unwrap();
        assert!(out.qddot.amax() > 1.0);
    }

    #[test]
    fn symmetric_tbar_is_an_equilibrium() {
        let s = tbar_prestressed(0.9, true);
        let model = build_structure(s).unwrap();
        let sigma = rigid::string_force_densities(&model, &model.q0).unwrap();
        let out = rigid::eom_rhs(
            &model,
            &model.q0,
            &DVector::zeros(12),
            &sigma,
            &DVector::zeros(12),
        )
        .unwrap();
        assert!(out.qddot.amax() < 1e-10, "{:e}", out.qddot.amax());
    }

    #[test]
    fn arm_counts_and_equilibrium() {
        let s = arm();
        let model = build_structure(s).unwrap();
        assert_eq!(model.structure.nodes.len(), 12);
        assert_eq!(model.num_bars(), 16);
        assert_eq!(model.num_strings(), 9);

        // String stiffness from the EA/l rule: a sqrt(2) m nylon string.
        let k_diag = 2.0e9 * std::f64::consts::PI * 1e-6 / 2.0f64.sqrt();
        let k0 = model.structure.string_stiffness[0];
        assert!((k0 - k_diag).abs() < 1e-6 * k_diag, "{k0} vs {k_diag}");

        // All strings strictly taut at the initial configuration.
        let sigma = rigid::string_force_densities(&model, &model.q0).unwrap();
        assert!(sigma.iter().all(|&v| v > 0.0), "{sigma:?}");

        // In equilibrium under gravity with forces zeroed.
        let out = rigid::eom_rhs(
            &model,
            &model.q0,
            &DVector::zeros(36),
            &sigma,
            &DVector::zeros(36),
        )
        .unwrap();
        assert!(out.qddot.amax() <= 1e-8, "{:e}", out.qddot.amax());
    }

    #[test]
    fn ball_counts_and_equilibrium() {
        // The ideal construction has unit bars and 24 shell strings of
        // identical length sqrt(3/8) (string-length uniformity validates
        // the three-orthogonal-pairs geometry).
        let raw = ball_raw_for_diagnostics();
        let s_len = (3.0f64 / 8.0).sqrt();
        for pair in raw.strings.iter().take(24) {
            let l = (raw.nodes[pair.to] - raw.nodes[pair.from]).norm();
            assert!((l - s_len).abs() < 1e-9, "shell string length {l}");
        }

        let s = ball();
        let model = build_structure(s).unwrap();
        assert_eq!(model.structure.nodes.len(), 13);
        assert_eq!(model.num_bars(), 6);
        assert_eq!(model.num_strings(), 32);
        for k in 0..6 {
            assert!((model.bar_rest_lengths[k] - 1.0).abs() < 1e-6);
        }

        // Bottom face on the ground, top face above the payload.
        for &node in &[9usize, 10, 11] {
            assert!(model.structure.nodes[node].z.abs() < 1e-9);
        }
        let payload_z = model.structure.nodes[12].z;
        for &node in &[0usize, 1, 2] {
            assert!(model.structure.nodes[node].z > payload_z);
        }

        // Shell and payload strings taut, the two bottom companions slack.
        let sigma = rigid::string_force_densities(&model, &model.q0).unwrap();
        for k in 0..30 {
            assert!(sigma[k] > 0.0, "string {k} sigma {}", sigma[k]);
        }
        assert_eq!(sigma[30], 0.0);
        assert_eq!(sigma[31], 0.0);

        // Settled into equilibrium under gravity.
        let out = rigid::eom_rhs(
            &model,
            &model.q0,
            &DVector::zeros(39),
            &sigma,
            &DVector::zeros(39),
        )
        .unwrap();
        assert!(out.qddot.amax() <= 1e-8, "{:e}", out.qddot.amax());
    }

    #[test]
    fn arm_work_rate_tracks_tip_velocity() {
        // With the benchmark tip force, Wdot = 300 sin(t) times the tip's
        // vertical velocity.
        let model = build_structure(arm()).unwrap();
        let inputs = Builtin::Arm.inputs();
        let t = 0.83;
        let mut state = SystemState::at_rest(&model);
        state.t = t;
        for i in 0..model.dim() {
            state.qdot[i] = 0.01 * ((i * 13 % 7) as f64 - 3.0);
        }
        let (_, _, wdot) = crate::integrator::derivative(&model, &state, &inputs).unwrap();
        let tip_vz = state.qdot[3 * 10 + 2];
        assert!((wdot - 300.0 * t.sin() * tip_vz).abs() < 1e-12);
    }

    #[test]
    fn forcing_profiles_hit_documented_nodes() {
        let arm_inputs = Builtin::Arm.inputs();
        let f = arm_inputs.f_ext.eval(std::f64::consts::FRAC_PI_2, 36);
        assert!((f[3 * 10 + 2] - 300.0).abs() < 1e-12);
        assert_eq!(f.iter().filter(|&&v| v != 0.0).count(), 1);

        let ball_inputs = Builtin::Ball.inputs();
        let f = ball_inputs.f_ext.eval(std::f64::consts::FRAC_PI_2, 39);
        assert!((f[0] - 300.0).abs() < 1e-12);
        assert!((f[4] - 300.0).abs() < 1e-12);
        assert!((f[8] - 300.0).abs() < 1e-12);
    }
}
