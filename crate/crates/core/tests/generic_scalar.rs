//! The core is generic over the scalar; exercise the f32 instantiation
//! end to end at coarse tolerances.

use nalgebra::{DVector, Vector3};

use tenseg::rigid;
use tenseg::topology::{build_structure, NodePair, TensegrityStructure};

fn pendulum<T: tenseg::Real>() -> tenseg::topology::AssembledModel<T> {
    let lit = |x: f64| T::from_f64_lossy(x);
    let mut s = TensegrityStructure::with_nodes(vec![
        Vector3::new(T::zero(), T::zero(), T::zero()),
        Vector3::new(lit(1.5), T::zero(), T::zero()),
    ]);
    s.bars.push(NodePair::new(0, 1));
    s.bar_masses.push(lit(2.0));
    s.bar_radii.push(lit(0.03));
    s.fixed_nodes.push(0);
    s.gravity = Vector3::new(T::zero(), T::zero(), lit(-9.806));
    build_structure(s).unwrap()
}

#[test]
fn f32_and_f64_agree_on_the_pendulum_release() {
    let m32 = pendulum::<f32>();
    let m64 = pendulum::<f64>();

    let out32 = rigid::eom_rhs(
        &m32,
        &m32.q0,
        &DVector::zeros(6),
        &DVector::zeros(0),
        &DVector::zeros(6),
    )
    .unwrap();
    let out64 = rigid::eom_rhs(
        &m64,
        &m64.q0,
        &DVector::zeros(6),
        &DVector::zeros(0),
        &DVector::zeros(6),
    )
    .unwrap();

    for i in 0..6 {
        assert!((out32.qddot[i] as f64 - out64.qddot[i]).abs() < 1e-4);
    }
}
