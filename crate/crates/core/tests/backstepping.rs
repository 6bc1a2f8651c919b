//! Backstepping and smoothing on small hand-checkable systems.

use nalgebra::{DMatrix, DVector};
use slff_core::backstepping::{
    backstep_type1, backstep_type2, build_lipschitz_rho, choose_gamma_for_logic,
    smooth_logic_controller, BacksteppingError, DampingSpec, JacobianProvider,
    SmoothingDecomposition,
};
use slff_core::hybrid::{simulate, Manifold, ModeSet, ProductState, SimOptions};
use slff_core::slff::{
    gap_value, sample_domain, synthesize_controller, FnAffine, FnPair, GapFunction, SlffPair,
};
use std::sync::Arc;

/// `V(1, z) = z²`, `V(2, z) = (z - 3)² + 1` with `κ₀ = -(z - z_q)` for `ż = u`.
fn wells() -> (FnPair, FnAffine) {
    let centre = |q: i32| if q == 1 { 0.0 } else { 3.0 };
    let pair = FnPair::new(
        ModeSet::range(2),
        Manifold::euclidean(1),
        move |q, z| (z[0] - centre(q)).powi(2) + (q - 1) as f64,
        move |q, z| DVector::from_element(1, 2.0 * (z[0] - centre(q))),
        |q, z| ((q - 1) as f64).hypot(z[0]),
    )
    .with_feedback(move |q, z| DVector::from_element(1, centre(q) - z[0]))
    .with_attractor_points(vec![ProductState::from_slice(1, &[0.0])]);
    let plant = FnAffine::new(
        1,
        1,
        |_, _| DVector::zeros(1),
        |_, _| DMatrix::identity(1, 1),
    );
    (pair, plant)
}

#[test]
fn rescaled_backstepping_of_an_impure_pair_keeps_the_identity() {
    let (pair, plant) = wells();
    let pair = pair.with_flow_effective(|_, z| z[0] > -4.0);
    let damp = DampingSpec::linear(DMatrix::from_element(1, 1, 0.8), 1.5).unwrap();
    assert!(matches!(
        backstep_type1(
            pair.clone(),
            plant.clone(),
            damp.clone(),
            JacobianProvider::default(),
            "w"
        ),
        Err(BacksteppingError::Precondition(_))
    ));
    let rho = Arc::new(build_lipschitz_rho(&damp.gamma, 2.0));
    let bs = backstep_type2(pair, plant, damp, JacobianProvider::default(), rho, "w").unwrap();
    assert!(!bs.is_pure());
    assert!(bs.record.rho.is_some());
    let mut checked = 0;
    for x in sample_domain(bs.manifold(), bs.modes(), 2000, 21, 6.0) {
        if bs.in_flow_effective(x.q, &x.z) {
            assert!(bs.derivative_defect(x.q, &x.z) <= 1e-8);
            checked += 1;
        }
    }
    assert!(checked > 1000);
}

#[test]
fn backstepped_stall_points_sit_on_the_base_feedback() {
    let (pair, plant) = wells();
    let damp = DampingSpec::linear(DMatrix::identity(1, 1), 3.0).unwrap();
    let bs = backstep_type1(pair, plant, damp, JacobianProvider::default(), "w").unwrap();
    // Along ω = κ₀ at the base critical point z = z_q both feedbacks vanish.
    for (q, z) in [(1, 0.0), (2, 3.0)] {
        let x = DVector::from_vec(vec![z, 0.0]);
        assert!(bs.error(q, &x).amax() <= 1e-6);
        assert!(bs.feedback(q, &x).amax() <= 1e-6);
    }
    let off = DVector::from_vec(vec![0.0, 0.5]);
    assert!(bs.feedback(1, &off).amax() > 1e-3);
}

#[test]
fn analytic_and_numeric_jacobians_agree() {
    let (pair, plant) = wells();
    let damp = DampingSpec::linear(DMatrix::identity(1, 1), 1.0).unwrap();
    let exact = JacobianProvider::analytic(|_, _| DMatrix::from_element(1, 1, -1.0));
    let a = backstep_type1(pair.clone(), plant.clone(), damp.clone(), exact, "w").unwrap();
    let b = backstep_type1(pair, plant, damp, JacobianProvider::default(), "w").unwrap();
    for x in sample_domain(a.manifold(), a.modes(), 300, 22, 4.0) {
        assert!((a.feedback(x.q, &x.z) - b.feedback(x.q, &x.z)).amax() <= 1e-7);
    }
}

#[test]
fn smoothed_loop_switches_without_input_jumps() {
    let (pair, plant) = wells();
    let decomp = SmoothingDecomposition::new(
        1,
        |z| -z.clone(),
        |_| DMatrix::identity(1, 1),
        |q| DVector::from_element(1, if q == 1 { 0.0 } else { 3.0 }),
    );
    let eps = 0.4;
    let gap = GapFunction::constant(0.3).with_margin(eps);
    let gamma = choose_gamma_for_logic(&decomp, pair.modes(), eps);
    let s = smooth_logic_controller(
        pair,
        plant,
        decomp.clone(),
        &gap,
        DampingSpec::linear(gamma, 2.0).unwrap(),
    )
    .unwrap();
    let closed = synthesize_controller(s.pair.clone(), s.gap.clone(), s.plant).unwrap();
    let input =
        |x: &ProductState| decomp.input(&x.z.rows(0, 1).into_owned(), &x.z.rows(1, 1).into_owned());
    let opts = SimOptions {
        horizon_t: 20.0,
        horizon_j: 20,
        step: 1e-3,
        stop_dist: Some(1e-4),
    };
    // Starting in mode 2 near the well of mode 1 forces a switch.
    let mut z = DVector::zeros(2);
    z[0] = 0.2;
    z[1] = 3.0;
    let arc = simulate(&closed, &ProductState::new(2, z), &opts).unwrap();
    assert!(arc.jumps() >= 1);
    for (a, b) in arc.jump_pairs() {
        assert_eq!(input(&a.state), input(&b.state));
        assert_eq!(gap_value(s.pair.as_ref(), b.state.q, &b.state.z), 0.0);
    }
    assert_eq!(arc.last().state.q, 1);
}
