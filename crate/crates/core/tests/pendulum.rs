//! End-to-end checks of the pendulum scenario beyond the acceptance suite.

mod common;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slff_core::backstepping::{
    backstep_unready, choose_gamma_for_logic, DampingSpec, JacobianProvider, SmoothingDecomposition,
};
use slff_core::hybrid::{
    arc_from_csv, arc_from_json, arc_to_csv, arc_to_json, flow_segment, simulate, BlockKind,
    FnSystem, HybridSystem, Manifold, ProductState, SimOptions,
};
use slff_core::linalg::{hat, random_in_ball, random_unit, vec3};
use slff_core::pendulum::{
    simulate_run, CampaignOptions, ClosedLoop, KinematicSystem, PendulumParams, PendulumPlant,
};
use slff_core::slff::{
    synthesize_controller, verify_gap, AffineControlSystem, FnPair, GapFunction, GapMode, SlffPair,
};
use std::sync::Arc;

fn free_pendulum(params: PendulumParams) -> FnSystem {
    let m = Manifold::default()
        .with_block(BlockKind::UnitSphere, 3, "z")
        .with_block(BlockKind::Unconstrained, 3, "w");
    let plant = PendulumPlant::new(params).unwrap();
    FnSystem::flow_only(m, move |x| plant.drift(x.q, &x.z))
}

#[test]
fn free_energy_drift_shrinks_at_fourth_order() {
    let params = PendulumParams::default();
    let sys = free_pendulum(params.clone());
    let x0 = ProductState::from_slice(1, &[0.6, 0.0, 0.8, 1.0, -2.0, 0.5]);
    let e0 = params.energy(&vec3(&x0.z, 0), &vec3(&x0.z, 3));
    let drift = |h: f64| {
        let seg = flow_segment(&sys, &x0, 2.0, h).unwrap();
        seg.samples
            .iter()
            .map(|(_, x)| (params.energy(&vec3(&x.z, 0), &vec3(&x.z, 3)) - e0).abs())
            .fold(0.0, f64::max)
    };
    let ratio = drift(0.01) / drift(0.005);
    assert!((8.0..=64.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn logic_gamma_is_a_quarter_of_epsilon() {
    let sc = common::scenario();
    let g = sc.smoothed.gamma_p();
    let expect = DMatrix::identity(2, 2) * (sc.epsilon / 4.0);
    assert!((g - expect).amax() <= 1e-15);
    let d = sc.smoothed.logic_value(1) - sc.smoothed.logic_value(2);
    assert!((d.dot(&(g * &d)) - sc.epsilon / 2.0).abs() <= 1e-15);
}

#[test]
fn certified_gap_holds_with_a_denser_search() {
    let sc = common::scenario();
    let kin = slff_core::pendulum::KinematicPair::new(sc.family.clone());
    let criticals = &sc.family.certificate.as_ref().unwrap().criticals;
    let gap = GapFunction::constant(sc.c_smoothed).with_margin(sc.epsilon);
    let report = verify_gap(&kin, &gap, criticals, GapMode::WeaklyTotallyExceeds).unwrap();
    assert!(report.pass);
    let too_big = GapFunction::constant(sc.c).with_margin(sc.c / 2.0);
    assert!(
        !verify_gap(&kin, &too_big, criticals, GapMode::WeaklyTotallyExceeds)
            .unwrap()
            .pass
    );
}

#[test]
fn smoothed_arc_round_trips_through_csv_and_json() {
    let sc = common::scenario();
    let opts = CampaignOptions::default();
    let (x0, arc) = simulate_run(&sc.smoothed, &opts, 3).unwrap();
    assert_eq!(arc.samples[0].state, x0);
    arc.check_time_domain().unwrap();
    let names = sc.smoothed.manifold().component_names();
    assert_eq!(names.len(), 8);
    let (n1, a1) = arc_from_csv(&arc_to_csv(&arc, &names).unwrap()).unwrap();
    let (n2, a2) = arc_from_json(&arc_to_json(&arc, &names).unwrap()).unwrap();
    assert_eq!(n1, names);
    assert_eq!(n2, names);
    assert_eq!(a1.samples, arc.samples);
    assert_eq!(a2, arc);
    assert_eq!(a1.jump_indices, arc.jump_indices);
}

#[test]
fn smoothed_initial_state_starts_at_rest_logic() {
    let sc = common::scenario();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let x = sc.smoothed.sample_initial(&mut rng, 5.0);
        assert_eq!(x.z.rows(6, 2).into_owned(), sc.smoothed.logic_value(x.q));
        assert!(vec3(&x.z, 3).norm() <= 5.0);
        assert!(sc.smoothed.in_domain(&x));
    }
}

/// The velocity-level pair `κ₀(q, z) = -ẑᵀ∇V(q, z)` for `ż = ẑω`, split as
/// `β₀ = 0`, `ϑ₀(z) = -ẑᵀ𝒟𝒱₀(z)ᵀ`, `ς₀(q) = e_q`.
#[test]
fn unready_pipeline_on_the_kinematic_pair_decreases_along_arcs() {
    let sc = common::scenario();
    let fam = sc.family.clone();
    let (fv, fg, fk, fd) = (fam.clone(), fam.clone(), fam.clone(), fam.clone());
    let pair = FnPair::new(
        fam.modes.clone(),
        Manifold::default().with_block(BlockKind::UnitSphere, 3, "z"),
        move |q, z| fv.value(q, &vec3(z, 0)),
        move |q, z| DVector::from_column_slice(fg.gradient(q, &vec3(z, 0)).as_slice()),
        move |q, z| fd.attractor_distance(q, &vec3(z, 0)),
    )
    .with_feedback(move |q, z| {
        let z3 = vec3(z, 0);
        DVector::from_column_slice((-hat(&z3).transpose() * fk.gradient(q, &z3)).as_slice())
    });
    let ft = fam.clone();
    let decomp = SmoothingDecomposition::new(
        2,
        |_| DVector::zeros(3),
        move |z| {
            let h = hat(&vec3(z, 0)).transpose();
            let hd = DMatrix::from_fn(3, 3, |i, j| h[(i, j)]);
            -hd * ft.stack_jacobian(&vec3(z, 0)).transpose()
        },
        |q| {
            let mut e = DVector::zeros(2);
            e[(q - 1) as usize] = 1.0;
            e
        },
    );
    let states = slff_core::slff::sample_domain(pair.manifold(), pair.modes(), 200, 9, 1.0);
    assert!(decomp.reconstruction_check(&pair, &states, 1e-12).pass);

    let gap = GapFunction::constant(sc.c_smoothed).with_margin(sc.epsilon);
    let gamma = choose_gamma_for_logic(&decomp, pair.modes(), sc.epsilon);
    let pipe = backstep_unready(
        pair,
        KinematicSystem,
        decomp,
        &gap,
        DampingSpec::linear(gamma, common::KP).unwrap(),
        DampingSpec::linear(DMatrix::identity(3, 3), 2.0).unwrap(),
        JacobianProvider::default(),
    )
    .unwrap();
    for x in slff_core::slff::sample_domain(pipe.pair.manifold(), pipe.pair.modes(), 500, 10, 2.0) {
        assert!(pipe.pair.derivative_defect(x.q, &x.z) <= 1e-6);
    }

    let swap = Arc::new(pipe.pair);
    let closed = synthesize_controller(swap.clone(), pipe.gap.clone(), pipe.plant).unwrap();
    let opts = SimOptions {
        horizon_t: 5.0,
        horizon_j: 50,
        step: 2e-3,
        stop_dist: None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..4 {
        let q = 1 + (rand::Rng::random_range(&mut rng, 0..2));
        let mut z = DVector::zeros(8);
        z.rows_mut(0, 3).copy_from(&random_unit(&mut rng, 3));
        z[2 + q as usize] = 1.0;
        z.rows_mut(5, 3)
            .copy_from(&random_in_ball(&mut rng, 3, 1.0));
        let arc = simulate(&closed, &ProductState::new(q, z), &opts).unwrap();
        for (a, b) in arc.flow_pairs() {
            assert!(swap.value(b.state.q, &b.state.z) <= swap.value(a.state.q, &a.state.z) + 1e-9);
        }
        for (a, b) in arc.jump_pairs() {
            let drop = swap.value(a.state.q, &a.state.z) - swap.value(b.state.q, &b.state.z);
            assert!(drop >= closed.threshold_at(&a.state) - 1e-8);
        }
    }
}
