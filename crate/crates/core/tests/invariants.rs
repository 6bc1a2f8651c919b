//! Property tests for the structural invariants of the constructions.

use nalgebra::{DMatrix, DVector, Vector3};
use proptest::prelude::*;
use slff_core::backstepping::{backstep_type1, build_lipschitz_rho, DampingSpec, JacobianProvider};
use slff_core::hybrid::{BlockKind, Manifold, ModeSet, ProductState};
use slff_core::pendulum::{potential_family_build, KinematicPair, PendulumParams};
use slff_core::slff::{argmin_modes, gap_value, min_value, FnAffine, FnPair, Rho, SlffPair};
use std::sync::{Arc, OnceLock};

fn kinematic() -> &'static KinematicPair {
    static CELL: OnceLock<KinematicPair> = OnceLock::new();
    CELL.get_or_init(|| {
        let f = potential_family_build(&PendulumParams::default(), 3, 0.5).unwrap();
        KinematicPair::new(Arc::new(f))
    })
}

fn unit(v: [f64; 3]) -> Option<DVector<f64>> {
    let v = Vector3::from(v);
    (v.norm() > 1e-3).then(|| DVector::from_column_slice(v.normalize().as_slice()))
}

/// `ż = a(q) z + ω`, `κ₀ = -(a(q) + q) z`, `V₀ = q z²`.
fn scalar_pair() -> (FnPair, FnAffine) {
    let a = |q: i32| 0.5 * q as f64;
    let pair = FnPair::new(
        ModeSet::range(2),
        Manifold::euclidean(1),
        |q, z| q as f64 * z[0] * z[0],
        |q, z| DVector::from_element(1, 2.0 * q as f64 * z[0]),
        |q, z| ((q - 1) as f64).hypot(z[0]),
    )
    .with_feedback(move |q, z| DVector::from_element(1, -(a(q) + q as f64) * z[0]));
    let plant = FnAffine::new(
        1,
        1,
        move |q, z| DVector::from_element(1, a(q) * z[0]),
        |_, _| DMatrix::identity(1, 1),
    );
    (pair, plant)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn gap_is_nonnegative_and_zero_at_argmin(v in prop::array::uniform3(-1.0f64..1.0), q in 1i32..=3) {
        let Some(z) = unit(v) else { return Ok(()) };
        let pair = kinematic();
        prop_assert!(gap_value(pair, q, &z) >= 0.0);
        let best = argmin_modes(pair, &z);
        prop_assert!(!best.is_empty());
        for g in best {
            prop_assert_eq!(gap_value(pair, g, &z), 0.0);
            prop_assert_eq!(pair.value(g, &z), min_value(pair, &z));
        }
    }

    #[test]
    fn linear_damping_meets_its_bound(
        g in prop::array::uniform3(0.05f64..5.0),
        kd in 0.01f64..20.0,
        v in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let damp = DampingSpec::linear(DMatrix::from_diagonal(&DVector::from_column_slice(&g)), kd).unwrap();
        let v = DVector::from_column_slice(&v);
        let scale = 1e-12 * (1.0 + kd * 5.0 * v.norm_squared());
        prop_assert!(damp.cross_term(&v) + damp.theta_bound(v.norm()) <= scale);
    }

    #[test]
    fn lipschitz_rho_is_lipschitz(
        g in prop::array::uniform2(0.05f64..5.0),
        l in 0.1f64..10.0,
        a in prop::array::uniform2(-50.0f64..50.0),
        b in prop::array::uniform2(-50.0f64..50.0),
    ) {
        let gamma = DMatrix::from_diagonal(&DVector::from_column_slice(&g));
        let rho = build_lipschitz_rho(&gamma, l);
        let (a, b) = (DVector::from_column_slice(&a), DVector::from_column_slice(&b));
        let f = |v: &DVector<f64>| rho.value(v.dot(&(&gamma * v)));
        prop_assert!((f(&a) - f(&b)).abs() <= l * (&a - &b).norm() * (1.0 + 1e-9));
    }

    #[test]
    fn backstepped_derivative_never_exceeds_the_base_one(
        q in 1i32..=2,
        z in -5.0f64..5.0,
        w in -5.0f64..5.0,
        gamma in 0.05f64..3.0,
        kd in 0.05f64..5.0,
    ) {
        let (pair, plant) = scalar_pair();
        let damp = DampingSpec::linear(DMatrix::from_element(1, 1, gamma), kd).unwrap();
        let bs = backstep_type1(pair, plant, damp, JacobianProvider::default(), "w").unwrap();
        let x = DVector::from_vec(vec![z, w]);
        prop_assert!(bs.derivative_defect(q, &x) <= 1e-7 * (1.0 + z * z + w * w));
    }

    #[test]
    fn renormalization_lands_on_the_sphere(v in prop::array::uniform3(-2.0f64..2.0), w in -3.0f64..3.0) {
        prop_assume!(Vector3::from(v).norm() > 1e-3);
        let m = Manifold::default()
            .with_block(BlockKind::UnitSphere, 3, "z")
            .with_block(BlockKind::Unconstrained, 1, "w");
        let x = ProductState::from_slice(1, &[v[0], v[1], v[2], w]);
        let y = slff_core::hybrid::renormalize(&x, &m).unwrap();
        prop_assert!(m.sphere_drift(&y.z) <= 1e-15);
        prop_assert_eq!(y.z[3], w);
    }
}
