#![allow(dead_code)]

use nalgebra::Matrix3;
use slff_core::pendulum::{
    build_hybrid_pendulum_controller, build_smoothed_pendulum_controller, certify_synergy_constant,
    potential_family_build, BacksteppedPendulum, PendulumParams, PotentialFamily, SmoothedPendulum,
};
use std::sync::{Arc, OnceLock};

pub const WARP_GAIN: f64 = 0.5;
pub const SEEDS_PER_MODE: usize = 10_000;
pub const BETA: f64 = 0.9;
pub const K_XI: f64 = 0.5;
pub const KP: f64 = slff_core::pendulum::DEFAULT_LOGIC_GAIN;

/// The default pendulum set-up: certified family, backstepped loop with
/// `δ ≡ c`, and smoothed loop with `c_s = c / 1.5`, `ε = c_s / 2`.
pub struct Scenario {
    pub params: PendulumParams,
    pub xi: Matrix3<f64>,
    pub family: Arc<PotentialFamily>,
    pub c: f64,
    pub c_smoothed: f64,
    pub epsilon: f64,
    pub backstepped: BacksteppedPendulum,
    pub smoothed: SmoothedPendulum,
}

pub fn build() -> Scenario {
    let params = PendulumParams::default();
    let xi = Matrix3::identity() * K_XI;
    let mut family = potential_family_build(&params, 2, WARP_GAIN).unwrap();
    let cert = certify_synergy_constant(&family, SEEDS_PER_MODE, BETA).unwrap();
    let c = cert.c;
    family.certificate = Some(cert);
    let family = Arc::new(family);
    let c_smoothed = c / 1.5;
    let epsilon = 0.5 * c_smoothed;
    let backstepped = build_hybrid_pendulum_controller(family.clone(), &params, &xi, c).unwrap();
    let smoothed =
        build_smoothed_pendulum_controller(family.clone(), &params, &xi, c_smoothed, epsilon, KP)
            .unwrap();
    Scenario {
        params,
        xi,
        family,
        c,
        c_smoothed,
        epsilon,
        backstepped,
        smoothed,
    }
}

pub fn scenario() -> &'static Scenario {
    static CELL: OnceLock<Scenario> = OnceLock::new();
    CELL.get_or_init(build)
}
