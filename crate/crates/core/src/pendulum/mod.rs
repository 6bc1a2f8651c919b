//! The reduced 3-D pendulum `ż = z × ω`, `Jω̇ = (Jω) × ω + mg ν × z + τ` on
//! `𝕊² × ℝ³`, stabilized at the inverted point `z = -ν/|ν|` by a family of
//! warped potentials, a backstepped torque law and its smoothed variant.

mod campaign;
mod control;
mod potential;

use crate::backstepping::BacksteppingError;
use crate::hybrid::{ProductState, SPHERE_TOL};
use crate::slff::SlffError;
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use campaign::{
    run_campaign, simulate_run, CampaignOptions, CampaignReport, ClosedLoop, RunRecord,
};
pub use control::{
    build_hybrid_pendulum_controller, build_smoothed_pendulum_controller, pendulum_damping,
    pendulum_damping_unchecked, smoothed_logic_rate, torque_feedback, BacksteppedPendulum,
    KinematicPair, KinematicSystem, PendulumPlant, SmoothedPendulum, TorqueFeedbackPair,
    DEFAULT_LOGIC_GAIN,
};
pub use potential::{
    certify_synergy_constant, potential_family_build, Certification, PotentialFamily,
};

#[derive(Debug, Error)]
pub enum PendulumError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("warp gain {warp_gain} is outside the diffeomorphism range |g|·k < 1 (k = {gain})")]
    InvalidWarp { warp_gain: f64, gain: f64 },
    #[error("family is not synergistic: minimum gap {min_gap:e} at {witness:?}")]
    NotSynergistic {
        min_gap: f64,
        witness: Option<ProductState>,
    },
    #[error("gap does not exceed {threshold} at {witness:?}; choose a smaller epsilon")]
    Recertification {
        threshold: f64,
        witness: Option<ProductState>,
    },
    #[error("state is off the sphere: | |z| - 1 | = {0:e}")]
    OffSphere(f64),
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Backstepping(#[from] BacksteppingError),
    #[error(transparent)]
    Slff(#[from] SlffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    /// Inertia `J` about the pivot, kg·m².
    pub inertia: Matrix3<f64>,
    pub mass: f64,
    pub gravity: f64,
    /// Pivot to centre of mass, m.
    pub nu: Vector3<f64>,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            inertia: Matrix3::from_diagonal(&Vector3::new(0.03, 0.04, 0.05)),
            mass: 1.0,
            gravity: 9.81,
            nu: Vector3::new(0.0, 0.0, 0.1),
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<(), PendulumError> {
        let j = &self.inertia;
        if j.iter().any(|v| !v.is_finite()) || (j - j.transpose()).amax() > 1e-12 * j.amax() {
            return Err(PendulumError::InvalidParams("J must be symmetric".into()));
        }
        if j.cholesky().is_none() {
            return Err(PendulumError::InvalidParams(
                "J must be positive definite".into(),
            ));
        }
        if !(self.nu.norm() > 0.0) || self.nu.iter().any(|v| !v.is_finite()) {
            return Err(PendulumError::InvalidParams("ν must be nonzero".into()));
        }
        if !(self.mass > 0.0) || !self.gravity.is_finite() {
            return Err(PendulumError::InvalidParams(
                "mass must be positive, gravity finite".into(),
            ));
        }
        Ok(())
    }

    /// `-ν/|ν|`, the inverted equilibrium.
    pub fn target(&self) -> Vector3<f64> {
        -self.nu.normalize()
    }

    pub fn inertia_inv(&self) -> Matrix3<f64> {
        self.inertia.try_inverse().expect("validated inertia")
    }

    /// `mg ν × z`.
    pub fn gravity_torque(&self, z: &Vector3<f64>) -> Vector3<f64> {
        self.nu.cross(z) * (self.mass * self.gravity)
    }

    /// `½ωᵀJω - mg νᵀz`, conserved when `τ = 0`.
    pub fn energy(&self, z: &Vector3<f64>, omega: &Vector3<f64>) -> f64 {
        0.5 * omega.dot(&(self.inertia * omega)) - self.mass * self.gravity * self.nu.dot(z)
    }

    pub(crate) fn rates(
        &self,
        j_inv: &Matrix3<f64>,
        z: &Vector3<f64>,
        omega: &Vector3<f64>,
        tau: &Vector3<f64>,
    ) -> (Vector3<f64>, Vector3<f64>) {
        let jw = self.inertia * omega;
        (
            z.cross(omega),
            j_inv * (jw.cross(omega) + self.gravity_torque(z) + tau),
        )
    }
}

/// `(ż, ω̇)` at a state on the sphere.
pub fn pendulum_flow(
    params: &PendulumParams,
    z: &Vector3<f64>,
    omega: &Vector3<f64>,
    tau: &Vector3<f64>,
) -> Result<(Vector3<f64>, Vector3<f64>), PendulumError> {
    if z.iter()
        .chain(omega.iter())
        .chain(tau.iter())
        .any(|v| !v.is_finite())
    {
        return Err(PendulumError::NonFinite);
    }
    let off = (z.norm() - 1.0).abs();
    if off > SPHERE_TOL {
        return Err(PendulumError::OffSphere(off));
    }
    Ok(params.rates(&params.inertia_inv(), z, omega, tau))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_in_ball, random_unit, vec3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn inverted_point_is_an_equilibrium() {
        let p = PendulumParams::default();
        let (dz, dw) =
            pendulum_flow(&p, &p.target(), &Vector3::zeros(), &Vector3::zeros()).unwrap();
        assert_eq!(dz, Vector3::zeros());
        assert_eq!(dw, Vector3::zeros());
    }

    #[test]
    fn velocity_is_tangent() {
        let p = PendulumParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let z = vec3(&random_unit(&mut rng, 3), 0).normalize();
            let w = vec3(&random_in_ball(&mut rng, 3, 5.0), 0);
            let (dz, _) = pendulum_flow(&p, &z, &w, &Vector3::zeros()).unwrap();
            assert!(z.dot(&dz).abs() <= 1e-15 * (1.0 + w.norm()) * 10.0);
        }
    }

    #[test]
    fn off_sphere_and_nan_are_rejected() {
        let p = PendulumParams::default();
        let w = Vector3::zeros();
        assert!(matches!(
            pendulum_flow(&p, &Vector3::new(0.0, 0.0, 1.1), &w, &w),
            Err(PendulumError::OffSphere(_))
        ));
        assert!(matches!(
            pendulum_flow(&p, &Vector3::new(f64::NAN, 0.0, 1.0), &w, &w),
            Err(PendulumError::NonFinite)
        ));
    }

    #[test]
    fn invalid_params_are_rejected() {
        let p = PendulumParams {
            nu: Vector3::zeros(),
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let mut p = PendulumParams::default();
        p.inertia[(0, 0)] = -1.0;
        assert!(p.validate().is_err());
    }
}
