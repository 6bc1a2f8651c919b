//! Backstepping of SLFF pairs through an integrator `ω̇ = u`, the Lipschitz
//! rescaling used when the base pair is not pure, and smoothing of the logic
//! variable through an auxiliary state `p`.
//!
//! With `v = ω - κ₀(q, z)` and `σ(v) = vᵀΓv`, the backstepped pair is
//! `V₁ = V₀ + σ(v)` (or `V₀ + ρ(σ(v))`) with
//! `κ₁ = Θ(v) - ½Γ⁻¹ψ₀ᵀ∇V₀ + 𝒟κ₀ (φ₀ + ψ₀ω)`, and along the extended system
//! `V̇₁ = V̇₀|_{ω=κ₀} + vᵀΓΘ(v) + Θ(v)ᵀΓv`.

mod backstep;
mod rho;
mod smoothing;

use crate::hybrid::{Mode, ProductState};
use crate::linalg::{min_eigenvalue, random_in_ball};
use crate::slff::{AuditItem, SlffError, SlffPair};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::sync::Arc;
use thiserror::Error;

pub use backstep::{
    backstep_type1, backstep_type2, Backstepped, ConstructionRecord, IntegratorExtension, Shaping,
};
pub use rho::{build_lipschitz_rho, LipschitzRho};
pub use smoothing::{
    backstep_unready, choose_gamma_for_logic, smooth_logic_controller, FeedbackSwap,
    LogicFeedbackPair, LogicInput, LogicStage, SmoothedLogic, SmoothedSystem,
    SmoothingDecomposition, UnreadyPipeline,
};

#[derive(Debug, Error)]
pub enum BacksteppingError {
    #[error("Γ is not symmetric positive definite")]
    NotSpd,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Slff(#[from] SlffError),
}

type VecMap = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

/// `Γ`, `Θ` and `θ` with `vᵀΓΘ(v) + Θ(v)ᵀΓv ≤ -θ(|v|)`.
#[derive(Clone)]
pub struct DampingSpec {
    pub gamma: DMatrix<f64>,
    pub gamma_inv: DMatrix<f64>,
    pub theta_map: VecMap,
    pub theta_bound: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub label: String,
}

impl std::fmt::Debug for DampingSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DampingSpec")
            .field("label", &self.label)
            .field("gamma", &self.gamma)
            .finish()
    }
}

fn check_spd(gamma: &DMatrix<f64>) -> Result<DMatrix<f64>, BacksteppingError> {
    if !gamma.is_square() || gamma.nrows() == 0 {
        return Err(BacksteppingError::NotSpd);
    }
    let asym = (gamma - gamma.transpose()).amax();
    if asym > 1e-12 * gamma.amax().max(1.0) {
        return Err(BacksteppingError::NotSpd);
    }
    let chol = gamma.clone().cholesky().ok_or(BacksteppingError::NotSpd)?;
    Ok(chol.inverse())
}

impl DampingSpec {
    pub fn new(
        label: impl Into<String>,
        gamma: DMatrix<f64>,
        theta_map: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        theta_bound: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, BacksteppingError> {
        let gamma_inv = check_spd(&gamma)?;
        Ok(Self {
            gamma,
            gamma_inv,
            theta_map: Arc::new(theta_map),
            theta_bound: Arc::new(theta_bound),
            label: label.into(),
        })
    }

    /// `Θ(v) = -k_d v`, `θ(s) = 2 k_d λ_min(Γ) s²`.
    pub fn linear(gamma: DMatrix<f64>, kd: f64) -> Result<Self, BacksteppingError> {
        let lmin = if gamma.is_square() && gamma.nrows() > 0 {
            min_eigenvalue(&gamma)
        } else {
            0.0
        };
        Self::new(
            format!("linear k_d = {kd}"),
            gamma,
            move |v| -v * kd,
            move |s| 2.0 * kd * lmin * s * s,
        )
    }

    pub fn dim(&self) -> usize {
        self.gamma.nrows()
    }

    /// `σ(v) = vᵀΓv`.
    pub fn sigma(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.gamma * v))
    }

    pub fn theta_map(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.theta_map)(v)
    }

    pub fn theta_bound(&self, s: f64) -> f64 {
        (self.theta_bound)(s)
    }

    /// `vᵀΓΘ(v) + Θ(v)ᵀΓv`.
    pub fn cross_term(&self, v: &DVector<f64>) -> f64 {
        let t = self.theta_map(v);
        v.dot(&(&self.gamma * &t)) + t.dot(&(&self.gamma * v))
    }

    /// Checks the damping inequality (tolerance `1e-10`) and `θ(|v|) > 0` at
    /// `n` random `v` in the ball of `radius`.
    pub fn audit(&self, n: usize, seed: u64, radius: f64) -> AuditItem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = f64::NEG_INFINITY;
        let mut witness = None;
        let mut theta_fail = None;
        for _ in 0..n {
            let v = random_in_ball(&mut rng, self.dim(), radius);
            let nv = v.norm();
            let excess = self.cross_term(&v) + self.theta_bound(nv);
            if excess > worst {
                worst = excess;
                witness = Some(v.clone());
            }
            if nv > 0.0 && !(self.theta_bound(nv) > 0.0) && theta_fail.is_none() {
                theta_fail = Some(v);
            }
        }
        let as_state = |v: DVector<f64>| ProductState::new(0, v);
        match theta_fail {
            Some(v) => AuditItem::from_margin(
                &format!("damping[{}]", self.label),
                -1.0,
                Some(as_state(v)),
                "θ is not positive definite".into(),
            ),
            None => AuditItem::from_margin(
                &format!("damping[{}]", self.label),
                1e-10 - worst,
                witness.map(as_state),
                format!("{n} samples, radius {radius}"),
            ),
        }
    }
}

pub type JacobianFn = Arc<dyn Fn(Mode, &DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// Source of the Jacobian `𝒟κ₀(q, z)` (`m × n`).
#[derive(Clone)]
pub enum JacobianProvider {
    Analytic(JacobianFn),
    /// Central differences in ambient coordinates.
    FiniteDifference {
        step: f64,
    },
    /// `κ₀` does not depend on `z`.
    Zero,
}

impl Default for JacobianProvider {
    fn default() -> Self {
        JacobianProvider::FiniteDifference { step: 1e-6 }
    }
}

impl JacobianProvider {
    pub fn analytic(
        f: impl Fn(Mode, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        JacobianProvider::Analytic(Arc::new(f))
    }

    pub fn jacobian<P: SlffPair + ?Sized>(
        &self,
        pair: &P,
        q: Mode,
        z: &DVector<f64>,
    ) -> DMatrix<f64> {
        match self {
            JacobianProvider::Analytic(f) => f(q, z),
            JacobianProvider::Zero => DMatrix::zeros(pair.feedback(q, z).len(), z.len()),
            JacobianProvider::FiniteDifference { step } => {
                fd_jacobian(|x| pair.feedback(q, x), z, *step)
            }
        }
    }
}

pub(crate) fn fd_jacobian(
    f: impl Fn(&DVector<f64>) -> DVector<f64>,
    z: &DVector<f64>,
    step: f64,
) -> DMatrix<f64> {
    let m = f(z).len();
    let mut jac = DMatrix::zeros(m, z.len());
    for i in 0..z.len() {
        let mut a = z.clone();
        let mut b = z.clone();
        a[i] += step;
        b[i] -= step;
        jac.set_column(i, &((f(&a) - f(&b)) / (2.0 * step)));
    }
    jac
}

/// Largest relative difference between an analytic Jacobian and central
/// differences over `states`; the check passes below `1e-4`.
pub fn jacobian_audit<P: SlffPair + ?Sized>(
    pair: &P,
    analytic: &JacobianProvider,
    states: &[ProductState],
) -> AuditItem {
    let fd = JacobianProvider::default();
    let mut worst = 0.0f64;
    let mut witness = None;
    for x in states {
        let a = analytic.jacobian(pair, x.q, &x.z);
        let b = fd.jacobian(pair, x.q, &x.z);
        let rel = (&a - &b).norm() / b.norm().max(1e-3);
        if witness.is_none() || rel > worst {
            worst = rel;
            witness = Some(x.clone());
        }
    }
    AuditItem::from_margin(
        "jacobian",
        1e-4 - worst,
        witness,
        format!("{} states", states.len()),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct DampingRecord {
    pub label: String,
    pub gamma: Vec<Vec<f64>>,
}

impl From<&DampingSpec> for DampingRecord {
    fn from(d: &DampingSpec) -> Self {
        Self {
            label: d.label.clone(),
            gamma: d
                .gamma
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn non_spd_gamma_is_rejected() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(matches!(
            DampingSpec::linear(g, 1.0),
            Err(BacksteppingError::NotSpd)
        ));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            DampingSpec::linear(asym, 1.0),
            Err(BacksteppingError::NotSpd)
        ));
    }

    #[test]
    fn zero_gain_fails_positive_definiteness() {
        let d = DampingSpec::linear(DMatrix::identity(3, 3), 0.0).unwrap();
        let item = d.audit(100, 1, 5.0);
        assert!(!item.pass);
        assert!(item.detail.contains("positive definite"));
    }

    #[test]
    fn fd_jacobian_of_linear_map_is_exact() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 3.0, 0.0, -1.0]);
        let jac = fd_jacobian(|z| &a * z, &DVector::from_vec(vec![0.3, 1.0, -2.0]), 1e-6);
        assert!((jac - a).amax() < 1e-9);
    }

    proptest! {
        #[test]
        fn linear_damping_satisfies_its_bound(
            kd in 0.01f64..10.0,
            d in proptest::collection::vec(0.1f64..5.0, 3),
            v in proptest::collection::vec(-10.0f64..10.0, 3),
        ) {
            let spec = DampingSpec::linear(DMatrix::from_diagonal(&DVector::from_vec(d)), kd).unwrap();
            let v = DVector::from_vec(v);
            prop_assert!(spec.cross_term(&v) + spec.theta_bound(v.norm()) <= 1e-10);
        }
    }
}
