use super::potential::PotentialFamily;
use super::{PendulumError, PendulumParams};
use crate::backstepping::{
    backstep_type1, choose_gamma_for_logic, smooth_logic_controller, Backstepped, DampingSpec,
    IntegratorExtension, JacobianProvider, LogicInput, LogicStage, SmoothedLogic,
    SmoothingDecomposition,
};
use crate::hybrid::{BlockKind, HybridSystem, Manifold, Mode, ModeSet, ProductState};
use crate::linalg::{hat, min_eigenvalue, vec3};
use crate::slff::{
    synthesize_controller, verify_gap, AffineControlSystem, GapFunction, GapMode, SlffPair,
    SynergisticController,
};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::sync::Arc;

fn dv(v: &Vector3<f64>) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

/// `(V₀, κ₀ ≡ 0)` on `𝕊²` for the kinematics `ż = z × ω` with `ω` as input.
#[derive(Clone)]
pub struct KinematicPair {
    pub family: Arc<PotentialFamily>,
    manifold: Manifold,
}

impl KinematicPair {
    pub fn new(family: Arc<PotentialFamily>) -> Self {
        Self {
            family,
            manifold: Manifold::default().with_block(BlockKind::UnitSphere, 3, "z"),
        }
    }
}

impl SlffPair for KinematicPair {
    fn modes(&self) -> &ModeSet {
        &self.family.modes
    }
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn value(&self, q: Mode, z: &DVector<f64>) -> f64 {
        self.family.value(q, &vec3(z, 0))
    }
    fn gradient(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        dv(&self.family.gradient(q, &vec3(z, 0)))
    }
    fn feedback(&self, _q: Mode, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }
    fn attractor_distance(&self, q: Mode, z: &DVector<f64>) -> f64 {
        self.family.attractor_distance(q, &vec3(z, 0))
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.family
            .central
            .iter()
            .map(|&q| ProductState::new(q, dv(&self.family.target)))
            .collect()
    }
}

/// `ż = ẑ ω`.
#[derive(Clone, Copy, Debug, Default)]
pub struct KinematicSystem;

impl AffineControlSystem for KinematicSystem {
    fn state_dim(&self) -> usize {
        3
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn drift(&self, _q: Mode, _z: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(3)
    }
    fn input_matrix(&self, _q: Mode, z: &DVector<f64>) -> DMatrix<f64> {
        let h = hat(&vec3(z, 0));
        DMatrix::from_fn(3, 3, |i, j| h[(i, j)])
    }
}

/// The full pendulum on `(z, ω)` with torque input.
#[derive(Clone, Debug)]
pub struct PendulumPlant {
    pub params: PendulumParams,
    j_inv: Matrix3<f64>,
}

impl PendulumPlant {
    pub fn new(params: PendulumParams) -> Result<Self, PendulumError> {
        params.validate()?;
        let j_inv = params.inertia_inv();
        Ok(Self { params, j_inv })
    }
}

impl AffineControlSystem for PendulumPlant {
    fn state_dim(&self) -> usize {
        6
    }
    fn input_dim(&self) -> usize {
        3
    }
    fn drift(&self, _q: Mode, x: &DVector<f64>) -> DVector<f64> {
        let (dz, dw) = self
            .params
            .rates(&self.j_inv, &vec3(x, 0), &vec3(x, 3), &Vector3::zeros());
        DVector::from_iterator(6, dz.iter().chain(dw.iter()).copied())
    }
    fn input_matrix(&self, _q: Mode, _x: &DVector<f64>) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(6, 3);
        for i in 0..3 {
            for j in 0..3 {
                b[(3 + i, j)] = self.j_inv[(i, j)];
            }
        }
        b
    }
}

/// `Γ = J/2`, `Θ(v) = J⁻¹((Jv) × v - Ξv)` and `θ(s) = λ_min(Ξ) s²`, for which
/// `vᵀΓΘ(v) + Θ(v)ᵀΓv = -vᵀΞv`.
pub fn pendulum_damping(
    params: &PendulumParams,
    xi: &Matrix3<f64>,
) -> Result<DampingSpec, PendulumError> {
    let sym = DMatrix::from_fn(3, 3, |i, j| 0.5 * (xi[(i, j)] + xi[(j, i)]));
    if !(min_eigenvalue(&sym) > 0.0) {
        return Err(PendulumError::InvalidParams(
            "Ξ must be positive definite".into(),
        ));
    }
    pendulum_damping_unchecked(params, xi)
}

/// `Γ = J/2`, `Θ(v) = J⁻¹((Jv) × v - Ξv)`, `θ(s) = λ_min(Ξ) s²` without the
/// positivity check on `Ξ`, so that a degenerate `Ξ` can be audited.
pub fn pendulum_damping_unchecked(
    params: &PendulumParams,
    xi: &Matrix3<f64>,
) -> Result<DampingSpec, PendulumError> {
    params.validate()?;
    let sym = DMatrix::from_fn(3, 3, |i, j| 0.5 * (xi[(i, j)] + xi[(j, i)]));
    let lmin = min_eigenvalue(&sym);
    let j = params.inertia;
    let j_inv = params.inertia_inv();
    let xi = *xi;
    let gamma = DMatrix::from_fn(3, 3, |r, c| 0.5 * j[(r, c)]);
    Ok(DampingSpec::new(
        "pendulum Γ = J/2",
        gamma,
        move |v| {
            let v3 = vec3(v, 0);
            dv(&(j_inv * ((j * v3).cross(&v3) - xi * v3)))
        },
        move |s| lmin * s * s,
    )?)
}

/// `τ = -mg ν × z - Ξω - ẑᵀ∇V₀(q, z)`.
pub fn torque_feedback(
    family: &PotentialFamily,
    params: &PendulumParams,
    xi: &Matrix3<f64>,
    q: Mode,
    z: &Vector3<f64>,
    omega: &Vector3<f64>,
) -> Vector3<f64> {
    -params.gravity_torque(z) - xi * omega - hat(z).transpose() * family.gradient(q, z)
}

/// `(V₁, τ)` on `(z, ω)`: the backstepped kinematic pair with its velocity
/// feedback `u` mapped to torque by `τ = -(Jω) × ω - mg ν × z + J u`.
#[derive(Clone)]
pub struct TorqueFeedbackPair {
    pub inner: Backstepped<KinematicPair, KinematicSystem>,
    pub params: PendulumParams,
}

impl TorqueFeedbackPair {
    pub fn new(
        family: Arc<PotentialFamily>,
        params: &PendulumParams,
        xi: &Matrix3<f64>,
    ) -> Result<Self, PendulumError> {
        let inner = backstep_type1(
            KinematicPair::new(family),
            KinematicSystem,
            pendulum_damping(params, xi)?,
            JacobianProvider::Zero,
            "w",
        )?;
        Ok(Self {
            inner,
            params: params.clone(),
        })
    }

    pub fn input_transform(&self, zeta: &DVector<f64>, u: &DVector<f64>) -> Vector3<f64> {
        let (z, w) = (vec3(zeta, 0), vec3(zeta, 3));
        let j = &self.params.inertia;
        -(j * w).cross(&w) - self.params.gravity_torque(&z) + j * vec3(u, 0)
    }
}

impl SlffPair for TorqueFeedbackPair {
    fn modes(&self) -> &ModeSet {
        self.inner.modes()
    }
    fn manifold(&self) -> &Manifold {
        self.inner.manifold()
    }
    fn value(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        self.inner.value(q, zeta)
    }
    fn gradient(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(q, zeta)
    }
    fn feedback(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        dv(&self.input_transform(zeta, &self.inner.feedback(q, zeta)))
    }
    fn attractor_distance(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        self.inner.attractor_distance(q, zeta)
    }
    fn in_domain(&self, q: Mode, zeta: &DVector<f64>) -> bool {
        self.inner.in_domain(q, zeta)
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.inner.attractor_points()
    }
}

/// Hybrid closed loop of the pendulum with the backstepped torque law,
/// switching when `μ_{V₁} ≥ c`.
pub struct BacksteppedPendulum {
    pub family: Arc<PotentialFamily>,
    pub xi: Matrix3<f64>,
    pub c: f64,
    pub pair: Arc<TorqueFeedbackPair>,
    pub controller: SynergisticController<Arc<TorqueFeedbackPair>, PendulumPlant>,
}

impl BacksteppedPendulum {
    pub fn params(&self) -> &PendulumParams {
        &self.pair.params
    }

    /// `J κ₁` composed with the input transformation.
    pub fn torque(&self, x: &ProductState) -> Vector3<f64> {
        vec3(&self.pair.feedback(x.q, &x.z), 0)
    }
}

pub fn build_hybrid_pendulum_controller(
    family: Arc<PotentialFamily>,
    params: &PendulumParams,
    xi: &Matrix3<f64>,
    c: f64,
) -> Result<BacksteppedPendulum, PendulumError> {
    if !(c > 0.0) {
        return Err(PendulumError::InvalidParams(format!(
            "c = {c} must be positive"
        )));
    }
    let pair = Arc::new(TorqueFeedbackPair::new(family.clone(), params, xi)?);
    let mut gap = GapFunction::constant(c);
    gap.label = format!("c = {c}");
    let controller = synthesize_controller(pair.clone(), gap, PendulumPlant::new(params.clone())?)?;
    Ok(BacksteppedPendulum {
        family,
        xi: *xi,
        c,
        pair,
        controller,
    })
}

type SmoothedController = SynergisticController<
    Arc<LogicStage<Arc<TorqueFeedbackPair>, PendulumPlant>>,
    IntegratorExtension<LogicInput<PendulumPlant>>,
>;

/// Hybrid closed loop on `(q, z, ω, p)` with torque `β(z, ω) + ϑ(z) p`,
/// `ṗ = ς₁` and switching when `μ_{V₂} ≥ c + ε/2`.
pub struct SmoothedPendulum {
    pub family: Arc<PotentialFamily>,
    pub xi: Matrix3<f64>,
    pub c: f64,
    pub epsilon: f64,
    pub kp: f64,
    pub base: Arc<TorqueFeedbackPair>,
    pub logic: SmoothedLogic<Arc<TorqueFeedbackPair>, PendulumPlant>,
    pub controller: SmoothedController,
}

impl SmoothedPendulum {
    pub fn params(&self) -> &PendulumParams {
        &self.base.params
    }

    pub fn logic_dim(&self) -> usize {
        self.logic.decomp.r
    }

    /// `β(z, ω) + ϑ(z) p`; no dependence on `q`.
    pub fn torque(&self, x: &ProductState) -> Vector3<f64> {
        let p = x.z.rows(6, self.logic_dim()).into_owned();
        vec3(
            &self.logic.decomp.input(&x.z.rows(0, 6).into_owned(), &p),
            0,
        )
    }

    /// `ṗ` from the generic construction.
    pub fn logic_rate(&self, x: &ProductState) -> DVector<f64> {
        self.logic.pair.feedback(x.q, &x.z)
    }

    pub fn gamma_p(&self) -> &DMatrix<f64> {
        &self.logic.pair.damping.gamma
    }

    /// Unit vector `e_q` in `ℝᴺ`.
    pub fn logic_value(&self, q: Mode) -> DVector<f64> {
        self.logic.decomp.varsigma(q)
    }
}

/// Default `k_p` for the logic channel. Smaller gains let `p` lag behind
/// `e_q` and stretch convergence well past 30 s.
pub const DEFAULT_LOGIC_GAIN: f64 = 20.0;

/// Hand-coded `ṗ = -k_p (p - e_q) + ½Γ_p⁻¹ 𝒟𝒱₀(z)(z × ω)` for `Γ_p = γ I`.
#[allow(clippy::too_many_arguments)]
pub fn smoothed_logic_rate(
    family: &PotentialFamily,
    gamma: f64,
    kp: f64,
    q: Mode,
    z: &Vector3<f64>,
    omega: &Vector3<f64>,
    p: &DVector<f64>,
) -> DVector<f64> {
    let mut e = DVector::zeros(family.modes.len());
    e[family.modes.index_of(q).expect("mode in family")] = 1.0;
    -(p - e) * kp + family.stack_jacobian(z) * dv(&z.cross(omega)) * (0.5 / gamma)
}

/// Requires a certified family whose gap exceeds `c + ε` at its stored
/// critical samples.
pub fn build_smoothed_pendulum_controller(
    family: Arc<PotentialFamily>,
    params: &PendulumParams,
    xi: &Matrix3<f64>,
    c: f64,
    epsilon: f64,
    kp: f64,
) -> Result<SmoothedPendulum, PendulumError> {
    if !(c > 0.0 && epsilon > 0.0 && kp > 0.0) {
        return Err(PendulumError::InvalidParams(
            "c, ε and k_p must be positive".into(),
        ));
    }
    let cert = family
        .certificate
        .as_ref()
        .ok_or_else(|| PendulumError::InvalidParams("the family must be certified first".into()))?;
    let gap = GapFunction::constant(c).with_margin(epsilon);
    let report = verify_gap(
        &KinematicPair::new(family.clone()),
        &gap,
        &cert.criticals,
        GapMode::WeaklyTotallyExceeds,
    )?;
    if !report.pass {
        return Err(PendulumError::Recertification {
            threshold: c + epsilon,
            witness: report.worst_point,
        });
    }
    let base = Arc::new(TorqueFeedbackPair::new(family.clone(), params, xi)?);
    let plant = PendulumPlant::new(params.clone())?;
    let (mg_nu, xi_m) = (params.nu * (params.mass * params.gravity), *xi);
    let fam = family.clone();
    let modes = family.modes.clone();
    let n = modes.len();
    let decomp = SmoothingDecomposition::new(
        n,
        move |x| {
            let (z, w) = (vec3(x, 0), vec3(x, 3));
            dv(&(-mg_nu.cross(&z) - xi_m * w))
        },
        move |x| {
            let z = vec3(x, 0);
            let h = hat(&z);
            let hz = DMatrix::from_fn(3, 3, |i, j| h[(i, j)]);
            hz * fam.stack_jacobian(&z).transpose()
        },
        move |q| {
            let mut e = DVector::zeros(n);
            e[modes.index_of(q).expect("mode in family")] = 1.0;
            e
        },
    );
    let gamma_p = choose_gamma_for_logic(&decomp, &family.modes, epsilon);
    let damp_p = DampingSpec::linear(gamma_p, kp)?;
    let logic = smooth_logic_controller(base.clone(), plant, decomp, &gap, damp_p)?;
    let controller =
        synthesize_controller(logic.pair.clone(), logic.gap.clone(), logic.plant.clone())?;
    Ok(SmoothedPendulum {
        family,
        xi: *xi,
        c,
        epsilon,
        kp,
        base,
        logic,
        controller,
    })
}

impl HybridSystem for BacksteppedPendulum {
    fn manifold(&self) -> &Manifold {
        self.controller.manifold()
    }
    fn in_domain(&self, x: &ProductState) -> bool {
        self.controller.in_domain(x)
    }
    fn in_flow_set(&self, x: &ProductState) -> bool {
        self.controller.in_flow_set(x)
    }
    fn in_jump_set(&self, x: &ProductState) -> bool {
        self.controller.in_jump_set(x)
    }
    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        self.controller.flow_map(x)
    }
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        self.controller.jump_map(x)
    }
    fn attractor_distance(&self, x: &ProductState) -> Option<f64> {
        self.controller.attractor_distance(x)
    }
}

impl HybridSystem for SmoothedPendulum {
    fn manifold(&self) -> &Manifold {
        self.controller.manifold()
    }
    fn in_domain(&self, x: &ProductState) -> bool {
        self.controller.in_domain(x)
    }
    fn in_flow_set(&self, x: &ProductState) -> bool {
        self.controller.in_flow_set(x)
    }
    fn in_jump_set(&self, x: &ProductState) -> bool {
        self.controller.in_jump_set(x)
    }
    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        self.controller.flow_map(x)
    }
    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        self.controller.jump_map(x)
    }
    fn attractor_distance(&self, x: &ProductState) -> Option<f64> {
        self.controller.attractor_distance(x)
    }
}

#[cfg(test)]
mod tests {
    use super::super::{certify_synergy_constant, potential_family_build};
    use super::*;
    use crate::slff::sample_domain;

    fn certified() -> Arc<PotentialFamily> {
        let mut f = potential_family_build(&PendulumParams::default(), 2, 0.5).unwrap();
        f.certificate = Some(certify_synergy_constant(&f, 10_000, 0.9).unwrap());
        Arc::new(f)
    }

    fn xi() -> Matrix3<f64> {
        Matrix3::identity() * 0.5
    }

    #[test]
    fn torque_vanishes_at_equilibrium() {
        let f = certified();
        let p = PendulumParams::default();
        assert_eq!(
            torque_feedback(&f, &p, &xi(), 1, &f.target, &Vector3::zeros()),
            Vector3::zeros()
        );
    }

    #[test]
    fn generic_and_hand_coded_torque_agree() {
        let f = certified();
        let p = PendulumParams::default();
        let pair = TorqueFeedbackPair::new(f.clone(), &p, &xi()).unwrap();
        for x in sample_domain(pair.manifold(), pair.modes(), 1000, 7, 5.0) {
            let tau = torque_feedback(&f, &p, &xi(), x.q, &vec3(&x.z, 0), &vec3(&x.z, 3));
            let generic = vec3(&pair.feedback(x.q, &x.z), 0);
            assert!((tau - generic).amax() <= 1e-12 * tau.amax().max(1.0));
        }
    }

    #[test]
    fn closed_loop_rate_is_minus_damping() {
        let f = certified();
        let p = PendulumParams::default();
        let pair = TorqueFeedbackPair::new(f, &p, &xi()).unwrap();
        let plant = PendulumPlant::new(p).unwrap();
        for x in sample_domain(pair.manifold(), pair.modes(), 1000, 8, 5.0) {
            let w = vec3(&x.z, 3);
            let rate =
                pair.gradient(x.q, &x.z)
                    .dot(&plant.flow(x.q, &x.z, &pair.feedback(x.q, &x.z)));
            assert!((rate + w.dot(&(xi() * w))).abs() <= 1e-9);
        }
    }

    #[test]
    fn smoothed_rate_matches_hand_coded_and_torque_ignores_mode() {
        let f = certified();
        let c = f.c().unwrap() / 1.5;
        let sm = build_smoothed_pendulum_controller(
            f.clone(),
            &PendulumParams::default(),
            &xi(),
            c,
            0.5 * c,
            4.0,
        )
        .unwrap();
        let gamma = sm.gamma_p()[(0, 0)];
        assert!((gamma - 0.5 * c / 4.0).abs() < 1e-15);
        for x in sample_domain(sm.manifold(), sm.controller.pair.modes(), 1000, 9, 3.0) {
            let hand = smoothed_logic_rate(
                &f,
                gamma,
                4.0,
                x.q,
                &vec3(&x.z, 0),
                &vec3(&x.z, 3),
                &x.z.rows(6, 2).into_owned(),
            );
            let generic = sm.logic_rate(&x);
            assert!((hand - &generic).amax() <= 1e-12 * generic.amax().max(1.0));
            let other = ProductState::new(3 - x.q, x.z.clone());
            assert_eq!(sm.torque(&x), sm.torque(&other));
        }
    }

    #[test]
    fn smoothed_equilibrium_is_stationary() {
        let f = certified();
        let c = f.c().unwrap() / 1.5;
        let sm = build_smoothed_pendulum_controller(
            f.clone(),
            &PendulumParams::default(),
            &xi(),
            c,
            0.5 * c,
            1.0,
        )
        .unwrap();
        let mut z = DVector::zeros(8);
        z.rows_mut(0, 3).copy_from(&dv(&f.target));
        z[6] = 1.0;
        let x = ProductState::new(1, z);
        assert_eq!(sm.logic_rate(&x).amax(), 0.0);
        assert_eq!(sm.torque(&x), Vector3::zeros());
    }

    #[test]
    fn too_large_epsilon_fails_recertification() {
        let f = certified();
        let c = f.c().unwrap();
        assert!(matches!(
            build_smoothed_pendulum_controller(
                f,
                &PendulumParams::default(),
                &xi(),
                c,
                0.5 * c,
                1.0
            ),
            Err(PendulumError::Recertification { .. })
        ));
    }
}
