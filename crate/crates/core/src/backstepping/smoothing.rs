use super::{
    backstep_type1, Backstepped, BacksteppingError, DampingSpec, IntegratorExtension,
    JacobianProvider,
};
use crate::hybrid::{Manifold, Mode, ModeSet, ProductState};
use crate::slff::{AffineControlSystem, AuditItem, GapFunction, SlffPair};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

type VecOf = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
type MatOf = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;

/// `κ₀(q, x) = β₀(x) + ϑ₀(x) ς₀(q)` with `ς₀(q) ∈ ℝʳ`.
#[derive(Clone)]
pub struct SmoothingDecomposition {
    pub beta0: VecOf,
    pub vartheta0: MatOf,
    pub varsigma0: Arc<dyn Fn(Mode) -> DVector<f64> + Send + Sync>,
    pub r: usize,
}

impl SmoothingDecomposition {
    pub fn new(
        r: usize,
        beta0: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        vartheta0: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        varsigma0: impl Fn(Mode) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            beta0: Arc::new(beta0),
            vartheta0: Arc::new(vartheta0),
            varsigma0: Arc::new(varsigma0),
            r,
        }
    }

    pub fn varsigma(&self, q: Mode) -> DVector<f64> {
        (self.varsigma0)(q)
    }

    /// `β₀(x) + ϑ₀(x) p`.
    pub fn input(&self, x: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        (self.beta0)(x) + (self.vartheta0)(x) * p
    }

    /// Largest `|κ₀ - β₀ - ϑ₀ς₀|` over `states`; passes below `tol`.
    pub fn reconstruction_check<P: SlffPair + ?Sized>(
        &self,
        pair: &P,
        states: &[ProductState],
        tol: f64,
    ) -> AuditItem {
        let mut worst = 0.0f64;
        let mut witness = None;
        for x in states {
            let err = (pair.feedback(x.q, &x.z) - self.input(&x.z, &self.varsigma(x.q))).amax();
            if witness.is_none() || err > worst {
                worst = err;
                witness = Some(x.clone());
            }
        }
        AuditItem::from_margin(
            "decomposition",
            tol - worst,
            witness,
            format!("{} states", states.len()),
        )
    }
}

/// `ẋ = φ₀ + ψ₀β₀ + ψ₀ϑ₀ p`: the plant seen from the logic input `p`.
#[derive(Clone)]
pub struct LogicInput<S> {
    pub sys: S,
    pub decomp: SmoothingDecomposition,
}

impl<S: AffineControlSystem> AffineControlSystem for LogicInput<S> {
    fn state_dim(&self) -> usize {
        self.sys.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.decomp.r
    }
    fn drift(&self, q: Mode, x: &DVector<f64>) -> DVector<f64> {
        self.sys.flow(q, x, &(self.decomp.beta0)(x))
    }
    fn input_matrix(&self, q: Mode, x: &DVector<f64>) -> DMatrix<f64> {
        self.sys.input_matrix(q, x) * (self.decomp.vartheta0)(x)
    }
}

/// `(V₀, ς₀)`: the base functions with the logic values as feedback.
#[derive(Clone)]
pub struct LogicFeedbackPair<P> {
    pub base: P,
    pub decomp: SmoothingDecomposition,
}

impl<P: SlffPair> SlffPair for LogicFeedbackPair<P> {
    fn modes(&self) -> &ModeSet {
        self.base.modes()
    }
    fn manifold(&self) -> &Manifold {
        self.base.manifold()
    }
    fn value(&self, q: Mode, x: &DVector<f64>) -> f64 {
        self.base.value(q, x)
    }
    fn gradient(&self, q: Mode, x: &DVector<f64>) -> DVector<f64> {
        self.base.gradient(q, x)
    }
    fn feedback(&self, q: Mode, _x: &DVector<f64>) -> DVector<f64> {
        self.decomp.varsigma(q)
    }
    fn attractor_distance(&self, q: Mode, x: &DVector<f64>) -> f64 {
        self.base.attractor_distance(q, x)
    }
    fn in_domain(&self, q: Mode, x: &DVector<f64>) -> bool {
        self.base.in_domain(q, x)
    }
    fn in_flow_effective(&self, q: Mode, x: &DVector<f64>) -> bool {
        self.base.in_flow_effective(q, x)
    }
    fn is_pure(&self) -> bool {
        self.base.is_pure()
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.base.attractor_points()
    }
}

fn max_logic_spread(decomp: &SmoothingDecomposition, modes: &ModeSet) -> f64 {
    let mut worst = 0.0f64;
    for q in modes.iter() {
        for s in modes.iter() {
            worst = worst.max((decomp.varsigma(q) - decomp.varsigma(s)).norm());
        }
    }
    worst
}

/// `Γ = ε / (2 max_{q,s} |ς₀(q) - ς₀(s)|²) I`, so that
/// `(ς₀(q) - ς₀(s))ᵀΓ(ς₀(q) - ς₀(s)) ≤ ε/2`; `I` when all `ς₀` coincide.
pub fn choose_gamma_for_logic(
    decomp: &SmoothingDecomposition,
    modes: &ModeSet,
    epsilon: f64,
) -> DMatrix<f64> {
    let spread = max_logic_spread(decomp, modes);
    let r = decomp.r;
    if spread == 0.0 {
        DMatrix::identity(r, r)
    } else {
        DMatrix::identity(r, r) * (epsilon / (2.0 * spread * spread))
    }
}

pub type LogicStage<P, S> = Backstepped<LogicFeedbackPair<P>, LogicInput<S>>;

/// `V₁ = V₀ + σ(p - ς₀(q))` on `(x, p)` with `ṗ = ς₁`.
pub struct SmoothedLogic<P, S> {
    pub pair: Arc<LogicStage<P, S>>,
    pub plant: IntegratorExtension<LogicInput<S>>,
    pub gap: GapFunction,
    pub decomp: SmoothingDecomposition,
}

/// Replaces the logic variable `q` in `κ₀` by a continuous state `p`. The gap
/// keeps `δ` and uses the margin `ε/2`; the other `ε/2` absorbs
/// `σ(ς₀(q) - ς₀(s))`, which `Γ` must keep below `ε/2`.
pub fn smooth_logic_controller<P, S>(
    pair0: P,
    sys0: S,
    decomp: SmoothingDecomposition,
    gap: &GapFunction,
    damp_p: DampingSpec,
) -> Result<SmoothedLogic<P, S>, BacksteppingError>
where
    P: SlffPair,
    S: AffineControlSystem + Clone,
{
    let eps = gap.epsilon_margin;
    if !(eps > 0.0) {
        return Err(BacksteppingError::Precondition(format!(
            "ε = {eps} must be positive"
        )));
    }
    if damp_p.dim() != decomp.r {
        return Err(BacksteppingError::Shape(format!(
            "Γ is {0}×{0}, ς₀ has {1} components",
            damp_p.dim(),
            decomp.r
        )));
    }
    for q in pair0.modes().iter() {
        for s in pair0.modes().iter() {
            let d = decomp.varsigma(q) - decomp.varsigma(s);
            let cost = damp_p.sigma(&d);
            if cost > 0.5 * eps * (1.0 + 1e-12) {
                return Err(BacksteppingError::Precondition(format!(
                    "σ(ς₀({q}) - ς₀({s})) = {cost} exceeds ε/2 = {}",
                    0.5 * eps
                )));
            }
        }
    }
    let n = pair0.manifold().dim();
    let logic_pair = LogicFeedbackPair {
        base: pair0,
        decomp: decomp.clone(),
    };
    let logic_sys = LogicInput {
        sys: sys0,
        decomp: decomp.clone(),
    };
    let stage = backstep_type1(
        logic_pair,
        logic_sys.clone(),
        damp_p,
        JacobianProvider::Zero,
        "p",
    )?;
    let mut smoothed = gap.on_prefix(n).with_margin(0.5 * eps);
    smoothed.label = format!("{} (smoothed)", gap.label);
    Ok(SmoothedLogic {
        pair: Arc::new(stage),
        plant: IntegratorExtension::new(logic_sys),
        gap: smoothed,
        decomp,
    })
}

/// The smoothed pair with feedback `β₀(x) + ϑ₀(x) p`, which no longer depends
/// on `q`. Everything else is delegated.
pub struct FeedbackSwap<P, S> {
    pub inner: Arc<LogicStage<P, S>>,
}

impl<P, S> Clone for FeedbackSwap<P, S> {
    fn clone(&self) -> Self {
        Self {
            inner: self.inner.clone(),
        }
    }
}

impl<P: SlffPair, S: AffineControlSystem> SlffPair for FeedbackSwap<P, S> {
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
    fn feedback(&self, _q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (x, p) = self.inner.split(zeta);
        self.inner.base.decomp.input(&x, &p)
    }
    fn attractor_distance(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        self.inner.attractor_distance(q, zeta)
    }
    fn in_domain(&self, q: Mode, zeta: &DVector<f64>) -> bool {
        self.inner.in_domain(q, zeta)
    }
    fn in_flow_effective(&self, q: Mode, zeta: &DVector<f64>) -> bool {
        self.inner.in_flow_effective(q, zeta)
    }
    fn is_pure(&self) -> bool {
        self.inner.is_pure()
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.inner.attractor_points()
    }
}

/// `ζ = (x, p)` with `ẋ = φ₀ + ψ₀u` and `ṗ = ς₁(q, x, p)`.
pub struct SmoothedSystem<P, S> {
    pub sys: S,
    pub stage: Arc<LogicStage<P, S>>,
}

impl<P, S: Clone> Clone for SmoothedSystem<P, S> {
    fn clone(&self) -> Self {
        Self {
            sys: self.sys.clone(),
            stage: self.stage.clone(),
        }
    }
}

impl<P: SlffPair, S: AffineControlSystem> AffineControlSystem for SmoothedSystem<P, S> {
    fn state_dim(&self) -> usize {
        self.sys.state_dim() + self.stage.input_dim()
    }
    fn input_dim(&self) -> usize {
        self.sys.input_dim()
    }
    fn drift(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (x, _) = self.stage.split(zeta);
        LogicStage::<P, S>::join(&self.sys.drift(q, &x), &self.stage.feedback(q, zeta))
    }
    fn input_matrix(&self, q: Mode, zeta: &DVector<f64>) -> DMatrix<f64> {
        let (x, _) = self.stage.split(zeta);
        let g = self.sys.input_matrix(q, &x);
        let mut b = DMatrix::zeros(zeta.len(), g.ncols());
        b.view_mut((0, 0), (g.nrows(), g.ncols())).copy_from(&g);
        b
    }
}

/// Smoothing followed by backstepping through `ω̇ = u`, for a base feedback
/// that is only available at the velocity level.
pub struct UnreadyPipeline<P, S> {
    pub stage1: SmoothedLogic<P, S>,
    pub pair: Backstepped<FeedbackSwap<P, S>, SmoothedSystem<P, S>>,
    pub plant: IntegratorExtension<SmoothedSystem<P, S>>,
    pub gap: GapFunction,
}

pub fn backstep_unready<P, S>(
    pair0: P,
    sys0: S,
    decomp: SmoothingDecomposition,
    gap: &GapFunction,
    damp_p: DampingSpec,
    damp_w: DampingSpec,
    jac: JacobianProvider,
) -> Result<UnreadyPipeline<P, S>, BacksteppingError>
where
    P: SlffPair,
    S: AffineControlSystem + Clone,
{
    let n = pair0.manifold().dim();
    let stage1 = smooth_logic_controller(pair0, sys0.clone(), decomp, gap, damp_p)?;
    let swap = FeedbackSwap {
        inner: stage1.pair.clone(),
    };
    let sys = SmoothedSystem {
        sys: sys0,
        stage: stage1.pair.clone(),
    };
    let pair = backstep_type1(swap, sys.clone(), damp_w, jac, "w")?;
    let gap = stage1.gap.on_prefix(n + stage1.decomp.r);
    Ok(UnreadyPipeline {
        stage1,
        pair,
        plant: IntegratorExtension::new(sys),
        gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slff::fixtures::two_wells;
    use crate::slff::{gap_value, sample_domain, FnAffine, FnPair};

    // κ₀(1, z) = -z, κ₀(2, z) = 3 - z for ż = u.
    fn setup() -> (FnPair, FnAffine, SmoothingDecomposition) {
        let pair = two_wells().with_feedback(|q, z| {
            DVector::from_element(1, if q == 1 { -z[0] } else { 3.0 - z[0] })
        });
        let plant = FnAffine::new(
            1,
            1,
            |_, _| DVector::zeros(1),
            |_, _| DMatrix::identity(1, 1),
        );
        let decomp = SmoothingDecomposition::new(
            1,
            |z| -z.clone(),
            |_| DMatrix::identity(1, 1),
            |q| DVector::from_element(1, if q == 1 { 0.0 } else { 3.0 }),
        );
        (pair, plant, decomp)
    }

    #[test]
    fn gamma_matches_hand_computation() {
        let (pair, _, decomp) = setup();
        let g = choose_gamma_for_logic(&decomp, pair.modes(), 0.5);
        assert!((g[(0, 0)] - 1.0 / 36.0).abs() < 1e-15);
    }

    #[test]
    fn decomposition_reconstructs_feedback() {
        let (pair, _, decomp) = setup();
        let states = sample_domain(pair.manifold(), pair.modes(), 100, 1, 5.0);
        assert!(decomp.reconstruction_check(&pair, &states, 1e-12).pass);
    }

    #[test]
    fn oversized_gamma_is_rejected() {
        let (pair, plant, decomp) = setup();
        let gap = GapFunction::constant(0.5).with_margin(0.5);
        let damp = DampingSpec::linear(DMatrix::from_element(1, 1, 0.1), 1.0).unwrap();
        assert!(matches!(
            smooth_logic_controller(pair, plant, decomp, &gap, damp),
            Err(BacksteppingError::Precondition(_))
        ));
    }

    #[test]
    fn logic_stage_decreases_and_keeps_gap_after_jumps() {
        let (pair, plant, decomp) = setup();
        let gap = GapFunction::constant(0.5).with_margin(0.5);
        let gamma = choose_gamma_for_logic(&decomp, pair.modes(), 0.5);
        let damp = DampingSpec::linear(gamma, 1.0).unwrap();
        let s = smooth_logic_controller(pair, plant, decomp, &gap, damp).unwrap();
        for x in sample_domain(s.pair.manifold(), s.pair.modes(), 500, 2, 4.0) {
            assert!(s.pair.derivative_defect(x.q, &x.z) <= 1e-9);
        }
        assert_eq!(s.gap.epsilon_margin, 0.25);
        let zeta = DVector::from_vec(vec![0.2, 1.0]);
        let g = crate::slff::argmin_modes(s.pair.as_ref(), &zeta)[0];
        assert_eq!(gap_value(s.pair.as_ref(), g, &zeta), 0.0);
    }

    #[test]
    fn unready_pipeline_feedback_is_mode_independent() {
        let (pair, plant, decomp) = setup();
        let gap = GapFunction::constant(0.5).with_margin(0.5);
        let gamma = choose_gamma_for_logic(&decomp, pair.modes(), 0.5);
        let pipe = backstep_unready(
            pair,
            plant,
            decomp,
            &gap,
            DampingSpec::linear(gamma, 1.0).unwrap(),
            DampingSpec::linear(DMatrix::identity(1, 1), 2.0).unwrap(),
            JacobianProvider::default(),
        )
        .unwrap();
        let swap = &pipe.pair.base;
        for x in sample_domain(swap.manifold(), swap.modes(), 200, 3, 4.0) {
            assert_eq!(swap.feedback(1, &x.z), swap.feedback(2, &x.z));
        }
        for x in sample_domain(pipe.pair.manifold(), pipe.pair.modes(), 500, 4, 3.0) {
            assert!(pipe.pair.derivative_defect(x.q, &x.z) <= 1e-7);
        }
        assert_eq!(pipe.plant.state_dim(), 3);
    }
}
