//! SLFF pairs `(V, κ)` relative to `(A, Y)`, the synergy gap
//! `μ_V(q, z) = V(q, z) - min_s V(s, z)`, and the hybrid controller that
//! switches to the argmin mode whenever the gap reaches a threshold `δ`.
//!
//! The sets the gap conditions quantify over (the largest weakly invariant
//! subset of `{⟨∇V, f(κ)⟩ = 0}`, its intersection with `{∇Vᵀψ = 0}` for weak
//! pairs, `cl(X \ Y)` and the states whose continuous part lies in the attractor
//! under some mode) are sampled numerically by [`sample_critical_set`] and
//! friends; [`verify_gap`] then checks `μ_V > δ` on the samples outside `A`.
//! Sampling falsifies, it does not prove.

mod controller;
mod critical;
mod rescale;
mod verify;

use crate::hybrid::{Manifold, Mode, ModeSet, ProductState, SPHERE_TOL};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;
use thiserror::Error;

pub use controller::{synthesize_controller, SynergisticController};
pub use critical::{
    b_set_samples, boundary_xy_samples, closed_loop_rhs, grid_seeds, sample_critical_set,
    sample_domain, CriticalKind, CriticalSample, CriticalSearch, CriticalSet,
};
pub use rescale::{rescale_pair, sampled_gap_function, FnRho, RescaledPair, Rho};
pub use verify::{
    candidate_check, gradient_audit, ready_made_check, verify_gap, AuditItem, AuditReport,
    CandidateOptions, GapMode, GapReport, ReadyMadeOptions, ReadyMadeType,
};

/// Distance to `A` below which a sample counts as a point of `A`.
pub const ATTRACTOR_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SlffError {
    #[error("state (q = {q}) is outside the domain of the pair")]
    OutsideDomain { q: Mode },
    #[error("gap check needs samples of kinds {missing:?}, which were not searched")]
    MissingKinds { missing: Vec<CriticalKind> },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

/// `ż = φ(q, z) + ψ(q, z) u`.
pub trait AffineControlSystem: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn drift(&self, q: Mode, z: &DVector<f64>) -> DVector<f64>;
    fn input_matrix(&self, q: Mode, z: &DVector<f64>) -> DMatrix<f64>;

    fn flow(&self, q: Mode, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(q, z) + self.input_matrix(q, z) * u
    }
}

impl<T: AffineControlSystem + ?Sized> AffineControlSystem for Arc<T> {
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn drift(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (**self).drift(q, z)
    }
    fn input_matrix(&self, q: Mode, z: &DVector<f64>) -> DMatrix<f64> {
        (**self).input_matrix(q, z)
    }
    fn flow(&self, q: Mode, z: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (**self).flow(q, z, u)
    }
}

/// A (possibly weak) SLFF pair. `gradient` is the gradient of `V(q, ·)` in the
/// ambient coordinates of the continuous state; on sphere blocks only its
/// tangential part is meaningful.
pub trait SlffPair: Send + Sync {
    fn modes(&self) -> &ModeSet;
    fn manifold(&self) -> &Manifold;
    fn value(&self, q: Mode, z: &DVector<f64>) -> f64;
    fn gradient(&self, q: Mode, z: &DVector<f64>) -> DVector<f64>;
    fn feedback(&self, q: Mode, z: &DVector<f64>) -> DVector<f64>;
    fn attractor_distance(&self, q: Mode, z: &DVector<f64>) -> f64;

    fn in_domain(&self, q: Mode, z: &DVector<f64>) -> bool {
        self.modes().contains(q) && self.manifold().contains(z, SPHERE_TOL)
    }

    /// Membership in the flow-effective set `Y`.
    fn in_flow_effective(&self, _q: Mode, _z: &DVector<f64>) -> bool {
        true
    }

    /// `Y = X`.
    fn is_pure(&self) -> bool {
        true
    }

    /// Isolated points of `A`, when `A` is a finite set. Used to sample the set
    /// of states whose continuous part lies in `A` under some mode.
    fn attractor_points(&self) -> Vec<ProductState> {
        Vec::new()
    }
}

impl<T: SlffPair + ?Sized> SlffPair for Arc<T> {
    fn modes(&self) -> &ModeSet {
        (**self).modes()
    }
    fn manifold(&self) -> &Manifold {
        (**self).manifold()
    }
    fn value(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (**self).value(q, z)
    }
    fn gradient(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (**self).gradient(q, z)
    }
    fn feedback(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (**self).feedback(q, z)
    }
    fn attractor_distance(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (**self).attractor_distance(q, z)
    }
    fn in_domain(&self, q: Mode, z: &DVector<f64>) -> bool {
        (**self).in_domain(q, z)
    }
    fn in_flow_effective(&self, q: Mode, z: &DVector<f64>) -> bool {
        (**self).in_flow_effective(q, z)
    }
    fn is_pure(&self) -> bool {
        (**self).is_pure()
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        (**self).attractor_points()
    }
}

/// `min_s V(s, z)`.
pub fn min_value<P: SlffPair + ?Sized>(pair: &P, z: &DVector<f64>) -> f64 {
    pair.modes()
        .iter()
        .map(|s| pair.value(s, z))
        .fold(f64::INFINITY, f64::min)
}

/// Synergy gap without the domain check. Exactly zero when `q` attains the minimum.
pub fn gap_value<P: SlffPair + ?Sized>(pair: &P, q: Mode, z: &DVector<f64>) -> f64 {
    pair.value(q, z) - min_value(pair, z)
}

/// Synergy gap `μ_V(q, z)`.
pub fn mu_v<P: SlffPair + ?Sized>(pair: &P, q: Mode, z: &DVector<f64>) -> Result<f64, SlffError> {
    if !pair.in_domain(q, z) {
        return Err(SlffError::OutsideDomain { q });
    }
    Ok(gap_value(pair, q, z))
}

/// Modes attaining `min_s V(s, z)` (exact equality), lowest label first.
pub fn argmin_modes<P: SlffPair + ?Sized>(pair: &P, z: &DVector<f64>) -> Vec<Mode> {
    let values: Vec<(Mode, f64)> = pair.modes().iter().map(|s| (s, pair.value(s, z))).collect();
    let m = values.iter().map(|v| v.1).fold(f64::INFINITY, f64::min);
    values
        .into_iter()
        .filter(|v| v.1 == m)
        .map(|v| v.0)
        .collect()
}

type StateFn<T> = Arc<dyn Fn(Mode, &DVector<f64>) -> T + Send + Sync>;

/// Gap threshold `δ(q, z) + ε`.
#[derive(Clone)]
pub struct GapFunction {
    pub delta: StateFn<f64>,
    pub epsilon_margin: f64,
    pub label: String,
}

impl std::fmt::Debug for GapFunction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GapFunction")
            .field("label", &self.label)
            .field("epsilon_margin", &self.epsilon_margin)
            .finish()
    }
}

impl GapFunction {
    pub fn new(
        label: impl Into<String>,
        delta: impl Fn(Mode, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            delta: Arc::new(delta),
            epsilon_margin: 0.0,
            label: label.into(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant {c}"), move |_, _| c)
    }

    pub fn with_margin(mut self, epsilon: f64) -> Self {
        self.epsilon_margin = epsilon;
        self
    }

    pub fn delta(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (self.delta)(q, z)
    }

    /// `δ(q, z) + ε`, the value every gap comparison uses.
    pub fn threshold(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (self.delta)(q, z) + self.epsilon_margin
    }

    /// The same gap on an extended state whose first `n` components are the
    /// original state.
    pub fn on_prefix(&self, n: usize) -> Self {
        let d = self.delta.clone();
        Self {
            delta: Arc::new(move |q, x: &DVector<f64>| d(q, &x.rows(0, n).into_owned())),
            epsilon_margin: self.epsilon_margin,
            label: self.label.clone(),
        }
    }
}

/// An affine control system assembled from closures.
#[derive(Clone)]
pub struct FnAffine {
    pub n: usize,
    pub m: usize,
    pub drift: StateFn<DVector<f64>>,
    pub input_matrix: StateFn<DMatrix<f64>>,
}

impl FnAffine {
    pub fn new(
        n: usize,
        m: usize,
        drift: impl Fn(Mode, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        input_matrix: impl Fn(Mode, &DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            n,
            m,
            drift: Arc::new(drift),
            input_matrix: Arc::new(input_matrix),
        }
    }

    /// `ż = g(q, z)` with no input.
    pub fn autonomous(
        n: usize,
        drift: impl Fn(Mode, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self::new(n, 0, drift, move |_, _| DMatrix::zeros(n, 0))
    }
}

impl AffineControlSystem for FnAffine {
    fn state_dim(&self) -> usize {
        self.n
    }
    fn input_dim(&self) -> usize {
        self.m
    }
    fn drift(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (self.drift)(q, z)
    }
    fn input_matrix(&self, q: Mode, z: &DVector<f64>) -> DMatrix<f64> {
        (self.input_matrix)(q, z)
    }
}

/// An SLFF pair assembled from closures.
#[derive(Clone)]
pub struct FnPair {
    pub modes: ModeSet,
    pub manifold: Manifold,
    pub value: StateFn<f64>,
    pub gradient: StateFn<DVector<f64>>,
    pub feedback: StateFn<DVector<f64>>,
    pub attractor_distance: StateFn<f64>,
    pub flow_effective: Option<StateFn<bool>>,
    pub attractor_points: Vec<ProductState>,
}

impl FnPair {
    /// Pure pair with no feedback input (`κ` has length 0) and an attractor
    /// given by its distance function.
    pub fn new(
        modes: ModeSet,
        manifold: Manifold,
        value: impl Fn(Mode, &DVector<f64>) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(Mode, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        attractor_distance: impl Fn(Mode, &DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            modes,
            manifold,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
            feedback: Arc::new(|_, _| DVector::zeros(0)),
            attractor_distance: Arc::new(attractor_distance),
            flow_effective: None,
            attractor_points: Vec::new(),
        }
    }

    pub fn with_feedback(
        mut self,
        k: impl Fn(Mode, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.feedback = Arc::new(k);
        self
    }

    pub fn with_flow_effective(
        mut self,
        y: impl Fn(Mode, &DVector<f64>) -> bool + Send + Sync + 'static,
    ) -> Self {
        self.flow_effective = Some(Arc::new(y));
        self
    }

    pub fn with_attractor_points(mut self, pts: Vec<ProductState>) -> Self {
        self.attractor_points = pts;
        self
    }
}

impl SlffPair for FnPair {
    fn modes(&self) -> &ModeSet {
        &self.modes
    }
    fn manifold(&self) -> &Manifold {
        &self.manifold
    }
    fn value(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (self.value)(q, z)
    }
    fn gradient(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (self.gradient)(q, z)
    }
    fn feedback(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        (self.feedback)(q, z)
    }
    fn attractor_distance(&self, q: Mode, z: &DVector<f64>) -> f64 {
        (self.attractor_distance)(q, z)
    }
    fn in_flow_effective(&self, q: Mode, z: &DVector<f64>) -> bool {
        self.flow_effective.as_ref().is_none_or(|y| y(q, z))
    }
    fn is_pure(&self) -> bool {
        self.flow_effective.is_none()
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.attractor_points.clone()
    }
}

/// `⟨∇V(q, z), f(q, z, κ(q, z))⟩`.
pub fn lyapunov_rate<P, F>(pair: &P, plant: &F, q: Mode, z: &DVector<f64>) -> f64
where
    P: SlffPair + ?Sized,
    F: AffineControlSystem + ?Sized,
{
    pair.gradient(q, z)
        .dot(&plant.flow(q, z, &pair.feedback(q, z)))
}


#[cfg(test)]
mod tests {
    use super::fixtures::two_wells;
    use super::*;

    #[test]
    fn gap_by_direct_arithmetic() {
        let pair = FnPair::new(
            ModeSet::range(2),
            Manifold::euclidean(1),
            |q, _| if q == 1 { 2.0 } else { 0.5 },
            |_, _| DVector::zeros(1),
            |_, _| 1.0,
        );
        let z = DVector::from_element(1, 0.0);
        assert_eq!(mu_v(&pair, 1, &z).unwrap(), 1.5);
        assert_eq!(mu_v(&pair, 2, &z).unwrap(), 0.0);
        assert!(matches!(
            mu_v(&pair, 3, &z),
            Err(SlffError::OutsideDomain { q: 3 })
        ));
    }

    #[test]
    fn gap_vanishes_on_attractor() {
        let pair = two_wells();
        let z = DVector::from_element(1, 0.0);
        assert_eq!(mu_v(&pair, 1, &z).unwrap(), 0.0);
    }

    #[test]
    fn argmin_breaks_ties_by_lowest_label() {
        let pair = FnPair::new(
            ModeSet::new(vec![5, 2, 7]).unwrap(),
            Manifold::euclidean(1),
            |q, _| if q == 5 { 3.0 } else { 1.0 },
            |_, _| DVector::zeros(1),
            |_, _| 1.0,
        );
        assert_eq!(argmin_modes(&pair, &DVector::zeros(1)), vec![2, 7]);
    }

    #[test]
    fn gap_on_prefix_ignores_extension() {
        let g = GapFunction::new("abs", |_, z| z[0].abs()).with_margin(0.5);
        let lifted = g.on_prefix(1);
        let x = DVector::from_vec(vec![-2.0, 100.0]);
        assert_eq!(lifted.threshold(1, &x), 2.5);
    }
}
