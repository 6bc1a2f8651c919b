//! A continuous gap function built from stall-set samples, and rescaling of a
//! pair by a class-𝒦∞ function `ρ`.

use super::critical::{CriticalKind, CriticalSet};
use super::{gap_value, GapFunction, SlffError, SlffPair};
use crate::hybrid::{Manifold, Mode, ModeSet, ProductState};
use nalgebra::DVector;
use std::sync::Arc;

/// A smooth class-𝒦∞ function with its derivative.
pub trait Rho: Send + Sync {
    fn value(&self, s: f64) -> f64;
    fn derivative(&self, s: f64) -> f64;
    fn describe(&self) -> String {
        "custom".into()
    }
}

impl<R: Rho + ?Sized> Rho for Arc<R> {
    fn value(&self, s: f64) -> f64 {
        (**self).value(s)
    }
    fn derivative(&self, s: f64) -> f64 {
        (**self).derivative(s)
    }
    fn describe(&self) -> String {
        (**self).describe()
    }
}

#[derive(Clone)]
pub struct FnRho {
    pub f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    pub df: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl FnRho {
    pub fn new(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            f: Arc::new(f),
            df: Arc::new(df),
        }
    }

    pub fn identity() -> Self {
        Self::new(|s| s, |_| 1.0)
    }

    pub fn square() -> Self {
        Self::new(|s| s * s, |s| 2.0 * s)
    }
}

impl Rho for FnRho {
    fn value(&self, s: f64) -> f64 {
        (self.f)(s)
    }
    fn derivative(&self, s: f64) -> f64 {
        (self.df)(s)
    }
}

/// `δ(q, z) = min over samples (s, ζ) of |(q, z) - (s, ζ)| + μ_V(s, ζ) / 2`,
/// taken over the stall-set and `cl(X \ Y)` samples. With no samples the
/// result is the constant `fallback` (a warning is logged).
pub fn sampled_gap_function<P: SlffPair + ?Sized>(
    pair: &P,
    criticals: &CriticalSet,
    fallback: f64,
) -> GapFunction {
    let anchors: Vec<(Mode, DVector<f64>, f64)> = criticals
        .samples
        .iter()
        .filter(|s| {
            matches!(
                s.kind,
                CriticalKind::PsiCandidate
                    | CriticalKind::OmegaCandidate
                    | CriticalKind::BoundaryXy
            )
        })
        .map(|s| {
            (
                s.point.q,
                s.point.z.clone(),
                0.5 * gap_value(pair, s.point.q, &s.point.z),
            )
        })
        .collect();
    if anchors.is_empty() {
        log::warn!("no stall samples; using the constant gap {fallback}");
        return GapFunction::constant(fallback);
    }
    GapFunction::new("sampled infimum", move |q, z| {
        anchors
            .iter()
            .map(|(s, zeta, half_mu)| {
                let dq = (q - s) as f64;
                (dq * dq + (z - zeta).norm_squared()).sqrt() + half_mu
            })
            .fold(f64::INFINITY, f64::min)
    })
}

/// `(ρ ∘ V, κ)`; `A`, `Y` and the feedback are those of the inner pair.
pub struct RescaledPair<P, R> {
    pub inner: P,
    pub rho: R,
}

impl<P: SlffPair, R: Rho> SlffPair for RescaledPair<P, R> {
    fn modes(&self) -> &ModeSet {
        self.inner.modes()
    }
    fn manifold(&self) -> &Manifold {
        self.inner.manifold()
    }
    fn value(&self, q: Mode, z: &DVector<f64>) -> f64 {
        self.rho.value(self.inner.value(q, z))
    }
    fn gradient(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        self.inner.gradient(q, z) * self.rho.derivative(self.inner.value(q, z))
    }
    fn feedback(&self, q: Mode, z: &DVector<f64>) -> DVector<f64> {
        self.inner.feedback(q, z)
    }
    fn attractor_distance(&self, q: Mode, z: &DVector<f64>) -> f64 {
        self.inner.attractor_distance(q, z)
    }
    fn in_domain(&self, q: Mode, z: &DVector<f64>) -> bool {
        self.inner.in_domain(q, z)
    }
    fn in_flow_effective(&self, q: Mode, z: &DVector<f64>) -> bool {
        self.inner.in_flow_effective(q, z)
    }
    fn is_pure(&self) -> bool {
        self.inner.is_pure()
    }
    fn attractor_points(&self) -> Vec<ProductState> {
        self.inner.attractor_points()
    }
}

/// A rescaled pair with its gap function.
pub type Rescaled<P, R> = (RescaledPair<Arc<P>, Arc<R>>, GapFunction);

/// Rescales `(V, κ)` to `(ρ ∘ V, κ)` with the gap `ρ'(c V) (1 - c) (δ + ε)`.
///
/// `ρ'` is probed on a geometric grid of `(0, 10⁶]`; `ρ'(0)` itself may vanish
/// (e.g. `ρ(s) = s²`).
pub fn rescale_pair<P, R>(
    pair: Arc<P>,
    rho: Arc<R>,
    c: f64,
    gap: &GapFunction,
) -> Result<Rescaled<P, R>, SlffError>
where
    P: SlffPair + 'static,
    R: Rho + 'static,
{
    if !(c > 0.0 && c < 1.0) {
        return Err(SlffError::Precondition(format!("c = {c} is not in (0, 1)")));
    }
    for k in -120..=60 {
        let s = 10f64.powf(k as f64 / 10.0);
        let d = rho.derivative(s);
        if !(d > 0.0) {
            return Err(SlffError::Contract(format!(
                "rho'({s:e}) = {d} is not positive"
            )));
        }
    }
    let inner = gap.clone();
    let (p, r) = (pair.clone(), rho.clone());
    let scaled = GapFunction::new(format!("rescaled {}", gap.label), move |q, z| {
        r.derivative(c * p.value(q, z)) * (1.0 - c) * inner.threshold(q, z)
    });
    Ok((RescaledPair { inner: pair, rho }, scaled))
}
