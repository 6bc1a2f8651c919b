use super::{BacksteppingError, DampingRecord, DampingSpec, JacobianProvider};
use crate::hybrid::{BlockKind, Manifold, Mode, ModeSet, ProductState};
use crate::slff::{AffineControlSystem, AuditItem, Rho, SlffPair};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::sync::Arc;

/// `ζ = (z, ω)` with `ż = φ₀(q, z) + ψ₀(q, z) ω` and `ω̇ = u`.
#[derive(Clone)]
pub struct IntegratorExtension<S> {
    pub base: S,
}

impl<S: AffineControlSystem> IntegratorExtension<S> {
    pub fn new(base: S) -> Self {
        Self { base }
    }

    fn split(&self, zeta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.base.state_dim();
        (
            zeta.rows(0, n).into_owned(),
            zeta.rows(n, zeta.len() - n).into_owned(),
        )
    }
}

impl<S: AffineControlSystem> AffineControlSystem for IntegratorExtension<S> {
    fn state_dim(&self) -> usize {
        self.base.state_dim() + self.base.input_dim()
    }
    fn input_dim(&self) -> usize {
        self.base.input_dim()
    }
    fn drift(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (z, w) = self.split(zeta);
        let mut out = DVector::zeros(zeta.len());
        out.rows_mut(0, z.len())
            .copy_from(&self.base.flow(q, &z, &w));
        out
    }
    fn input_matrix(&self, _q: Mode, zeta: &DVector<f64>) -> DMatrix<f64> {
        let m = self.base.input_dim();
        let n = zeta.len() - m;
        let mut b = DMatrix::zeros(n + m, m);
        b.view_mut((n, 0), (m, m)).fill_with_identity();
        b
    }
}

#[derive(Clone)]
pub enum Shaping {
    /// `V₁ = V₀ + σ(v)`.
    Quadratic,
    /// `V₁ = V₀ + ρ(σ(v))`.
    Rho(Arc<dyn Rho>),
}

#[derive(Clone, Debug, Serialize)]
pub struct ConstructionRecord {
    pub construction: String,
    pub damping: DampingRecord,
    pub jacobian: String,
    pub rho: Option<String>,
    pub audits: Vec<AuditItem>,
}

/// The pair `(V₁, κ₁)` on `ζ = (z, ω)` obtained by backstepping `(V₀, κ₀)`.
#[derive(Clone)]
pub struct Backstepped<P, S> {
    pub base: P,
    pub sys: S,
    pub damping: DampingSpec,
    pub jac: JacobianProvider,
    pub shaping: Shaping,
    pub record: ConstructionRecord,
    manifold: Manifold,
    n: usize,
    m: usize,
}

impl<P: SlffPair, S: AffineControlSystem> Backstepped<P, S> {
    pub fn base_dim(&self) -> usize {
        self.n
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn split(&self, zeta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (
            zeta.rows(0, self.n).into_owned(),
            zeta.rows(self.n, self.m).into_owned(),
        )
    }

    pub fn join(z: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(z.len() + w.len(), z.iter().chain(w.iter()).copied())
    }

    /// `v = ω - κ₀(q, z)`.
    pub fn error(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (z, w) = self.split(zeta);
        w - self.base.feedback(q, &z)
    }

    fn shape(&self, s: f64) -> (f64, f64) {
        match &self.shaping {
            Shaping::Quadratic => (s, 1.0),
            Shaping::Rho(r) => (r.value(s), r.derivative(s)),
        }
    }

    /// Dynamics of `ζ` under the input `u`.
    pub fn extended_flow(&self, q: Mode, zeta: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (z, w) = self.split(zeta);
        Self::join(&self.sys.flow(q, &z, &w), u)
    }

    /// `⟨∇V₁, φ₁ + ψ₁κ₁⟩ - ⟨∇V₀, φ₀ + ψ₀κ₀⟩ + θ(|ω - κ₀|)`, which the
    /// construction makes non-positive.
    pub fn derivative_defect(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        let (z, _) = self.split(zeta);
        let v1 = self
            .gradient(q, zeta)
            .dot(&self.extended_flow(q, zeta, &self.feedback(q, zeta)));
        let v0 = self
            .base
            .gradient(q, &z)
            .dot(&self.sys.flow(q, &z, &self.base.feedback(q, &z)));
        v1 - v0 + self.damping.theta_bound(self.error(q, zeta).norm())
    }
}

impl<P: SlffPair, S: AffineControlSystem + Clone> Backstepped<P, S> {
    pub fn extended_plant(&self) -> IntegratorExtension<S> {
        IntegratorExtension::new(self.sys.clone())
    }
}

impl<P: SlffPair, S: AffineControlSystem> SlffPair for Backstepped<P, S> {
    fn modes(&self) -> &ModeSet {
        self.base.modes()
    }

    fn manifold(&self) -> &Manifold {
        &self.manifold
    }

    fn value(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        let (z, _) = self.split(zeta);
        self.base.value(q, &z) + self.shape(self.damping.sigma(&self.error(q, zeta))).0
    }

    fn gradient(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (z, _) = self.split(zeta);
        let v = self.error(q, zeta);
        let rp = self.shape(self.damping.sigma(&v)).1;
        let gv = &self.damping.gamma * &v * (2.0 * rp);
        let gz = match self.jac {
            JacobianProvider::Zero => self.base.gradient(q, &z),
            _ => self.base.gradient(q, &z) - self.jac.jacobian(&self.base, q, &z).transpose() * &gv,
        };
        Self::join(&gz, &gv)
    }

    fn feedback(&self, q: Mode, zeta: &DVector<f64>) -> DVector<f64> {
        let (z, w) = self.split(zeta);
        let v = &w - self.base.feedback(q, &z);
        let damping_part = self.damping.theta_map(&v)
            - &self.damping.gamma_inv
                * (self.sys.input_matrix(q, &z).transpose() * self.base.gradient(q, &z))
                * 0.5;
        let tracking = match self.jac {
            JacobianProvider::Zero => DVector::zeros(self.m),
            _ => self.jac.jacobian(&self.base, q, &z) * self.sys.flow(q, &z, &w),
        };
        match &self.shaping {
            Shaping::Quadratic => damping_part + tracking,
            Shaping::Rho(r) => damping_part / r.derivative(self.damping.sigma(&v)) + tracking,
        }
    }

    fn attractor_distance(&self, q: Mode, zeta: &DVector<f64>) -> f64 {
        let (z, _) = self.split(zeta);
        self.base
            .attractor_distance(q, &z)
            .hypot(self.error(q, zeta).norm())
    }

    fn in_domain(&self, q: Mode, zeta: &DVector<f64>) -> bool {
        zeta.len() == self.n + self.m
            && self.base.in_domain(q, &zeta.rows(0, self.n).into_owned())
            && zeta.rows(self.n, self.m).iter().all(|v| v.is_finite())
    }

    fn in_flow_effective(&self, q: Mode, zeta: &DVector<f64>) -> bool {
        self.base
            .in_flow_effective(q, &zeta.rows(0, self.n).into_owned())
    }

    fn is_pure(&self) -> bool {
        self.base.is_pure()
    }

    fn attractor_points(&self) -> Vec<ProductState> {
        self.base
            .attractor_points()
            .into_iter()
            .map(|a| ProductState::new(a.q, Self::join(&a.z, &self.base.feedback(a.q, &a.z))))
            .collect()
    }
}

fn build<P: SlffPair, S: AffineControlSystem>(
    pair0: P,
    sys0: S,
    damping: DampingSpec,
    jac: JacobianProvider,
    shaping: Shaping,
    extension_name: &str,
) -> Result<Backstepped<P, S>, BacksteppingError> {
    let n = pair0.manifold().dim();
    let m = sys0.input_dim();
    if sys0.state_dim() != n {
        return Err(BacksteppingError::Shape(format!(
            "system state dimension {} differs from pair dimension {n}",
            sys0.state_dim()
        )));
    }
    if damping.dim() != m {
        return Err(BacksteppingError::Shape(format!(
            "Γ is {0}×{0}, input dimension is {m}",
            damping.dim()
        )));
    }
    if let Some(a) = pair0.attractor_points().first() {
        let k = pair0.feedback(a.q, &a.z);
        if k.len() != m {
            return Err(BacksteppingError::Shape(format!(
                "κ₀ has dimension {}, input {m}",
                k.len()
            )));
        }
        if let JacobianProvider::Analytic(f) = &jac {
            let d = f(a.q, &a.z);
            if d.shape() != (m, n) {
                return Err(BacksteppingError::Shape(format!(
                    "𝒟κ₀ is {}×{}, expected {m}×{n}",
                    d.nrows(),
                    d.ncols()
                )));
            }
        }
    }
    let manifold = pair0
        .manifold()
        .clone()
        .with_block(BlockKind::Unconstrained, m, extension_name);
    let record = ConstructionRecord {
        construction: match &shaping {
            Shaping::Quadratic => "integrator backstepping, V1 = V0 + sigma(v)".into(),
            Shaping::Rho(_) => "integrator backstepping, V1 = V0 + rho(sigma(v))".into(),
        },
        damping: (&damping).into(),
        jacobian: match &jac {
            JacobianProvider::Analytic(_) => "analytic".into(),
            JacobianProvider::FiniteDifference { step } => {
                format!("central differences, step {step:e}")
            }
            JacobianProvider::Zero => "zero".into(),
        },
        rho: match &shaping {
            Shaping::Quadratic => None,
            Shaping::Rho(r) => Some(r.describe()),
        },
        audits: vec![damping.audit(10_000, 42, 10.0)],
    };
    Ok(Backstepped {
        base: pair0,
        sys: sys0,
        damping,
        jac,
        shaping,
        record,
        manifold,
        n,
        m,
    })
}

/// Backstepping of a pure pair: `V₁ = V₀ + σ(ω - κ₀)` with the `ω` block
/// named `extension_name` in the extended manifold.
pub fn backstep_type1<P: SlffPair, S: AffineControlSystem>(
    pair0: P,
    sys0: S,
    damping: DampingSpec,
    jac: JacobianProvider,
    extension_name: &str,
) -> Result<Backstepped<P, S>, BacksteppingError> {
    if !pair0.is_pure() {
        return Err(BacksteppingError::Precondition(
            "quadratic backstepping needs a pure pair (Y = X); use the rescaled variant".into(),
        ));
    }
    build(
        pair0,
        sys0,
        damping,
        jac,
        Shaping::Quadratic,
        extension_name,
    )
}

/// Backstepping with `V₁ = V₀ + ρ(σ(ω - κ₀))`, for pairs with `Y ≠ X`. The
/// damping and gradient-cancelling terms of `κ₁` are divided by `ρ'(σ)`; the
/// tracking term `𝒟κ₀(φ₀ + ψ₀ω)` is not, which keeps
/// `V̇₁ = V̇₀|_{ω=κ₀} + vᵀΓΘ + ΘᵀΓv` exact.
pub fn backstep_type2<P: SlffPair, S: AffineControlSystem>(
    pair0: P,
    sys0: S,
    damping: DampingSpec,
    jac: JacobianProvider,
    rho: Arc<dyn Rho>,
    extension_name: &str,
) -> Result<Backstepped<P, S>, BacksteppingError> {
    for k in -120..=60 {
        let s = 10f64.powf(k as f64 / 10.0);
        if !(rho.derivative(s) > 0.0) {
            return Err(BacksteppingError::Contract(format!(
                "ρ'({s:e}) is not positive"
            )));
        }
    }
    if !(rho.derivative(0.0) > 0.0) {
        return Err(BacksteppingError::Contract("ρ'(0) is not positive".into()));
    }
    build(pair0, sys0, damping, jac, Shaping::Rho(rho), extension_name)
}
