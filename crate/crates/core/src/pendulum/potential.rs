use super::control::{KinematicPair, KinematicSystem};
use super::{PendulumError, PendulumParams};
use crate::hybrid::{Mode, ModeSet, ProductState};
use crate::linalg::{rotation, tangent_basis};
use crate::slff::{
    b_set_samples, gap_value, sample_critical_set, CriticalKind, CriticalSearch, CriticalSet,
    SlffPair, ATTRACTOR_TOL,
};
use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Result of a numerical synergy certification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certification {
    pub c: f64,
    pub beta: f64,
    pub min_gap: f64,
    pub seeds_per_mode: usize,
    pub refine_tol: f64,
    pub sample_count: usize,
    pub worst_witness: Option<ProductState>,
    pub criticals: CriticalSet,
}

/// `V₀(q, z) = P(R(a_q, g P(z)) z) + b [q ∉ S]` with `P(z) = k (1 - rᵀz)`.
///
/// Modes in `S` use `P` itself. The others rotate `z` about an axis `a_q`
/// orthogonal to `r` by an angle proportional to `P(z)`; the map is a
/// diffeomorphism of the sphere for `|g| k < 1`. The offset
/// `b = ½ k (1 - cos 2gk)` splits the gap at `-r` evenly with the gap at `r`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PotentialFamily {
    pub modes: ModeSet,
    pub central: Vec<Mode>,
    pub target: Vector3<f64>,
    pub gain: f64,
    pub warp_gain: f64,
    pub offset: f64,
    axes: Vec<Option<Vector3<f64>>>,
    pub certificate: Option<Certification>,
}

pub fn potential_family_build(
    params: &PendulumParams,
    n: usize,
    warp_gain: f64,
) -> Result<PotentialFamily, PendulumError> {
    params.validate()?;
    if n < 2 {
        return Err(PendulumError::InvalidParams(format!(
            "need at least 2 modes, got {n}"
        )));
    }
    let gain = 1.0;
    if !(warp_gain.abs() * gain < 1.0) {
        return Err(PendulumError::InvalidWarp { warp_gain, gain });
    }
    let modes = ModeSet::range(n);
    let central = vec![1];
    let target = params.target();
    let (b1, b2) = tangent_basis(&target);
    let warped = n - central.len();
    let mut j = 0;
    let axes = modes
        .iter()
        .map(|q| {
            if central.contains(&q) {
                None
            } else {
                let a = std::f64::consts::PI * j as f64 / warped as f64;
                j += 1;
                Some(b1 * a.cos() + b2 * a.sin())
            }
        })
        .collect();
    Ok(PotentialFamily {
        modes,
        central,
        target,
        gain,
        warp_gain,
        offset: 0.5 * gain * (1.0 - (2.0 * warp_gain * gain).cos()),
        axes,
        certificate: None,
    })
}

impl PotentialFamily {
    fn axis(&self, q: Mode) -> Option<&Vector3<f64>> {
        let i = self
            .modes
            .index_of(q)
            .unwrap_or_else(|| panic!("mode {q} outside the family"));
        self.axes[i].as_ref()
    }

    pub fn is_central(&self, q: Mode) -> bool {
        self.central.contains(&q)
    }

    /// `P(z) = k (1 - rᵀz)`.
    pub fn base(&self, z: &Vector3<f64>) -> f64 {
        self.gain * (1.0 - self.target.dot(z))
    }

    pub fn value(&self, q: Mode, z: &Vector3<f64>) -> f64 {
        match self.axis(q) {
            None => self.base(z),
            Some(a) => self.base(&(rotation(a, self.warp_gain * self.base(z)) * z)) + self.offset,
        }
    }

    /// Ambient gradient of `V₀(q, ·)` extended to `ℝ³` by the same formula.
    pub fn gradient(&self, q: Mode, z: &Vector3<f64>) -> Vector3<f64> {
        let k = self.gain;
        let r = &self.target;
        match self.axis(q) {
            None => -r * k,
            Some(a) => {
                let rot = rotation(a, self.warp_gain * self.base(z));
                let y = rot * z;
                -(rot.transpose() * r - r * (self.warp_gain * k * r.dot(&a.cross(&y)))) * k
            }
        }
    }

    /// `𝒱₀(z) = (V₀(q, z))_q`, ordered as the mode set.
    pub fn stack(&self, z: &Vector3<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.modes.len(),
            self.modes.iter().map(|q| self.value(q, z)),
        )
    }

    /// `𝒟𝒱₀(z)`, one gradient per row.
    pub fn stack_jacobian(&self, z: &Vector3<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.modes.len(), 3);
        for (i, q) in self.modes.iter().enumerate() {
            d.row_mut(i).copy_from(&self.gradient(q, z).transpose());
        }
        d
    }

    /// `√(|z - r|² + [q ∉ S])`.
    pub fn attractor_distance(&self, q: Mode, z: &Vector3<f64>) -> f64 {
        let dq = if self.is_central(q) { 0.0 } else { 1.0 };
        ((z - self.target).norm_squared() + dq).sqrt()
    }

    pub fn c(&self) -> Option<f64> {
        self.certificate.as_ref().map(|c| c.c)
    }
}

/// Samples the input-annihilation stall set `{(q, z) : ẑᵀ∇V₀(q, z) = 0}` from
/// `seeds_per_mode` Fibonacci seeds and the states whose `z` is the target,
/// then returns `c = β · min μ` over the samples outside `A₀`.
pub fn certify_synergy_constant(
    family: &PotentialFamily,
    seeds_per_mode: usize,
    beta: f64,
) -> Result<Certification, PendulumError> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(PendulumError::InvalidParams(format!(
            "β = {beta} is not in (0, 1)"
        )));
    }
    let pair = KinematicPair::new(Arc::new(family.clone()));
    let search = CriticalSearch::new(CriticalKind::OmegaCandidate, seeds_per_mode).without_probe();
    let criticals =
        sample_critical_set(&pair, &KinematicSystem, &search).merge(b_set_samples(&pair));
    let mut min_gap = f64::INFINITY;
    let mut witness = None;
    let mut count = 0;
    for s in &criticals.samples {
        let x = &s.point;
        if pair.attractor_distance(x.q, &x.z) <= ATTRACTOR_TOL {
            continue;
        }
        count += 1;
        let mu = gap_value(&pair, x.q, &x.z);
        if mu < min_gap {
            min_gap = mu;
            witness = Some(x.clone());
        }
    }
    if !(min_gap > 0.0) || !min_gap.is_finite() {
        return Err(PendulumError::NotSynergistic { min_gap, witness });
    }
    log::info!("synergy certified: min gap {min_gap:.6} over {count} samples");
    Ok(Certification {
        c: beta * min_gap,
        beta,
        min_gap,
        seeds_per_mode,
        refine_tol: search.refine_tol,
        sample_count: count,
        worst_witness: witness,
        criticals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::fibonacci_sphere;

    fn family(g: f64) -> PotentialFamily {
        potential_family_build(&PendulumParams::default(), 2, g).unwrap()
    }

    #[test]
    fn zero_on_target_for_central_modes() {
        let f = family(0.5);
        assert_eq!(f.value(1, &f.target), 0.0);
        assert!(f.value(2, &f.target) > 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let f = potential_family_build(&PendulumParams::default(), 3, 0.7).unwrap();
        let h = 1e-6;
        for z in fibonacci_sphere(1000) {
            for q in f.modes.iter() {
                let g = f.gradient(q, &z);
                let fd = Vector3::from_fn(|i, _| {
                    let mut a = z;
                    let mut b = z;
                    a[i] += h;
                    b[i] -= h;
                    (f.value(q, &a) - f.value(q, &b)) / (2.0 * h)
                });
                assert!((g - fd).norm() <= 1e-5 * fd.norm().max(1.0));
            }
        }
    }

    #[test]
    fn nonnegative_on_mesh_and_zero_only_near_target() {
        let f = family(0.5);
        for z in fibonacci_sphere(10_000) {
            for q in f.modes.iter() {
                let v = f.value(q, &z);
                assert!(v >= 0.0);
                if v < 1e-6 {
                    assert!(f.attractor_distance(q, &z) < 2e-3);
                }
            }
        }
    }

    #[test]
    fn warp_outside_diffeomorphism_range_is_rejected() {
        assert!(matches!(
            potential_family_build(&PendulumParams::default(), 2, 1.0),
            Err(PendulumError::InvalidWarp { .. })
        ));
        assert!(potential_family_build(&PendulumParams::default(), 1, 0.5).is_err());
    }

    #[test]
    fn default_family_certifies_near_closed_form() {
        let cert = certify_synergy_constant(&family(0.5), 10_000, 0.9).unwrap();
        let closed = 0.5 * (1.0 - 1f64.cos());
        assert!((cert.min_gap - closed).abs() < 1e-6);
        assert!((cert.c - 0.9 * closed).abs() < 1e-6);
    }

    #[test]
    fn unwarped_family_fails_certification() {
        assert!(matches!(
            certify_synergy_constant(&family(0.0), 10_000, 0.9),
            Err(PendulumError::NotSynergistic { .. })
        ));
    }
}
