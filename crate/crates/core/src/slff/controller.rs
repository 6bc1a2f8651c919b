use super::{argmin_modes, gap_value, AffineControlSystem, GapFunction, SlffError, SlffPair};
use crate::hybrid::{HybridSystem, Manifold, ProductState};
use nalgebra::DVector;

/// Closed loop of a plant, an SLFF pair and the gap-threshold switching logic:
/// flow with `u = κ(q, z)` while `μ_V ≤ δ + ε`, jump to the lowest-labelled
/// argmin of `V(·, z)` when `μ_V ≥ δ + ε`, leaving `z` unchanged.
#[derive(Clone)]
pub struct SynergisticController<P, F> {
    pub pair: P,
    pub plant: F,
    pub gap: GapFunction,
}

impl<P: SlffPair, F: AffineControlSystem> SynergisticController<P, F> {
    pub fn gap_at(&self, x: &ProductState) -> f64 {
        gap_value(&self.pair, x.q, &x.z)
    }

    pub fn threshold_at(&self, x: &ProductState) -> f64 {
        self.gap.threshold(x.q, &x.z)
    }

    /// Input applied during flow.
    pub fn input(&self, x: &ProductState) -> DVector<f64> {
        self.pair.feedback(x.q, &x.z)
    }

    pub fn value(&self, x: &ProductState) -> f64 {
        self.pair.value(x.q, &x.z)
    }
}

impl<P: SlffPair, F: AffineControlSystem> HybridSystem for SynergisticController<P, F> {
    fn manifold(&self) -> &Manifold {
        self.pair.manifold()
    }

    fn in_domain(&self, x: &ProductState) -> bool {
        self.pair.in_domain(x.q, &x.z)
    }

    fn in_flow_set(&self, x: &ProductState) -> bool {
        self.gap_at(x) <= self.threshold_at(x)
    }

    fn in_jump_set(&self, x: &ProductState) -> bool {
        self.gap_at(x) >= self.threshold_at(x)
    }

    fn flow_map(&self, x: &ProductState) -> DVector<f64> {
        self.plant.flow(x.q, &x.z, &self.input(x))
    }

    fn jump_map(&self, x: &ProductState) -> Vec<ProductState> {
        argmin_modes(&self.pair, &x.z)
            .into_iter()
            .map(|g| ProductState::new(g, x.z.clone()))
            .collect()
    }

    fn attractor_distance(&self, x: &ProductState) -> Option<f64> {
        Some(self.pair.attractor_distance(x.q, &x.z))
    }
}

/// Builds the closed loop after checking that the pair, the gap and the plant
/// agree on dimensions.
pub fn synthesize_controller<P: SlffPair, F: AffineControlSystem>(
    pair: P,
    gap: GapFunction,
    plant: F,
) -> Result<SynergisticController<P, F>, SlffError> {
    let n = pair.manifold().dim();
    if plant.state_dim() != n {
        return Err(SlffError::Shape(format!(
            "plant state has dimension {}, pair state {}",
            plant.state_dim(),
            n
        )));
    }
    if !(gap.epsilon_margin >= 0.0) {
        return Err(SlffError::Shape("negative epsilon margin".into()));
    }
    if let Some(x) = pair.attractor_points().first() {
        let u = pair.feedback(x.q, &x.z);
        if u.len() != plant.input_dim() {
            return Err(SlffError::Shape(format!(
                "feedback has dimension {}, plant input {}",
                u.len(),
                plant.input_dim()
            )));
        }
        let g = pair.gradient(x.q, &x.z);
        if g.len() != n {
            return Err(SlffError::Shape(format!(
                "gradient has dimension {}, state {n}",
                g.len()
            )));
        }
    }
    Ok(SynergisticController { pair, plant, gap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::{jump_once, simulate, SimOptions};
    use crate::slff::fixtures::two_wells;
    use crate::slff::FnAffine;

    fn closed_loop() -> SynergisticController<crate::slff::FnPair, FnAffine> {
        // z' = u with u = -∇V(q, z) / 2.
        let pair = two_wells().with_feedback(|q, z| {
            DVector::from_element(1, if q == 1 { -z[0] } else { -(z[0] - 3.0) })
        });
        let plant = FnAffine::new(
            1,
            1,
            |_, _| DVector::zeros(1),
            |_, _| nalgebra::DMatrix::identity(1, 1),
        );
        synthesize_controller(pair, GapFunction::constant(0.5), plant).unwrap()
    }

    #[test]
    fn zero_gap_is_flow_only() {
        let cl = closed_loop();
        let x = ProductState::from_slice(1, &[0.2]);
        assert!(cl.in_flow_set(&x));
        assert!(!cl.in_jump_set(&x));
    }

    #[test]
    fn jump_lands_at_zero_gap() {
        let cl = closed_loop();
        let x = ProductState::from_slice(2, &[0.5]);
        assert!(cl.in_jump_set(&x));
        let y = jump_once(&cl, &x).unwrap();
        assert_eq!(y.q, 1);
        assert_eq!(y.z, x.z);
        assert_eq!(cl.gap_at(&y), 0.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let plant = FnAffine::new(
            2,
            1,
            |_, _| DVector::zeros(2),
            |_, _| nalgebra::DMatrix::zeros(2, 1),
        );
        assert!(matches!(
            synthesize_controller(two_wells(), GapFunction::constant(0.1), plant),
            Err(SlffError::Shape(_))
        ));
    }

    #[test]
    fn simulated_arc_converges_with_one_jump() {
        let cl = closed_loop();
        let opts = SimOptions {
            horizon_t: 20.0,
            horizon_j: 10,
            step: 1e-2,
            stop_dist: Some(1e-3),
        };
        let arc = simulate(&cl, &ProductState::from_slice(2, &[1.0]), &opts).unwrap();
        assert_eq!(arc.jumps(), 1);
        assert_eq!(arc.termination, crate::hybrid::Termination::InAttractor);
    }
}
